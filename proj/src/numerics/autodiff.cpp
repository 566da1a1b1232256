// Copyright 2026 The GoCE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "goce/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "goce/errors.hpp"
#include "goce/kernels.hpp"

namespace goce::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error("autodiff: variable is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("autodiff: operands live on different tapes");
  return tape_of(a);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, bool may_be_infinite) {
#ifdef NDEBUG
  (void)may_be_infinite;
#else
  const bool inputs_finite =
      std::all_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].value.all_finite(); });
  if (inputs_finite && !value.all_finite() && !may_be_infinite) throw NumericAbort("autodiff: non-finite output from finite inputs");
#endif
  Node node;
  node.value = std::move(value);
  node.requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor* Tape::accum(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward: variable belongs to another tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw RankError("backward: loss must be a scalar, got shape " + shape_str(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Tensor* seed = accum(loss.id);
  if (seed == nullptr) return;
  (*seed)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tensor out({m, n});
  kernels::parallel::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* ga = tp.accum(ia)) kernels::parallel::gemm_nt(g.data(), tp.value(ib).data(), ga->data(), m, n, k);
    if (Tensor* gb = tp.accum(ib)) kernels::parallel::gemm_tn(tp.value(ia).data(), g.data(), gb->data(), k, m, n);
  });
}

Var transpose(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2("transpose", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = xv.at(i, j);
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx->at(i, j) += g.at(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    for (std::size_t id : {ia, ib})
      if (Tensor* gi = tp.accum(id))
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* ga = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = tp.accum(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* ga = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * tp.value(ib)[i];
    if (Tensor* gb = tp.accum(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * tp.value(ia)[i];
  });
}

Var scale(Var x, double s) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.vec()) v *= s;
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * s;
  });
}

Var scale_by(Var x, Var s) {
  Tape& t = tape_of(x, s);
  if (s.value().size() != 1) throw DimensionError("scale_by: factor must be 1x1, got " + shape_str(s.value().shape()));
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (auto& v : out.vec()) v *= sv;
  const std::size_t ix = x.id, is = s.id;
  return t.record(std::move(out), {ix, is}, [ix, is](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& xv = tp.value(ix);
    const double sv = tp.value(is)[0];
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * sv;
    if (Tensor* gs = tp.accum(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      (*gs)[0] += acc;
    }
  });
}

Var add_row_bias(Var x, Var bias) {
  Tape& t = tape_of(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_rank2("add_row_bias", xv);
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_row_bias: bias " + shape_str(bv.shape()) + " does not fit " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  const std::size_t ix = x.id, ib = bias.id;
  return t.record(std::move(out), {ix, ib}, [ix, ib, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (Tensor* gb = tp.accum(ib))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g.at(i, j);
  });
}

Var scale_rows(Var x, Var gates) {
  Tape& t = tape_of(x, gates);
  const Tensor& xv = x.value();
  const Tensor& gv = gates.value();
  require_rank2("scale_rows", xv);
  if (gv.size() != xv.rows()) {
    throw DimensionError("scale_rows: gates " + shape_str(gv.shape()) + " do not fit " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) *= gv[i];
  const std::size_t ix = x.id, ig = gates.id;
  return t.record(std::move(out), {ix, ig}, [ix, ig, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& xv = tp.value(ix);
    const Tensor& gv = tp.value(ig);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx->at(i, j) += g.at(i, j) * gv[i];
    if (Tensor* gg = tp.accum(ig))
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * xv.at(i, j);
        (*gg)[i] += acc;
      }
  });
}

Var add_constant(Var x, const Tensor& c) {
  Tape& t = tape_of(x);
  require_same_shape("add_constant", x.value(), c);
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  }, /*may_be_infinite=*/true);
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.vec()) v = std::tanh(v);
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var abs(Var x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.vec()) v = std::fabs(v);
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& xv = tp.value(ix);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double sgn = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        (*gx)[i] += g[i] * sgn;
      }
  });
}

// ---------------------------------------------------------------------------
// Row-stochastic ops

Var softmax_rows(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2("softmax_rows", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({m, n});
  if (!kernels::parallel::softmax_rows(xv.data(), out.data(), m, n)) {
    throw DegenerateRowError("softmax_rows: a row has no finite entry");
  }
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value(self);
    Tensor* gx = tp.accum(ix);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (y.at(i, j) != 0.0) dot += g.at(i, j) * y.at(i, j);
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (y.at(i, j) != 0.0) gx->at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    }
  });
}

Var log_softmax_rows(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2("log_softmax_rows", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv.at(i, j));
    if (!std::isfinite(mx)) throw DegenerateRowError("log_softmax_rows: a row has no finite entry");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (!std::isinf(xv.at(i, j))) total += std::exp(xv.at(i, j) - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xv.at(i, j) - lse;
  }
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value(self);
    Tensor* gx = tp.accum(ix);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < m; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g.at(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        if (std::isinf(y.at(i, j))) continue;
        gx->at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gsum;
      }
    }
  });
}

Var kl_divergence_rows(Var p, Var q) {
  Tape& t = tape_of(p, q);
  const Tensor& pv = p.value();
  const Tensor& qv = q.value();
  require_same_shape("kl_divergence_rows", pv, qv);
  require_rank2("kl_divergence_rows", pv);
  const std::size_t m = pv.rows(), n = pv.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double pij = pv.at(i, j);
      if (pij <= 0.0) continue;
      const double qij = qv.at(i, j);
      if (qij <= 0.0) {
        throw SupportError("kl_divergence_rows: p > 0 where q == 0 at (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
      }
      row += pij * std::log(pij / qij);
    }
    // A row divergence is non-negative; a negative sum is rounding near p == q.
    total += std::max(row, 0.0);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m));
  const std::size_t ip = p.id, iq = q.id;
  return t.record(std::move(out), {ip, iq}, [ip, iq, m](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0] / static_cast<double>(m);
    const Tensor& pv = tp.value(ip);
    const Tensor& qv = tp.value(iq);
    Tensor* gp = tp.accum(ip);
    Tensor* gq = tp.accum(iq);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (pv[i] <= 0.0) continue;
      if (gp) (*gp)[i] += g * (std::log(pv[i] / qv[i]) + 1.0);
      if (gq) (*gq)[i] -= g * pv[i] / qv[i];
    }
  });
}

namespace {

// Row log-sum-exp over finite entries, split as max + log(sum) so that
// log-probabilities are formed as (x - max) - log(sum): exact for uniform rows.
struct RowLse {
  double max;
  double log_sum;
};

RowLse row_lse(const Tensor& x, std::size_t i, const char* op) {
  double mx = kNegInf;
  for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
  if (!std::isfinite(mx)) throw DegenerateRowError(std::string(op) + ": a row has no finite entry");
  double total = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j)
    if (!std::isinf(x.at(i, j))) total += std::exp(x.at(i, j) - mx);
  return {mx, std::log(total)};
}

}  // namespace

Var kl_divergence_logits_rows(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("kl_divergence_logits_rows", av, bv);
  require_rank2("kl_divergence_logits_rows", av);
  const std::size_t m = av.rows(), n = av.cols();
  // Cache log p and log q for the backward pass.
  Tensor logp({m, n}, kNegInf), logq({m, n}, kNegInf);
  std::vector<double> row_kl(m, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const RowLse la = row_lse(av, i, "kl_divergence_logits_rows");
    const RowLse lb = row_lse(bv, i, "kl_divergence_logits_rows");
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isinf(bv.at(i, j))) {
        if (!std::isinf(av.at(i, j))) {
          throw SupportError("kl_divergence_logits_rows: p > 0 where q == 0 at (" + std::to_string(i) + ", " +
                             std::to_string(j) + ")");
        }
        continue;
      }
      logq.at(i, j) = (bv.at(i, j) - lb.max) - lb.log_sum;
      if (std::isinf(av.at(i, j))) continue;
      logp.at(i, j) = (av.at(i, j) - la.max) - la.log_sum;
      row += std::exp(logp.at(i, j)) * (logp.at(i, j) - logq.at(i, j));
    }
    row_kl[i] = row;
    // A row divergence is non-negative; a negative sum is rounding near p == q.
    total += std::max(row, 0.0);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m));
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib, m, n, logp = std::move(logp), logq = std::move(logq), row_kl = std::move(row_kl)](
                      Tape& tp, std::size_t self) {
                    const double g = tp.upstream(self)[0] / static_cast<double>(m);
                    Tensor* ga = tp.accum(ia);
                    Tensor* gb = tp.accum(ib);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        const double p = std::isinf(logp.at(i, j)) ? 0.0 : std::exp(logp.at(i, j));
                        const double q = std::isinf(logq.at(i, j)) ? 0.0 : std::exp(logq.at(i, j));
                        if (ga && p > 0.0) ga->at(i, j) += g * p * (logp.at(i, j) - logq.at(i, j) - row_kl[i]);
                        if (gb) gb->at(i, j) += g * (q - p);
                      }
                  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var x) {
  Tape& t = tape_of(x);
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const std::size_t ix = x.id;
  return t.record(Tensor::scalar(total), {ix}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    if (Tensor* gx = tp.accum(ix))
      for (auto& v : gx->vec()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_rows(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2("mean_rows", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv.at(i, j);
  for (auto& v : out.vec()) v /= static_cast<double>(m);
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx->at(i, j) += g[j] / static_cast<double>(m);
  });
}

// ---------------------------------------------------------------------------
// Indexing and assembly

Var row(Var x, std::size_t i) { return gather_rows(x, {i}); }

Var gather_rows(Var x, const std::vector<std::size_t>& idx) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2("gather_rows", xv);
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = xv.cols();
  Tensor out({idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= xv.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " + shape_str(xv.shape()));
    }
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, idx, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) gx->at(idx[r], j) += g.at(r, j);
  });
}

Var stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("stack_rows: nothing to stack");
  Tape& t = tape_of(parts.front());
  const std::size_t n = parts.front().value().cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    tape_of(p, parts.front());
    if (p.value().cols() != n) {
      throw DimensionError("stack_rows: width mismatch " + shape_str(parts.front().value().shape()) + " vs " +
                           shape_str(p.value().shape()));
    }
    ids.push_back(p.id);
    offsets.push_back(m);
    m += p.value().rows();
  }
  Tensor out({m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offsets[k] * n));
  }
  return t.record(std::move(out), ids, [ids, offsets, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gk = tp.accum(ids[k]);
      if (gk == nullptr) continue;
      for (std::size_t i = 0; i < gk->size(); ++i) (*gk)[i] += g[offsets[k] * n + i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  Tape& t = tape_of(parts.front());
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids, offsets, widths;
  for (const Var& p : parts) {
    tape_of(p, parts.front());
    if (p.value().rows() != m) {
      throw DimensionError("concat_cols: height mismatch " + shape_str(parts.front().value().shape()) + " vs " +
                           shape_str(p.value().shape()));
    }
    ids.push_back(p.id);
    offsets.push_back(n);
    widths.push_back(p.value().cols());
    n += p.value().cols();
  }
  Tensor out({m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, offsets[k] + j) = pv.at(i, j);
  }
  return t.record(std::move(out), ids, [ids, offsets, widths, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gk = tp.accum(ids[k]);
      if (gk == nullptr) continue;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j) gk->at(i, j) += g.at(i, offsets[k] + j);
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2("slice_cols", xv);
  if (count == 0 || begin + count > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.rows();
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = xv.at(i, begin + j);
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, begin, count, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx->at(i, begin + j) += g.at(i, j);
  });
}

Var gather_entries(Var x, const std::vector<std::pair<std::size_t, std::size_t>>& pos) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_rank2("gather_entries", xv);
  if (pos.empty()) throw DimensionError("gather_entries: empty position list");
  Tensor out({1, pos.size()});
  for (std::size_t k = 0; k < pos.size(); ++k) {
    if (pos[k].first >= xv.rows() || pos[k].second >= xv.cols()) {
      throw IndexError("gather_entries: position out of range for " + shape_str(xv.shape()));
    }
    out[k] = xv.at(pos[k].first, pos[k].second);
  }
  const std::size_t ix = x.id;
  return t.record(std::move(out), {ix}, [ix, pos](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gx = tp.accum(ix))
      for (std::size_t k = 0; k < pos.size(); ++k) gx->at(pos[k].first, pos[k].second) += g[k];
  });
}

Var scatter_entries(Var v, std::size_t rows, std::size_t cols,
                    const std::vector<std::pair<std::size_t, std::size_t>>& pos, double fill) {
  Tape& t = tape_of(v);
  const Tensor& vv = v.value();
  if (vv.size() != pos.size()) {
    throw DimensionError("scatter_entries: " + std::to_string(pos.size()) + " positions for values " +
                         shape_str(vv.shape()));
  }
  Tensor out({rows, cols}, fill);
  for (std::size_t k = 0; k < pos.size(); ++k) {
    if (pos[k].first >= rows || pos[k].second >= cols) throw IndexError("scatter_entries: position out of range");
    out.at(pos[k].first, pos[k].second) = vv[k];
  }
  const std::size_t iv = v.id;
  return t.record(std::move(out), {iv}, [iv, pos](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gv = tp.accum(iv))
      for (std::size_t k = 0; k < pos.size(); ++k) (*gv)[k] += g.at(pos[k].first, pos[k].second);
  }, /*may_be_infinite=*/!std::isfinite(fill));
}

Var stretched_gate(Var logits, const Tensor& noise, double tau, double gamma, double zeta) {
  Tape& t = tape_of(logits);
  const Tensor& lv = logits.value();
  require_same_shape("stretched_gate", lv, noise);
  Tensor out(lv.shape(), 0.0);
  Tensor slope(lv.shape(), 0.0);
  for (std::size_t i = 0; i < lv.size(); ++i) {
    if (std::isinf(lv[i]) && lv[i] < 0.0) continue;
    const double u = noise[i];
    const double z = (std::log(u) - std::log1p(-u) + lv[i]) / tau;
    const double s = 1.0 / (1.0 + std::exp(-z));
    const double stretched = s * (zeta - gamma) + gamma;
    out[i] = std::clamp(stretched, 0.0, 1.0);
    // Flat wherever the clamp is active.
    if (stretched > 0.0 && stretched < 1.0) slope[i] = (zeta - gamma) * s * (1.0 - s) / tau;
  }
  const std::size_t il = logits.id;
  return t.record(std::move(out), {il}, [il, slope = std::move(slope)](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (Tensor* gl = tp.accum(il))
      for (std::size_t i = 0; i < g.size(); ++i) (*gl)[i] += g[i] * slope[i];
  });
}

Var detach(Var x) { return tape_of(x).constant(x.value()); }

}  // namespace goce::ad
