#include "selora/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "gemm.hpp"

namespace selora {

namespace {

// True when `small` equals the trailing dims of `big`.
bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

[[noreturn]] void broadcast_error(const Tensor& a, const Tensor& b) {
  throw std::invalid_argument("unsupported broadcast: " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

[[noreturn]] void matmul_error(const Tensor& a, const Tensor& b) {
  throw std::invalid_argument("matmul shape mismatch: " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

}  // namespace

Var Graph::constant(Tensor t) {
  Node n;
  n.owned = std::move(t);
  return {this, push(std::move(n))};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.param = &p;
  n.needs_grad = p.trainable;  // sampled now, not at backward time
  return {this, push(std::move(n))};
}

Var Graph::make(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool ng = false;
  for (const Var& in : inputs) {
    if (in.graph != this) throw std::invalid_argument("op input belongs to a different graph");
    ng = ng || grad_needed(in.node);
  }
  round_to_precision(value, precision_);
  Node n;
  n.owned = std::move(value);
  n.needs_grad = ng;
  if (ng) n.backprop = std::move(fn);
  return {this, push(std::move(n))};
}

int32_t Graph::push(Node n) {
  int32_t id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back(std::move(n));
  return id;
}

void Graph::accumulate(int32_t id, Tensor contribution) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.needs_grad) return;
  if (n.adjoint.numel() == 0) {
    n.adjoint = std::move(contribution);
    round_to_precision(n.adjoint, precision_);
    return;
  }
  double* a = n.adjoint.data();
  const double* c = contribution.data();
  for (int64_t i = 0; i < n.adjoint.numel(); ++i) a[i] += c[i];
  round_to_precision(n.adjoint, precision_);
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::invalid_argument("backward(): loss from a different graph");
  if (consumed_) throw std::logic_error("backward() called twice on a consumed graph");
  const Tensor& lv = value_of(loss.node);
  if (lv.numel() != 1)
    throw std::invalid_argument("backward() needs a scalar loss, got " + shape_str(lv.shape()));
  consumed_ = true;
  if (!nodes_[static_cast<size_t>(loss.node)].needs_grad) return;  // nothing trainable reachable
  accumulate(loss.node, Tensor::full(lv.shape(), 1.0));
  for (int32_t i = loss.node; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.needs_grad || n.adjoint.numel() == 0) continue;
    if (n.backprop) n.backprop(*this, n.adjoint);
    if (n.param) {
      double* g = n.param->grad.data();
      const double* a = n.adjoint.data();
      for (int64_t j = 0; j < n.param->grad.numel(); ++j) g[j] += a[j];
    }
    n.backprop = nullptr;
    n.adjoint = Tensor();
  }
}

const Tensor& Graph::value_of(int32_t id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.param ? n.param->value : n.owned;
}

// --- matmul ---

Var matmul(Var av, Var bv) {
  Graph& g = *av.graph;
  const Tensor& A = av.value();
  const Tensor& B = bv.value();
  const int ra = A.rank();
  const int rb = B.rank();

  if (ra >= 2 && rb == 2) {
    // shared right factor: flatten every leading dim of A into rows
    const int64_t k = A.dim(-1);
    if (B.dim(0) != k) matmul_error(A, B);
    const int64_t n = B.dim(1);
    const int64_t rows = A.numel() / k;
    Shape out_shape = A.shape();
    out_shape.back() = n;
    Tensor out(std::move(out_shape));
    gemm(false, false, rows, n, k, A.data(), k, B.data(), n, 0.0, out.data(), n);
    return g.make(std::move(out), {av, bv}, [av, bv, rows, n, k](Graph& gr, const Tensor& G) {
      if (gr.grad_needed(av.node)) {
        Tensor dA(av.value().shape());
        gemm(false, true, rows, k, n, G.data(), n, bv.value().data(), n, 0.0, dA.data(), k);
        gr.accumulate(av.node, std::move(dA));
      }
      if (gr.grad_needed(bv.node)) {
        Tensor dB(bv.value().shape());
        gemm(true, false, k, n, rows, av.value().data(), k, G.data(), n, 0.0, dB.data(), n);
        gr.accumulate(bv.node, std::move(dB));
      }
    });
  }

  if (ra == rb && ra > 2) {
    for (int i = 0; i < ra - 2; ++i)
      if (A.dim(i) != B.dim(i)) matmul_error(A, B);
    const int64_t m = A.dim(-2);
    const int64_t k = A.dim(-1);
    if (B.dim(-2) != k) matmul_error(A, B);
    const int64_t n = B.dim(-1);
    int64_t batch = 1;
    for (int i = 0; i < ra - 2; ++i) batch *= A.dim(i);
    Shape out_shape(A.shape().begin(), A.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out(std::move(out_shape));
    for (int64_t b = 0; b < batch; ++b) {
      gemm(false, false, m, n, k, A.data() + b * m * k, k, B.data() + b * k * n, n, 0.0,
           out.data() + b * m * n, n);
    }
    return g.make(std::move(out), {av, bv},
                  [av, bv, batch, m, n, k](Graph& gr, const Tensor& G) {
                    const Tensor& Av = av.value();
                    const Tensor& Bv = bv.value();
                    if (gr.grad_needed(av.node)) {
                      Tensor dA(Av.shape());
                      for (int64_t b = 0; b < batch; ++b)
                        gemm(false, true, m, k, n, G.data() + b * m * n, n, Bv.data() + b * k * n,
                             n, 0.0, dA.data() + b * m * k, k);
                      gr.accumulate(av.node, std::move(dA));
                    }
                    if (gr.grad_needed(bv.node)) {
                      Tensor dB(Bv.shape());
                      for (int64_t b = 0; b < batch; ++b)
                        gemm(true, false, k, n, m, Av.data() + b * m * k, k, G.data() + b * m * n,
                             n, 0.0, dB.data() + b * k * n, n);
                      gr.accumulate(bv.node, std::move(dB));
                    }
                  });
  }

  matmul_error(A, B);
}

// --- elementwise add / mul with suffix broadcast ---

namespace {

struct BroadcastPlan {
  Var big, small;
  int64_t blk;   // elements in the small operand
  int64_t reps;  // how many times it tiles the big one
  bool swapped;  // true when b is the big side
};

BroadcastPlan plan_broadcast(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (is_suffix(tb.shape(), ta.shape())) return {a, b, tb.numel(), ta.numel() / tb.numel(), false};
  if (is_suffix(ta.shape(), tb.shape())) return {b, a, ta.numel(), tb.numel() / ta.numel(), true};
  broadcast_error(ta, tb);
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = *a.graph;
  BroadcastPlan p = plan_broadcast(a, b);
  const Tensor& big = p.big.value();
  const Tensor& small = p.small.value();
  Tensor out(big.shape());
  for (int64_t r = 0; r < p.reps; ++r)
    for (int64_t j = 0; j < p.blk; ++j)
      out[r * p.blk + j] = big[r * p.blk + j] + small[j];
  return g.make(std::move(out), {a, b}, [p](Graph& gr, const Tensor& G) {
    if (gr.grad_needed(p.big.node)) gr.accumulate(p.big.node, G);
    if (gr.grad_needed(p.small.node)) {
      Tensor ds = Tensor::zeros(p.small.value().shape());
      for (int64_t r = 0; r < p.reps; ++r)
        for (int64_t j = 0; j < p.blk; ++j) ds[j] += G[r * p.blk + j];
      gr.accumulate(p.small.node, std::move(ds));
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = *a.graph;
  BroadcastPlan p = plan_broadcast(a, b);
  const Tensor& big = p.big.value();
  const Tensor& small = p.small.value();
  Tensor out(big.shape());
  for (int64_t r = 0; r < p.reps; ++r)
    for (int64_t j = 0; j < p.blk; ++j)
      out[r * p.blk + j] = big[r * p.blk + j] * small[j];
  return g.make(std::move(out), {a, b}, [p](Graph& gr, const Tensor& G) {
    const Tensor& bigv = p.big.value();
    const Tensor& smallv = p.small.value();
    if (gr.grad_needed(p.big.node)) {
      Tensor db(bigv.shape());
      for (int64_t r = 0; r < p.reps; ++r)
        for (int64_t j = 0; j < p.blk; ++j)
          db[r * p.blk + j] = G[r * p.blk + j] * smallv[j];
      gr.accumulate(p.big.node, std::move(db));
    }
    if (gr.grad_needed(p.small.node)) {
      Tensor ds = Tensor::zeros(smallv.shape());
      for (int64_t r = 0; r < p.reps; ++r)
        for (int64_t j = 0; j < p.blk; ++j)
          ds[j] += G[r * p.blk + j] * bigv[r * p.blk + j];
      gr.accumulate(p.small.node, std::move(ds));
    }
  });
}

Var scale(Var a, double c) {
  Graph& g = *a.graph;
  const Tensor& ta = a.value();
  Tensor out(ta.shape());
  for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * c;
  return g.make(std::move(out), {a}, [a, c](Graph& gr, const Tensor& G) {
    Tensor d(G.shape());
    for (int64_t i = 0; i < G.numel(); ++i) d[i] = G[i] * c;
    gr.accumulate(a.node, std::move(d));
  });
}

Var gelu(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor out(x.shape());
  const double inv_sqrt2 = 0.7071067811865475244;
  for (int64_t i = 0; i < x.numel(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
  return g.make(std::move(out), {a}, [a, inv_sqrt2](Graph& gr, const Tensor& G) {
    const Tensor& xv = a.value();
    const double inv_sqrt2pi = 0.3989422804014326779;
    Tensor d(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
      double cdf = 0.5 * (1.0 + std::erf(xv[i] * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * xv[i] * xv[i]);
      d[i] = G[i] * (cdf + xv[i] * pdf);
    }
    gr.accumulate(a.node, std::move(d));
  });
}

Var silu(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-x[i]));
    out[i] = x[i] * s;
  }
  return g.make(std::move(out), {a}, [a](Graph& gr, const Tensor& G) {
    const Tensor& xv = a.value();
    Tensor d(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-xv[i]));
      d[i] = G[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
    gr.accumulate(a.node, std::move(d));
  });
}

Var rmsnorm(Var xv, Var gv, double eps) {
  Graph& g = *xv.graph;
  const Tensor& x = xv.value();
  const Tensor& gain = gv.value();
  if (gain.rank() != 1 || gain.dim(0) != x.dim(-1))
    throw std::invalid_argument("rmsnorm: gain " + shape_str(gain.shape()) +
                                " does not match input " + shape_str(x.shape()));
  const int64_t D = x.dim(-1);
  const int64_t rows = x.numel() / D;
  Tensor out(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * D;
    double ms = 0.0;
    for (int64_t j = 0; j < D; ++j) ms += xr[j] * xr[j];
    double inv = 1.0 / std::sqrt(ms / static_cast<double>(D) + eps);
    for (int64_t j = 0; j < D; ++j) out[r * D + j] = xr[j] * inv * gain[j];
  }
  return g.make(std::move(out), {xv, gv}, [xv, gv, eps, D, rows](Graph& gr, const Tensor& G) {
    const Tensor& x = xv.value();
    const Tensor& gain = gv.value();
    bool need_x = gr.grad_needed(xv.node);
    bool need_g = gr.grad_needed(gv.node);
    Tensor dx = need_x ? Tensor(x.shape()) : Tensor();
    Tensor dg = need_g ? Tensor::zeros(gain.shape()) : Tensor();
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * D;
      const double* Gr = G.data() + r * D;
      double ms = 0.0;
      for (int64_t j = 0; j < D; ++j) ms += xr[j] * xr[j];
      double inv = 1.0 / std::sqrt(ms / static_cast<double>(D) + eps);
      if (need_x) {
        double dot = 0.0;
        for (int64_t j = 0; j < D; ++j) dot += Gr[j] * gain[j] * xr[j];
        double c = inv * inv * inv * dot / static_cast<double>(D);
        for (int64_t j = 0; j < D; ++j) dx[r * D + j] = inv * gain[j] * Gr[j] - c * xr[j];
      }
      if (need_g)
        for (int64_t j = 0; j < D; ++j) dg[j] += Gr[j] * xr[j] * inv;
    }
    if (need_x) gr.accumulate(xv.node, std::move(dx));
    if (need_g) gr.accumulate(gv.node, std::move(dg));
  });
}

// --- shape movement ---

namespace {

Tensor transpose_last2_raw(const Tensor& t) {
  const int64_t q = t.dim(-1);
  const int64_t p = t.dim(-2);
  const int64_t batch = t.numel() / (p * q);
  Shape s = t.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Tensor out(std::move(s));
  for (int64_t b = 0; b < batch; ++b) {
    const double* src = t.data() + b * p * q;
    double* dst = out.data() + b * p * q;
    for (int64_t i = 0; i < p; ++i)
      for (int64_t j = 0; j < q; ++j) dst[j * p + i] = src[i * q + j];
  }
  return out;
}

}  // namespace

Var transpose_last2(Var a) {
  Graph& g = *a.graph;
  if (a.value().rank() < 2)
    throw std::invalid_argument("transpose_last2 needs rank >= 2, got " +
                                shape_str(a.value().shape()));
  return g.make(transpose_last2_raw(a.value()), {a}, [a](Graph& gr, const Tensor& G) {
    gr.accumulate(a.node, transpose_last2_raw(G));
  });
}

Var split_heads(Var a, int n_heads) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  if (x.rank() != 3 || n_heads <= 0 || x.dim(2) % n_heads != 0)
    throw std::invalid_argument("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                                std::to_string(n_heads) + " heads");
  const int64_t B = x.dim(0), S = x.dim(1), D = x.dim(2);
  const int64_t H = n_heads, hd = D / H;
  Tensor out({B, H, S, hd});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t s = 0; s < S; ++s)
      for (int64_t h = 0; h < H; ++h)
        std::memcpy(out.data() + ((b * H + h) * S + s) * hd,
                    x.data() + (b * S + s) * D + h * hd, sizeof(double) * hd);
  return g.make(std::move(out), {a}, [a, B, S, D, H, hd](Graph& gr, const Tensor& G) {
    Tensor dx({B, S, D});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t s = 0; s < S; ++s)
        for (int64_t h = 0; h < H; ++h)
          std::memcpy(dx.data() + (b * S + s) * D + h * hd,
                      G.data() + ((b * H + h) * S + s) * hd, sizeof(double) * hd);
    gr.accumulate(a.node, std::move(dx));
  });
}

Var merge_heads(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  if (x.rank() != 4)
    throw std::invalid_argument("merge_heads needs [batch, heads, seq, head_dim], got " +
                                shape_str(x.shape()));
  const int64_t B = x.dim(0), H = x.dim(1), S = x.dim(2), hd = x.dim(3);
  const int64_t D = H * hd;
  Tensor out({B, S, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t s = 0; s < S; ++s)
        std::memcpy(out.data() + (b * S + s) * D + h * hd,
                    x.data() + ((b * H + h) * S + s) * hd, sizeof(double) * hd);
  return g.make(std::move(out), {a}, [a, B, S, D, H, hd](Graph& gr, const Tensor& G) {
    Tensor dx({B, H, S, hd});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t s = 0; s < S; ++s)
          std::memcpy(dx.data() + ((b * H + h) * S + s) * hd,
                      G.data() + (b * S + s) * D + h * hd, sizeof(double) * hd);
    gr.accumulate(a.node, std::move(dx));
  });
}

Var causal_softmax(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  if (x.rank() < 2 || x.dim(-1) != x.dim(-2))
    throw std::invalid_argument("causal_softmax needs square trailing dims, got " +
                                shape_str(x.shape()));
  const int64_t S = x.dim(-1);
  const int64_t batch = x.numel() / (S * S);
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t i = 0; i < S; ++i) {
      const double* row = x.data() + (b * S + i) * S;
      double* orow = out.data() + (b * S + i) * S;
      double mx = row[0];
      for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (int64_t j = 0; j <= i; ++j) denom += std::exp(row[j] - mx);
      for (int64_t j = 0; j <= i; ++j) orow[j] = std::exp(row[j] - mx) / denom;
    }
  }
  const int32_t self = static_cast<int32_t>(g.node_count());  // id make() is about to assign
  return g.make(std::move(out), {a}, [a, self, S, batch](Graph& gr, const Tensor& G) {
    const Tensor& y = gr.value_of(self);
    Tensor dx = Tensor::zeros(y.shape());
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t i = 0; i < S; ++i) {
        const double* yrow = y.data() + (b * S + i) * S;
        const double* Grow = G.data() + (b * S + i) * S;
        double dot = 0.0;
        for (int64_t j = 0; j <= i; ++j) dot += Grow[j] * yrow[j];
        double* drow = dx.data() + (b * S + i) * S;
        for (int64_t j = 0; j <= i; ++j) drow[j] = yrow[j] * (Grow[j] - dot);
      }
    }
    gr.accumulate(a.node, std::move(dx));
  });
}

Var rows_prefix(Var a, int64_t n_rows) {
  Graph& g = *a.graph;
  const Tensor& t = a.value();
  if (t.rank() != 2 || n_rows <= 0 || n_rows > t.dim(0))
    throw std::invalid_argument("rows_prefix: cannot take " + std::to_string(n_rows) +
                                " rows of " + shape_str(t.shape()));
  const int64_t D = t.dim(1);
  Tensor out({n_rows, D});
  std::memcpy(out.data(), t.data(), sizeof(double) * static_cast<size_t>(n_rows * D));
  return g.make(std::move(out), {a}, [a, n_rows, D](Graph& gr, const Tensor& G) {
    Tensor dt = Tensor::zeros(a.value().shape());
    std::memcpy(dt.data(), G.data(), sizeof(double) * static_cast<size_t>(n_rows * D));
    gr.accumulate(a.node, std::move(dt));
  });
}

Var embed(Var table, const std::vector<int32_t>& tokens, int64_t batch, int64_t seq) {
  Graph& g = *table.graph;
  const Tensor& t = table.value();
  if (t.rank() != 2) throw std::invalid_argument("embed table must be 2-d, got " + shape_str(t.shape()));
  if (static_cast<int64_t>(tokens.size()) != batch * seq)
    throw std::invalid_argument("embed: " + std::to_string(tokens.size()) + " tokens for a " +
                                std::to_string(batch) + "x" + std::to_string(seq) + " layout");
  const int64_t V = t.dim(0), D = t.dim(1);
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] < 0 || tokens[i] >= V)
      throw std::out_of_range("embed: token " + std::to_string(tokens[i]) + " at position " +
                              std::to_string(i) + " outside vocab of " + std::to_string(V));
  Tensor out({batch, seq, D});
  for (int64_t i = 0; i < batch * seq; ++i)
    std::memcpy(out.data() + i * D, t.data() + tokens[static_cast<size_t>(i)] * D,
                sizeof(double) * static_cast<size_t>(D));
  return g.make(std::move(out), {table}, [table, tokens, D](Graph& gr, const Tensor& G) {
    Tensor dt = Tensor::zeros(table.value().shape());
    for (size_t i = 0; i < tokens.size(); ++i) {
      double* row = dt.data() + static_cast<int64_t>(tokens[i]) * D;
      const double* grow = G.data() + static_cast<int64_t>(i) * D;
      for (int64_t j = 0; j < D; ++j) row[j] += grow[j];
    }
    gr.accumulate(table.node, std::move(dt));
  });
}

Var cross_entropy(Var logits, const std::vector<int32_t>& targets, int ignore_index) {
  Graph& g = *logits.graph;
  const Tensor& Z = logits.value();
  if (Z.rank() != 3)
    throw std::invalid_argument("cross_entropy expects [batch, seq, vocab] logits, got " +
                                shape_str(Z.shape()));
  const int64_t P = Z.dim(0) * Z.dim(1);
  const int64_t V = Z.dim(2);
  if (static_cast<int64_t>(targets.size()) != P)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(P) + " positions");
  std::vector<double> lse(static_cast<size_t>(P), 0.0);
  int64_t live = 0;
  double total = 0.0;
  for (int64_t p = 0; p < P; ++p) {
    const int32_t t = targets[static_cast<size_t>(p)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= V)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " at position " +
                              std::to_string(p) + " outside vocab of " + std::to_string(V));
    const double* row = Z.data() + p * V;
    double mx = row[0];
    for (int64_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double s = 0.0;
    for (int64_t v = 0; v < V; ++v) s += std::exp(row[v] - mx);
    lse[static_cast<size_t>(p)] = mx + std::log(s);
    total += lse[static_cast<size_t>(p)] - row[t];
    ++live;
  }
  if (live == 0) throw std::invalid_argument("cross_entropy: every position is ignored");
  Tensor out({1});
  out[0] = total / static_cast<double>(live);
  return g.make(std::move(out), {logits},
                [logits, targets, ignore_index, lse, live, P, V](Graph& gr, const Tensor& G) {
                  const Tensor& Z = logits.value();
                  const double w = G[0] / static_cast<double>(live);
                  Tensor dz = Tensor::zeros(Z.shape());
                  for (int64_t p = 0; p < P; ++p) {
                    const int32_t t = targets[static_cast<size_t>(p)];
                    if (t == ignore_index) continue;
                    const double* row = Z.data() + p * V;
                    double* drow = dz.data() + p * V;
                    const double l = lse[static_cast<size_t>(p)];
                    for (int64_t v = 0; v < V; ++v) drow[v] = w * std::exp(row[v] - l);
                    drow[t] -= w;
                  }
                  gr.accumulate(logits.node, std::move(dz));
                });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
  Tensor out({1});
  out[0] = s;
  return g.make(std::move(out), {a}, [a](Graph& gr, const Tensor& G) {
    gr.accumulate(a.node, Tensor::full(a.value().shape(), G[0]));
  });
}

void set_trainable(const std::vector<Parameter*>& params, const std::vector<int>& layer_ids,
                   bool flag) {
  for (int id : layer_ids) {
    bool hit = false;
    for (Parameter* p : params) {
      if (p->layer_id && *p->layer_id == id) {
        p->trainable = flag;
        hit = true;
      }
    }
    if (!hit)
      throw std::invalid_argument("set_trainable: no parameter tagged with layer " +
                                  std::to_string(id));
  }
}

}  // namespace selora
