#include "bdlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Graph& same_graph(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) throw GraphError(std::string(op) + ": operands from different graphs");
  return *a.graph;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Rearranges one [C,H,W] image into a [C*k*k, Ho*Wo] patch matrix.
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t pad,
            std::size_t ho, std::size_t wo, double* col) {
  const std::size_t hw_out = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ch * k + ky) * k + kx) * hw_out;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
            row[oy * wo + ox] = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                    ? 0.0
                                    : img[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
}

void col2im(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t pad,
            std::size_t ho, std::size_t wo, double* img) {
  const std::size_t hw_out = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((ch * k + ky) * k + kx) * hw_out;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            img[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
          }
        }
      }
}

template <typename F>
Var unary(Var x, const char* op, F&& f, Graph::BackwardFn bw) {
  Tensor out(x.value().shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.graph->record(std::move(out), {x.id}, std::move(bw), op);
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank(A, 2, "matmul", "lhs");
  require_rank(B, 2, "matmul", "rhs");
  if (A.dim(1) != B.dim(0))
    throw ShapeError("matmul: inner dimensions differ " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const auto m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out({m, n});
  MapMat(out.ptr(), m, n).noalias() = CMapMat(A.ptr(), m, k) * CMapMat(B.ptr(), k, n);
  return g.record(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, m, k, n](Graph& gr, int self) {
                    CMapMat dY(gr.grad(self).ptr(), m, n);
                    if (gr.requires_grad(ai))
                      MapMat(gr.grad_mut(ai).ptr(), m, k).noalias() += dY * CMapMat(gr.value(bi).ptr(), k, n).transpose();
                    if (gr.requires_grad(bi))
                      MapMat(gr.grad_mut(bi).ptr(), k, n).noalias() += CMapMat(gr.value(ai).ptr(), m, k).transpose() * dY;
                  },
                  "matmul");
}

Var dense(Var x, Var weight, Var bias) {
  Graph& g = same_graph(x, weight, "dense");
  same_graph(x, bias, "dense");
  const auto& X = x.value();
  const auto& W = weight.value();
  const auto& B = bias.value();
  require_rank(X, 2, "dense", "input");
  require_rank(W, 2, "dense", "weight");
  if (X.dim(1) != W.dim(0))
    throw ShapeError("dense: input features " + std::to_string(X.dim(1)) + " != weight rows " +
                     std::to_string(W.dim(0)));
  if (B.size() != W.dim(1))
    throw ShapeError("dense: bias length " + std::to_string(B.size()) + " != outputs " + std::to_string(W.dim(1)));
  const auto n = X.dim(0), in = X.dim(1), out_f = W.dim(1);
  Tensor out({n, out_f});
  MapMat Y(out.ptr(), n, out_f);
  Y.noalias() = CMapMat(X.ptr(), n, in) * CMapMat(W.ptr(), in, out_f);
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(B.ptr(), out_f);
  return g.record(std::move(out), {x.id, weight.id, bias.id},
                  [xi = x.id, wi = weight.id, bi = bias.id, n, in, out_f](Graph& gr, int self) {
                    CMapMat dY(gr.grad(self).ptr(), n, out_f);
                    if (gr.requires_grad(xi))
                      MapMat(gr.grad_mut(xi).ptr(), n, in).noalias() +=
                          dY * CMapMat(gr.value(wi).ptr(), in, out_f).transpose();
                    if (gr.requires_grad(wi))
                      MapMat(gr.grad_mut(wi).ptr(), in, out_f).noalias() +=
                          CMapMat(gr.value(xi).ptr(), n, in).transpose() * dY;
                    if (gr.requires_grad(bi))
                      Eigen::Map<Eigen::RowVectorXd>(gr.grad_mut(bi).ptr(), out_f) += dY.colwise().sum();
                  },
                  "dense");
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return g.record(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id](Graph& gr, int self) {
                    const auto& d = gr.grad(self);
                    for (int id : {ai, bi}) {
                      if (!gr.requires_grad(id)) continue;
                      auto& t = gr.grad_mut(id);
                      for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i];
                    }
                  },
                  "add");
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return g.record(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id](Graph& gr, int self) {
                    const auto& d = gr.grad(self);
                    if (gr.requires_grad(ai)) {
                      auto& t = gr.grad_mut(ai);
                      for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i];
                    }
                    if (gr.requires_grad(bi)) {
                      auto& t = gr.grad_mut(bi);
                      for (std::size_t i = 0; i < d.size(); ++i) t[i] -= d[i];
                    }
                  },
                  "sub");
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return g.record(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id](Graph& gr, int self) {
                    const auto& d = gr.grad(self);
                    if (gr.requires_grad(ai)) {
                      auto& t = gr.grad_mut(ai);
                      const auto& bv = gr.value(bi);
                      for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i] * bv[i];
                    }
                    if (gr.requires_grad(bi)) {
                      auto& t = gr.grad_mut(bi);
                      const auto& av = gr.value(ai);
                      for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i] * av[i];
                    }
                  },
                  "mul");
}

Var scale(Var a, double c) {
  return unary(a, "scale", [c](double v) { return c * v; }, [ai = a.id, c](Graph& gr, int self) {
    const auto& d = gr.grad(self);
    auto& t = gr.grad_mut(ai);
    for (std::size_t i = 0; i < d.size(); ++i) t[i] += c * d[i];
  });
}

Var sum(Var a) {
  return a.graph->record(Tensor::scalar(a.value().sum()), {a.id},
                         [ai = a.id](Graph& gr, int self) {
                           const double d = gr.grad(self)[0];
                           auto& t = gr.grad_mut(ai);
                           for (std::size_t i = 0; i < t.size(); ++i) t[i] += d;
                         },
                         "sum");
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var abs_sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += std::abs(v);
  return a.graph->record(Tensor::scalar(s), {a.id},
                         [ai = a.id](Graph& gr, int self) {
                           const double d = gr.grad(self)[0];
                           const auto& v = gr.value(ai);
                           auto& t = gr.grad_mut(ai);
                           for (std::size_t i = 0; i < t.size(); ++i) t[i] += d * ((v[i] > 0) - (v[i] < 0));
                         },
                         "abs_sum");
}

Var relu(Var x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [xi = x.id](Graph& gr, int self) {
    const auto& d = gr.grad(self);
    const auto& v = gr.value(xi);
    auto& t = gr.grad_mut(xi);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (v[i] > 0.0) t[i] += d[i];
  });
}

Var sigmoid(Var x) {
  return unary(x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [xi = x.id](Graph& gr, int self) {
                 const auto& d = gr.grad(self);
                 const auto& y = gr.value(self);
                 auto& t = gr.grad_mut(xi);
                 for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i] * y[i] * (1.0 - y[i]);
               });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t pad) {
  Graph& g = same_graph(x, weight, "conv2d");
  same_graph(x, bias, "conv2d");
  const auto& X = x.value();
  const auto& W = weight.value();
  const auto& B = bias.value();
  require_rank(X, 4, "conv2d", "input");
  require_rank(W, 4, "conv2d", "weight");
  const auto n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  const auto o = W.dim(0), k = W.dim(2);
  if (W.dim(1) != c)
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels but kernel expects " +
                     std::to_string(W.dim(1)));
  if (W.dim(3) != k) throw ShapeError("conv2d: kernel must be square, got " + shape_str(W.shape()));
  if (B.size() != o) throw ShapeError("conv2d: bias length " + std::to_string(B.size()) + " != " + std::to_string(o));
  if (h + 2 * pad < k || w + 2 * pad < k)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + shape_str(X.shape()));
  const auto ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  const auto ckk = c * k * k, hw = ho * wo;

  Tensor out({n, o, ho, wo});
  std::vector<double> col(ckk * hw);
  CMapMat Wm(W.ptr(), o, ckk);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(X.ptr() + s * c * h * w, c, h, w, k, pad, ho, wo, col.data());
    MapMat Y(out.ptr() + s * o * hw, o, hw);
    Y.noalias() = Wm * CMapMat(col.data(), ckk, hw);
    Y.colwise() += Eigen::Map<const Eigen::VectorXd>(B.ptr(), o);
  }
  return g.record(
      std::move(out), {x.id, weight.id, bias.id},
      [xi = x.id, wi = weight.id, bi = bias.id, n, c, h, w, o, k, pad, ho, wo, ckk, hw](Graph& gr, int self) {
        const auto& dY = gr.grad(self);
        const auto& Xv = gr.value(xi);
        const bool need_x = gr.requires_grad(xi), need_w = gr.requires_grad(wi), need_b = gr.requires_grad(bi);
        CMapMat Wm(gr.value(wi).ptr(), o, ckk);
        std::vector<double> col(ckk * hw), dcol(ckk * hw);
        for (std::size_t s = 0; s < n; ++s) {
          CMapMat dYs(dY.ptr() + s * o * hw, o, hw);
          if (need_b) Eigen::Map<Eigen::VectorXd>(gr.grad_mut(bi).ptr(), o) += dYs.rowwise().sum();
          if (need_w) {
            im2col(Xv.ptr() + s * c * h * w, c, h, w, k, pad, ho, wo, col.data());
            MapMat(gr.grad_mut(wi).ptr(), o, ckk).noalias() += dYs * CMapMat(col.data(), ckk, hw).transpose();
          }
          if (need_x) {
            MapMat(dcol.data(), ckk, hw).noalias() = Wm.transpose() * dYs;
            col2im(dcol.data(), c, h, w, k, pad, ho, wo, gr.grad_mut(xi).ptr() + s * c * h * w);
          }
        }
      },
      "conv2d");
}

Var max_pool2d(Var x, std::size_t window) {
  const auto& X = x.value();
  require_rank(X, 4, "max_pool2d", "input");
  if (window == 0) throw ShapeError("max_pool2d: window must be positive");
  const auto n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  if (h < window || w < window) throw ShapeError("max_pool2d: input " + shape_str(X.shape()) + " smaller than window");
  const auto ho = h / window, wo = w / window;
  Tensor out({n, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = X.ptr() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (oy * window + dy) * w + ox * window + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = src[best];
        argmax[o] = plane * h * w + best;
      }
  }
  return x.graph->record(std::move(out), {x.id},
                         [xi = x.id, argmax = std::move(argmax)](Graph& gr, int self) {
                           const auto& d = gr.grad(self);
                           auto& t = gr.grad_mut(xi);
                           for (std::size_t i = 0; i < d.size(); ++i) t[argmax[i]] += d[i];
                         },
                         "max_pool2d");
}

Var global_avg_pool(Var x) {
  const auto& X = x.value();
  require_rank(X, 4, "global_avg_pool", "input");
  const auto n = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
  Tensor out({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += X[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  return x.graph->record(std::move(out), {x.id},
                         [xi = x.id, n, c, hw](Graph& gr, int self) {
                           const auto& d = gr.grad(self);
                           auto& t = gr.grad_mut(xi);
                           const double inv = 1.0 / static_cast<double>(hw);
                           for (std::size_t p = 0; p < n * c; ++p)
                             for (std::size_t i = 0; i < hw; ++i) t[p * hw + i] += d[p] * inv;
                         },
                         "global_avg_pool");
}

Var flatten(Var x) {
  const auto& X = x.value();
  if (X.rank() < 2) throw ShapeError("flatten: input must have a batch axis, got " + shape_str(X.shape()));
  const auto n = X.dim(0);
  return x.graph->record(X.reshaped({n, X.size() / n}), {x.id},
                         [xi = x.id](Graph& gr, int self) {
                           const auto& d = gr.grad(self);
                           auto& t = gr.grad_mut(xi);
                           for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i];
                         },
                         "flatten");
}

Var dropout(Var x, double rate, std::uint64_t seed, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  const auto& X = x.value();
  if (!training || rate == 0.0) {
    return x.graph->record(X, {x.id},
                           [xi = x.id](Graph& gr, int self) {
                             const auto& d = gr.grad(self);
                             auto& t = gr.grad_mut(xi);
                             for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i];
                           },
                           "dropout");
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(X.size());
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    factor[i] = counter_uniform(seed, i) < rate ? 0.0 : keep_scale;
    out[i] = X[i] * factor[i];
  }
  return x.graph->record(std::move(out), {x.id},
                         [xi = x.id, factor = std::move(factor)](Graph& gr, int self) {
                           const auto& d = gr.grad(self);
                           auto& t = gr.grad_mut(xi);
                           for (std::size_t i = 0; i < d.size(); ++i) t[i] += d[i] * factor[i];
                         },
                         "dropout");
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: expected [N,K], got " + shape_str(logits.shape()));
  const auto n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = logits.ptr() + r * k;
    double* p = out.ptr() + r * k;
    const double mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (p[j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[j] /= s;
  }
  return out;
}

Var softmax(Var logits) {
  Tensor out = softmax_rows(logits.value());
  const auto n = out.dim(0), k = out.dim(1);
  return logits.graph->record(std::move(out), {logits.id},
                              [li = logits.id, n, k](Graph& gr, int self) {
                                const auto& d = gr.grad(self);
                                const auto& p = gr.value(self);
                                auto& t = gr.grad_mut(li);
                                for (std::size_t r = 0; r < n; ++r) {
                                  double dot = 0.0;
                                  for (std::size_t j = 0; j < k; ++j) dot += d[r * k + j] * p[r * k + j];
                                  for (std::size_t j = 0; j < k; ++j) t[r * k + j] += p[r * k + j] * (d[r * k + j] - dot);
                                }
                              },
                              "softmax");
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const auto& Z = logits.value();
  if (Z.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,K], got " + shape_str(Z.shape()));
  const auto n = Z.dim(0), k = Z.dim(1);
  if (targets.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  Tensor p = softmax_rows(Z);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= k)
      throw ShapeError("cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(k) + ")");
    loss -= std::log(std::max(p[r * k + static_cast<std::size_t>(t)], std::numeric_limits<double>::min()));
  }
  loss /= static_cast<double>(n);
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.graph->record(Tensor::scalar(loss), {logits.id},
                              [li = logits.id, p = std::move(p), tg = std::move(tg), n, k](Graph& gr, int self) {
                                const double d = gr.grad(self)[0] / static_cast<double>(n);
                                auto& t = gr.grad_mut(li);
                                for (std::size_t r = 0; r < n; ++r)
                                  for (std::size_t j = 0; j < k; ++j) {
                                    const double y = static_cast<std::size_t>(tg[r]) == j ? 1.0 : 0.0;
                                    t[r * k + j] += d * (p[r * k + j] - y);
                                  }
                              },
                              "cross_entropy");
}

Var mask_blend(Var x, Var mask, Var pattern) {
  Graph& g = same_graph(x, mask, "mask_blend");
  same_graph(x, pattern, "mask_blend");
  const auto& X = x.value();
  const auto& M = mask.value();
  const auto& P = pattern.value();
  require_rank(X, 4, "mask_blend", "input");
  require_rank(M, 2, "mask_blend", "mask");
  require_rank(P, 3, "mask_blend", "pattern");
  const auto n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  if (M.dim(0) != h || M.dim(1) != w)
    throw ShapeError("mask_blend: mask " + shape_str(M.shape()) + " does not match image " + shape_str(X.shape()));
  if (P.dim(0) != c || P.dim(1) != h || P.dim(2) != w)
    throw ShapeError("mask_blend: pattern " + shape_str(P.shape()) + " does not match image " + shape_str(X.shape()));
  const auto hw = h * w;
  Tensor out(X.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t xi = (s * c + ch) * hw + i;
        out[xi] = (1.0 - M[i]) * X[xi] + M[i] * P[ch * hw + i];
      }
  return g.record(std::move(out), {x.id, mask.id, pattern.id},
                  [xi_ = x.id, mi = mask.id, pi = pattern.id, n, c, hw](Graph& gr, int self) {
                    const auto& d = gr.grad(self);
                    const auto& Xv = gr.value(xi_);
                    const auto& Mv = gr.value(mi);
                    const auto& Pv = gr.value(pi);
                    const bool nx = gr.requires_grad(xi_), nm = gr.requires_grad(mi), np = gr.requires_grad(pi);
                    Tensor* dx = nx ? &gr.grad_mut(xi_) : nullptr;
                    Tensor* dm = nm ? &gr.grad_mut(mi) : nullptr;
                    Tensor* dp = np ? &gr.grad_mut(pi) : nullptr;
                    for (std::size_t s = 0; s < n; ++s)
                      for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t i = 0; i < hw; ++i) {
                          const std::size_t k = (s * c + ch) * hw + i;
                          if (dx) (*dx)[k] += d[k] * (1.0 - Mv[i]);
                          if (dm) (*dm)[i] += d[k] * (Pv[ch * hw + i] - Xv[k]);
                          if (dp) (*dp)[ch * hw + i] += d[k] * Mv[i];
                        }
                  },
                  "mask_blend");
}

}  // namespace bdlab::ops
