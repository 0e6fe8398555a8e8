#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/tensor.hpp"

namespace pdsa {

/// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// One (source row, destination row, destination block, weight) term of a
/// fixed sparse linear map. Weights come from geometry and are constant
/// with respect to parameters.
struct ScatterTerm {
  std::int64_t src = 0;
  std::int64_t dst = 0;
  std::int64_t block = 0;
  double weight = 0.0;
};

namespace kern {

// C[m x n] += A[m x k] * B[k x n], row-major. i-l-j order so the inner loop
// runs over contiguous rows of B and C and auto-vectorizes.
template <typename T>
void mm_nn_acc(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c,
               std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = a + i * k;
    T* __restrict__ crow = c + i * n;
    for (std::int64_t l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* __restrict__ brow = b + l * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* a, T* at, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) at[j * rows + i] = a[i * cols + j];
}

}  // namespace kern

/// Reverse-mode tape at op granularity. Ops append nodes eagerly (values are
/// computed immediately); backward() replays registered closures in reverse
/// creation order, which fixes the gradient accumulation order and makes
/// whole runs bit-reproducible.
template <typename T>
class Tape {
 public:
  struct MaxOut {
    Var value;
    std::vector<std::int64_t> arg;  // absolute index along the reduced axis
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() {
    nodes_.clear();
    param_leaves_.clear();
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const std::vector<T>& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).needs_grad; }

  // ---- leaves ----

  Var input(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var input2d(std::int64_t rows, std::int64_t cols, std::vector<T> data) {
    return input(Tensor<T>({rows, cols}, std::move(data)));
  }

  /// Parameter leaf; the value is copied out of the store. Gradients land on
  /// the tape and are flushed with accumulate_param_grads().
  Var param(const ParamStore<T>& store, int entry) {
    const auto& e = store.at(entry);
    Node n;
    n.value = Tensor<T>(e.shape, e.value);
    n.needs_grad = true;
    n.param_entry = entry;
    Var v = push(std::move(n));
    param_leaves_.push_back(v.id);
    return v;
  }

  /// Adds scale * tape-gradient of every parameter leaf into store.grad.
  /// Order is node creation order: deterministic.
  void accumulate_param_grads(ParamStore<T>& store, T scale = T(1)) {
    for (int id : param_leaves_) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty()) continue;
      auto& g = store.at(n.param_entry).grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * n.grad[i];
    }
  }

  /// Same, but into an external per-entry sink (index = store entry id),
  /// for batch shards that must not touch the shared store concurrently.
  void accumulate_param_grads_into(std::vector<std::vector<T>>& sink, T scale = T(1)) {
    for (int id : param_leaves_) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty()) continue;
      auto& g = sink.at(static_cast<std::size_t>(n.param_entry));
      if (g.empty()) g.assign(n.grad.size(), T(0));
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * n.grad[i];
    }
  }

  // ---- ops ----

  Var linear(Var xv, Var wv, Var bv) {
    const Tensor<T>& x = value(xv);
    const Tensor<T>& w = value(wv);
    const Tensor<T>& b = value(bv);
    if (w.shape.size() != 2) throw std::invalid_argument("linear: weight must be rank 2");
    const std::int64_t in = w.shape[1], out = w.shape[0];
    if (x.cols() != in)
      throw std::invalid_argument("linear: input shape " + x.shape_str() +
                                  " does not match weight shape " + w.shape_str());
    if (b.numel() != out)
      throw std::invalid_argument("linear: bias shape " + b.shape_str() +
                                  " does not match weight shape " + w.shape_str());
    const std::int64_t rows = x.rows();

    Node n;
    n.value = Tensor<T>({rows, out});
    // y[r] = b + sum_i x[r][i] * W[:, i]; W transposed once so the inner
    // loop is an axpy over contiguous output channels.
    std::vector<T> wt(static_cast<std::size_t>(in * out));
    kern::transpose(w.data.data(), wt.data(), out, in);
    const T* __restrict__ xd = x.data.data();
    const T* __restrict__ wtd = wt.data();
    const T* __restrict__ bd = b.data.data();
    T* __restrict__ yd = n.value.data.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T* __restrict__ yrow = yd + r * out;
      for (std::int64_t o = 0; o < out; ++o) yrow[o] = bd[o];
      const T* __restrict__ xrow = xd + r * in;
      for (std::int64_t i = 0; i < in; ++i) {
        const T xi = xrow[i];
        const T* __restrict__ wtrow = wtd + i * out;
        for (std::int64_t o = 0; o < out; ++o) yrow[o] += xi * wtrow[o];
      }
    }
    n.needs_grad = requires_grad(xv) || requires_grad(wv) || requires_grad(bv);
    Var yvar = push(std::move(n));
    if (node(yvar).needs_grad) {
      set_back(yvar, [this, xv, wv, bv, yvar, rows, in, out] {
        const std::vector<T>& gy = node(yvar).grad;
        const Tensor<T>& x = value(xv);
        const Tensor<T>& w = value(wv);
        if (requires_grad(xv)) {
          // dX += dY * W, inner loop over contiguous W rows
          kern::mm_nn_acc(gy.data(), w.data.data(), ensure_grad(xv).data(), rows, out, in);
        }
        if (requires_grad(wv)) {
          // dW += dY^T * X as rank-1 row updates, inner loop over X rows
          T* __restrict__ gw = ensure_grad(wv).data();
          const T* __restrict__ gyd = gy.data();
          const T* __restrict__ xd = x.data.data();
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* __restrict__ gyrow = gyd + r * out;
            const T* __restrict__ xrow = xd + r * in;
            for (std::int64_t o = 0; o < out; ++o) {
              const T g = gyrow[o];
              T* __restrict__ gwrow = gw + o * in;
              for (std::int64_t i = 0; i < in; ++i) gwrow[i] += g * xrow[i];
            }
          }
        }
        if (requires_grad(bv)) {
          T* __restrict__ gb = ensure_grad(bv).data();
          const T* __restrict__ gyd = gy.data();
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* __restrict__ gyrow = gyd + r * out;
            for (std::int64_t o = 0; o < out; ++o) gb[o] += gyrow[o];
          }
        }
      });
    }
    return yvar;
  }

  Var relu(Var xv) {
    const Tensor<T>& x = value(xv);
    Node n;
    n.value = Tensor<T>(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      n.value.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv] {
        const std::vector<T>& gy = node(yv).grad;
        const Tensor<T>& x = value(xv);
        std::vector<T>& gx = ensure_grad(xv);
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (x.data[i] > T(0)) gx[i] += gy[i];
      });
    }
    return yv;
  }

  /// Per-row layer normalization over the last axis, affine.
  Var layer_norm(Var xv, Var gammav, Var betav) {
    const Tensor<T>& x = value(xv);
    const std::int64_t rows = x.rows(), c = x.cols();
    if (value(gammav).numel() != c || value(betav).numel() != c)
      throw std::invalid_argument("layer_norm: affine params do not match width " +
                                  x.shape_str());
    constexpr T kEps = T(1e-5);
    Node n;
    n.value = Tensor<T>(x.shape);
    n.aux.resize(static_cast<std::size_t>(rows * c + rows));  // xhat rows then inv_std
    const T* g = value(gammav).data.data();
    const T* b = value(betav).data.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xrow = x.data.data() + r * c;
      T mu = T(0);
      for (std::int64_t j = 0; j < c; ++j) mu += xrow[j];
      mu /= static_cast<T>(c);
      T var = T(0);
      for (std::int64_t j = 0; j < c; ++j) {
        const T d = xrow[j] - mu;
        var += d * d;
      }
      var /= static_cast<T>(c);
      const T inv = T(1) / std::sqrt(var + kEps);
      T* xh = n.aux.data() + r * c;
      T* yrow = n.value.data.data() + r * c;
      for (std::int64_t j = 0; j < c; ++j) {
        xh[j] = (xrow[j] - mu) * inv;
        yrow[j] = g[j] * xh[j] + b[j];
      }
      n.aux[static_cast<std::size_t>(rows * c + r)] = inv;
    }
    n.needs_grad = requires_grad(xv) || requires_grad(gammav) || requires_grad(betav);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, gammav, betav, yv, rows, c] {
        const Node& yn = node(yv);
        const std::vector<T>& gy = yn.grad;
        const T* gamma = value(gammav).data.data();
        const bool need_x = requires_grad(xv);
        const bool need_g = requires_grad(gammav);
        const bool need_b = requires_grad(betav);
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xh = yn.aux.data() + r * c;
          const T inv = yn.aux[static_cast<std::size_t>(rows * c + r)];
          const T* gyrow = gy.data() + r * c;
          if (need_g) {
            std::vector<T>& gg = ensure_grad(gammav);
            for (std::int64_t j = 0; j < c; ++j) gg[static_cast<std::size_t>(j)] += gyrow[j] * xh[j];
          }
          if (need_b) {
            std::vector<T>& gb = ensure_grad(betav);
            for (std::int64_t j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += gyrow[j];
          }
          if (need_x) {
            std::vector<T>& gx = ensure_grad(xv);
            T s1 = T(0), s2 = T(0);
            for (std::int64_t j = 0; j < c; ++j) {
              const T dxh = gyrow[j] * gamma[j];
              s1 += dxh;
              s2 += dxh * xh[j];
            }
            T* gxrow = gx.data() + r * c;
            const T cn = static_cast<T>(c);
            for (std::int64_t j = 0; j < c; ++j) {
              const T dxh = gyrow[j] * gamma[j];
              gxrow[j] += inv * (dxh - (s1 + xh[j] * s2) / cn);
            }
          }
        }
      });
    }
    return yv;
  }

  /// Numerically stable softmax along `axis` of a rank-2 tensor.
  Var softmax(Var xv, int axis) {
    const Tensor<T>& x = value(xv);
    if (x.shape.size() != 2) throw std::invalid_argument("softmax: rank-2 input required");
    if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
    if (axis == 0) return softmax_groups(xv, x.rows());
    const std::int64_t rows = x.rows(), c = x.cols();
    Node n;
    n.value = Tensor<T>(x.shape);
    for (std::int64_t r = 0; r < rows; ++r)
      softmax_row(x.data.data() + r * c, n.value.data.data() + r * c, c);
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv, rows, c] {
        const Node& yn = node(yv);
        std::vector<T>& gx = ensure_grad(xv);
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* p = yn.value.data.data() + r * c;
          const T* gy = yn.grad.data() + r * c;
          T dotp = T(0);
          for (std::int64_t j = 0; j < c; ++j) dotp += gy[j] * p[j];
          T* gxrow = gx.data() + r * c;
          for (std::int64_t j = 0; j < c; ++j) gxrow[j] += p[j] * (gy[j] - dotp);
        }
      });
    }
    return yv;
  }

  /// Softmax down each column within consecutive groups of `k` rows.
  /// With k == rows this is softmax over axis 0.
  Var softmax_groups(Var xv, std::int64_t k) {
    const Tensor<T>& x = value(xv);
    const std::int64_t rows = x.rows(), c = x.cols();
    if (k < 1 || rows % k != 0)
      throw std::invalid_argument("softmax_groups: rows not divisible by group size");
    const std::int64_t groups = rows / k;
    Node n;
    n.value = Tensor<T>(x.shape);
    std::vector<T> colmax(static_cast<std::size_t>(c)), colsum(static_cast<std::size_t>(c));
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* xg = x.data.data() + g * k * c;
      T* yg = n.value.data.data() + g * k * c;
      for (std::int64_t j = 0; j < c; ++j) colmax[static_cast<std::size_t>(j)] = xg[j];
      for (std::int64_t r = 1; r < k; ++r) {
        const T* xrow = xg + r * c;
        for (std::int64_t j = 0; j < c; ++j)
          if (xrow[j] > colmax[static_cast<std::size_t>(j)]) colmax[static_cast<std::size_t>(j)] = xrow[j];
      }
      std::fill(colsum.begin(), colsum.end(), T(0));
      for (std::int64_t r = 0; r < k; ++r) {
        const T* xrow = xg + r * c;
        T* yrow = yg + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
          const T e = std::exp(xrow[j] - colmax[static_cast<std::size_t>(j)]);
          yrow[j] = e;
          colsum[static_cast<std::size_t>(j)] += e;
        }
      }
      for (std::int64_t r = 0; r < k; ++r) {
        T* yrow = yg + r * c;
        for (std::int64_t j = 0; j < c; ++j) yrow[j] /= colsum[static_cast<std::size_t>(j)];
      }
    }
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv, groups, k, c] {
        const Node& yn = node(yv);
        std::vector<T>& gx = ensure_grad(xv);
        std::vector<T> dotp(static_cast<std::size_t>(c));
        for (std::int64_t g = 0; g < groups; ++g) {
          const T* p = yn.value.data.data() + g * k * c;
          const T* gy = yn.grad.data() + g * k * c;
          T* gxg = gx.data() + g * k * c;
          std::fill(dotp.begin(), dotp.end(), T(0));
          for (std::int64_t r = 0; r < k; ++r)
            for (std::int64_t j = 0; j < c; ++j)
              dotp[static_cast<std::size_t>(j)] += gy[r * c + j] * p[r * c + j];
          for (std::int64_t r = 0; r < k; ++r)
            for (std::int64_t j = 0; j < c; ++j)
              gxg[r * c + j] += p[r * c + j] * (gy[r * c + j] - dotp[static_cast<std::size_t>(j)]);
        }
      });
    }
    return yv;
  }

  /// Max over `axis` of a rank-2 tensor. Gradient routes to the argmax
  /// winner; ties break toward the lowest index.
  MaxOut max_reduce(Var xv, int axis) {
    const Tensor<T>& x = value(xv);
    if (x.shape.size() != 2) throw std::invalid_argument("max_reduce: rank-2 input required");
    if (axis != 0 && axis != 1) throw std::invalid_argument("max_reduce: axis must be 0 or 1");
    if (axis == 0) return max_groups(xv, x.rows());
    const std::int64_t rows = x.rows(), c = x.cols();
    Node n;
    n.value = Tensor<T>({rows});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xrow = x.data.data() + r * c;
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < c; ++j)
        if (xrow[j] > xrow[best]) best = j;
      n.value.data[static_cast<std::size_t>(r)] = xrow[best];
      arg[static_cast<std::size_t>(r)] = best;
    }
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      auto argc = arg;
      set_back(yv, [this, xv, yv, argc, c] {
        const std::vector<T>& gy = node(yv).grad;
        std::vector<T>& gx = ensure_grad(xv);
        for (std::size_t r = 0; r < argc.size(); ++r)
          gx[r * static_cast<std::size_t>(c) + static_cast<std::size_t>(argc[r])] += gy[r];
      });
    }
    return {yv, std::move(arg)};
  }

  /// Column-wise max within consecutive groups of `k` rows: the pooling used
  /// for neighborhoods ([M*k x c] -> [M x c]) and for global readout (k = rows).
  /// arg holds the absolute winning row per (group, column).
  MaxOut max_groups(Var xv, std::int64_t k) {
    const Tensor<T>& x = value(xv);
    const std::int64_t rows = x.rows(), c = x.cols();
    if (k < 1 || rows % k != 0)
      throw std::invalid_argument("max_groups: rows not divisible by group size");
    const std::int64_t groups = rows / k;
    Node n;
    n.value = Tensor<T>({groups, c});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(groups * c));
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* xg = x.data.data() + g * k * c;
      T* yrow = n.value.data.data() + g * c;
      std::int64_t* argrow = arg.data() + g * c;
      for (std::int64_t j = 0; j < c; ++j) {
        yrow[j] = xg[j];
        argrow[j] = g * k;
      }
      for (std::int64_t r = 1; r < k; ++r) {
        const T* xrow = xg + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
          if (xrow[j] > yrow[j]) {
            yrow[j] = xrow[j];
            argrow[j] = g * k + r;
          }
        }
      }
    }
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      auto argc = arg;
      set_back(yv, [this, xv, yv, argc, c] {
        const std::vector<T>& gy = node(yv).grad;
        std::vector<T>& gx = ensure_grad(xv);
        for (std::size_t i = 0; i < argc.size(); ++i)
          gx[static_cast<std::size_t>(argc[i]) * static_cast<std::size_t>(c) +
             i % static_cast<std::size_t>(c)] += gy[i];
      });
    }
    return {yv, std::move(arg)};
  }

  Var mean_reduce(Var xv, int axis) {
    const Tensor<T>& x = value(xv);
    if (x.shape.size() != 2) throw std::invalid_argument("mean_reduce: rank-2 input required");
    if (axis != 0 && axis != 1) throw std::invalid_argument("mean_reduce: axis must be 0 or 1");
    const std::int64_t rows = x.rows(), c = x.cols();
    Node n;
    if (axis == 1) {
      n.value = Tensor<T>({rows});
      for (std::int64_t r = 0; r < rows; ++r) {
        T s = T(0);
        for (std::int64_t j = 0; j < c; ++j) s += x.at(r, j);
        n.value.data[static_cast<std::size_t>(r)] = s / static_cast<T>(c);
      }
    } else {
      n.value = Tensor<T>({c});
      for (std::int64_t j = 0; j < c; ++j) {
        T s = T(0);
        for (std::int64_t r = 0; r < rows; ++r) s += x.at(r, j);
        n.value.data[static_cast<std::size_t>(j)] = s / static_cast<T>(rows);
      }
    }
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv, axis, rows, c] {
        const std::vector<T>& gy = node(yv).grad;
        std::vector<T>& gx = ensure_grad(xv);
        if (axis == 1) {
          for (std::int64_t r = 0; r < rows; ++r) {
            const T g = gy[static_cast<std::size_t>(r)] / static_cast<T>(c);
            for (std::int64_t j = 0; j < c; ++j) gx[static_cast<std::size_t>(r * c + j)] += g;
          }
        } else {
          for (std::int64_t j = 0; j < c; ++j) {
            const T g = gy[static_cast<std::size_t>(j)] / static_cast<T>(rows);
            for (std::int64_t r = 0; r < rows; ++r) gx[static_cast<std::size_t>(r * c + j)] += g;
          }
        }
      });
    }
    return yv;
  }

  Var add(Var a, Var b) { return elementwise(a, b, /*op=*/0); }
  Var sub(Var a, Var b) { return elementwise(a, b, /*op=*/1); }
  Var mul(Var a, Var b) { return elementwise(a, b, /*op=*/2); }

  Var scale(Var xv, T factor) {
    const Tensor<T>& x = value(xv);
    Node n;
    n.value = Tensor<T>(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) n.value.data[i] = x.data[i] * factor;
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv, factor] {
        const std::vector<T>& gy = node(yv).grad;
        std::vector<T>& gx = ensure_grad(xv);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
      });
    }
    return yv;
  }

  Var concat_cols(Var av, Var bv) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (a.rows() != b.rows())
      throw std::invalid_argument("concat_cols: row mismatch " + a.shape_str() + " vs " +
                                  b.shape_str());
    const std::int64_t rows = a.rows(), ca = a.cols(), cb = b.cols();
    Node n;
    n.value = Tensor<T>({rows, ca + cb});
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(a.data.data() + r * ca, ca, n.value.data.data() + r * (ca + cb));
      std::copy_n(b.data.data() + r * cb, cb, n.value.data.data() + r * (ca + cb) + ca);
    }
    n.needs_grad = requires_grad(av) || requires_grad(bv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, av, bv, yv, rows, ca, cb] {
        const std::vector<T>& gy = node(yv).grad;
        if (requires_grad(av)) {
          std::vector<T>& ga = ensure_grad(av);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < ca; ++j)
              ga[static_cast<std::size_t>(r * ca + j)] += gy[static_cast<std::size_t>(r * (ca + cb) + j)];
        }
        if (requires_grad(bv)) {
          std::vector<T>& gb = ensure_grad(bv);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < cb; ++j)
              gb[static_cast<std::size_t>(r * cb + j)] += gy[static_cast<std::size_t>(r * (ca + cb) + ca + j)];
        }
      });
    }
    return yv;
  }

  Var matmul_nn(Var av, Var bv) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (a.cols() != b.rows())
      throw std::invalid_argument("matmul_nn: inner dimensions " + a.shape_str() + " vs " +
                                  b.shape_str());
    const std::int64_t m = a.rows(), k = a.cols(), nn = b.cols();
    Node n;
    n.value = Tensor<T>({m, nn});
    kern::mm_nn_acc(a.data.data(), b.data.data(), n.value.data.data(), m, k, nn);
    n.needs_grad = requires_grad(av) || requires_grad(bv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, av, bv, yv, m, k, nn] {
        const std::vector<T>& gy = node(yv).grad;
        const Tensor<T>& a = value(av);
        const Tensor<T>& b = value(bv);
        if (requires_grad(av)) {
          // dA = dC * B^T
          std::vector<T> bt(static_cast<std::size_t>(k * nn));
          kern::transpose(b.data.data(), bt.data(), k, nn);
          kern::mm_nn_acc(gy.data(), bt.data(), ensure_grad(av).data(), m, nn, k);
        }
        if (requires_grad(bv)) {
          // dB = A^T * dC
          std::vector<T> at(static_cast<std::size_t>(m * k));
          kern::transpose(a.data.data(), at.data(), m, k);
          kern::mm_nn_acc(at.data(), gy.data(), ensure_grad(bv).data(), k, m, nn);
        }
      });
    }
    return yv;
  }

  /// a[m x k] * b[n x k]^T -> [m x n]
  Var matmul_nt(Var av, Var bv) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (a.cols() != b.cols())
      throw std::invalid_argument("matmul_nt: inner dimensions " + a.shape_str() + " vs " +
                                  b.shape_str());
    const std::int64_t m = a.rows(), k = a.cols(), nn = b.rows();
    Node n;
    n.value = Tensor<T>({m, nn});
    std::vector<T> bt(static_cast<std::size_t>(k * nn));
    kern::transpose(b.data.data(), bt.data(), nn, k);
    kern::mm_nn_acc(a.data.data(), bt.data(), n.value.data.data(), m, k, nn);
    n.needs_grad = requires_grad(av) || requires_grad(bv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, av, bv, yv, m, k, nn] {
        const std::vector<T>& gy = node(yv).grad;
        const Tensor<T>& a = value(av);
        const Tensor<T>& b = value(bv);
        if (requires_grad(av)) {
          // dA = dC * B
          kern::mm_nn_acc(gy.data(), b.data.data(), ensure_grad(av).data(), m, nn, k);
        }
        if (requires_grad(bv)) {
          // dB = dC^T * A
          std::vector<T> gt(static_cast<std::size_t>(m * nn));
          kern::transpose(gy.data(), gt.data(), m, nn);
          kern::mm_nn_acc(gt.data(), a.data.data(), ensure_grad(bv).data(), nn, m, k);
        }
      });
    }
    return yv;
  }

  Var gather_rows(Var xv, std::vector<std::int64_t> rows_idx) {
    const Tensor<T>& x = value(xv);
    const std::int64_t c = x.cols(), n_src = x.rows();
    for (auto r : rows_idx)
      if (r < 0 || r >= n_src) throw std::invalid_argument("gather_rows: index out of range");
    const std::int64_t m = static_cast<std::int64_t>(rows_idx.size());
    Node n;
    n.value = Tensor<T>({m, c});
    for (std::int64_t i = 0; i < m; ++i)
      std::copy_n(x.data.data() + rows_idx[static_cast<std::size_t>(i)] * c, c,
                  n.value.data.data() + i * c);
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv, rows_idx = std::move(rows_idx), c] {
        const std::vector<T>& gy = node(yv).grad;
        std::vector<T>& gx = ensure_grad(xv);
        for (std::size_t i = 0; i < rows_idx.size(); ++i) {
          T* dst = gx.data() + rows_idx[i] * c;
          const T* src = gy.data() + static_cast<std::int64_t>(i) * c;
          for (std::int64_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      });
    }
    return yv;
  }

  /// Each row repeated `times` consecutive times: [m x c] -> [m*times x c].
  Var repeat_rows(Var xv, std::int64_t times) {
    const Tensor<T>& x = value(xv);
    if (times < 1) throw std::invalid_argument("repeat_rows: times must be >= 1");
    const std::int64_t m = x.rows(), c = x.cols();
    Node n;
    n.value = Tensor<T>({m * times, c});
    for (std::int64_t r = 0; r < m; ++r)
      for (std::int64_t t = 0; t < times; ++t)
        std::copy_n(x.data.data() + r * c, c, n.value.data.data() + (r * times + t) * c);
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv, m, times, c] {
        const std::vector<T>& gy = node(yv).grad;
        std::vector<T>& gx = ensure_grad(xv);
        for (std::int64_t r = 0; r < m; ++r) {
          T* dst = gx.data() + r * c;
          for (std::int64_t t = 0; t < times; ++t) {
            const T* src = gy.data() + (r * times + t) * c;
            for (std::int64_t j = 0; j < c; ++j) dst[j] += src[j];
          }
        }
      });
    }
    return yv;
  }

  /// Fixed sparse linear map: out[dst][block*w .. block*w+w) += weight * x[src][:]
  /// for every term. Used for the octant descriptor aggregation (8 blocks)
  /// and inverse-distance interpolation (1 block).
  Var scatter_blocks(Var xv, std::vector<ScatterTerm> terms, std::int64_t out_rows,
                     std::int64_t n_blocks) {
    const Tensor<T>& x = value(xv);
    const std::int64_t w = x.cols();
    for (const auto& t : terms)
      if (t.src < 0 || t.src >= x.rows() || t.dst < 0 || t.dst >= out_rows || t.block < 0 ||
          t.block >= n_blocks)
        throw std::invalid_argument("scatter_blocks: term out of range");
    Node n;
    n.value = Tensor<T>({out_rows, n_blocks * w});
    for (const auto& t : terms) {
      const T* src = x.data.data() + t.src * w;
      T* dst = n.value.data.data() + t.dst * n_blocks * w + t.block * w;
      const T tw = static_cast<T>(t.weight);
      for (std::int64_t j = 0; j < w; ++j) dst[j] += tw * src[j];
    }
    n.needs_grad = requires_grad(xv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, xv, yv, terms = std::move(terms), w, n_blocks] {
        const std::vector<T>& gy = node(yv).grad;
        std::vector<T>& gx = ensure_grad(xv);
        for (const auto& t : terms) {
          const T* src = gy.data() + t.dst * n_blocks * w + t.block * w;
          T* dst = gx.data() + t.src * w;
          const T tw = static_cast<T>(t.weight);
          for (std::int64_t j = 0; j < w; ++j) dst[j] += tw * src[j];
        }
      });
    }
    return yv;
  }

  /// Mean over a batch of -sum_c q_c log softmax(logits)_c with
  /// q = (1-eps) * onehot + eps / C.
  Var cross_entropy_label_smoothing(Var logitsv, const std::vector<int>& labels, T eps) {
    const Tensor<T>& logits = value(logitsv);
    if (logits.shape.size() != 2)
      throw std::invalid_argument("cross_entropy: rank-2 logits required");
    const std::int64_t bsz = logits.rows(), c = logits.cols();
    if (static_cast<std::int64_t>(labels.size()) != bsz)
      throw std::invalid_argument("cross_entropy: label count does not match batch");
    for (int l : labels)
      if (l < 0 || l >= c) throw std::invalid_argument("cross_entropy: label out of range");
    if (eps < T(0) || eps >= T(1))
      throw std::invalid_argument("cross_entropy: smoothing must be in [0,1)");

    Node n;
    n.value = Tensor<T>({1});
    n.aux.resize(static_cast<std::size_t>(bsz * c));  // probabilities
    T loss = T(0);
    for (std::int64_t r = 0; r < bsz; ++r) {
      const T* lrow = logits.data.data() + r * c;
      T* prow = n.aux.data() + r * c;
      T mx = lrow[0];
      for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, lrow[j]);
      T sum = T(0);
      for (std::int64_t j = 0; j < c; ++j) {
        prow[j] = std::exp(lrow[j] - mx);
        sum += prow[j];
      }
      const T logsum = std::log(sum) + mx;
      T row_loss = T(0);
      for (std::int64_t j = 0; j < c; ++j) {
        const T q = eps / static_cast<T>(c) +
                    (j == labels[static_cast<std::size_t>(r)] ? T(1) - eps : T(0));
        row_loss -= q * (lrow[j] - logsum);
        prow[j] /= sum;
      }
      loss += row_loss;
    }
    n.value.data[0] = loss / static_cast<T>(bsz);
    n.needs_grad = requires_grad(logitsv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, logitsv, yv, labels, eps, bsz, c] {
        const Node& yn = node(yv);
        const T g = yn.grad[0] / static_cast<T>(bsz);
        std::vector<T>& gx = ensure_grad(logitsv);
        for (std::int64_t r = 0; r < bsz; ++r) {
          const T* prow = yn.aux.data() + r * c;
          T* gxrow = gx.data() + r * c;
          for (std::int64_t j = 0; j < c; ++j) {
            const T q = eps / static_cast<T>(c) +
                        (j == labels[static_cast<std::size_t>(r)] ? T(1) - eps : T(0));
            gxrow[j] += g * (prow[j] - q);
          }
        }
      });
    }
    return yv;
  }

  // ---- backward ----

  void backward(Var root) {
    Node& rn = node(root);
    if (rn.value.numel() != 1)
      throw std::invalid_argument("backward: root must be scalar, got " + rn.value.shape_str());
    ensure_grad(root)[0] = T(1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && !n.grad.empty()) n.back();
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;  // sized lazily
    std::vector<T> aux;   // op-specific forward state
    bool needs_grad = false;
    int param_entry = -1;
    std::function<void()> back;
  };

  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename F>
  void set_back(Var v, F&& f) {
    node(v).back = std::forward<F>(f);
  }

  std::vector<T>& ensure_grad(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), T(0));
    return n.grad;
  }

  static void softmax_row(const T* x, T* y, std::int64_t c) {
    T mx = x[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::int64_t j = 0; j < c; ++j) y[j] /= sum;
  }

  Var elementwise(Var av, Var bv, int op) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (a.shape != b.shape)
      throw std::invalid_argument("elementwise: shape mismatch " + a.shape_str() + " vs " +
                                  b.shape_str());
    Node n;
    n.value = Tensor<T>(a.shape);
    const std::size_t sz = a.data.size();
    if (op == 0)
      for (std::size_t i = 0; i < sz; ++i) n.value.data[i] = a.data[i] + b.data[i];
    else if (op == 1)
      for (std::size_t i = 0; i < sz; ++i) n.value.data[i] = a.data[i] - b.data[i];
    else
      for (std::size_t i = 0; i < sz; ++i) n.value.data[i] = a.data[i] * b.data[i];
    n.needs_grad = requires_grad(av) || requires_grad(bv);
    Var yv = push(std::move(n));
    if (node(yv).needs_grad) {
      set_back(yv, [this, av, bv, yv, op] {
        const std::vector<T>& gy = node(yv).grad;
        if (requires_grad(av)) {
          std::vector<T>& ga = ensure_grad(av);
          if (op == 2) {
            const auto& bval = value(bv).data;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bval[i];
          } else {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
          }
        }
        if (requires_grad(bv)) {
          std::vector<T>& gb = ensure_grad(bv);
          if (op == 2) {
            const auto& aval = value(av).data;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * aval[i];
          } else if (op == 1) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
          } else {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
          }
        }
      });
    }
    return yv;
  }

  std::vector<Node> nodes_;
  std::vector<int> param_leaves_;
};

}  // namespace pdsa
