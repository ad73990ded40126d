#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <vector>

#include "tmoe/tensor.hpp"

namespace tmoe {

// Reverse-mode tape over 2-D tensors. Nodes are appended in evaluation order,
// so reverse insertion order is a valid topological order for backward.
// Summation orders are fixed; results are bit-reproducible.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  int leaf(Tensor<T> v) { return push(std::move(v), nullptr); }
  int constant(Tensor<T> v) { return push(std::move(v), nullptr); }

  const Tensor<T>& val(int id) const { return nodes_[id].val; }
  const Tensor<T>& grad(int id) const { return nodes_[id].grad; }
  bool has_grad(int id) const { return !nodes_[id].grad.data.empty(); }
  size_t num_nodes() const { return nodes_.size(); }

  void accum(int id, const Tensor<T>& g) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.val.rows, n.val.cols);
    n.grad += g;
  }

  void backward(int loss_id) {
    const Tensor<T>& lv = nodes_[loss_id].val;
    if (lv.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    accum(loss_id, Tensor<T>::scalar(T(1)));
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.back && !n.grad.data.empty()) n.back(*this, id);
    }
  }

  // ---- elementwise ----

  int add(int a, int b) {
    check_same(a, b, "add");
    Tensor<T> out = nodes_[a].val;
    out += nodes_[b].val;
    return push(std::move(out), [a, b](Tape& t, int self) {
      t.accum(a, t.grad(self));
      t.accum(b, t.grad(self));
    });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    Tensor<T> out = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      t.accum(a, g);
      Tensor<T> neg = g;
      for (auto& v : neg.data) v = -v;
      t.accum(b, neg);
    });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    Tensor<T> out = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      Tensor<T> ga = g, gb = g;
      const Tensor<T>& av = t.val(a);
      const Tensor<T>& bv2 = t.val(b);
      for (size_t i = 0; i < g.data.size(); ++i) {
        ga.data[i] *= bv2.data[i];
        gb.data[i] *= av.data[i];
      }
      t.accum(a, ga);
      t.accum(b, gb);
    });
  }

  int scale(int a, T s) {
    Tensor<T> out = nodes_[a].val;
    for (auto& v : out.data) v *= s;
    return push(std::move(out), [a, s](Tape& t, int self) {
      Tensor<T> g = t.grad(self);
      for (auto& v : g.data) v *= s;
      t.accum(a, g);
    });
  }

  int add_const(int a, T c) {
    Tensor<T> out = nodes_[a].val;
    for (auto& v : out.data) v += c;
    return push(std::move(out), [a](Tape& t, int self) { t.accum(a, t.grad(self)); });
  }

  int sqrt_op(int a) {
    Tensor<T> out = nodes_[a].val;
    for (auto& v : out.data) v = std::sqrt(v);
    return push(std::move(out), [a](Tape& t, int self) {
      const Tensor<T>& y = t.val(self);
      Tensor<T> g = t.grad(self);
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] /= T(2) * y.data[i];
      t.accum(a, g);
    });
  }

  int gelu(int a) {
    Tensor<T> out = nodes_[a].val;
    for (auto& v : out.data) {
      double x = static_cast<double>(v);
      v = static_cast<T>(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
    }
    return push(std::move(out), [a](Tape& t, int self) {
      const Tensor<T>& x = t.val(a);
      Tensor<T> g = t.grad(self);
      constexpr double inv_sqrt2pi = 0.3989422804014327;
      for (size_t i = 0; i < g.data.size(); ++i) {
        double xv = static_cast<double>(x.data[i]);
        double cdf = 0.5 * (1.0 + std::erf(xv / std::sqrt(2.0)));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
        g.data[i] *= static_cast<T>(cdf + xv * pdf);
      }
      t.accum(a, g);
    });
  }

  // Clamp to [0,1]; pass-through gradient inside the interval.
  int clamp01(int a) {
    Tensor<T> out = nodes_[a].val;
    for (auto& v : out.data) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
    return push(std::move(out), [a](Tape& t, int self) {
      const Tensor<T>& x = t.val(a);
      Tensor<T> g = t.grad(self);
      for (size_t i = 0; i < g.data.size(); ++i)
        if (x.data[i] < T(0) || x.data[i] > T(1)) g.data[i] = T(0);
      t.accum(a, g);
    });
  }

  // ---- matrix products ----

  int matmul_op(int a, int b) {
    Tensor<T> out = tmoe::matmul(nodes_[a].val, nodes_[b].val);
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      t.accum(a, tmoe::matmul_nt(g, t.val(b)));
      t.accum(b, tmoe::matmul_tn(t.val(a), g));
    });
  }

  // a * b^T
  int matmul_nt_op(int a, int b) {
    Tensor<T> out = tmoe::matmul_nt(nodes_[a].val, nodes_[b].val);
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      t.accum(a, tmoe::matmul(g, t.val(b)));
      t.accum(b, tmoe::matmul_tn(g, t.val(a)));
    });
  }

  // ---- broadcasts ----

  // L x D  +  1 x D
  int add_row(int a, int b) {
    const Tensor<T>& av = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    if (bv.rows != 1 || bv.cols != av.cols)
      throw std::invalid_argument("add_row: bias must be 1 x cols(a)");
    Tensor<T> out = av;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) += bv.at(0, j);
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      t.accum(a, g);
      Tensor<T> gb(1, g.cols);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
      t.accum(b, gb);
    });
  }

  // L x D  *  1 x D
  int mul_row(int a, int b) {
    const Tensor<T>& av = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    if (bv.rows != 1 || bv.cols != av.cols)
      throw std::invalid_argument("mul_row: factor must be 1 x cols(a)");
    Tensor<T> out = av;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) *= bv.at(0, j);
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      const Tensor<T>& bv2 = t.val(b);
      Tensor<T> ga = g;
      Tensor<T> gb(1, g.cols);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
          ga.at(i, j) *= bv2.at(0, j);
          gb.at(0, j) += g.at(i, j) * av2.at(i, j);
        }
      t.accum(a, ga);
      t.accum(b, gb);
    });
  }

  // L x D  *  L x 1
  int mul_col(int a, int b) {
    const Tensor<T>& av = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    if (bv.cols != 1 || bv.rows != av.rows)
      throw std::invalid_argument("mul_col: factor must be rows(a) x 1");
    Tensor<T> out = av;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) *= bv.at(i, 0);
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      const Tensor<T>& bv2 = t.val(b);
      Tensor<T> ga = g;
      Tensor<T> gb(g.rows, 1);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
          ga.at(i, j) *= bv2.at(i, 0);
          gb.at(i, 0) += g.at(i, j) * av2.at(i, j);
        }
      t.accum(a, ga);
      t.accum(b, gb);
    });
  }

  // L x D  /  L x 1
  int div_col(int a, int b) {
    const Tensor<T>& av = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    if (bv.cols != 1 || bv.rows != av.rows)
      throw std::invalid_argument("div_col: divisor must be rows(a) x 1");
    Tensor<T> out = av;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) /= bv.at(i, 0);
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& y = t.val(self);
      const Tensor<T>& bv2 = t.val(b);
      Tensor<T> ga = g;
      Tensor<T> gb(g.rows, 1);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
          ga.at(i, j) /= bv2.at(i, 0);
          gb.at(i, 0) -= g.at(i, j) * y.at(i, j) / bv2.at(i, 0);
        }
      t.accum(a, ga);
      t.accum(b, gb);
    });
  }

  // scalar node (1x1) times tensor
  int mul_scalar_node(int a, int s) {
    const Tensor<T>& sv = nodes_[s].val;
    if (sv.size() != 1) throw std::invalid_argument("mul_scalar_node: s must be 1x1");
    Tensor<T> out = nodes_[a].val;
    for (auto& v : out.data) v *= sv.data[0];
    return push(std::move(out), [a, s](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av = t.val(a);
      T sval = t.val(s).data[0];
      Tensor<T> ga = g;
      for (auto& v : ga.data) v *= sval;
      T gs = T(0);
      for (size_t i = 0; i < g.data.size(); ++i) gs += g.data[i] * av.data[i];
      t.accum(a, ga);
      t.accum(s, Tensor<T>::scalar(gs));
    });
  }

  // ---- reductions / normalizations ----

  int sum_all(int a) {
    T acc = T(0);
    for (T v : nodes_[a].val.data) acc += v;
    return push(Tensor<T>::scalar(acc), [a](Tape& t, int self) {
      T g = t.grad(self).data[0];
      const Tensor<T>& av = t.val(a);
      t.accum(a, Tensor<T>::full(av.rows, av.cols, g));
    });
  }

  int mean_all(int a) {
    size_t n = nodes_[a].val.size();
    return scale(sum_all(a), T(1) / static_cast<T>(n));
  }

  // L x D -> 1 x D
  int row_mean(int a) {
    const Tensor<T>& av = nodes_[a].val;
    if (av.rows == 0) throw std::invalid_argument("row_mean: empty input");
    Tensor<T> out(1, av.cols);
    for (int i = 0; i < av.rows; ++i)
      for (int j = 0; j < av.cols; ++j) out.at(0, j) += av.at(i, j);
    T inv = T(1) / static_cast<T>(av.rows);
    for (auto& v : out.data) v *= inv;
    return push(std::move(out), [a, inv](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      Tensor<T> ga(av2.rows, av2.cols);
      for (int i = 0; i < av2.rows; ++i)
        for (int j = 0; j < av2.cols; ++j) ga.at(i, j) = g.at(0, j) * inv;
      t.accum(a, ga);
    });
  }

  int softmax_rows(int a) {
    Tensor<T> out = nodes_[a].val;
    for (int i = 0; i < out.rows; ++i) {
      T* r = out.row(i);
      T mx = r[0];
      for (int j = 1; j < out.cols; ++j) mx = std::max(mx, r[j]);
      T sum = T(0);
      for (int j = 0; j < out.cols; ++j) {
        r[j] = std::exp(r[j] - mx);
        sum += r[j];
      }
      for (int j = 0; j < out.cols; ++j) r[j] /= sum;
    }
    return push(std::move(out), [a](Tape& t, int self) {
      const Tensor<T>& y = t.val(self);
      const Tensor<T>& g = t.grad(self);
      Tensor<T> ga(y.rows, y.cols);
      for (int i = 0; i < y.rows; ++i) {
        T dot = T(0);
        for (int j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < y.cols; ++j)
          ga.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
      }
      t.accum(a, ga);
    });
  }

  // Per-row layer norm without affine parameters (population variance).
  int layernorm_rows(int a, T eps = T(1e-5)) {
    const Tensor<T>& x = nodes_[a].val;
    Tensor<T> out(x.rows, x.cols);
    std::vector<T> inv_std(x.rows);
    for (int i = 0; i < x.rows; ++i) {
      T mean = T(0);
      for (int j = 0; j < x.cols; ++j) mean += x.at(i, j);
      mean /= static_cast<T>(x.cols);
      T var = T(0);
      for (int j = 0; j < x.cols; ++j) {
        T d = x.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<T>(x.cols);
      T is = T(1) / std::sqrt(var + eps);
      inv_std[i] = is;
      for (int j = 0; j < x.cols; ++j) out.at(i, j) = (x.at(i, j) - mean) * is;
    }
    return push(std::move(out), [a, inv_std](Tape& t, int self) {
      const Tensor<T>& y = t.val(self);
      const Tensor<T>& g = t.grad(self);
      Tensor<T> ga(y.rows, y.cols);
      int D = y.cols;
      for (int i = 0; i < y.rows; ++i) {
        T gmean = T(0), gydot = T(0);
        for (int j = 0; j < D; ++j) {
          gmean += g.at(i, j);
          gydot += g.at(i, j) * y.at(i, j);
        }
        gmean /= static_cast<T>(D);
        gydot /= static_cast<T>(D);
        for (int j = 0; j < D; ++j)
          ga.at(i, j) = inv_std[i] * (g.at(i, j) - gmean - y.at(i, j) * gydot);
      }
      t.accum(a, ga);
    });
  }

  // ---- slicing / concatenation ----

  int slice_cols(int a, int c0, int c1) {
    const Tensor<T>& av = nodes_[a].val;
    if (c0 < 0 || c1 > av.cols || c0 >= c1)
      throw std::invalid_argument("slice_cols: bad range");
    Tensor<T> out(av.rows, c1 - c0);
    for (int i = 0; i < av.rows; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = av.at(i, j);
    return push(std::move(out), [a, c0](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      Tensor<T> ga(av2.rows, av2.cols);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga.at(i, c0 + j) = g.at(i, j);
      t.accum(a, ga);
    });
  }

  int slice_rows(int a, int r0, int r1) {
    const Tensor<T>& av = nodes_[a].val;
    if (r0 < 0 || r1 > av.rows || r0 >= r1)
      throw std::invalid_argument("slice_rows: bad range");
    Tensor<T> out(r1 - r0, av.cols);
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < av.cols; ++j) out.at(i - r0, j) = av.at(i, j);
    return push(std::move(out), [a, r0](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      Tensor<T> ga(av2.rows, av2.cols);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga.at(r0 + i, j) = g.at(i, j);
      t.accum(a, ga);
    });
  }

  int concat_cols(const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("concat_cols: empty list");
    int rows = nodes_[ids[0]].val.rows;
    int total = 0;
    for (int id : ids) {
      if (nodes_[id].val.rows != rows)
        throw std::invalid_argument("concat_cols: row mismatch");
      total += nodes_[id].val.cols;
    }
    Tensor<T> out(rows, total);
    int off = 0;
    for (int id : ids) {
      const Tensor<T>& v = nodes_[id].val;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < v.cols; ++j) out.at(i, off + j) = v.at(i, j);
      off += v.cols;
    }
    std::vector<int> parents = ids;
    return push(std::move(out), [parents](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      int off2 = 0;
      for (int id : parents) {
        const Tensor<T>& v = t.val(id);
        Tensor<T> ga(v.rows, v.cols);
        for (int i = 0; i < v.rows; ++i)
          for (int j = 0; j < v.cols; ++j) ga.at(i, j) = g.at(i, off2 + j);
        t.accum(id, ga);
        off2 += v.cols;
      }
    });
  }

  // Gather columns of a 1 x G row vector.
  int gather_cols(int a, std::vector<int> idx) {
    const Tensor<T>& av = nodes_[a].val;
    if (av.rows != 1) throw std::invalid_argument("gather_cols: expects 1 x G input");
    Tensor<T> out(1, static_cast<int>(idx.size()));
    for (size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] < 0 || idx[j] >= av.cols)
        throw std::invalid_argument("gather_cols: index out of range");
      out.at(0, static_cast<int>(j)) = av.at(0, idx[j]);
    }
    return push(std::move(out), [a, idx](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      Tensor<T> ga(1, av2.cols);
      for (size_t j = 0; j < idx.size(); ++j)
        ga.at(0, idx[j]) += g.at(0, static_cast<int>(j));
      t.accum(a, ga);
    });
  }

  // ---- temporal / geometric ----

  // Depthwise 1-D convolution over time with zero "same" padding.
  // x: L x D, kernels: D x k (k odd).
  int depthwise_conv1d(int x, int kern) {
    const Tensor<T>& xv = nodes_[x].val;
    const Tensor<T>& kv = nodes_[kern].val;
    if (kv.cols % 2 == 0) throw std::invalid_argument("depthwise_conv1d: k must be odd");
    if (kv.rows != xv.cols)
      throw std::invalid_argument("depthwise_conv1d: kernel channels != input channels");
    int L = xv.rows, D = xv.cols, k = kv.cols, c = (k - 1) / 2;
    Tensor<T> out(L, D);
    for (int t = 0; t < L; ++t)
      for (int ch = 0; ch < D; ++ch) {
        T acc = T(0);
        for (int j = 0; j < k; ++j) {
          int src = t + j - c;
          if (src >= 0 && src < L) acc += kv.at(ch, j) * xv.at(src, ch);
        }
        out.at(t, ch) = acc;
      }
    return push(std::move(out), [x, kern, c, k](Tape& tp, int self) {
      const Tensor<T>& g = tp.grad(self);
      const Tensor<T>& xv2 = tp.val(x);
      const Tensor<T>& kv2 = tp.val(kern);
      int L = xv2.rows, D = xv2.cols;
      Tensor<T> gx(L, D), gk(kv2.rows, kv2.cols);
      for (int t = 0; t < L; ++t)
        for (int ch = 0; ch < D; ++ch) {
          T gv = g.at(t, ch);
          if (gv == T(0)) continue;
          for (int j = 0; j < k; ++j) {
            int src = t + j - c;
            if (src >= 0 && src < L) {
              gx.at(src, ch) += kv2.at(ch, j) * gv;
              gk.at(ch, j) += xv2.at(src, ch) * gv;
            }
          }
        }
      tp.accum(x, gx);
      tp.accum(kern, gk);
    });
  }

  // Forward difference scaled by fps: out[i] = (in[i+1] - in[i]) * fps.
  int time_diff(int a, T fps) {
    const Tensor<T>& av = nodes_[a].val;
    if (av.rows < 2) throw std::invalid_argument("time_diff: needs at least 2 rows");
    Tensor<T> out(av.rows - 1, av.cols);
    for (int i = 0; i + 1 < av.rows; ++i)
      for (int j = 0; j < av.cols; ++j)
        out.at(i, j) = (av.at(i + 1, j) - av.at(i, j)) * fps;
    return push(std::move(out), [a, fps](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      Tensor<T> ga(av2.rows, av2.cols);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
          ga.at(i + 1, j) += g.at(i, j) * fps;
          ga.at(i, j) -= g.at(i, j) * fps;
        }
      t.accum(a, ga);
    });
  }

  // Row-wise cross product of two L x 3 tensors.
  int cross3(int a, int b) {
    const Tensor<T>& av = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    if (av.cols != 3 || !av.same_shape(bv))
      throw std::invalid_argument("cross3: needs matching L x 3 inputs");
    Tensor<T> out(av.rows, 3);
    for (int i = 0; i < av.rows; ++i) {
      const T* u = av.row(i);
      const T* v = bv.row(i);
      out.at(i, 0) = u[1] * v[2] - u[2] * v[1];
      out.at(i, 1) = u[2] * v[0] - u[0] * v[2];
      out.at(i, 2) = u[0] * v[1] - u[1] * v[0];
    }
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      const Tensor<T>& bv2 = t.val(b);
      Tensor<T> ga(av2.rows, 3), gb(av2.rows, 3);
      for (int i = 0; i < av2.rows; ++i) {
        const T* u = av2.row(i);
        const T* v = bv2.row(i);
        const T* gr = g.row(i);
        // ga = v x g, gb = g x u
        ga.at(i, 0) = v[1] * gr[2] - v[2] * gr[1];
        ga.at(i, 1) = v[2] * gr[0] - v[0] * gr[2];
        ga.at(i, 2) = v[0] * gr[1] - v[1] * gr[0];
        gb.at(i, 0) = u[2] * gr[1] - u[1] * gr[2];
        gb.at(i, 1) = u[0] * gr[2] - u[2] * gr[0];
        gb.at(i, 2) = u[1] * gr[0] - u[0] * gr[1];
      }
      t.accum(a, ga);
      t.accum(b, gb);
    });
  }

  // Row-wise dot product: L x K, L x K -> L x 1.
  int rowwise_dot(int a, int b) {
    check_same(a, b, "rowwise_dot");
    const Tensor<T>& av = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    Tensor<T> out(av.rows, 1);
    for (int i = 0; i < av.rows; ++i) {
      T acc = T(0);
      for (int j = 0; j < av.cols; ++j) acc += av.at(i, j) * bv.at(i, j);
      out.at(i, 0) = acc;
    }
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      const Tensor<T>& bv2 = t.val(b);
      Tensor<T> ga(av2.rows, av2.cols), gb(av2.rows, av2.cols);
      for (int i = 0; i < av2.rows; ++i)
        for (int j = 0; j < av2.cols; ++j) {
          ga.at(i, j) = g.at(i, 0) * bv2.at(i, j);
          gb.at(i, j) = g.at(i, 0) * av2.at(i, j);
        }
      t.accum(a, ga);
      t.accum(b, gb);
    });
  }

  // Row-wise 3x3 matrix product: A, B are L x 9 (row-major 3x3 per row).
  int batch_matmul3(int a, int b) {
    const Tensor<T>& av = nodes_[a].val;
    const Tensor<T>& bv = nodes_[b].val;
    if (av.cols != 9 || !av.same_shape(bv))
      throw std::invalid_argument("batch_matmul3: needs matching L x 9 inputs");
    Tensor<T> out(av.rows, 9);
    for (int r = 0; r < av.rows; ++r) {
      const T* A = av.row(r);
      const T* B = bv.row(r);
      T* C = out.row(r);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          T acc = T(0);
          for (int k = 0; k < 3; ++k) acc += A[i * 3 + k] * B[k * 3 + j];
          C[i * 3 + j] = acc;
        }
    }
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av2 = t.val(a);
      const Tensor<T>& bv2 = t.val(b);
      Tensor<T> ga(av2.rows, 9), gb(av2.rows, 9);
      for (int r = 0; r < av2.rows; ++r) {
        const T* A = av2.row(r);
        const T* B = bv2.row(r);
        const T* G = g.row(r);
        T* GA = ga.row(r);
        T* GB = gb.row(r);
        // dA = G * B^T, dB = A^T * G
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) {
            T acc = T(0);
            for (int j = 0; j < 3; ++j) acc += G[i * 3 + j] * B[k * 3 + j];
            GA[i * 3 + k] = acc;
          }
        for (int k = 0; k < 3; ++k)
          for (int j = 0; j < 3; ++j) {
            T acc = T(0);
            for (int i = 0; i < 3; ++i) acc += A[i * 3 + k] * G[i * 3 + j];
            GB[k * 3 + j] = acc;
          }
      }
      t.accum(a, ga);
      t.accum(b, gb);
    });
  }

  // Apply per-row 3x3 rotation (L x 9) to a fixed offset vector -> L x 3.
  int rot_apply(int rot, const std::array<T, 3>& off) {
    const Tensor<T>& rv = nodes_[rot].val;
    if (rv.cols != 9) throw std::invalid_argument("rot_apply: rotation must be L x 9");
    Tensor<T> out(rv.rows, 3);
    for (int r = 0; r < rv.rows; ++r) {
      const T* R = rv.row(r);
      for (int i = 0; i < 3; ++i)
        out.at(r, i) = R[i * 3 + 0] * off[0] + R[i * 3 + 1] * off[1] + R[i * 3 + 2] * off[2];
    }
    return push(std::move(out), [rot, off](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& rv2 = t.val(rot);
      Tensor<T> gr(rv2.rows, 9);
      for (int r = 0; r < rv2.rows; ++r)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) gr.at(r, i * 3 + j) = g.at(r, i) * off[j];
      t.accum(rot, gr);
    });
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    BackFn back;
  };

  std::vector<Node> nodes_;

  int push(Tensor<T> v, BackFn back) {
    nodes_.push_back(Node{std::move(v), {}, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_same(int a, int b, const char* op) const {
    if (!nodes_[a].val.same_shape(nodes_[b].val))
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
};

// Multi-head scaled dot-product attention. q: Lq x D, k/v: Lk x D.
template <typename T>
int attention(Tape<T>& t, int q, int k, int v, int heads) {
  int D = t.val(q).cols;
  if (heads <= 0 || D % heads != 0)
    throw std::invalid_argument("attention: head count must divide D");
  if (t.val(k).cols != D || t.val(v).cols != D || t.val(k).rows != t.val(v).rows)
    throw std::invalid_argument("attention: k/v shape mismatch");
  int dh = D / heads;
  T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<int> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    int qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    int kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    int vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    int scores = t.scale(t.matmul_nt_op(qh, kh), inv_scale);
    int att = t.softmax_rows(scores);
    outs.push_back(t.matmul_op(att, vh));
  }
  return t.concat_cols(outs);
}

}  // namespace tmoe
