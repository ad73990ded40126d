#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tmoe/tape.hpp"
#include "tmoe/tensor.hpp"

namespace tmoe {

// Named trainable tensors plus their Adam moments. Registration order is the
// checkpoint serialization order and must be deterministic.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> m, v;  // Adam moments
  };

  std::vector<Entry> entries;

  int add(const std::string& name, Tensor<T> init) {
    entries.push_back(Entry{name, std::move(init), {}, {}});
    Entry& e = entries.back();
    e.m = Tensor<T>::zeros(e.value.rows, e.value.cols);
    e.v = Tensor<T>::zeros(e.value.rows, e.value.cols);
    return static_cast<int>(entries.size()) - 1;
  }

  Tensor<T>& value(int id) { return entries[id].value; }
  const Tensor<T>& value(int id) const { return entries[id].value; }

  size_t total_params() const {
    size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries) out.add(e.name, e.value.template cast<U>());
    return out;
  }
};

// One forward pass: a tape plus a cache mapping parameter id -> leaf id, so
// each parameter appears as exactly one leaf and its gradient accumulates.
template <typename T>
struct Context {
  Tape<T>& tape;
  ParamStore<T>& params;
  std::unordered_map<int, int> leaves;

  Context(Tape<T>& t, ParamStore<T>& p) : tape(t), params(p) {}

  int use(int pid) {
    auto it = leaves.find(pid);
    if (it != leaves.end()) return it->second;
    int id = tape.leaf(params.value(pid));
    leaves.emplace(pid, id);
    return id;
  }

  // Gradient of the last backward() w.r.t. parameter pid (zeros if unused).
  Tensor<T> grad_of(int pid) const {
    auto it = leaves.find(pid);
    if (it == leaves.end() || !tape.has_grad(it->second)) {
      const Tensor<T>& v = params.value(pid);
      return Tensor<T>::zeros(v.rows, v.cols);
    }
    return tape.grad(it->second);
  }
};

template <typename T>
struct Linear {
  int W = -1, b = -1;
  int in = 0, out = 0;

  static Linear create(ParamStore<T>& ps, const std::string& name, int in, int out,
                       std::mt19937& rng, bool zero_init = false) {
    Linear l;
    l.in = in;
    l.out = out;
    T scale = zero_init ? T(0) : static_cast<T>(std::sqrt(2.0 / (in + out)));
    l.W = ps.add(name + ".W", Tensor<T>::randn(in, out, rng, scale));
    l.b = ps.add(name + ".b", Tensor<T>::zeros(1, out));
    return l;
  }

  int apply(Context<T>& ctx, int x) const {
    return ctx.tape.add_row(ctx.tape.matmul_op(x, ctx.use(W)), ctx.use(b));
  }
};

// Adam with linear warmup over warmup_steps.
template <typename T>
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int warmup_steps = 100;
  long step_count = 0;

  void step(ParamStore<T>& ps, const std::vector<Tensor<T>>& grads) {
    ++step_count;
    double eff_lr = lr;
    if (warmup_steps > 0 && step_count <= warmup_steps)
      eff_lr = lr * static_cast<double>(step_count) / warmup_steps;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t p = 0; p < ps.entries.size(); ++p) {
      auto& e = ps.entries[p];
      const Tensor<T>& g = grads[p];
      for (size_t i = 0; i < e.value.data.size(); ++i) {
        double gv = static_cast<double>(g.data[i]);
        double m = beta1 * e.m.data[i] + (1.0 - beta1) * gv;
        double v = beta2 * e.v.data[i] + (1.0 - beta2) * gv * gv;
        e.m.data[i] = static_cast<T>(m);
        e.v.data[i] = static_cast<T>(v);
        double update = eff_lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
        e.value.data[i] -= static_cast<T>(update);
      }
    }
  }

  double effective_lr_at(long step) const {
    if (warmup_steps > 0 && step <= warmup_steps)
      return lr * static_cast<double>(step) / warmup_steps;
    return lr;
  }
};

struct GradReport {
  double max_abs_err = 0;
  double max_rel_err = 0;
  int checked_params = 0;
};

// Central-difference verification of tape gradients. build_loss must be
// deterministic: two evaluations with identical parameters must agree exactly.
// Checks up to samples_per_tensor entries of every parameter tensor.
template <typename T>
GradReport gradient_check(ParamStore<T>& ps,
                          const std::function<int(Context<T>&)>& build_loss, T eps,
                          int samples_per_tensor, std::mt19937& rng) {
  auto eval = [&]() -> double {
    Tape<T> tape;
    Context<T> ctx(tape, ps);
    return static_cast<double>(tape.val(build_loss(ctx)).item());
  };

  // Determinism gate: a stochastic loss makes finite differences meaningless.
  {
    double v1 = eval();
    double v2 = eval();
    if (v1 != v2)
      throw std::invalid_argument("gradient_check: loss_fn is non-deterministic");
  }

  Tape<T> tape;
  Context<T> ctx(tape, ps);
  int loss = build_loss(ctx);
  tape.backward(loss);

  GradReport report;
  for (size_t p = 0; p < ps.entries.size(); ++p) {
    Tensor<T> analytic = ctx.grad_of(static_cast<int>(p));
    size_t n = ps.entries[p].value.size();
    std::vector<size_t> picks;
    if (static_cast<int>(n) <= samples_per_tensor) {
      for (size_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      std::uniform_int_distribution<size_t> dist(0, n - 1);
      for (int i = 0; i < samples_per_tensor; ++i) picks.push_back(dist(rng));
    }
    for (size_t idx : picks) {
      T saved = ps.entries[p].value.data[idx];
      ps.entries[p].value.data[idx] = saved + eps;
      double fp = eval();
      ps.entries[p].value.data[idx] = saved - eps;
      double fm = eval();
      ps.entries[p].value.data[idx] = saved;
      double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
      double an = static_cast<double>(analytic.data[idx]);
      double abs_err = std::abs(an - fd);
      double rel_err = abs_err / std::max({std::abs(an), std::abs(fd), 1e-8});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      ++report.checked_params;
    }
  }
  return report;
}

// Value-level numerically stable softmax; axis 0 = down columns, 1 = along rows.
template <typename T>
Tensor<T> softmax_stable(const Tensor<T>& x, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax_stable: bad axis");
  Tensor<T> out = x;
  if (axis == 1) {
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
  } else {
    for (int j = 0; j < out.cols; ++j) {
      T mx = out.at(0, j);
      for (int i = 1; i < out.rows; ++i) mx = std::max(mx, out.at(i, j));
      T sum = T(0);
      for (int i = 0; i < out.rows; ++i) {
        out.at(i, j) = std::exp(out.at(i, j) - mx);
        sum += out.at(i, j);
      }
      for (int i = 0; i < out.rows; ++i) out.at(i, j) /= sum;
    }
  }
  return out;
}

}  // namespace tmoe
