#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "tmoe/tensor.hpp"

namespace tmoe {

// Variance-preserving schedule: alpha_t^2 + sigma_t^2 = 1 for every t,
// sigma_0 = 0 and sigma_T ~= 1. Indices run 0..T inclusive.
struct NoiseSchedule {
  enum class Kind { cosine, linear };

  int T = 1000;
  Kind kind = Kind::cosine;
  std::vector<double> alpha;  // T+1 entries
  std::vector<double> sigma;

  static NoiseSchedule cosine(int T = 1000) {
    NoiseSchedule s;
    s.T = T;
    s.kind = Kind::cosine;
    s.alpha.resize(T + 1);
    s.sigma.resize(T + 1);
    const double eps = 0.008;
    auto f = [&](double t) {
      double v = std::cos((t / T + eps) / (1.0 + eps) * M_PI / 2.0);
      return v * v;
    };
    double f0 = f(0);
    for (int t = 0; t <= T; ++t) {
      double abar = std::clamp(f(t) / f0, 1e-8, 1.0);
      if (t == 0) abar = 1.0;
      s.alpha[t] = std::sqrt(abar);
      s.sigma[t] = std::sqrt(1.0 - abar);
    }
    return s;
  }

  static NoiseSchedule linear(int T = 1000) {
    NoiseSchedule s;
    s.T = T;
    s.kind = Kind::linear;
    s.alpha.resize(T + 1);
    s.sigma.resize(T + 1);
    double abar = 1.0;
    s.alpha[0] = 1.0;
    s.sigma[0] = 0.0;
    for (int t = 1; t <= T; ++t) {
      double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / std::max(T - 1, 1);
      abar *= 1.0 - beta;
      abar = std::max(abar, 1e-12);
      s.alpha[t] = std::sqrt(abar);
      s.sigma[t] = std::sqrt(1.0 - abar);
    }
    return s;
  }

  double log_snr(int t) const { return std::log(alpha[t] / sigma[t]); }
};

enum class Solver { ancestral, dpmpp_2m };

struct SamplerConfig {
  Solver solver = Solver::dpmpp_2m;
  int steps = 10;
  double guidance = 2.5;
  uint64_t seed = 0;
  double eta = 1.0;  // ancestral noise scale; 0 = deterministic (DDIM) limit

  void validate() const {
    if (steps < 1) throw std::invalid_argument("SamplerConfig: steps must be >= 1");
    if (guidance < 0) throw std::invalid_argument("SamplerConfig: guidance must be >= 0");
  }
};

// x_t = alpha_t x0 + sigma_t eps
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                        const NoiseSchedule& sched) {
  if (t < 0 || t > sched.T) throw std::invalid_argument("forward_noise: t out of range");
  if (!x0.same_shape(eps)) throw std::invalid_argument("forward_noise: shape mismatch");
  T a = static_cast<T>(sched.alpha[t]);
  T s = static_cast<T>(sched.sigma[t]);
  Tensor<T> out = x0;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * out.data[i] + s * eps.data[i];
  return out;
}

template <typename T>
double loss_simple(const Tensor<T>& x0, const Tensor<T>& x0_hat) {
  if (!x0.same_shape(x0_hat)) throw std::invalid_argument("loss_simple: shape mismatch");
  double acc = 0;
  for (size_t i = 0; i < x0.data.size(); ++i) {
    double d = static_cast<double>(x0.data[i]) - static_cast<double>(x0_hat.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(x0.size());
}

template <typename T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>& x_t, int t)>;

// Classifier-free guidance in clean-sample space:
// x_hat = x_null + w (x_cond - x_null); w=1 and w=0 return the single pass.
template <typename T>
Tensor<T> cfg_predict(const DenoiseFn<T>& cond, const DenoiseFn<T>& uncond,
                      const Tensor<T>& x_t, int t, double w) {
  if (w == 1.0) return cond(x_t, t);
  if (w == 0.0) return uncond(x_t, t);
  Tensor<T> c = cond(x_t, t);
  Tensor<T> u = uncond(x_t, t);
  for (size_t i = 0; i < c.data.size(); ++i)
    c.data[i] = static_cast<T>(u.data[i] + w * (c.data[i] - u.data[i]));
  return c;
}

// DDPM-style ancestral sampler in DDIM general form. eta=1 matches the DDPM
// posterior; eta=0 is the deterministic probability-flow limit. The final
// step to t=0 is deterministic and returns the model's clean-sample output.
template <typename T>
Tensor<T> sample_ancestral(const DenoiseFn<T>& model, Tensor<T> x,
                           const NoiseSchedule& sched, std::mt19937& rng,
                           double eta = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int t = sched.T; t >= 1; --t) {
    Tensor<T> x0h = model(x, t);
    double a_t = sched.alpha[t], s_t = sched.sigma[t];
    double a_p = sched.alpha[t - 1], s_p = sched.sigma[t - 1];
    double abar_t = a_t * a_t, abar_p = a_p * a_p;
    double step_beta = 1.0 - abar_t / abar_p;
    double post_var = (t > 1) ? (s_p * s_p / (s_t * s_t)) * step_beta : 0.0;
    double sigma_tilde = eta * std::sqrt(std::max(post_var, 0.0));
    double dir = std::sqrt(std::max(s_p * s_p - sigma_tilde * sigma_tilde, 0.0));
    for (size_t i = 0; i < x.data.size(); ++i) {
      double eps_hat =
          s_t > 0 ? (static_cast<double>(x.data[i]) - a_t * x0h.data[i]) / s_t : 0.0;
      double v = a_p * x0h.data[i] + dir * eps_hat;
      if (sigma_tilde > 0) v += sigma_tilde * gauss(rng);
      x.data[i] = static_cast<T>(v);
    }
  }
  return x;
}

// DPM-Solver++(2M), data-prediction parameterization, timesteps uniform in
// log-SNR between t=T and t=1, exact final jump to t=0.
template <typename T>
Tensor<T> sample_dpmpp_2m(const DenoiseFn<T>& model, Tensor<T> x,
                          const NoiseSchedule& sched, int steps) {
  if (steps < 1 || steps > sched.T)
    throw std::invalid_argument("sample_dpmpp_2m: steps out of range");
  // grid of discrete timesteps whose log-SNR is closest to uniform spacing
  double l_start = sched.log_snr(sched.T);
  double l_end = sched.log_snr(1);
  std::vector<int> ts(steps);
  ts[0] = sched.T;
  int cursor = sched.T;
  for (int i = 1; i < steps; ++i) {
    double target = l_start + (l_end - l_start) * i / (steps - 1 > 0 ? steps - 1 : 1);
    if (steps == 1) target = l_end;
    int best = cursor - 1 >= 1 ? cursor - 1 : 1;
    double best_err = 1e300;
    for (int t = cursor - 1; t >= 1; --t) {
      double err = std::abs(sched.log_snr(t) - target);
      if (err < best_err) {
        best_err = err;
        best = t;
      }
    }
    ts[i] = best;
    cursor = best;
  }
  ts.back() = 1;
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  steps = static_cast<int>(ts.size());

  Tensor<T> prev_x0;
  double prev_h = 0;
  for (int i = 0; i < steps; ++i) {
    int t_cur = ts[i];
    Tensor<T> x0h = model(x, t_cur);
    if (i + 1 < steps) {
      int t_next = ts[i + 1];
      double h = sched.log_snr(t_next) - sched.log_snr(t_cur);
      Tensor<T> d = x0h;
      if (i >= 1 && prev_h > 0) {
        double r = prev_h / h;
        double c1 = 1.0 + 1.0 / (2.0 * r);
        double c0 = 1.0 / (2.0 * r);
        for (size_t k = 0; k < d.data.size(); ++k)
          d.data[k] = static_cast<T>(c1 * x0h.data[k] - c0 * prev_x0.data[k]);
      }
      double ratio = sched.sigma[t_next] / sched.sigma[t_cur];
      double coef = sched.alpha[t_next] * (1.0 - std::exp(-h));
      for (size_t k = 0; k < x.data.size(); ++k)
        x.data[k] = static_cast<T>(ratio * x.data[k] + coef * d.data[k]);
      prev_h = h;
      prev_x0 = std::move(x0h);
    } else {
      // jump to t=0: sigma_0 = 0, alpha_0 = 1, h -> infinity
      x = std::move(x0h);
    }
  }
  return x;
}

template <typename T>
Tensor<T> sample(const DenoiseFn<T>& model, int rows, int cols,
                 const NoiseSchedule& sched, const SamplerConfig& cfg) {
  cfg.validate();
  std::mt19937 rng(static_cast<uint32_t>(cfg.seed ^ 0x5bd1e995u));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor<T> x(rows, cols);
  for (auto& v : x.data) v = static_cast<T>(gauss(rng));
  if (cfg.solver == Solver::ancestral)
    return sample_ancestral<T>(model, std::move(x), sched, rng, cfg.eta);
  return sample_dpmpp_2m<T>(model, std::move(x), sched, cfg.steps);
}

}  // namespace tmoe
