#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "tmoe/kinematics.hpp"

namespace tmoe {

enum class FeatureKind { kinetic, geometric };

struct FeatureSet {
  Tensor<double> vectors;  // N x F
  FeatureKind kind = FeatureKind::kinetic;
};

struct BeatSet {
  std::vector<int> frames;  // strictly increasing
  double fps = 30;
};

// Mean joint speed from FK, smoothed with a 5-frame moving average; beats are
// the strict local minima (kinematic-beat convention).
inline BeatSet detect_dance_beats(const MotionSequence& motion, const Skeleton& skel) {
  int L = motion.length();
  if (L < 5) throw std::invalid_argument("detect_dance_beats: need at least 5 frames");
  Tensor<double> pos = forward_kinematics(motion.frames.cast<double>(), skel);  // L x 3J
  int J = skel.joints;
  std::vector<double> speed(L - 1, 0.0);
  for (int t = 0; t + 1 < L; ++t) {
    double s = 0;
    for (int j = 0; j < J; ++j) {
      double dx = pos.at(t + 1, 3 * j) - pos.at(t, 3 * j);
      double dy = pos.at(t + 1, 3 * j + 1) - pos.at(t, 3 * j + 1);
      double dz = pos.at(t + 1, 3 * j + 2) - pos.at(t, 3 * j + 2);
      s += std::sqrt(dx * dx + dy * dy + dz * dz) * motion.fps;
    }
    speed[t] = s / J;
  }
  int n = static_cast<int>(speed.size());
  std::vector<double> smooth(n);
  for (int t = 0; t < n; ++t) {
    double acc = 0;
    int cnt = 0;
    for (int k = -2; k <= 2; ++k)
      if (t + k >= 0 && t + k < n) { acc += speed[t + k]; ++cnt; }
    smooth[t] = acc / cnt;
  }
  BeatSet out;
  out.fps = motion.fps;
  for (int t = 1; t + 1 < n; ++t)
    if (smooth[t] < smooth[t - 1] && smooth[t] < smooth[t + 1])
      out.frames.push_back(t);
  return out;
}

// Mean over music beats of exp(-min_d (t_d - t_m)^2 / (2 sigma^2)).
inline double beat_alignment_score(const BeatSet& music_beats,
                                   const BeatSet& dance_beats,
                                   double sigma_frames = 3.0) {
  if (music_beats.frames.empty())
    throw std::invalid_argument("beat_alignment_score: empty music beats");
  if (dance_beats.frames.empty()) return 0.0;
  double acc = 0;
  for (int tm : music_beats.frames) {
    double best = std::numeric_limits<double>::max();
    for (int td : dance_beats.frames) {
      double d = td - tm;
      best = std::min(best, d * d);
    }
    acc += std::exp(-best / (2.0 * sigma_frames * sigma_frames));
  }
  return acc / music_beats.frames.size();
}

namespace detail {

// Fixed descriptor list for the 32 geometric features. All quantities are
// translation-invariant: pairwise joint distances compared against a
// threshold, and joint heights relative to the root. Joint indices wrap
// modulo J so the list works for any skeleton size.
struct GeomDescriptor {
  int a, b;        // joint pair (distance) or joint vs root (height)
  double thresh;
  bool height;     // true: pos_a.y - root.y > thresh; false: |pos_a-pos_b| > thresh
};

inline const std::vector<GeomDescriptor>& geom_descriptors() {
  static const std::vector<GeomDescriptor> d = [] {
    std::vector<GeomDescriptor> v;
    // 16 pairwise-distance booleans over a fixed spread of joint pairs
    for (int i = 0; i < 16; ++i)
      v.push_back({1 + i, 5 + 2 * i, 0.2 + 0.1 * (i % 5), false});
    // 16 root-relative height booleans
    for (int i = 0; i < 16; ++i)
      v.push_back({i, 0, -0.4 + 0.1 * i, true});
    return v;
  }();
  return d;
}

}  // namespace detail

inline Tensor<double> extract_features(const MotionSequence& motion,
                                       const Skeleton& skel, FeatureKind kind) {
  int L = motion.length();
  if (L < 5) throw std::invalid_argument("extract_features: need at least 5 frames");
  Tensor<double> pos = forward_kinematics(motion.frames.cast<double>(), skel);
  int J = skel.joints;
  if (kind == FeatureKind::kinetic) {
    Tensor<double> f(1, J);
    for (int j = 0; j < J; ++j) {
      double acc = 0;
      for (int t = 0; t + 1 < L; ++t) {
        double dx = (pos.at(t + 1, 3 * j) - pos.at(t, 3 * j)) * motion.fps;
        double dy = (pos.at(t + 1, 3 * j + 1) - pos.at(t, 3 * j + 1)) * motion.fps;
        double dz = (pos.at(t + 1, 3 * j + 2) - pos.at(t, 3 * j + 2)) * motion.fps;
        acc += dx * dx + dy * dy + dz * dz;
      }
      f.at(0, j) = acc / (L - 1);
    }
    return f;
  }
  const auto& descs = detail::geom_descriptors();
  Tensor<double> f(1, static_cast<int>(descs.size()));
  for (size_t k = 0; k < descs.size(); ++k) {
    const auto& d = descs[k];
    int a = d.a % J, b = d.b % J;
    double acc = 0;
    for (int t = 0; t < L; ++t) {
      bool on;
      if (d.height) {
        on = pos.at(t, 3 * a + 1) - pos.at(t, 3 * 0 + 1) > d.thresh;
      } else {
        double dx = pos.at(t, 3 * a) - pos.at(t, 3 * b);
        double dy = pos.at(t, 3 * a + 1) - pos.at(t, 3 * b + 1);
        double dz = pos.at(t, 3 * a + 2) - pos.at(t, 3 * b + 2);
        on = std::sqrt(dx * dx + dy * dy + dz * dz) > d.thresh;
      }
      acc += on ? 1.0 : 0.0;
    }
    f.at(0, static_cast<int>(k)) = acc / L;
  }
  return f;
}

// Frechet distance ||mu_a-mu_b||^2 + Tr(Sa + Sb - 2(Sa Sb)^{1/2}), with the
// square root taken via eigendecomposition of Sa^{1/2} Sb Sa^{1/2}.
inline double fid(const FeatureSet& a, const FeatureSet& b) {
  if (a.kind != b.kind) throw std::invalid_argument("fid: feature kind mismatch");
  if (a.vectors.rows < 2 || b.vectors.rows < 2)
    throw std::invalid_argument("fid: need at least 2 samples per set");
  if (a.vectors.cols != b.vectors.cols)
    throw std::invalid_argument("fid: feature dim mismatch");
  int F = a.vectors.cols;
  auto to_eigen = [&](const Tensor<double>& t) {
    Eigen::MatrixXd m(t.rows, t.cols);
    for (int i = 0; i < t.rows; ++i)
      for (int j = 0; j < t.cols; ++j) m(i, j) = t.at(i, j);
    return m;
  };
  auto stats = [&](const Eigen::MatrixXd& x) {
    Eigen::VectorXd mu = x.colwise().mean();
    Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / double(x.rows() - 1);
    cov += 1e-6 * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    return std::make_pair(mu, cov);
  };
  auto [mu_a, cov_a] = stats(to_eigen(a.vectors));
  auto [mu_b, cov_b] = stats(to_eigen(b.vectors));

  auto psd_sqrt = [&](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() *
                           es.eigenvectors().transpose());
  };
  Eigen::MatrixXd sa_half = psd_sqrt(cov_a);
  Eigen::MatrixXd prod = sa_half * cov_b * sa_half;
  prod = 0.5 * (prod + prod.transpose());  // re-symmetrize against roundoff
  Eigen::MatrixXd root = psd_sqrt(prod);

  double d = (mu_a - mu_b).squaredNorm() +
             (cov_a + cov_b).trace() - 2.0 * root.trace();
  (void)F;
  return std::max(d, 0.0);
}

// Mean Euclidean distance over `pairs` seeded random index pairs.
inline double diversity(const FeatureSet& a, int pairs, uint64_t seed) {
  int N = a.vectors.rows;
  if (N < 2) throw std::invalid_argument("diversity: need at least 2 samples");
  std::mt19937 rng(static_cast<uint32_t>(seed));
  std::uniform_int_distribution<int> pick(0, N - 1);
  double acc = 0;
  for (int p = 0; p < pairs; ++p) {
    int i = pick(rng), j = pick(rng);
    double d2 = 0;
    for (int c = 0; c < a.vectors.cols; ++c) {
      double d = a.vectors.at(i, c) - a.vectors.at(j, c);
      d2 += d * d;
    }
    acc += std::sqrt(d2);
  }
  return acc / pairs;
}

}  // namespace tmoe
