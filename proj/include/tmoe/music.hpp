#pragma once

#include <cmath>
#include <random>
#include <string>

#include <json.hpp>

#include "tmoe/container.hpp"
#include "tmoe/tensor.hpp"

namespace tmoe {

// Frame-level acoustic features, fixed 35-channel layout:
//   [0]      energy envelope
//   [1..20]  MFCC
//   [21..32] chroma
//   [33]     onset strength (>= 0)
//   [34]     beat indicator ({0,1})
struct MusicChannels {
  static constexpr int energy = 0;
  static constexpr int mfcc_begin = 1;
  static constexpr int mfcc_count = 20;
  static constexpr int chroma_begin = 21;
  static constexpr int chroma_count = 12;
  static constexpr int onset = 33;
  static constexpr int beat = 34;
  static constexpr int total = 35;
};

struct MusicFeatures {
  Tensor<float> frames;  // L x 35
  float fps = 30.0f;

  int length() const { return frames.rows; }
};

struct TempoEstimate {
  double bpm = 0;
  double confidence = 0;
  bool valid = false;
};

inline void validate_music(const MusicFeatures& m) {
  if (m.frames.cols != MusicChannels::total)
    throw std::runtime_error("music features: expected 35 channels, got " +
                             std::to_string(m.frames.cols));
  if (m.frames.rows < 1) throw std::runtime_error("music features: empty");
  for (int i = 0; i < m.frames.rows; ++i)
    for (int j = 0; j < m.frames.cols; ++j) {
      float v = m.frames.at(i, j);
      if (!std::isfinite(v))
        throw std::runtime_error("music features: non-finite value at frame " +
                                 std::to_string(i));
      if (j == MusicChannels::beat && v != 0.0f && v != 1.0f)
        throw std::runtime_error("music features: beat channel not binary at frame " +
                                 std::to_string(i));
      if (j == MusicChannels::onset && v < 0.0f)
        throw std::runtime_error("music features: negative onset at frame " +
                                 std::to_string(i));
    }
}

inline MusicFeatures load_features(const std::string& path) {
  ContainerData c = load_container(path);
  MusicFeatures m{std::move(c.frames), c.fps};
  validate_music(m);
  return m;
}

inline void save_features(const std::string& path, const MusicFeatures& m,
                          double bpm = 0) {
  save_container(path, m.frames, m.fps);
  nlohmann::json meta;
  meta["kind"] = "music";
  meta["fps"] = m.fps;
  if (bpm > 0) meta["bpm"] = bpm;
  meta["channel_map"] = {{"energy", 1}, {"mfcc", 20}, {"chroma", 12},
                         {"onset", 1},  {"beat", 1}};
  std::ofstream f(path + ".meta.json");
  f << meta.dump(2) << "\n";
}

// Synthetic click-track features at a fixed BPM. Beat frames at round(i*F_b),
// onset = beat impulses smoothed by a short triangular kernel, energy a
// periodic envelope, mfcc/chroma seeded smooth noise modulated by the envelope.
inline MusicFeatures synth_click_features(double bpm, int L, double fps,
                                          uint64_t seed) {
  if (bpm < 30.0 || bpm > 300.0)
    throw std::invalid_argument("synth_click_features: bpm out of [30,300]");
  double fb = 60.0 * fps / bpm;
  if (L < 2.0 * fb)
    throw std::invalid_argument("synth_click_features: L too short for two beats");

  MusicFeatures m;
  m.fps = static_cast<float>(fps);
  m.frames = Tensor<float>(L, MusicChannels::total);
  std::mt19937 rng(static_cast<uint32_t>(seed ^ 0x9e3779b9u));
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int i = 0;; ++i) {
    int frame = static_cast<int>(std::lround(i * fb));
    if (frame >= L) break;
    m.frames.at(frame, MusicChannels::beat) = 1.0f;
  }
  // Onset: triangular smoothing of the beat impulses.
  for (int t = 0; t < L; ++t) {
    float acc = 0;
    for (int d = -2; d <= 2; ++d) {
      int s = t + d;
      if (s >= 0 && s < L)
        acc += m.frames.at(s, MusicChannels::beat) * (1.0f - 0.3f * std::abs(d));
    }
    m.frames.at(t, MusicChannels::onset) = std::max(0.0f, acc);
  }
  for (int t = 0; t < L; ++t) {
    double phase = 2.0 * M_PI * t / fb;
    m.frames.at(t, MusicChannels::energy) =
        static_cast<float>(0.5 + 0.5 * std::cos(phase));
  }
  // Smooth seeded noise for mfcc/chroma: random low-frequency sinusoids
  // modulated by the energy envelope.
  for (int j = 0; j < MusicChannels::mfcc_count + MusicChannels::chroma_count; ++j) {
    int col = (j < MusicChannels::mfcc_count)
                  ? MusicChannels::mfcc_begin + j
                  : MusicChannels::chroma_begin + (j - MusicChannels::mfcc_count);
    double a = gauss(rng), b = gauss(rng);
    double freq = 0.5 + 0.1 * std::abs(gauss(rng));
    for (int t = 0; t < L; ++t) {
      double slow = a * std::sin(2.0 * M_PI * freq * t / fps) +
                    b * std::cos(2.0 * M_PI * freq * t / fps);
      m.frames.at(t, col) = static_cast<float>(
          slow * (0.5 + 0.5 * m.frames.at(t, MusicChannels::energy)));
    }
  }
  return m;
}

// Tempo from onset autocorrelation. Scans a fine BPM grid; each candidate is
// scored by the interpolated autocorrelation summed over four period multiples,
// which suppresses sub- and super-harmonics of the true tempo.
inline TempoEstimate estimate_bpm(const MusicFeatures& m) {
  double fps = m.fps;
  int L = m.length();
  if (L < static_cast<int>(4.0 * fps))
    throw std::invalid_argument("estimate_bpm: need at least 4 seconds of frames");

  std::vector<double> onset(L);
  double mean = 0;
  for (int t = 0; t < L; ++t) {
    onset[t] = m.frames.at(t, MusicChannels::onset);
    mean += onset[t];
  }
  mean /= L;
  double r0 = 0;
  for (int t = 0; t < L; ++t) {
    onset[t] -= mean;
    r0 += onset[t] * onset[t];
  }
  TempoEstimate est;
  if (r0 < 1e-12) return est;  // flat onset channel

  int max_lag = static_cast<int>(std::ceil(fps * 60.0 / 30.0)) * 4 + 2;
  max_lag = std::min(max_lag, L - 1);
  std::vector<double> ac(max_lag + 1, 0.0);
  for (int lag = 0; lag <= max_lag; ++lag) {
    double acc = 0;
    for (int t = 0; t + lag < L; ++t) acc += onset[t] * onset[t + lag];
    ac[lag] = acc / r0;
  }
  auto ac_interp = [&](double lag) -> double {
    if (lag >= max_lag) return 0.0;
    int lo = static_cast<int>(lag);
    double frac = lag - lo;
    return ac[lo] * (1.0 - frac) + ac[lo + 1] * frac;
  };

  double best_score = -1e9, best_bpm = 0;
  for (double bpm = 30.0; bpm <= 300.0; bpm += 0.05) {
    double period = fps * 60.0 / bpm;
    double score = 0;
    for (int k = 1; k <= 4; ++k) score += ac_interp(k * period);
    // Slight high-tempo preference breaks exact sub-harmonic ties.
    score += 1e-4 * bpm / 300.0;
    if (score > best_score) {
      best_score = score;
      best_bpm = bpm;
    }
  }
  est.bpm = best_bpm;
  est.confidence =
      std::clamp(ac_interp(fps * 60.0 / best_bpm), 0.0, 1.0);
  est.valid = best_bpm >= 30.0 && best_bpm <= 300.0 && est.confidence > 0.05;
  return est;
}

}  // namespace tmoe
