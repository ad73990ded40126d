#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmoe/kinematics.hpp"
#include "tmoe/music.hpp"
#include "tmoe/tempomoe.hpp"

namespace tmoe {

// Synthetic tempo-conditioned pair: click-track features plus a motion whose
// joint-speed minima land on the beat grid by construction. Slower tempo gets
// proportionally larger excursions (amplitude scaled by 60/bpm).
inline std::pair<MusicFeatures, MotionSequence> synth_pair(double bpm, int L,
                                                           double fps,
                                                           const Skeleton& skel,
                                                           uint64_t seed) {
  if (bpm < 60.0 || bpm > 200.0)
    throw std::invalid_argument("synth_pair: bpm out of [60,200]");
  MusicFeatures music = synth_click_features(bpm, L, fps, seed);

  int J = skel.joints;
  int d = MotionLayout::dim_for_joints(J);
  MotionSequence motion;
  motion.fps = static_cast<float>(fps);
  motion.frames = Tensor<float>(L, d);

  double fb = frames_per_beat(fps, bpm);
  double amp = 0.6 * (60.0 / bpm);
  std::mt19937 rng(static_cast<uint32_t>(seed * 2654435761u + 17u));
  std::uniform_real_distribution<double> uni(0.8, 1.2);
  std::vector<double> joint_amp(J);
  for (int j = 0; j < J; ++j) joint_amp[j] = amp * uni(rng);

  for (int t = 0; t < L; ++t) {
    float* row = motion.frames.row(t);
    double beat_phase = std::fmod(t / fb, 1.0);
    // alternating contact labelled only while the foot is actually planted:
    // joint angles are cosine in beat phase, so foot speed vanishes at phase
    // 0 (left pair down) and 0.5 (right pair down); labelling whole half
    // beats would mark mid-swing frames as contact and make the contact
    // penalty nonzero on the ground truth itself
    double dl = std::min(beat_phase, 1.0 - beat_phase);       // distance to 0
    double dr = std::abs(beat_phase - 0.5);                   // distance to .5
    bool left = dl <= 0.1, right = dr <= 0.1;
    row[MotionLayout::contact_begin + 0] = left ? 1.0f : 0.0f;
    row[MotionLayout::contact_begin + 2] = left ? 1.0f : 0.0f;
    row[MotionLayout::contact_begin + 1] = right ? 1.0f : 0.0f;
    row[MotionLayout::contact_begin + 3] = right ? 1.0f : 0.0f;
    // beat-synchronized vertical bounce plus a slow drift; the bounce keeps
    // the root's speed dipping on beats too, so a constant-speed root path
    // cannot wash out the whole-body speed minima the beat detector relies on
    row[MotionLayout::root_begin + 0] =
        static_cast<float>(0.03 * std::sin(2.0 * M_PI * t / (8.0 * fb)));
    row[MotionLayout::root_begin + 1] =
        static_cast<float>(0.04 * std::cos(2.0 * M_PI * t / fb));
    row[MotionLayout::root_begin + 2] =
        static_cast<float>(0.03 * std::cos(2.0 * M_PI * t / (8.0 * fb)) - 0.03);
    // joint rotations: angle extremal (zero angular speed) exactly on beats
    for (int j = 0; j < J; ++j) {
      double theta = joint_amp[j] * std::cos(2.0 * M_PI * t / fb);
      double c = std::cos(theta), s = std::sin(theta);
      float* r6 = row + MotionLayout::rot_begin + 6 * j;
      switch (j % 3) {
        case 0:  // about z
          r6[0] = static_cast<float>(c); r6[1] = static_cast<float>(s); r6[2] = 0;
          r6[3] = static_cast<float>(-s); r6[4] = static_cast<float>(c); r6[5] = 0;
          break;
        case 1:  // about x
          r6[0] = 1; r6[1] = 0; r6[2] = 0;
          r6[3] = 0; r6[4] = static_cast<float>(c); r6[5] = static_cast<float>(s);
          break;
        case 2:  // about y
          r6[0] = static_cast<float>(c); r6[1] = 0; r6[2] = static_cast<float>(-s);
          r6[3] = 0; r6[4] = 1; r6[5] = 0;
          break;
      }
    }
  }
  return {std::move(music), std::move(motion)};
}

// Per-channel mean/std over the training split; contact channels excluded.
struct NormStats {
  int dim = 0;
  std::vector<double> mean, stddev;

  nlohmann::json to_json() const {
    return {{"dim", dim}, {"mean", mean}, {"stddev", stddev}};
  }
  static NormStats from_json(const nlohmann::json& j) {
    NormStats s;
    s.dim = j.at("dim").get<int>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("stddev").get<std::vector<double>>();
    return s;
  }
};

inline NormStats compute_norm_stats(const std::vector<MotionSequence>& motions) {
  if (motions.empty()) throw std::invalid_argument("compute_norm_stats: empty set");
  int d = motions[0].dim();
  NormStats s;
  s.dim = d;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 1.0);
  long n = 0;
  for (const auto& m : motions) {
    if (m.dim() != d) throw std::invalid_argument("compute_norm_stats: dim mismatch");
    n += m.length();
  }
  for (const auto& m : motions)
    for (int i = 0; i < m.length(); ++i)
      for (int j = 0; j < d; ++j) s.mean[j] += m.frames.at(i, j);
  for (int j = 0; j < d; ++j) s.mean[j] /= n;
  std::vector<double> var(d, 0.0);
  for (const auto& m : motions)
    for (int i = 0; i < m.length(); ++i)
      for (int j = 0; j < d; ++j) {
        double dv = m.frames.at(i, j) - s.mean[j];
        var[j] += dv * dv;
      }
  for (int j = 0; j < d; ++j) s.stddev[j] = std::max(std::sqrt(var[j] / n), 1e-6);
  // contact channels stay untouched
  for (int c = 0; c < MotionLayout::contact_count; ++c) {
    s.mean[MotionLayout::contact_begin + c] = 0.0;
    s.stddev[MotionLayout::contact_begin + c] = 1.0;
  }
  return s;
}

inline MotionSequence normalize(const MotionSequence& m, const NormStats& s) {
  if (m.dim() != s.dim) throw std::invalid_argument("normalize: stats dim mismatch");
  MotionSequence out = m;
  for (int i = 0; i < m.length(); ++i)
    for (int j = 0; j < m.dim(); ++j)
      out.frames.at(i, j) =
          static_cast<float>((m.frames.at(i, j) - s.mean[j]) / s.stddev[j]);
  return out;
}

inline MotionSequence denormalize(const MotionSequence& m, const NormStats& s) {
  if (m.dim() != s.dim) throw std::invalid_argument("denormalize: stats dim mismatch");
  MotionSequence out = m;
  for (int i = 0; i < m.length(); ++i)
    for (int j = 0; j < m.dim(); ++j)
      out.frames.at(i, j) =
          static_cast<float>(m.frames.at(i, j) * s.stddev[j] + s.mean[j]);
  return out;
}

struct ManifestEntry {
  std::string music_path;
  std::string motion_path;
  double bpm = 0;  // optional, 0 = unknown
  std::string split = "train";
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  double fps = 30;
  int motion_dim = 0;
  std::string skeleton_path;

  static DatasetManifest load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    nlohmann::json j;
    f >> j;
    DatasetManifest m;
    m.fps = j.at("fps").get<double>();
    m.motion_dim = j.at("motion_dim").get<int>();
    if (j.contains("skeleton")) m.skeleton_path = j["skeleton"].get<std::string>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.music_path = e.at("music").get<std::string>();
      me.motion_path = e.at("motion").get<std::string>();
      if (e.contains("bpm")) me.bpm = e["bpm"].get<double>();
      if (e.contains("split")) me.split = e["split"].get<std::string>();
      m.entries.push_back(std::move(me));
    }
    return m;
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["fps"] = fps;
    j["motion_dim"] = motion_dim;
    if (!skeleton_path.empty()) j["skeleton"] = skeleton_path;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
      nlohmann::json je = {{"music", e.music_path}, {"motion", e.motion_path},
                           {"split", e.split}};
      if (e.bpm > 0) je["bpm"] = e.bpm;
      j["entries"].push_back(je);
    }
    std::ofstream f(path);
    f << j.dump(2) << "\n";
  }
};

struct TrainingWindow {
  MusicFeatures music;
  MotionSequence motion;
  double bpm = 0;
  int source_index = 0;
};

struct LoadedDataset {
  std::vector<TrainingWindow> train, val;
  NormStats stats;  // over the raw (unnormalized) training motion
  Skeleton skeleton;
};

// Cut index-aligned fixed-length windows; windows never cross file boundaries.
inline std::vector<std::pair<int, int>> window_starts(int length, int window,
                                                      int stride) {
  std::vector<std::pair<int, int>> out;
  for (int s = 0; s + window <= length; s += stride) out.emplace_back(s, s + window);
  return out;
}

inline LoadedDataset load_dataset(const std::string& manifest_path, int window = 256,
                                  int stride = 128) {
  DatasetManifest man = DatasetManifest::load(manifest_path);
  namespace fs = std::filesystem;
  fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  LoadedDataset ds;
  ds.skeleton = man.skeleton_path.empty() ? smpl24_skeleton()
                                          : load_skeleton(resolve(man.skeleton_path));
  std::vector<MotionSequence> train_motions;
  for (size_t i = 0; i < man.entries.size(); ++i) {
    const auto& e = man.entries[i];
    MusicFeatures mu = load_features(resolve(e.music_path));
    MotionSequence mo = load_motion(resolve(e.motion_path));
    if (mu.length() != mo.length())
      throw std::runtime_error("load_dataset: music/motion length mismatch for pair " +
                               e.music_path + " / " + e.motion_path);
    if (mo.dim() != man.motion_dim)
      throw std::runtime_error("load_dataset: motion dim mismatch in " + e.motion_path);
    if (e.split == "train") train_motions.push_back(mo);
    for (auto [s, t] : window_starts(mo.length(), window, stride)) {
      TrainingWindow w;
      w.bpm = e.bpm;
      w.source_index = static_cast<int>(i);
      w.music.fps = mu.fps;
      w.music.frames = Tensor<float>(window, mu.frames.cols);
      w.motion.fps = mo.fps;
      w.motion.frames = Tensor<float>(window, mo.frames.cols);
      for (int r = 0; r < window; ++r) {
        for (int c = 0; c < mu.frames.cols; ++c)
          w.music.frames.at(r, c) = mu.frames.at(s + r, c);
        for (int c = 0; c < mo.frames.cols; ++c)
          w.motion.frames.at(r, c) = mo.frames.at(s + r, c);
      }
      (e.split == "train" ? ds.train : ds.val).push_back(std::move(w));
    }
  }
  if (train_motions.empty())
    throw std::runtime_error("load_dataset: no training entries in manifest");
  ds.stats = compute_norm_stats(train_motions);
  return ds;
}

// Deterministic epoch order for a given seed and epoch index.
inline std::vector<int> epoch_order(int n, uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(static_cast<uint32_t>(seed * 1000003u + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace tmoe
