#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmoe/dataset.hpp"
#include "tmoe/denoiser.hpp"
#include "tmoe/diffusion.hpp"
#include "tmoe/metrics.hpp"

namespace tmoe {

struct TrainConfig {
  int epochs = 500;
  long max_steps = 0;  // 0 = epoch-driven; otherwise hard step cap
  double lr = 1e-4;
  int warmup_steps = 100;
  int batch = 128;
  double cfg_dropout = 0.10;
  uint64_t seed = 0;
  std::string sched_kind = "cosine";
  int sched_T = 1000;
  int window = 256;
  int stride = 128;
  double grad_clip = 1.0;  // global grad-norm cap; 0 disables
  int log_every = 50;
  LossWeights weights;
  DenoiserConfig denoiser;

  void validate() const {
    if (lr < 0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (cfg_dropout < 0 || cfg_dropout >= 1)
      throw std::invalid_argument("TrainConfig: cfg_dropout must be in [0,1)");
    if (batch < 1 || window < 3)
      throw std::invalid_argument("TrainConfig: implausible batch/window");
    if (sched_kind != "cosine" && sched_kind != "linear")
      throw std::invalid_argument("TrainConfig: sched_kind must be cosine|linear");
    denoiser.validate();
  }

  NoiseSchedule schedule() const {
    return sched_kind == "cosine" ? NoiseSchedule::cosine(sched_T)
                                  : NoiseSchedule::linear(sched_T);
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},         {"max_steps", max_steps},
            {"lr", lr},                 {"warmup_steps", warmup_steps},
            {"batch", batch},           {"cfg_dropout", cfg_dropout},
            {"seed", seed},             {"sched_kind", sched_kind},
            {"sched_T", sched_T},       {"window", window},
            {"stride", stride},         {"log_every", log_every},
            {"grad_clip", grad_clip},
            {"weights",
             {{"joint", weights.joint},
              {"vel", weights.vel},
              {"acc", weights.acc},
              {"contact", weights.contact}}},
            {"denoiser", denoiser.to_json()}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.lr = j.value("lr", c.lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.batch = j.value("batch", c.batch);
    c.cfg_dropout = j.value("cfg_dropout", c.cfg_dropout);
    c.seed = j.value("seed", c.seed);
    c.sched_kind = j.value("sched_kind", c.sched_kind);
    c.sched_T = j.value("sched_T", c.sched_T);
    c.window = j.value("window", c.window);
    c.stride = j.value("stride", c.stride);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights.joint = w.value("joint", c.weights.joint);
      c.weights.vel = w.value("vel", c.weights.vel);
      c.weights.acc = w.value("acc", c.weights.acc);
      c.weights.contact = w.value("contact", c.weights.contact);
    }
    if (j.contains("denoiser")) c.denoiser = DenoiserConfig::from_json(j["denoiser"]);
    return c;
  }
};

// ---- checkpoints: JSON manifest + little-endian f32 blob ----

struct Checkpoint {
  TrainConfig config;
  NormStats stats;
  Skeleton skeleton;
  ParamStore<float> params;
  long step = 0;
};

inline void save_checkpoint(const std::string& prefix, const Checkpoint& ck) {
  nlohmann::json j;
  j["config"] = ck.config.to_json();
  j["norm_stats"] = ck.stats.to_json();
  j["step"] = ck.step;
  j["skeleton"] = {{"parents", ck.skeleton.parents},
                   {"contact_joints", ck.skeleton.contact_joints}};
  j["skeleton"]["offsets"] = nlohmann::json::array();
  for (const auto& o : ck.skeleton.offsets)
    j["skeleton"]["offsets"].push_back({o[0], o[1], o[2]});
  j["params"] = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& e : ck.params.entries) {
    j["params"].push_back({{"name", e.name},
                           {"rows", e.value.rows},
                           {"cols", e.value.cols},
                           {"offset", offset}});
    offset += e.value.size() * sizeof(float);
  }
  std::ofstream mf(prefix + ".json");
  if (!mf) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".json");
  mf << j.dump(2) << "\n";
  std::ofstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".bin");
  for (const auto& e : ck.params.entries)
    bf.write(reinterpret_cast<const char*>(e.value.data.data()),
             static_cast<std::streamsize>(e.value.size() * sizeof(float)));
  if (!bf) throw std::runtime_error("save_checkpoint: write failed for " + prefix);
}

inline Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".json");
  nlohmann::json j;
  mf >> j;
  Checkpoint ck;
  ck.config = TrainConfig::from_json(j.at("config"));
  ck.stats = NormStats::from_json(j.at("norm_stats"));
  ck.step = j.at("step").get<long>();
  const auto& sj = j.at("skeleton");
  ck.skeleton.parents = sj.at("parents").get<std::vector<int>>();
  ck.skeleton.contact_joints = sj.at("contact_joints").get<std::array<int, 4>>();
  ck.skeleton.joints = static_cast<int>(ck.skeleton.parents.size());
  for (const auto& o : sj.at("offsets"))
    ck.skeleton.offsets.push_back(
        {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()});
  ck.skeleton.validate();

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".bin");
  for (const auto& pj : j.at("params")) {
    int r = pj.at("rows").get<int>(), c = pj.at("cols").get<int>();
    Tensor<float> t(r, c);
    bf.seekg(static_cast<std::streamoff>(pj.at("offset").get<size_t>()));
    bf.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!bf) throw std::runtime_error("load_checkpoint: truncated blob " + prefix);
    ck.params.add(pj.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

// Rebuild a model for a loaded param store: construct the architecture (which
// fixes parameter names/order), then overwrite the fresh values by name.
inline Denoiser<float> rebuild_model(const Checkpoint& ck, ParamStore<float>& ps) {
  std::mt19937 rng(0);
  Denoiser<float> model = Denoiser<float>::create(ps, ck.config.denoiser, rng);
  if (ps.entries.size() != ck.params.entries.size())
    throw std::runtime_error("rebuild_model: checkpoint/architecture mismatch");
  for (auto& e : ps.entries) {
    int src = ck.params.find(e.name);
    if (src < 0) throw std::runtime_error("rebuild_model: missing param " + e.name);
    const Tensor<float>& v = ck.params.value(src);
    if (v.rows != e.value.rows || v.cols != e.value.cols)
      throw std::runtime_error("rebuild_model: shape mismatch for " + e.name);
    e.value = v;
  }
  return model;
}

// ---- training ----

struct StepLog {
  long step = 0;
  LossBreakdown losses;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> history;
  long null_uses = 0;      // CFG-dropout bookkeeping
  long cond_decisions = 0;
};

// One optimization step over a batch of windows; losses averaged on one tape.
// Returns the batch-mean loss breakdown. The prediction is denormalized on
// the tape (per-channel affine) before the kinematic terms, so FK sees real
// coordinates while L_simple stays in normalized space.
template <typename Hook = RoutingHook>
inline LossBreakdown train_step(Denoiser<float>& model, ParamStore<float>& ps,
                                Adam<float>& opt, const TrainConfig& cfg,
                                const NoiseSchedule& sched, const Skeleton& skel,
                                const std::vector<TrainingWindow>& batch,
                                const NormStats& stats, std::mt19937& rng,
                                long* null_uses = nullptr,
                                long* cond_decisions = nullptr) {
  Tape<float> tape;
  Context<float> ctx(tape, ps);
  std::uniform_int_distribution<int> t_dist(1, sched.T);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  int d = cfg.denoiser.motion_dim;
  Tensor<float> std_row(1, d), mean_row(1, d);
  for (int c = 0; c < d; ++c) {
    std_row.at(0, c) = static_cast<float>(stats.stddev[c]);
    mean_row.at(0, c) = static_cast<float>(stats.mean[c]);
  }
  int std_id = tape.constant(std_row);
  int mean_id = tape.constant(mean_row);

  LossBreakdown avg;
  int batch_total = -1;
  for (size_t b = 0; b < batch.size(); ++b) {
    const TrainingWindow& w = batch[b];
    MotionSequence norm = normalize(w.motion, stats);
    Tensor<float> x0 = norm.frames;
    int t = t_dist(rng);
    Tensor<float> eps(x0.rows, x0.cols);
    for (auto& v : eps.data) v = static_cast<float>(gauss(rng));
    Tensor<float> x_t = forward_noise(x0, t, eps, sched);

    bool drop = uni(rng) < cfg.cfg_dropout;
    if (cond_decisions) ++*cond_decisions;
    if (drop && null_uses) ++*null_uses;
    int me = drop ? model.null_embedding(ctx)
                  : model.embed_music(ctx, w.music.frames);
    int pred = model.forward(ctx, x_t, t, me, nullptr, static_cast<long>(b));

    // L_simple in normalized space
    int diff = tape.sub(pred, tape.constant(x0));
    int simple = tape.scale(tape.sum_all(tape.mul(diff, diff)),
                            1.0f / static_cast<float>(x0.size()));

    // kinematic terms on denormalized pose
    int pred_raw = tape.add_row(tape.mul_row(pred, std_id), mean_id);
    KinLossIds kin = kinematic_loss_graph(tape, pred_raw, w.motion.frames, skel,
                                          cfg.weights);
    int total = simple;
    total = tape.add(total, tape.scale(kin.joint, static_cast<float>(cfg.weights.joint)));
    total = tape.add(total, tape.scale(kin.vel, static_cast<float>(cfg.weights.vel)));
    total = tape.add(total, tape.scale(kin.acc, static_cast<float>(cfg.weights.acc)));
    total = tape.add(total,
                     tape.scale(kin.contact, static_cast<float>(cfg.weights.contact)));

    avg.simple += tape.val(simple).item();
    avg.joint += tape.val(kin.joint).item();
    avg.vel += tape.val(kin.vel).item();
    avg.acc += tape.val(kin.acc).item();
    avg.contact += tape.val(kin.contact).item();
    avg.total += tape.val(total).item();
    batch_total = batch_total < 0 ? total : tape.add(batch_total, total);
  }
  double inv = 1.0 / batch.size();
  avg.simple *= inv; avg.joint *= inv; avg.vel *= inv; avg.acc *= inv;
  avg.contact *= inv; avg.total *= inv;
  avg.kin_total = avg.total - avg.simple;

  int loss = tape.scale(batch_total, static_cast<float>(inv));
  tape.backward(loss);
  std::vector<Tensor<float>> grads;
  grads.reserve(ps.entries.size());
  for (size_t p = 0; p < ps.entries.size(); ++p)
    grads.push_back(ctx.grad_of(static_cast<int>(p)));
  if (cfg.grad_clip > 0) {
    // global-norm clipping: the kinematic terms can spike by orders of
    // magnitude early in training (FK through a still-random pose), and a
    // single such step otherwise wrecks the Adam moments
    double sq = 0;
    for (const auto& g : grads)
      for (float v : g.data) sq += static_cast<double>(v) * v;
    double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      float s = static_cast<float>(cfg.grad_clip / norm);
      for (auto& g : grads)
        for (float& v : g.data) v *= s;
    }
  }
  opt.step(ps, grads);
  return avg;
}

inline TrainResult train(const TrainConfig& cfg, const LoadedDataset& ds,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (ds.train.empty()) throw std::runtime_error("train: empty training split");
  TrainResult res;
  res.checkpoint.config = cfg;
  res.checkpoint.stats = ds.stats;
  res.checkpoint.skeleton = ds.skeleton;

  std::mt19937 init_rng(static_cast<uint32_t>(cfg.seed));
  Denoiser<float> model =
      Denoiser<float>::create(res.checkpoint.params, cfg.denoiser, init_rng);
  Adam<float> opt;
  opt.lr = cfg.lr;
  opt.warmup_steps = cfg.warmup_steps;
  NoiseSchedule sched = cfg.schedule();
  std::mt19937 rng(static_cast<uint32_t>(cfg.seed * 0x9e3779b9u + 1u));

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order =
        epoch_order(static_cast<int>(ds.train.size()), cfg.seed, epoch);
    for (size_t pos = 0; pos < order.size(); pos += cfg.batch) {
      std::vector<TrainingWindow> batch;
      for (size_t k = pos; k < std::min(order.size(), pos + cfg.batch); ++k)
        batch.push_back(ds.train[order[k]]);
      LossBreakdown lb = train_step(model, res.checkpoint.params, opt, cfg, sched,
                                    ds.skeleton, batch, res.checkpoint.stats, rng,
                                    &res.null_uses, &res.cond_decisions);
      ++step;
      if (!std::isfinite(lb.total))
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(step));
      if (step <= 10 || step % cfg.log_every == 0 || step == cfg.max_steps) {
        res.history.push_back({step, lb});
        if (log)
          (*log) << "step " << step << " total " << lb.total << " simple "
                 << lb.simple << " joint " << lb.joint << " vel " << lb.vel
                 << " acc " << lb.acc << " contact " << lb.contact << "\n";
      }
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        res.checkpoint.step = step;
        return res;
      }
    }
  }
  res.checkpoint.step = step;
  return res;
}

// ---- sampling ----

// Generate one motion for a music feature track using CFG. `frames` must not
// exceed the music length; the conditioning is cut to the generated span.
inline MotionSequence sample_motion(const Checkpoint& ck, ParamStore<float>& ps,
                                    const Denoiser<float>& model,
                                    const MusicFeatures& music, int frames,
                                    const SamplerConfig& scfg) {
  if (frames < 3) throw std::invalid_argument("sample_motion: frames too small");
  if (music.length() < frames)
    throw std::invalid_argument("sample_motion: music shorter than requested frames");
  Tensor<float> cond_music(frames, music.frames.cols);
  for (int i = 0; i < frames; ++i)
    for (int c = 0; c < music.frames.cols; ++c)
      cond_music.at(i, c) = music.frames.at(i, c);

  NoiseSchedule sched = ck.config.schedule();
  DenoiseFn<float> cond = [&](const Tensor<float>& x_t, int t) {
    return model.predict(ps, x_t, t, &cond_music);
  };
  DenoiseFn<float> uncond = [&](const Tensor<float>& x_t, int t) {
    return model.predict(ps, x_t, t, nullptr);
  };
  DenoiseFn<float> guided = [&](const Tensor<float>& x_t, int t) {
    return cfg_predict<float>(cond, uncond, x_t, t, scfg.guidance);
  };
  Tensor<float> x =
      sample(guided, frames, ck.config.denoiser.motion_dim, sched, scfg);
  MotionSequence out;
  out.fps = static_cast<float>(ck.config.denoiser.fps);
  out.frames = std::move(x);
  out = denormalize(out, ck.stats);
  // contact channels are labels; clamp into [0,1] for downstream consumers
  for (int i = 0; i < out.length(); ++i)
    for (int c = 0; c < MotionLayout::contact_count; ++c) {
      float& v = out.frames.at(i, MotionLayout::contact_begin + c);
      v = std::min(1.0f, std::max(0.0f, v));
    }
  return out;
}

// ---- ablation expander ----

struct NamedConfig {
  std::string name;
  TrainConfig config;
};

inline std::vector<std::string> ablation_axes() {
  return {"expert_group", "beat_scales", "group_count", "inter_mode",
          "intra_mode",  "ffn"};
}

// Expand one ablation axis into named configs. Dance-feature and genre
// routing-input variants are intentionally excluded: they would need motion
// and genre encoders orthogonal to this artifact (music routing only).
inline std::vector<NamedConfig> ablation_expand(const TrainConfig& base,
                                                const std::string& axis) {
  std::vector<NamedConfig> out;
  auto push = [&](const std::string& name, TrainConfig c) {
    out.push_back({name, std::move(c)});
  };
  if (axis == "expert_group") {
    for (HomogeneityMode m : {HomogeneityMode::homo_same_scale,
                              HomogeneityMode::homo_multi_scale,
                              HomogeneityMode::heterogeneous}) {
      TrainConfig c = base;
      c.denoiser.homogeneity = m;
      c.denoiser.ffn_baseline = false;
      push("expert_group=" + to_string(m), c);
    }
  } else if (axis == "beat_scales") {
    for (BeatScalesMode m : {BeatScalesMode::quarter_only, BeatScalesMode::half_only,
                             BeatScalesMode::whole_only, BeatScalesMode::mixed}) {
      TrainConfig c = base;
      c.denoiser.beat_scales = m;
      c.denoiser.ffn_baseline = false;
      push("beat_scales=" + to_string(m), c);
    }
  } else if (axis == "group_count") {
    for (int g : {4, 8, 16, 32}) {
      TrainConfig c = base;
      c.denoiser.anchors = uniform_anchors(g);
      c.denoiser.ffn_baseline = false;
      push("group_count=" + std::to_string(g), c);
    }
  } else if (axis == "inter_mode") {
    for (RouteMode m : {RouteMode::top1, RouteMode::top2, RouteMode::soft,
                        RouteMode::average}) {
      TrainConfig c = base;
      c.denoiser.routing.inter_mode = m;
      c.denoiser.ffn_baseline = false;
      push("inter_mode=" + to_string(m), c);
    }
  } else if (axis == "intra_mode") {
    for (RouteMode m : {RouteMode::top1, RouteMode::top2, RouteMode::soft,
                        RouteMode::average}) {
      TrainConfig c = base;
      c.denoiser.routing.intra_mode = m;
      c.denoiser.ffn_baseline = false;
      push("intra_mode=" + to_string(m), c);
    }
  } else if (axis == "ffn") {
    TrainConfig c = base;
    c.denoiser.ffn_baseline = true;
    push("ffn=baseline", c);
  } else {
    std::string valid;
    for (const auto& a : ablation_axes()) valid += (valid.empty() ? "" : ", ") + a;
    throw std::invalid_argument("ablation_expand: unknown axis '" + axis +
                                "' (valid: " + valid + ")");
  }
  return out;
}

// ---- routing analysis ----

struct RoutingSummary {
  // per layer: activation frequency per group, mean gamma triple
  std::map<int, std::vector<double>> group_freq;
  std::map<int, std::array<double, 3>> mean_gamma;
  long records = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["records"] = records;
    j["layers"] = nlohmann::json::array();
    for (const auto& [layer, freq] : group_freq) {
      nlohmann::json lj;
      lj["layer"] = layer;
      lj["group_frequency"] = freq;
      const auto& g = mean_gamma.at(layer);
      lj["mean_gamma"] = {{"quarter", g[0]}, {"half", g[1]}, {"whole", g[2]}};
      j["layers"].push_back(lj);
    }
    return j;
  }
};

inline const char* kRoutingCsvHeader =
    "layer,sample_id,frame,group_a,group_b,w_a,w_b,gamma_quarter,gamma_half,"
    "gamma_whole";

inline void write_routing_csv(const std::string& path,
                              const std::vector<RoutingRecord>& records) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_routing_csv: cannot open " + path);
  f << kRoutingCsvHeader << "\n";
  f << std::setprecision(9);
  for (const auto& r : records)
    f << r.layer << "," << r.sample_id << "," << r.frame << "," << r.group_a << ","
      << r.group_b << "," << r.w_a << "," << r.w_b << "," << r.gamma_quarter << ","
      << r.gamma_half << "," << r.gamma_whole << "\n";
}

inline RoutingSummary summarize_routing(const std::vector<RoutingRecord>& records,
                                        int groups) {
  RoutingSummary s;
  std::map<int, long> counts;
  for (const auto& r : records) {
    auto& freq = s.group_freq[r.layer];
    freq.resize(groups, 0.0);
    auto& g = s.mean_gamma[r.layer];
    if (counts.find(r.layer) == counts.end()) g = {0, 0, 0};
    if (r.group_a >= 0 && r.group_a < groups) freq[r.group_a] += 1.0;
    if (r.group_b >= 0 && r.group_b < groups) freq[r.group_b] += 1.0;
    g[0] += r.gamma_quarter;
    g[1] += r.gamma_half;
    g[2] += r.gamma_whole;
    ++counts[r.layer];
    ++s.records;
  }
  for (auto& [layer, freq] : s.group_freq) {
    long n = counts[layer];
    for (auto& v : freq) v /= n;
    for (auto& v : s.mean_gamma[layer]) v /= n;
  }
  return s;
}

// Run forward passes over windows with the statistics hook attached and
// collect routing decisions at a mid-schedule timestep.
inline std::vector<RoutingRecord> collect_routing(const Checkpoint& ck,
                                                  ParamStore<float>& ps,
                                                  const Denoiser<float>& model,
                                                  const std::vector<TrainingWindow>& ws) {
  if (ck.config.denoiser.ffn_baseline)
    throw std::invalid_argument("collect_routing: ffn_baseline checkpoint has no router");
  NoiseSchedule sched = ck.config.schedule();
  std::vector<RoutingRecord> records;
  RoutingHook hook = [&](const RoutingRecord& r) { records.push_back(r); };
  std::mt19937 rng(1234);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int t = sched.T / 2;
  for (size_t i = 0; i < ws.size(); ++i) {
    MotionSequence norm = normalize(ws[i].motion, ck.stats);
    Tensor<float> eps(norm.frames.rows, norm.frames.cols);
    for (auto& v : eps.data) v = static_cast<float>(gauss(rng));
    Tensor<float> x_t = forward_noise(norm.frames, t, eps, sched);
    model.predict(ps, x_t, t, &ws[i].music.frames, &hook, static_cast<long>(i));
  }
  return records;
}

// Tempo-contrastive diagnostic: mean anchor BPM of the selected groups,
// weighted by routing weight, over a set of records.
inline double mean_selected_anchor(const std::vector<RoutingRecord>& records,
                                   const std::vector<double>& anchors) {
  double acc = 0, wsum = 0;
  for (const auto& r : records) {
    if (r.group_a >= 0 && r.group_a < static_cast<int>(anchors.size())) {
      acc += r.w_a * anchors[r.group_a];
      wsum += r.w_a;
    }
    if (r.group_b >= 0 && r.group_b < static_cast<int>(anchors.size())) {
      acc += r.w_b * anchors[r.group_b];
      wsum += r.w_b;
    }
  }
  if (wsum <= 0) throw std::runtime_error("mean_selected_anchor: no weighted records");
  return acc / wsum;
}

// ---- synthetic dataset emitter (make-data) ----

inline void make_synthetic_dataset(const std::string& out_dir,
                                   const std::vector<double>& bpms, int length,
                                   double fps, const Skeleton& skel, uint64_t seed,
                                   const std::string& val_split = "") {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  DatasetManifest man;
  man.fps = fps;
  man.motion_dim = MotionLayout::dim_for_joints(skel.joints);
  man.skeleton_path = "skeleton.json";
  save_skeleton((fs::path(out_dir) / "skeleton.json").string(), skel);
  for (size_t i = 0; i < bpms.size(); ++i) {
    auto [music, motion] = synth_pair(bpms[i], length, fps, skel, seed + i);
    std::string stem = "pair" + std::to_string(i);
    save_features((fs::path(out_dir) / (stem + ".music.tmoe")).string(), music,
                  bpms[i]);
    save_motion((fs::path(out_dir) / (stem + ".motion.tmoe")).string(), motion);
    ManifestEntry e;
    e.music_path = stem + ".music.tmoe";
    e.motion_path = stem + ".motion.tmoe";
    e.bpm = bpms[i];
    e.split = (val_split == stem) ? "val" : "train";
    man.entries.push_back(e);
  }
  man.save((fs::path(out_dir) / "manifest.json").string());
}

}  // namespace tmoe
