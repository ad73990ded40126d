// Command-line front end: dataset synthesis, training, sampling, evaluation,
// routing analysis, and ablation sweeps.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "tmoe/harness.hpp"

namespace fs = std::filesystem;
using namespace tmoe;

namespace {

BeatSet music_beats_of(const MusicFeatures& m) {
  BeatSet b;
  b.fps = m.fps;
  for (int i = 0; i < m.length(); ++i)
    if (m.frames.at(i, MusicChannels::beat) > 0.5f) b.frames.push_back(i);
  return b;
}

TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config " + path);
  nlohmann::json j;
  f >> j;
  return TrainConfig::from_json(j);
}

int run(int argc, char** argv) {
  CLI::App app{"TempoMoE music-to-dance toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", data_path, checkpoint, music_path, axis;
  uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON training config");
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--out", out_dir, "output directory");

  auto* mk = app.add_subcommand("make-data", "emit a synthetic tempo dataset");
  std::vector<double> bpms{60, 80, 100, 120, 140, 160, 180, 200};
  int frames = 360, joints = 24, per_bpm = 1;
  double fps = 30;
  mk->add_option("--bpms", bpms, "tempi of the synthetic pairs");
  mk->add_option("--per-bpm", per_bpm, "pairs per tempo (distinct seeds)");
  mk->add_option("--frames", frames, "frames per pair");
  mk->add_option("--fps", fps, "frame rate");
  mk->add_option("--joints", joints, "skeleton size: 3 (toy) or 24");

  auto* tr = app.add_subcommand("train", "train a denoiser");
  tr->add_option("--data", data_path, "dataset manifest")->required();

  auto* sa = app.add_subcommand("sample", "generate motion for a music track");
  int sample_frames = 256, steps = 10;
  double guidance = 2.5;
  std::string solver = "dpmpp_2m";
  sa->add_option("--checkpoint", checkpoint, "checkpoint prefix")->required();
  sa->add_option("--music", music_path, "music feature file")->required();
  sa->add_option("--frames", sample_frames, "frames to generate");
  sa->add_option("--steps", steps, "sampler steps");
  sa->add_option("--guidance", guidance, "CFG scale");
  sa->add_option("--solver", solver, "dpmpp_2m|ancestral");

  auto* ev = app.add_subcommand("eval", "metric report over a dataset");
  ev->add_option("--checkpoint", checkpoint, "checkpoint prefix")->required();
  ev->add_option("--data", data_path, "dataset manifest")->required();
  ev->add_option("--steps", steps, "sampler steps");
  ev->add_option("--guidance", guidance, "CFG scale");

  auto* an = app.add_subcommand("analyze-routing", "routing CSV + summary");
  an->add_option("--checkpoint", checkpoint, "checkpoint prefix")->required();
  an->add_option("--data", data_path, "dataset manifest")->required();

  auto* ab = app.add_subcommand("ablate", "expand and smoke-run ablation configs");
  ab->add_option("--data", data_path, "dataset manifest")->required();
  ab->add_option("--axis", axis, "single axis; omit for all axes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  fs::create_directories(out_dir);

  if (mk->parsed()) {
    Skeleton skel = joints == 3 ? toy_skeleton3() : smpl24_skeleton();
    std::vector<double> expanded;
    for (int r = 0; r < per_bpm; ++r)
      for (double b : bpms) expanded.push_back(b);
    make_synthetic_dataset(out_dir, expanded, frames, fps, skel, seed);
    std::cout << "wrote " << expanded.size() << " pairs to " << out_dir << "\n";
    return 0;
  }

  if (tr->parsed()) {
    TrainConfig cfg = load_train_config(config_path);
    cfg.seed = seed;
    cfg.validate();
    LoadedDataset ds = load_dataset(data_path, cfg.window, cfg.stride);
    TrainResult res = train(cfg, ds, &std::cout);
    save_checkpoint((fs::path(out_dir) / "checkpoint").string(), res.checkpoint);
    std::cout << "trained " << res.checkpoint.step << " steps, checkpoint in "
              << out_dir << "\n";
    return 0;
  }

  // --checkpoint accepts either the prefix or the manifest path itself
  if (checkpoint.size() > 5 && checkpoint.rfind(".json") == checkpoint.size() - 5)
    checkpoint.resize(checkpoint.size() - 5);

  if (sa->parsed()) {
    Checkpoint ck = load_checkpoint(checkpoint);
    ParamStore<float> ps;
    Denoiser<float> model = rebuild_model(ck, ps);
    MusicFeatures music = load_features(music_path);
    SamplerConfig scfg;
    scfg.steps = steps;
    scfg.guidance = guidance;
    scfg.seed = seed;
    if (solver == "ancestral") scfg.solver = Solver::ancestral;
    else if (solver != "dpmpp_2m")
      throw std::invalid_argument("unknown solver " + solver);
    MotionSequence motion = sample_motion(ck, ps, model, music, sample_frames, scfg);
    std::string out = (fs::path(out_dir) / "sample.motion.tmoe").string();
    save_motion(out, motion);
    std::cout << "wrote " << out << "\n";
    return 0;
  }

  if (ev->parsed()) {
    Checkpoint ck = load_checkpoint(checkpoint);
    ParamStore<float> ps;
    Denoiser<float> model = rebuild_model(ck, ps);
    LoadedDataset ds = load_dataset(data_path, ck.config.window, ck.config.stride);
    const auto& windows = ds.val.empty() ? ds.train : ds.val;
    SamplerConfig scfg;
    scfg.steps = steps;
    scfg.guidance = guidance;
    scfg.seed = seed;
    std::vector<MotionSequence> gen;
    std::vector<double> bas;
    for (size_t i = 0; i < windows.size(); ++i) {
      scfg.seed = seed + i;
      MotionSequence m = sample_motion(ck, ps, model, windows[i].music,
                                       windows[i].motion.length(), scfg);
      BeatSet mb = music_beats_of(windows[i].music);
      BeatSet db = detect_dance_beats(m, ds.skeleton);
      bas.push_back(beat_alignment_score(mb, db));
      gen.push_back(std::move(m));
    }
    auto featset = [&](const std::vector<MotionSequence>& ms, FeatureKind k) {
      FeatureSet fsz;
      fsz.kind = k;
      Tensor<double> first = extract_features(ms[0], ds.skeleton, k);
      fsz.vectors = Tensor<double>(static_cast<int>(ms.size()), first.cols);
      for (size_t i = 0; i < ms.size(); ++i) {
        Tensor<double> f = i ? extract_features(ms[i], ds.skeleton, k) : first;
        for (int c = 0; c < f.cols; ++c) fsz.vectors.at(static_cast<int>(i), c) = f.at(0, c);
      }
      return fsz;
    };
    std::vector<MotionSequence> real;
    for (const auto& w : windows) real.push_back(w.motion);
    nlohmann::json rep;
    rep["fid_k"] = fid(featset(real, FeatureKind::kinetic),
                       featset(gen, FeatureKind::kinetic));
    rep["fid_g"] = fid(featset(real, FeatureKind::geometric),
                       featset(gen, FeatureKind::geometric));
    rep["div_k"] = diversity(featset(gen, FeatureKind::kinetic), 100, seed);
    rep["div_g"] = diversity(featset(gen, FeatureKind::geometric), 100, seed);
    double mean = 0;
    for (double b : bas) mean += b;
    rep["bas_mean"] = bas.empty() ? 0.0 : mean / bas.size();
    rep["bas_per_sample"] = bas;
    std::string out = (fs::path(out_dir) / "eval.json").string();
    std::ofstream f(out);
    f << rep.dump(2) << "\n";
    std::cout << rep.dump(2) << "\n";
    return 0;
  }

  if (an->parsed()) {
    Checkpoint ck = load_checkpoint(checkpoint);
    if (ck.config.denoiser.ffn_baseline)
      throw std::invalid_argument("analyze-routing: checkpoint is an FFN baseline");
    ParamStore<float> ps;
    Denoiser<float> model = rebuild_model(ck, ps);
    LoadedDataset ds = load_dataset(data_path, ck.config.window, ck.config.stride);
    const auto& windows = ds.val.empty() ? ds.train : ds.val;
    auto records = collect_routing(ck, ps, model, windows);
    write_routing_csv((fs::path(out_dir) / "routing.csv").string(), records);
    RoutingSummary sum =
        summarize_routing(records, static_cast<int>(ck.config.denoiser.anchors.size()));
    std::ofstream f((fs::path(out_dir) / "routing_summary.json").string());
    f << sum.to_json().dump(2) << "\n";
    std::cout << "wrote " << records.size() << " routing records to " << out_dir
              << "\n";
    return 0;
  }

  if (ab->parsed()) {
    TrainConfig base = load_train_config(config_path);
    base.seed = seed;
    base.max_steps = 1;
    base.epochs = 1;
    LoadedDataset ds = load_dataset(data_path, base.window, base.stride);
    std::vector<std::string> axes =
        axis.empty() ? ablation_axes() : std::vector<std::string>{axis};
    // drop exact duplicates of the base configuration across axes
    std::set<std::string> seen;
    int ran = 0;
    nlohmann::json report = nlohmann::json::array();
    for (const auto& ax : axes) {
      for (const auto& nc : ablation_expand(base, ax)) {
        std::string key = nc.config.to_json().dump();
        if (!seen.insert(key).second) continue;
        TrainResult r = train(nc.config, ds);
        report.push_back({{"name", nc.name},
                          {"axis", ax},
                          {"final_total", r.history.empty()
                                              ? 0.0
                                              : r.history.back().losses.total}});
        std::cout << "ok " << nc.name << "\n";
        ++ran;
      }
    }
    std::ofstream f((fs::path(out_dir) / "ablate.json").string());
    f << report.dump(2) << "\n";
    std::cout << ran << " configurations completed\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}
