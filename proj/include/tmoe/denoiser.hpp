#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tmoe/nn.hpp"
#include "tmoe/tempomoe.hpp"

namespace tmoe {

// ---- enum <-> string (config/checkpoint serialization) ----

inline std::string to_string(RouteMode m) {
  switch (m) {
    case RouteMode::top1: return "top1";
    case RouteMode::top2: return "top2";
    case RouteMode::soft: return "soft";
    case RouteMode::average: return "average";
  }
  return "?";
}
inline RouteMode route_mode_from(const std::string& s) {
  if (s == "top1") return RouteMode::top1;
  if (s == "top2") return RouteMode::top2;
  if (s == "soft") return RouteMode::soft;
  if (s == "average") return RouteMode::average;
  throw std::invalid_argument("unknown route mode: " + s);
}
inline std::string to_string(HomogeneityMode m) {
  switch (m) {
    case HomogeneityMode::heterogeneous: return "heterogeneous";
    case HomogeneityMode::homo_multi_scale: return "homo_multi_scale";
    case HomogeneityMode::homo_same_scale: return "homo_same_scale";
  }
  return "?";
}
inline HomogeneityMode homogeneity_from(const std::string& s) {
  if (s == "heterogeneous") return HomogeneityMode::heterogeneous;
  if (s == "homo_multi_scale") return HomogeneityMode::homo_multi_scale;
  if (s == "homo_same_scale") return HomogeneityMode::homo_same_scale;
  throw std::invalid_argument("unknown homogeneity mode: " + s);
}
inline std::string to_string(BeatScalesMode m) {
  switch (m) {
    case BeatScalesMode::mixed: return "mixed";
    case BeatScalesMode::quarter_only: return "quarter_only";
    case BeatScalesMode::half_only: return "half_only";
    case BeatScalesMode::whole_only: return "whole_only";
  }
  return "?";
}
inline BeatScalesMode beat_scales_from(const std::string& s) {
  if (s == "mixed") return BeatScalesMode::mixed;
  if (s == "quarter_only") return BeatScalesMode::quarter_only;
  if (s == "half_only") return BeatScalesMode::half_only;
  if (s == "whole_only") return BeatScalesMode::whole_only;
  throw std::invalid_argument("unknown beat scales mode: " + s);
}
inline std::string to_string(InterWeighting w) {
  return w == InterWeighting::sum ? "sum" : "renorm_softmax";
}
inline InterWeighting inter_weighting_from(const std::string& s) {
  if (s == "sum") return InterWeighting::sum;
  if (s == "renorm_softmax") return InterWeighting::renorm_softmax;
  throw std::invalid_argument("unknown inter weighting: " + s);
}
inline std::string to_string(Granularity g) {
  return g == Granularity::frame ? "frame" : "sequence";
}
inline Granularity granularity_from(const std::string& s) {
  if (s == "frame") return Granularity::frame;
  if (s == "sequence") return Granularity::sequence;
  throw std::invalid_argument("unknown granularity: " + s);
}

struct DenoiserConfig {
  int blocks = 8;
  int latent = 512;
  int heads = 8;
  int motion_dim = 151;
  int music_dim = 35;
  double fps = 30;
  std::vector<double> anchors = default_anchors();
  RoutingConfig routing;
  HomogeneityMode homogeneity = HomogeneityMode::heterogeneous;
  BeatScalesMode beat_scales = BeatScalesMode::mixed;
  bool ffn_baseline = false;

  void validate() const {
    if (latent % heads != 0)
      throw std::invalid_argument("DenoiserConfig: latent must be divisible by heads");
    if (blocks < 1 || latent < 4 || motion_dim < 13)
      throw std::invalid_argument("DenoiserConfig: implausible dimensions");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["blocks"] = blocks;
    j["latent"] = latent;
    j["heads"] = heads;
    j["motion_dim"] = motion_dim;
    j["music_dim"] = music_dim;
    j["fps"] = fps;
    j["anchors"] = anchors;
    j["routing"] = {{"inter_mode", to_string(routing.inter_mode)},
                    {"intra_mode", to_string(routing.intra_mode)},
                    {"inter_weighting", to_string(routing.inter_weighting)},
                    {"granularity", to_string(routing.granularity)}};
    j["homogeneity"] = to_string(homogeneity);
    j["beat_scales"] = to_string(beat_scales);
    j["ffn_baseline"] = ffn_baseline;
    return j;
  }

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.blocks = j.value("blocks", c.blocks);
    c.latent = j.value("latent", c.latent);
    c.heads = j.value("heads", c.heads);
    c.motion_dim = j.value("motion_dim", c.motion_dim);
    c.music_dim = j.value("music_dim", c.music_dim);
    c.fps = j.value("fps", c.fps);
    c.anchors = j.value("anchors", c.anchors);
    if (j.contains("routing")) {
      const auto& r = j.at("routing");
      if (r.contains("inter_mode"))
        c.routing.inter_mode = route_mode_from(r.at("inter_mode"));
      if (r.contains("intra_mode"))
        c.routing.intra_mode = route_mode_from(r.at("intra_mode"));
      if (r.contains("inter_weighting"))
        c.routing.inter_weighting = inter_weighting_from(r.at("inter_weighting"));
      if (r.contains("granularity"))
        c.routing.granularity = granularity_from(r.at("granularity"));
    }
    if (j.contains("homogeneity")) c.homogeneity = homogeneity_from(j.at("homogeneity"));
    if (j.contains("beat_scales")) c.beat_scales = beat_scales_from(j.at("beat_scales"));
    c.ffn_baseline = j.value("ffn_baseline", c.ffn_baseline);
    return c;
  }
};

// ---- fixed embeddings ----

template <typename T>
Tensor<T> sinusoidal_positions(int L, int D) {
  Tensor<T> out(L, D);
  for (int pos = 0; pos < L; ++pos)
    for (int i = 0; i < D / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * i / D);
      out.at(pos, 2 * i) = static_cast<T>(std::sin(pos * freq));
      out.at(pos, 2 * i + 1) = static_cast<T>(std::cos(pos * freq));
    }
  return out;
}

template <typename T>
Tensor<T> sinusoidal_timestep(int t, int D) {
  Tensor<T> out(1, D);
  for (int i = 0; i < D / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / D);
    out.at(0, 2 * i) = static_cast<T>(std::sin(t * freq));
    out.at(0, 2 * i + 1) = static_cast<T>(std::cos(t * freq));
  }
  return out;
}

// ---- the denoiser ----

// N blocks of [self-attention -> music cross-attention -> TempoMoE (or FFN)],
// each residual branch AdaLN-Zero modulated by the timestep embedding, with
// clean-sample (x0) prediction heads. All gates are zero-initialized, so a
// fresh model is the identity up to the (zero) output projection.
template <typename T>
struct Denoiser {
  struct Block {
    Linear<T> attn_q, attn_k, attn_v, attn_o;
    Linear<T> cross_q, cross_k, cross_v, cross_o;
    TempoMoELayer<T> moe;
    Linear<T> ffn1, ffn2;  // ffn_baseline only
    Linear<T> adaln;       // D -> 9D, zero-init
  };

  DenoiserConfig cfg;
  Linear<T> in_proj;     // d -> D
  Linear<T> music_proj;  // 35 -> D
  int null_token = -1;   // learned 1 x D
  Linear<T> t_mlp1, t_mlp2;
  std::vector<Block> blocks;
  Linear<T> final_adaln;  // D -> 2D, zero-init
  Linear<T> out_proj;     // D -> d, zero-init

  static Denoiser create(ParamStore<T>& ps, const DenoiserConfig& cfg,
                         std::mt19937& rng) {
    cfg.validate();
    Denoiser m;
    m.cfg = cfg;
    int D = cfg.latent;
    m.in_proj = Linear<T>::create(ps, "in_proj", cfg.motion_dim, D, rng);
    m.music_proj = Linear<T>::create(ps, "music_proj", cfg.music_dim, D, rng);
    m.null_token = ps.add("null_token", Tensor<T>::randn(1, D, rng, static_cast<T>(0.02)));
    m.t_mlp1 = Linear<T>::create(ps, "t_mlp.l1", D, D, rng);
    m.t_mlp2 = Linear<T>::create(ps, "t_mlp.l2", D, D, rng);
    for (int b = 0; b < cfg.blocks; ++b) {
      std::string p = "block" + std::to_string(b);
      Block blk;
      blk.attn_q = Linear<T>::create(ps, p + ".attn.q", D, D, rng);
      blk.attn_k = Linear<T>::create(ps, p + ".attn.k", D, D, rng);
      blk.attn_v = Linear<T>::create(ps, p + ".attn.v", D, D, rng);
      blk.attn_o = Linear<T>::create(ps, p + ".attn.o", D, D, rng);
      blk.cross_q = Linear<T>::create(ps, p + ".cross.q", D, D, rng);
      blk.cross_k = Linear<T>::create(ps, p + ".cross.k", D, D, rng);
      blk.cross_v = Linear<T>::create(ps, p + ".cross.v", D, D, rng);
      blk.cross_o = Linear<T>::create(ps, p + ".cross.o", D, D, rng);
      if (cfg.ffn_baseline) {
        blk.ffn1 = Linear<T>::create(ps, p + ".ffn.l1", D, 2 * D, rng);
        blk.ffn2 = Linear<T>::create(ps, p + ".ffn.l2", 2 * D, D, rng);
      } else {
        blk.moe = TempoMoELayer<T>::create(ps, p + ".moe", D, cfg.fps, cfg.anchors,
                                           cfg.homogeneity, cfg.beat_scales,
                                           cfg.routing, rng);
      }
      blk.adaln = Linear<T>::create(ps, p + ".adaln", D, 9 * D, rng, /*zero_init=*/true);
      m.blocks.push_back(std::move(blk));
    }
    m.final_adaln = Linear<T>::create(ps, "final.adaln", D, 2 * D, rng, true);
    m.out_proj = Linear<T>::create(ps, "final.out", D, cfg.motion_dim, rng, true);
    return m;
  }

  // Projected music embedding with positions; pass to forward() for the
  // conditional path. Returns node id of the L x D embedding.
  int embed_music(Context<T>& ctx, const Tensor<T>& music) const {
    if (music.cols != cfg.music_dim)
      throw std::invalid_argument("embed_music: wrong channel count");
    int c = ctx.tape.constant(music);
    int e = music_proj.apply(ctx, c);
    return ctx.tape.add(e, ctx.tape.constant(sinusoidal_positions<T>(music.rows, cfg.latent)));
  }

  int null_embedding(Context<T>& ctx) const { return ctx.use(null_token); }

  // x_t: L x d constant; music_embed: id from embed_music / null_embedding.
  int forward(Context<T>& ctx, const Tensor<T>& x_t, int t, int music_embed,
              RoutingHook* hook = nullptr, long sample_id = 0) const {
    Tape<T>& tp = ctx.tape;
    int L = x_t.rows;
    if (x_t.cols != cfg.motion_dim)
      throw std::invalid_argument("denoiser_forward: wrong motion dim");
    bool null_cond = tp.val(music_embed).rows == 1 && L != 1;
    if (!null_cond && tp.val(music_embed).rows != L)
      throw std::invalid_argument("denoiser_forward: music/motion length mismatch");

    int h = in_proj.apply(ctx, tp.constant(x_t));
    h = tp.add(h, tp.constant(sinusoidal_positions<T>(L, cfg.latent)));

    int temb = tp.constant(sinusoidal_timestep<T>(t, cfg.latent));
    temb = t_mlp2.apply(ctx, tp.gelu(t_mlp1.apply(ctx, temb)));

    for (size_t b = 0; b < blocks.size(); ++b) {
      const Block& blk = blocks[b];
      int mod = blk.adaln.apply(ctx, temb);  // 1 x 9D
      int D = cfg.latent;
      auto mod_slice = [&](int idx) { return tp.slice_cols(mod, idx * D, (idx + 1) * D); };
      auto sublayer = [&](int idx, auto&& fn) {
        int scale_v = mod_slice(idx * 3 + 0);
        int shift_v = mod_slice(idx * 3 + 1);
        int gate_v = mod_slice(idx * 3 + 2);
        int u = tp.layernorm_rows(h);
        u = tp.add_row(tp.mul_row(u, tp.add_const(scale_v, T(1))), shift_v);
        int outv = fn(u);
        h = tp.add(h, tp.mul_row(outv, gate_v));
      };
      sublayer(0, [&](int u) {
        int q = blk.attn_q.apply(ctx, u);
        int k = blk.attn_k.apply(ctx, u);
        int v = blk.attn_v.apply(ctx, u);
        return blk.attn_o.apply(ctx, attention(tp, q, k, v, cfg.heads));
      });
      sublayer(1, [&](int u) {
        int q = blk.cross_q.apply(ctx, u);
        int k = blk.cross_k.apply(ctx, music_embed);
        int v = blk.cross_v.apply(ctx, music_embed);
        return blk.cross_o.apply(ctx, attention(tp, q, k, v, cfg.heads));
      });
      sublayer(2, [&](int u) {
        if (cfg.ffn_baseline)
          return blk.ffn2.apply(ctx, tp.gelu(blk.ffn1.apply(ctx, u)));
        return blk.moe.forward(ctx, u, music_embed, hook, static_cast<int>(b),
                               sample_id);
      });
    }

    int mod = final_adaln.apply(ctx, temb);
    int scale_v = tp.slice_cols(mod, 0, cfg.latent);
    int shift_v = tp.slice_cols(mod, cfg.latent, 2 * cfg.latent);
    int u = tp.layernorm_rows(h);
    u = tp.add_row(tp.mul_row(u, tp.add_const(scale_v, T(1))), shift_v);
    return out_proj.apply(ctx, u);
  }

  // Inference convenience: run a throwaway tape and return the value.
  Tensor<T> predict(ParamStore<T>& ps, const Tensor<T>& x_t, int t,
                    const Tensor<T>* music, RoutingHook* hook = nullptr,
                    long sample_id = 0) const {
    Tape<T> tape;
    Context<T> ctx(tape, ps);
    int me = music ? embed_music(ctx, *music) : null_embedding(ctx);
    int out = forward(ctx, x_t, t, me, hook, sample_id);
    return tape.val(out);
  }
};

}  // namespace tmoe
