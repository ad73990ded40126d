#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tmoe/nn.hpp"
#include "tmoe/tape.hpp"

namespace tmoe {

// ---- rhythm-adaptive kernel sizing ----

inline double frames_per_beat(double fps, double bpm) {
  if (fps <= 0 || bpm <= 0)
    throw std::invalid_argument("frames_per_beat: fps and bpm must be positive");
  return 60.0 * fps / bpm;
}

inline constexpr double kBeatScales[3] = {0.25, 0.5, 1.0};

// F_b is first snapped to a whole number of frames (nearest, ties to even),
// then r * F_b is ceiled to the next odd integer, floored at 3. The published
// per-anchor grid needs the snap: a raw ceiling overshoots the 160-anchor
// whole-beat entry (F_b = 11.25 -> 11, not 13) while a plain rounding
// undershoots the 140-anchor quarter-beat one (3.214 -> 5, not 3).
inline int kernel_size(double fps, double bpm, double r) {
  if (r != 0.25 && r != 0.5 && r != 1.0)
    throw std::invalid_argument("kernel_size: beat scale must be 1/4, 1/2 or 1");
  double fb = std::nearbyint(frames_per_beat(fps, bpm));
  int k = static_cast<int>(std::ceil(r * fb));
  if (k % 2 == 0) ++k;
  return std::max(k, 3);
}

struct KernelSpec {
  double fps = 30;
  double bpm_anchor = 120;
  double beat_scale = 0.5;
  double frames_per_beat = 15;
  int kernel = 9;

  static KernelSpec make(double fps, double bpm, double r) {
    KernelSpec s;
    s.fps = fps;
    s.bpm_anchor = bpm;
    s.beat_scale = r;
    s.frames_per_beat = tmoe::frames_per_beat(fps, bpm);
    s.kernel = kernel_size(fps, bpm, r);
    return s;
  }
};

enum class HomogeneityMode { heterogeneous, homo_multi_scale, homo_same_scale };
enum class BeatScalesMode { mixed, quarter_only, half_only, whole_only };
enum class RouteMode { top1, top2, soft, average };
enum class InterWeighting { sum, renorm_softmax };
enum class Granularity { sequence, frame };

struct RoutingConfig {
  RouteMode inter_mode = RouteMode::top2;
  RouteMode intra_mode = RouteMode::soft;
  InterWeighting inter_weighting = InterWeighting::renorm_softmax;
  Granularity granularity = Granularity::frame;
};

inline std::vector<double> default_anchors() {
  return {60, 80, 100, 120, 140, 160, 180, 200};
}

inline std::vector<double> uniform_anchors(int count) {
  if (count < 1) throw std::invalid_argument("uniform_anchors: count must be >= 1");
  if (count == 1) return {130};
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i)
    out[i] = 60.0 + (200.0 - 60.0) * i / (count - 1);
  return out;
}

// Kernel grid for a bank configuration: result[g][e], e in {quarter, half, whole}.
inline std::vector<std::array<int, 3>> bank_kernel_grid(
    double fps, const std::vector<double>& anchors, HomogeneityMode homo,
    BeatScalesMode scales) {
  if (anchors.empty()) throw std::invalid_argument("bank_kernel_grid: empty anchors");
  std::vector<std::array<int, 3>> grid(anchors.size());
  for (size_t g = 0; g < anchors.size(); ++g)
    for (int e = 0; e < 3; ++e) {
      double bpm = anchors[g];
      double r = kBeatScales[e];
      switch (scales) {
        case BeatScalesMode::mixed: break;
        case BeatScalesMode::quarter_only: r = 0.25; break;
        case BeatScalesMode::half_only: r = 0.5; break;
        case BeatScalesMode::whole_only: r = 1.0; break;
      }
      switch (homo) {
        case HomogeneityMode::heterogeneous: break;
        case HomogeneityMode::homo_multi_scale: bpm = 120; break;
        case HomogeneityMode::homo_same_scale: bpm = 120; r = 0.5; break;
      }
      grid[g][e] = kernel_size(fps, bpm, r);
    }
  return grid;
}

// ---- routing record hook ----

struct RoutingRecord {
  int layer = 0;
  long sample_id = 0;
  int frame = -1;  // -1 = sequence-level
  int group_a = -1, group_b = -1;
  double w_a = 0, w_b = 0;
  double gamma_quarter = 0, gamma_half = 0, gamma_whole = 0;
};

using RoutingHook = std::function<void(const RoutingRecord&)>;

// ---- group selection (value-level, shared by forward and tests) ----

struct GroupSelection {
  std::vector<int> selected;
  std::vector<double> weights;  // aligned with selected
};

inline GroupSelection select_groups(const std::vector<double>& scores,
                                    const RoutingConfig& cfg) {
  int G = static_cast<int>(scores.size());
  GroupSelection out;
  auto topk = [&](int K) {
    if (G < K) throw std::invalid_argument("select_groups: fewer groups than K");
    std::vector<int> order(G);
    std::iota(order.begin(), order.end(), 0);
    // ties broken by lower index
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    order.resize(K);
    std::sort(order.begin(), order.end());
    return order;
  };
  switch (cfg.inter_mode) {
    case RouteMode::top1:
    case RouteMode::top2: {
      int K = cfg.inter_mode == RouteMode::top1 ? 1 : 2;
      out.selected = topk(K);
      if (cfg.inter_weighting == InterWeighting::sum) {
        out.weights.assign(out.selected.size(), 1.0);
      } else {
        std::vector<double> sel_scores;
        for (int g : out.selected) sel_scores.push_back(scores[g]);
        double mx = *std::max_element(sel_scores.begin(), sel_scores.end());
        double sum = 0;
        for (double& s : sel_scores) {
          s = std::exp(s - mx);
          sum += s;
        }
        for (double s : sel_scores) out.weights.push_back(s / sum);
      }
      break;
    }
    case RouteMode::soft: {
      out.selected.resize(G);
      std::iota(out.selected.begin(), out.selected.end(), 0);
      double mx = *std::max_element(scores.begin(), scores.end());
      double sum = 0;
      std::vector<double> e(G);
      for (int g = 0; g < G; ++g) {
        e[g] = std::exp(scores[g] - mx);
        sum += e[g];
      }
      for (int g = 0; g < G; ++g) out.weights.push_back(e[g] / sum);
      break;
    }
    case RouteMode::average: {
      out.selected.resize(G);
      std::iota(out.selected.begin(), out.selected.end(), 0);
      out.weights.assign(G, 1.0 / G);
      break;
    }
  }
  return out;
}

// ---- the TempoMoE layer ----

// Each expert: pointwise expand (D -> 2D), depthwise temporal conv with its
// rhythm-adaptive kernel, GELU, pointwise project (2D -> D). One bank plus
// one TempoGateNet / BeatGateNet pair per denoiser layer.
template <typename T>
struct TempoMoELayer {
  struct Expert {
    Linear<T> expand;
    int depthwise = -1;  // param id, (2D) x k
    Linear<T> project;
    int kernel = 0;
  };

  int latent = 0;
  std::vector<double> anchors;
  RoutingConfig route;
  std::vector<std::vector<Expert>> groups;  // [G][3]
  Linear<T> tempo_gate1, tempo_gate2;       // D -> D/2 -> G
  Linear<T> beat_gate1, beat_gate2;         // D -> D/2 -> 3
  mutable std::vector<long> group_calls;    // forward executions per group

  static TempoMoELayer create(ParamStore<T>& ps, const std::string& prefix, int D,
                              double fps, const std::vector<double>& anchors,
                              HomogeneityMode homo, BeatScalesMode scales,
                              const RoutingConfig& route, std::mt19937& rng) {
    if (D < 4) throw std::invalid_argument("TempoMoELayer: latent dim too small");
    TempoMoELayer l;
    l.latent = D;
    l.anchors = anchors;
    l.route = route;
    auto grid = bank_kernel_grid(fps, anchors, homo, scales);
    int G = static_cast<int>(anchors.size());
    l.groups.resize(G);
    l.group_calls.assign(G, 0);
    int hidden = 2 * D;
    for (int g = 0; g < G; ++g) {
      for (int e = 0; e < 3; ++e) {
        Expert ex;
        std::string name = prefix + ".g" + std::to_string(g) + ".e" + std::to_string(e);
        ex.kernel = grid[g][e];
        ex.expand = Linear<T>::create(ps, name + ".expand", D, hidden, rng);
        // identity-centered depthwise init: center tap 1, rest small noise
        Tensor<T> kern = Tensor<T>::randn(hidden, ex.kernel, rng,
                                          static_cast<T>(0.02));
        for (int c = 0; c < hidden; ++c) kern.at(c, (ex.kernel - 1) / 2) += T(1);
        ex.depthwise = ps.add(name + ".depthwise", std::move(kern));
        ex.project = Linear<T>::create(ps, name + ".project", hidden, D, rng);
        l.groups[g].push_back(ex);
      }
    }
    int half = std::max(D / 2, 2);
    l.tempo_gate1 = Linear<T>::create(ps, prefix + ".tempo_gate.l1", D, half, rng);
    l.tempo_gate2 = Linear<T>::create(ps, prefix + ".tempo_gate.l2", half, G, rng,
                                      /*zero_init=*/true);
    l.beat_gate1 = Linear<T>::create(ps, prefix + ".beat_gate.l1", D, half, rng);
    l.beat_gate2 = Linear<T>::create(ps, prefix + ".beat_gate.l2", half, 3, rng,
                                     /*zero_init=*/true);
    return l;
  }

  std::vector<std::array<int, 3>> kernel_grid() const {
    std::vector<std::array<int, 3>> grid;
    for (const auto& g : groups) grid.push_back({g[0].kernel, g[1].kernel, g[2].kernel});
    return grid;
  }

  // Per-sequence tempo scores: mean-pool then 2-layer MLP. Returns node id of
  // the 1 x G score row.
  int tempo_gate(Context<T>& ctx, int c_embed) const {
    if (ctx.tape.val(c_embed).rows == 0)
      throw std::invalid_argument("tempo_gate: empty embedding");
    int pooled = ctx.tape.row_mean(c_embed);
    return tempo_gate2.apply(ctx, ctx.tape.gelu(tempo_gate1.apply(ctx, pooled)));
  }

  // Beat-scale simplex weights. Frame granularity yields L x 3 (one simplex
  // per frame); sequence granularity pools first and yields 1 x 3.
  int beat_gate(Context<T>& ctx, int c_embed, Granularity gran) const {
    int in = c_embed;
    if (gran == Granularity::sequence) in = ctx.tape.row_mean(c_embed);
    int logits = beat_gate2.apply(ctx, ctx.tape.gelu(beat_gate1.apply(ctx, in)));
    return apply_intra_mode(ctx.tape, logits);
  }

  // Intra-group routing on the 3-way logits: soft = softmax; top-k = masked
  // softmax over the k largest entries per row; average = uniform simplex.
  int apply_intra_mode(Tape<T>& t, int logits) const {
    const Tensor<T>& lv = t.val(logits);
    switch (route.intra_mode) {
      case RouteMode::soft:
        return t.softmax_rows(logits);
      case RouteMode::average:
        return t.constant(Tensor<T>::full(lv.rows, 3, T(1) / T(3)));
      case RouteMode::top1:
      case RouteMode::top2: {
        int K = route.intra_mode == RouteMode::top1 ? 1 : 2;
        Tensor<T> mask(lv.rows, 3, T(-1e9));
        for (int i = 0; i < lv.rows; ++i) {
          std::array<int, 3> order = {0, 1, 2};
          std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return lv.at(i, a) > lv.at(i, b);
          });
          for (int k = 0; k < K; ++k) mask.at(i, order[k]) = T(0);
        }
        return t.softmax_rows(t.add(logits, t.constant(std::move(mask))));
      }
    }
    throw std::logic_error("apply_intra_mode: unreachable");
  }

  int expert_forward(Context<T>& ctx, const Expert& ex, int h) const {
    int u = ex.expand.apply(ctx, h);
    u = ctx.tape.depthwise_conv1d(u, ctx.use(ex.depthwise));
    u = ctx.tape.gelu(u);
    return ex.project.apply(ctx, u);
  }

  int forward(Context<T>& ctx, int h, int c_embed, RoutingHook* hook = nullptr,
              int layer_idx = 0, long sample_id = 0) const {
    Tape<T>& t = ctx.tape;
    int L = t.val(h).rows;
    if (t.val(h).cols != latent || t.val(c_embed).cols != latent)
      throw std::invalid_argument("tempomoe_forward: latent dim mismatch");

    int scores = tempo_gate(ctx, c_embed);
    std::vector<double> score_vals;
    for (T v : t.val(scores).data) score_vals.push_back(static_cast<double>(v));
    GroupSelection sel = select_groups(score_vals, route);

    // group weights as tape nodes where gradient should flow
    std::vector<int> weight_nodes(sel.selected.size(), -1);
    bool hard = route.inter_mode == RouteMode::top1 || route.inter_mode == RouteMode::top2;
    if (hard && route.inter_weighting == InterWeighting::renorm_softmax) {
      int gathered = t.gather_cols(scores, sel.selected);
      int w = t.softmax_rows(gathered);
      for (size_t i = 0; i < sel.selected.size(); ++i)
        weight_nodes[i] = t.slice_cols(w, static_cast<int>(i), static_cast<int>(i) + 1);
    } else if (route.inter_mode == RouteMode::soft) {
      int w = t.softmax_rows(scores);
      for (size_t i = 0; i < sel.selected.size(); ++i)
        weight_nodes[i] = t.slice_cols(w, sel.selected[i], sel.selected[i] + 1);
    }

    // beat-scale weights; fall back to sequence granularity when the music
    // embedding length does not match h (e.g. the 1-row null token)
    Granularity gran = route.granularity;
    if (gran == Granularity::frame && t.val(c_embed).rows != L)
      gran = Granularity::sequence;
    int gamma = beat_gate(ctx, c_embed, gran);
    bool per_frame = t.val(gamma).rows == L;

    int out = -1;
    for (size_t i = 0; i < sel.selected.size(); ++i) {
      int g = sel.selected[i];
      ++group_calls[g];
      int y = -1;
      for (int e = 0; e < 3; ++e) {
        int fe = expert_forward(ctx, groups[g][e], h);
        int weighted = per_frame ? t.mul_col(fe, t.slice_cols(gamma, e, e + 1))
                                 : t.mul_scalar_node(fe, t.slice_cols(gamma, e, e + 1));
        y = (y < 0) ? weighted : t.add(y, weighted);
      }
      int contrib;
      if (weight_nodes[i] >= 0)
        contrib = t.mul_scalar_node(y, weight_nodes[i]);
      else
        contrib = t.scale(y, static_cast<T>(sel.weights[i]));
      out = (out < 0) ? contrib : t.add(out, contrib);
    }

    if (hook) emit_records(t, sel, weight_nodes, gamma, per_frame, L, *hook,
                           layer_idx, sample_id);
    return out;
  }

  void reset_counters() const { std::fill(group_calls.begin(), group_calls.end(), 0L); }

 private:
  void emit_records(Tape<T>& t, const GroupSelection& sel,
                    const std::vector<int>& weight_nodes, int gamma, bool per_frame,
                    int L, const RoutingHook& hook, int layer_idx,
                    long sample_id) const {
    // top-2 groups by weight for the fixed-width CSV schema
    std::vector<size_t> order(sel.selected.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<double> w(sel.selected.size());
    for (size_t i = 0; i < w.size(); ++i)
      w[i] = weight_nodes[i] >= 0 ? static_cast<double>(t.val(weight_nodes[i]).item())
                                  : sel.weights[i];
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return w[a] > w[b]; });
    RoutingRecord base;
    base.layer = layer_idx;
    base.sample_id = sample_id;
    base.group_a = sel.selected[order[0]];
    base.w_a = w[order[0]];
    if (order.size() > 1) {
      base.group_b = sel.selected[order[1]];
      base.w_b = w[order[1]];
    }
    const Tensor<T>& gv = t.val(gamma);
    if (per_frame) {
      for (int i = 0; i < L; ++i) {
        RoutingRecord r = base;
        r.frame = i;
        r.gamma_quarter = gv.at(i, 0);
        r.gamma_half = gv.at(i, 1);
        r.gamma_whole = gv.at(i, 2);
        hook(r);
      }
    } else {
      RoutingRecord r = base;
      r.frame = -1;
      r.gamma_quarter = gv.at(0, 0);
      r.gamma_half = gv.at(0, 1);
      r.gamma_whole = gv.at(0, 2);
      hook(r);
    }
  }
};

}  // namespace tmoe
