#pragma once

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmoe/container.hpp"
#include "tmoe/tape.hpp"
#include "tmoe/tensor.hpp"

namespace tmoe {

// Frame layout: [foot_contact: 4 | root_translation: 3 | joint_rot6d: 6J],
// so d = 7 + 6J.
struct MotionLayout {
  static constexpr int contact_begin = 0;
  static constexpr int contact_count = 4;
  static constexpr int root_begin = 4;
  static constexpr int rot_begin = 7;

  static int dim_for_joints(int J) { return 7 + 6 * J; }
  static int joints_for_dim(int d) {
    if (d < 13 || (d - 7) % 6 != 0)
      throw std::invalid_argument("motion dim must be 7 + 6J");
    return (d - 7) / 6;
  }
};

struct MotionSequence {
  Tensor<float> frames;  // L x d
  float fps = 30.0f;

  int length() const { return frames.rows; }
  int dim() const { return frames.cols; }
  int joints() const { return MotionLayout::joints_for_dim(frames.cols); }
};

struct Skeleton {
  int joints = 0;
  std::vector<int> parents;                   // root = -1, must be joint 0
  std::vector<std::array<double, 3>> offsets; // bone offsets, meters
  std::array<int, 4> contact_joints{};        // heel L/R, toe L/R

  void validate() const {
    if (joints < 1 || static_cast<int>(parents.size()) != joints ||
        static_cast<int>(offsets.size()) != joints)
      throw std::invalid_argument("skeleton: inconsistent sizes");
    if (parents[0] != -1) throw std::invalid_argument("skeleton: joint 0 must be root");
    for (int j = 1; j < joints; ++j)
      if (parents[j] < 0 || parents[j] >= j)
        throw std::invalid_argument("skeleton: parents must form a tree in topo order");
    for (int c : contact_joints)
      if (c < 0 || c >= joints)
        throw std::invalid_argument("skeleton: contact joint out of range");
  }
};

struct LossWeights {
  double joint = 0.646;
  double vel = 2.964;
  double contact = 10.942;
  double acc = 1.0;
};

struct LossBreakdown {
  double simple = 0;
  double joint = 0;
  double vel = 0;
  double acc = 0;
  double contact = 0;
  double kin_total = 0;
  double total = 0;
};

// ---- skeleton assets ----

inline Skeleton toy_skeleton3() {
  Skeleton s;
  s.joints = 3;
  s.parents = {-1, 0, 1};
  s.offsets = {{{0, 0, 0}}, {{1, 0, 0}}, {{1, 0, 0}}};
  s.contact_joints = {1, 2, 1, 2};
  return s;
}

// 24-joint SMPL-topology tree with approximate T-pose bone offsets (meters).
inline Skeleton smpl24_skeleton() {
  Skeleton s;
  s.joints = 24;
  s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  s.offsets = {
      {{0.000, 0.000, 0.000}},   // 0 pelvis
      {{0.070, -0.090, 0.000}},  // 1 l_hip
      {{-0.070, -0.090, 0.000}}, // 2 r_hip
      {{0.000, 0.110, 0.000}},   // 3 spine1
      {{0.040, -0.380, 0.000}},  // 4 l_knee
      {{-0.040, -0.380, 0.000}}, // 5 r_knee
      {{0.000, 0.140, 0.000}},   // 6 spine2
      {{0.000, -0.400, 0.000}},  // 7 l_ankle
      {{0.000, -0.400, 0.000}},  // 8 r_ankle
      {{0.000, 0.060, 0.000}},   // 9 spine3
      {{0.000, -0.060, 0.130}},  // 10 l_foot
      {{0.000, -0.060, 0.130}},  // 11 r_foot
      {{0.000, 0.220, 0.000}},   // 12 neck
      {{0.080, 0.120, 0.000}},   // 13 l_collar
      {{-0.080, 0.120, 0.000}},  // 14 r_collar
      {{0.000, 0.090, 0.000}},   // 15 head
      {{0.110, 0.000, 0.000}},   // 16 l_shoulder
      {{-0.110, 0.000, 0.000}},  // 17 r_shoulder
      {{0.260, 0.000, 0.000}},   // 18 l_elbow
      {{-0.260, 0.000, 0.000}},  // 19 r_elbow
      {{0.250, 0.000, 0.000}},   // 20 l_wrist
      {{-0.250, 0.000, 0.000}},  // 21 r_wrist
      {{0.090, 0.000, 0.000}},   // 22 l_hand
      {{-0.090, 0.000, 0.000}},  // 23 r_hand
  };
  s.contact_joints = {7, 8, 10, 11};
  return s;
}

inline Skeleton load_skeleton(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_skeleton: cannot open " + path);
  nlohmann::json j;
  f >> j;
  Skeleton s;
  s.joints = j.at("joints").get<int>();
  s.parents = j.at("parents").get<std::vector<int>>();
  for (const auto& o : j.at("offsets"))
    s.offsets.push_back({o[0].get<double>(), o[1].get<double>(), o[2].get<double>()});
  auto cj = j.at("contact_joints").get<std::vector<int>>();
  if (cj.size() != 4) throw std::runtime_error("load_skeleton: need 4 contact joints");
  for (int i = 0; i < 4; ++i) s.contact_joints[i] = cj[i];
  s.validate();
  return s;
}

inline void save_skeleton(const std::string& path, const Skeleton& s) {
  nlohmann::json j;
  j["joints"] = s.joints;
  j["parents"] = s.parents;
  for (const auto& o : s.offsets) j["offsets"].push_back({o[0], o[1], o[2]});
  j["contact_joints"] = {s.contact_joints[0], s.contact_joints[1],
                         s.contact_joints[2], s.contact_joints[3]};
  std::ofstream f(path);
  f << j.dump(2) << "\n";
}

// ---- motion container io ----

inline MotionSequence load_motion(const std::string& path) {
  ContainerData c = load_container(path);
  MotionSequence m{std::move(c.frames), c.fps};
  MotionLayout::joints_for_dim(m.frames.cols);  // validates layout
  if (!m.frames.all_finite())
    throw std::runtime_error("load_motion: non-finite values in " + path);
  return m;
}

inline void save_motion(const std::string& path, const MotionSequence& m,
                        double bpm = 0) {
  save_container(path, m.frames, m.fps);
  nlohmann::json meta;
  meta["kind"] = "motion";
  meta["fps"] = m.fps;
  if (bpm > 0) meta["bpm"] = bpm;
  std::ofstream f(path + ".meta.json");
  f << meta.dump(2) << "\n";
}

// ---- plain (value-level) kinematics ----

// Gram-Schmidt 6D -> rotation matrix. Columns of R are the orthonormalized
// first triple, second triple, and their cross product.
inline void rot6d_to_matrix(const double r6[6], double R[9],
                            const std::string& context = "") {
  double a[3] = {r6[0], r6[1], r6[2]};
  double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  if (na < 1e-8)
    throw std::invalid_argument("rot6d_to_matrix: degenerate first triple " + context);
  for (double& v : a) v /= na;
  double b[3] = {r6[3], r6[4], r6[5]};
  double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  for (int i = 0; i < 3; ++i) b[i] -= d * a[i];
  double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  if (nb < 1e-8)
    throw std::invalid_argument("rot6d_to_matrix: degenerate second triple " + context);
  for (double& v : b) v /= nb;
  double c[3] = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                 a[0] * b[1] - a[1] * b[0]};
  for (int i = 0; i < 3; ++i) {
    R[i * 3 + 0] = a[i];
    R[i * 3 + 1] = b[i];
    R[i * 3 + 2] = c[i];
  }
}

// Joint positions for every frame: L x 3J (double precision).
inline Tensor<double> forward_kinematics(const Tensor<double>& frames,
                                         const Skeleton& skel) {
  skel.validate();
  int J = skel.joints;
  if (frames.cols != MotionLayout::dim_for_joints(J))
    throw std::invalid_argument("forward_kinematics: motion dim does not match skeleton");
  int L = frames.rows;
  Tensor<double> pos(L, 3 * J);
  std::vector<double> glob(static_cast<size_t>(J) * 9);
  for (int t = 0; t < L; ++t) {
    const double* row = frames.row(t);
    for (int j = 0; j < J; ++j) {
      double Rl[9];
      rot6d_to_matrix(row + MotionLayout::rot_begin + 6 * j, Rl,
                      "(frame " + std::to_string(t) + ", joint " + std::to_string(j) + ")");
      int p = skel.parents[j];
      if (p < 0) {
        std::copy(Rl, Rl + 9, glob.begin() + static_cast<size_t>(j) * 9);
        for (int i = 0; i < 3; ++i)
          pos.at(t, 3 * j + i) = row[MotionLayout::root_begin + i];
      } else {
        const double* Rp = glob.data() + static_cast<size_t>(p) * 9;
        double* Rg = glob.data() + static_cast<size_t>(j) * 9;
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) {
            double acc = 0;
            for (int m = 0; m < 3; ++m) acc += Rp[i * 3 + m] * Rl[m * 3 + k];
            Rg[i * 3 + k] = acc;
          }
        const auto& off = skel.offsets[j];
        for (int i = 0; i < 3; ++i)
          pos.at(t, 3 * j + i) =
              pos.at(t, 3 * p + i) + Rp[i * 3 + 0] * off[0] + Rp[i * 3 + 1] * off[1] +
              Rp[i * 3 + 2] * off[2];
      }
    }
  }
  return pos;
}

inline Tensor<double> motion_as_double(const MotionSequence& m) {
  return m.frames.cast<double>();
}

// Forward differences scaled by fps; order 2 applies the stencil twice.
inline Tensor<double> time_diff(const Tensor<double>& x, int order, double fps) {
  if (order != 1 && order != 2) throw std::invalid_argument("time_diff: order must be 1 or 2");
  if (x.rows <= order) throw std::invalid_argument("time_diff: sequence too short");
  Tensor<double> cur = x;
  for (int o = 0; o < order; ++o) {
    Tensor<double> next(cur.rows - 1, cur.cols);
    for (int i = 0; i + 1 < cur.rows; ++i)
      for (int j = 0; j < cur.cols; ++j)
        next.at(i, j) = (cur.at(i + 1, j) - cur.at(i, j)) * fps;
    cur = std::move(next);
  }
  return cur;
}

// The four kinematic losses plus the simple MSE, value-level.
inline LossBreakdown loss_kinematic(const MotionSequence& gt, const MotionSequence& pred,
                                    const Skeleton& skel, const LossWeights& w) {
  if (!gt.frames.same_shape(pred.frames))
    throw std::invalid_argument("loss_kinematic: shape mismatch");
  if (gt.fps != pred.fps) throw std::invalid_argument("loss_kinematic: fps mismatch");
  int L = gt.length();
  if (L < 3) throw std::invalid_argument("loss_kinematic: need at least 3 frames");

  Tensor<double> gtd = motion_as_double(gt);
  Tensor<double> prd = motion_as_double(pred);

  LossBreakdown out;
  // simple: mean squared error over all entries of the raw representation
  {
    double acc = 0;
    for (size_t i = 0; i < gtd.data.size(); ++i) {
      double d = gtd.data[i] - prd.data[i];
      acc += d * d;
    }
    out.simple = acc / static_cast<double>(gtd.data.size());
  }
  // joint: FK positions, (1/L) sum of squared norms
  Tensor<double> pg = forward_kinematics(gtd, skel);
  Tensor<double> pp = forward_kinematics(prd, skel);
  {
    double acc = 0;
    for (size_t i = 0; i < pg.data.size(); ++i) {
      double d = pg.data[i] - pp.data[i];
      acc += d * d;
    }
    out.joint = acc / L;
  }
  // vel/acc on the raw pose vectors; plain frame differences, not fps-scaled
  // — with the published lambda weights an fps^2-scaled acceleration term
  // dwarfs everything else and the composite loss stops training
  for (int order = 1; order <= 2; ++order) {
    Tensor<double> dg = time_diff(gtd, order, 1.0);
    Tensor<double> dp = time_diff(prd, order, 1.0);
    double acc = 0;
    for (size_t i = 0; i < dg.data.size(); ++i) {
      double d = dg.data[i] - dp.data[i];
      acc += d * d;
    }
    double v = acc / dg.rows;
    if (order == 1)
      out.vel = v;
    else
      out.acc = v;
  }
  // contact: predicted contact-joint displacement weighted by predicted labels
  {
    double acc = 0;
    for (int i = 0; i + 1 < L; ++i)
      for (int c = 0; c < MotionLayout::contact_count; ++c) {
        double b = std::clamp<double>(prd.at(i, MotionLayout::contact_begin + c), 0.0, 1.0);
        int j = skel.contact_joints[c];
        for (int k = 0; k < 3; ++k) {
          double disp = (pp.at(i + 1, 3 * j + k) - pp.at(i, 3 * j + k)) * b;
          acc += disp * disp;
        }
      }
    out.contact = acc / (L - 1);
  }
  out.kin_total = w.joint * out.joint + w.vel * out.vel + w.contact * out.contact +
                  w.acc * out.acc;
  out.total = out.simple + out.kin_total;
  return out;
}

// ---- tape (differentiable) kinematics ----

// 6D -> rotation for all rows at once: L x 6 -> L x 9 (row-major 3x3).
template <typename T>
int rot6d_rows(Tape<T>& t, int r6) {
  if (t.val(r6).cols != 6) throw std::invalid_argument("rot6d_rows: input must be L x 6");
  int a0 = t.slice_cols(r6, 0, 3);
  int b0 = t.slice_cols(r6, 3, 6);
  int an = t.div_col(a0, t.sqrt_op(t.rowwise_dot(a0, a0)));
  int proj = t.rowwise_dot(an, b0);
  int bp = t.sub(b0, t.mul_col(an, proj));
  int bn = t.div_col(bp, t.sqrt_op(t.rowwise_dot(bp, bp)));
  int cn = t.cross3(an, bn);
  // columns a|b|c, row-major
  std::vector<int> parts;
  for (int i = 0; i < 3; ++i) {
    parts.push_back(t.slice_cols(an, i, i + 1));
    parts.push_back(t.slice_cols(bn, i, i + 1));
    parts.push_back(t.slice_cols(cn, i, i + 1));
  }
  return t.concat_cols(parts);
}

// FK on the tape: root L x 3, rots L x 6J -> joint positions L x 3J.
template <typename T>
int fk_rows(Tape<T>& t, int root, int rots, const Skeleton& skel) {
  int J = skel.joints;
  if (t.val(rots).cols != 6 * J)
    throw std::invalid_argument("fk_rows: rotation dim does not match skeleton");
  std::vector<int> glob(J), pos(J);
  for (int j = 0; j < J; ++j) {
    int Rl = rot6d_rows(t, t.slice_cols(rots, 6 * j, 6 * j + 6));
    int p = skel.parents[j];
    if (p < 0) {
      glob[j] = Rl;
      pos[j] = root;
    } else {
      glob[j] = t.batch_matmul3(glob[p], Rl);
      std::array<T, 3> off = {static_cast<T>(skel.offsets[j][0]),
                              static_cast<T>(skel.offsets[j][1]),
                              static_cast<T>(skel.offsets[j][2])};
      pos[j] = t.add(pos[p], t.rot_apply(glob[p], off));
    }
  }
  return t.concat_cols(pos);
}

struct KinLossIds {
  int simple = -1, joint = -1, vel = -1, acc = -1, contact = -1, kin_total = -1,
      total = -1;
};

// Differentiable L_total = L_simple + L_kin for one sequence. gt is a constant.
template <typename T>
KinLossIds kinematic_loss_graph(Tape<T>& t, int pred, const Tensor<T>& gt,
                                const Skeleton& skel, const LossWeights& w) {
  const int L = gt.rows;
  const int J = skel.joints;
  if (t.val(pred).rows != L || t.val(pred).cols != gt.cols)
    throw std::invalid_argument("kinematic_loss_graph: shape mismatch");
  int gt_id = t.constant(gt);

  KinLossIds ids;
  auto sq_sum = [&](int diff) { return t.sum_all(t.mul(diff, diff)); };

  int diff = t.sub(pred, gt_id);
  ids.simple = t.scale(sq_sum(diff), T(1) / static_cast<T>(gt.size()));

  int pred_root = t.slice_cols(pred, MotionLayout::root_begin, MotionLayout::rot_begin);
  int pred_rots = t.slice_cols(pred, MotionLayout::rot_begin, gt.cols);
  int gt_root = t.slice_cols(gt_id, MotionLayout::root_begin, MotionLayout::rot_begin);
  int gt_rots = t.slice_cols(gt_id, MotionLayout::rot_begin, gt.cols);

  int fk_pred = fk_rows(t, pred_root, pred_rots, skel);
  int fk_gt = fk_rows(t, gt_root, gt_rots, skel);
  ids.joint = t.scale(sq_sum(t.sub(fk_pred, fk_gt)), T(1) / static_cast<T>(L));

  // plain frame differences, matching loss_kinematic
  int v_diff = t.sub(t.time_diff(pred, T(1)), t.time_diff(gt_id, T(1)));
  ids.vel = t.scale(sq_sum(v_diff), T(1) / static_cast<T>(L - 1));
  int a_diff = t.sub(t.time_diff(t.time_diff(pred, T(1)), T(1)),
                     t.time_diff(t.time_diff(gt_id, T(1)), T(1)));
  ids.acc = t.scale(sq_sum(a_diff), T(1) / static_cast<T>(L - 2));

  // contact: displacement of predicted contact-joint positions times the
  // predicted (clamped) contact label of the earlier frame
  int labels = t.clamp01(t.slice_cols(pred, MotionLayout::contact_begin,
                                      MotionLayout::contact_begin + MotionLayout::contact_count));
  int labels_head = t.slice_rows(labels, 0, L - 1);
  int contact_acc = -1;
  for (int c = 0; c < MotionLayout::contact_count; ++c) {
    int j = skel.contact_joints[c];
    int pj = t.slice_cols(fk_pred, 3 * j, 3 * j + 3);
    int disp = t.sub(t.slice_rows(pj, 1, L), t.slice_rows(pj, 0, L - 1));
    int weighted = t.mul_col(disp, t.slice_cols(labels_head, c, c + 1));
    int term = sq_sum(weighted);
    contact_acc = (contact_acc < 0) ? term : t.add(contact_acc, term);
  }
  ids.contact = t.scale(contact_acc, T(1) / static_cast<T>(L - 1));

  int kin = t.scale(ids.joint, static_cast<T>(w.joint));
  kin = t.add(kin, t.scale(ids.vel, static_cast<T>(w.vel)));
  kin = t.add(kin, t.scale(ids.contact, static_cast<T>(w.contact)));
  kin = t.add(kin, t.scale(ids.acc, static_cast<T>(w.acc)));
  ids.kin_total = kin;
  ids.total = t.add(ids.simple, ids.kin_total);
  return ids;
}

}  // namespace tmoe
