#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "tmoe/kinematics.hpp"
#include "tmoe/nn.hpp"

using namespace tmoe;

namespace {

// random motion with valid (non-degenerate) rotation channels
MotionSequence random_motion(const Skeleton& skel, int L, std::mt19937& rng) {
  MotionSequence m;
  m.fps = 30.0f;
  m.frames = Tensor<float>(L, MotionLayout::dim_for_joints(skel.joints));
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < L; ++i) {
    float* row = m.frames.row(i);
    for (int c = 0; c < 4; ++c) row[c] = u(rng) > 0.5 ? 1.0f : 0.0f;
    for (int c = 4; c < 7; ++c) row[c] = static_cast<float>(0.5 * g(rng));
    for (int j = 0; j < skel.joints; ++j) {
      float* r6 = row + MotionLayout::rot_begin + 6 * j;
      // identity basis plus a perturbation keeps Gram-Schmidt well-posed
      r6[0] = 1; r6[4] = 1;
      for (int c = 0; c < 6; ++c) r6[c] += static_cast<float>(0.3 * g(rng));
    }
  }
  return m;
}

void set_rot_about_z(float* r6, double theta) {
  r6[0] = static_cast<float>(std::cos(theta));
  r6[1] = static_cast<float>(std::sin(theta));
  r6[2] = 0;
  r6[3] = static_cast<float>(-std::sin(theta));
  r6[4] = static_cast<float>(std::cos(theta));
  r6[5] = 0;
}

}  // namespace

TEST_CASE("rot6d canonical cases") {
  double r6[6] = {1, 0, 0, 0, 1, 0};
  double R[9];
  rot6d_to_matrix(r6, R, "t");
  double ident[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) CHECK(R[i] == doctest::Approx(ident[i]));

  double r90[6] = {0, 1, 0, -1, 0, 0};
  rot6d_to_matrix(r90, R, "t");
  // columns are the images of the basis vectors: x->y, y->-x, z->z
  CHECK(R[3] == doctest::Approx(1.0));   // R(1,0)
  CHECK(R[1] == doctest::Approx(-1.0));  // R(0,1)
  CHECK(R[8] == doctest::Approx(1.0));
}

TEST_CASE("rot6d outputs stay in SO(3)") {
  std::mt19937 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    double r6[6];
    for (double& v : r6) v = g(rng);
    double R[9];
    rot6d_to_matrix(r6, R, "t");
    // R^T R == I
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += R[3 * k + i] * R[3 * k + j];
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-5);
      }
    double det = R[0] * (R[4] * R[8] - R[5] * R[7]) -
                 R[1] * (R[3] * R[8] - R[5] * R[6]) +
                 R[2] * (R[3] * R[7] - R[4] * R[6]);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("degenerate rot6d names the offending context") {
  double zero[6] = {0, 0, 0, 0, 1, 0};
  double R[9];
  try {
    rot6d_to_matrix(zero, R, "frame 3 joint 1");
    FAIL("expected error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("frame 3 joint 1") != std::string::npos);
  }
  double parallel[6] = {1, 0, 0, 2, 0, 0};
  CHECK_THROWS(rot6d_to_matrix(parallel, R, "t"));
}

TEST_CASE("FK rest pose accumulates offsets; root translation shifts all joints") {
  Skeleton skel = toy_skeleton3();
  MotionSequence m;
  m.fps = 30;
  m.frames = Tensor<float>(2, MotionLayout::dim_for_joints(3));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      set_rot_about_z(m.frames.row(i) + MotionLayout::rot_begin + 6 * j, 0.0);
  Tensor<double> pos = forward_kinematics(m.frames.cast<double>(), skel);
  // chain offsets (0,0,0), (1,0,0), (1,0,0): joints at x = 0, 1, 2
  CHECK(pos.at(0, 0) == doctest::Approx(0.0));
  CHECK(pos.at(0, 3) == doctest::Approx(1.0));
  CHECK(pos.at(0, 6) == doctest::Approx(2.0));

  m.frames.at(1, MotionLayout::root_begin + 0) = 1.0f;
  Tensor<double> pos2 = forward_kinematics(m.frames.cast<double>(), skel);
  for (int j = 0; j < 3; ++j) {
    CHECK(pos2.at(1, 3 * j + 0) == doctest::Approx(pos.at(0, 3 * j + 0) + 1.0));
    CHECK(pos2.at(1, 3 * j + 1) == doctest::Approx(pos.at(0, 3 * j + 1)));
  }
}

TEST_CASE("FK hand oracle: 90-degree root rotation swings the chain to +y") {
  Skeleton skel = toy_skeleton3();
  MotionSequence m;
  m.fps = 30;
  m.frames = Tensor<float>(1, MotionLayout::dim_for_joints(3));
  set_rot_about_z(m.frames.row(0) + MotionLayout::rot_begin, M_PI / 2);
  set_rot_about_z(m.frames.row(0) + MotionLayout::rot_begin + 6, 0.0);
  set_rot_about_z(m.frames.row(0) + MotionLayout::rot_begin + 12, 0.0);
  Tensor<double> pos = forward_kinematics(m.frames.cast<double>(), skel);
  CHECK(pos.at(0, 6) == doctest::Approx(0.0).epsilon(1e-6));  // tip x
  CHECK(pos.at(0, 7) == doctest::Approx(2.0));                // tip y
}

TEST_CASE("time_diff matches a direct oracle") {
  std::mt19937 rng(4);
  Tensor<double> x = Tensor<double>::randn(6, 3, rng);
  Tensor<double> d1 = time_diff(x, 1, 30.0);
  Tensor<double> d2 = time_diff(x, 2, 30.0);
  REQUIRE(d1.rows == 5);
  REQUIRE(d2.rows == 4);
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(d1.at(i, c) == doctest::Approx((x.at(i + 1, c) - x.at(i, c)) * 30.0));
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(d2.at(i, c) == doctest::Approx((d1.at(i + 1, c) - d1.at(i, c)) * 30.0));

  Tensor<double> ramp(5, 1);
  for (int i = 0; i < 5; ++i) ramp.at(i, 0) = 0.25 * i;
  Tensor<double> r1 = time_diff(ramp, 1, 30.0);
  Tensor<double> r2 = time_diff(ramp, 2, 30.0);
  for (double v : r1.data) CHECK(v == doctest::Approx(7.5));
  for (double v : r2.data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("loss components vanish for identical motions") {
  std::mt19937 rng(6);
  Skeleton skel = toy_skeleton3();
  MotionSequence m = random_motion(skel, 4, rng);
  // contact is a motion penalty (label x foot displacement), so it only
  // vanishes here once the labels are zeroed
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 4; ++c) m.frames.at(i, c) = 0.0f;
  LossBreakdown lb = loss_kinematic(m, m, skel, LossWeights{});
  CHECK(lb.simple == doctest::Approx(0.0));
  CHECK(lb.joint == doctest::Approx(0.0));
  CHECK(lb.vel == doctest::Approx(0.0));
  CHECK(lb.acc == doctest::Approx(0.0));
  CHECK(lb.contact == doctest::Approx(0.0));
}

TEST_CASE("static pose with full contact has zero contact loss") {
  std::mt19937 rng(8);
  Skeleton skel = toy_skeleton3();
  MotionSequence m = random_motion(skel, 1, rng);
  MotionSequence rep;
  rep.fps = m.fps;
  rep.frames = Tensor<float>(4, m.dim());
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < m.dim(); ++c)
      rep.frames.at(i, c) = c < 4 ? 1.0f : m.frames.at(0, c);
  LossBreakdown lb = loss_kinematic(rep, rep, skel, LossWeights{});
  CHECK(lb.contact == doctest::Approx(0.0));
}

TEST_CASE("loss components match an independent scalar-loop oracle") {
  std::mt19937 rng(10);
  Skeleton skel = toy_skeleton3();
  int L = 4;
  MotionSequence gt = random_motion(skel, L, rng);
  MotionSequence pred = random_motion(skel, L, rng);
  LossWeights w;
  LossBreakdown lb = loss_kinematic(gt, pred, skel, w);

  Tensor<double> pg = forward_kinematics(gt.frames.cast<double>(), skel);
  Tensor<double> pp = forward_kinematics(pred.frames.cast<double>(), skel);
  double joint = 0;
  for (int i = 0; i < L; ++i)
    for (int c = 0; c < pg.cols; ++c) {
      double d = pg.at(i, c) - pp.at(i, c);
      joint += d * d;
    }
  joint /= L;
  CHECK(lb.joint == doctest::Approx(joint).epsilon(1e-6));

  double vel = 0, acc = 0;
  int d = gt.dim();
  for (int c = 0; c < d; ++c) {
    std::vector<double> dv;
    // losses use plain frame differences (no fps factor)
    for (int i = 0; i + 1 < L; ++i) {
      double gv = gt.frames.at(i + 1, c) - gt.frames.at(i, c);
      double pv = pred.frames.at(i + 1, c) - pred.frames.at(i, c);
      vel += (gv - pv) * (gv - pv);
      dv.push_back(gv - pv);
    }
    for (size_t i = 0; i + 1 < dv.size(); ++i) {
      double a = dv[i + 1] - dv[i];
      acc += a * a;
    }
  }
  vel /= (L - 1);
  acc /= (L - 2);
  CHECK(lb.vel == doctest::Approx(vel).epsilon(1e-6));
  CHECK(lb.acc == doctest::Approx(acc).epsilon(1e-6));

  double contact = 0;
  for (int i = 0; i + 1 < L; ++i)
    for (int k = 0; k < 4; ++k) {
      double b = std::min(1.0f, std::max(0.0f, pred.frames.at(i, k)));
      int j = skel.contact_joints[k];
      for (int c = 0; c < 3; ++c) {
        double disp = (pp.at(i + 1, 3 * j + c) - pp.at(i, 3 * j + c)) * b;
        contact += disp * disp;
      }
    }
  contact /= (L - 1);
  CHECK(lb.contact == doctest::Approx(contact).epsilon(1e-6));

  CHECK(lb.kin_total == doctest::Approx(w.joint * lb.joint + w.vel * lb.vel +
                                        w.acc * lb.acc + w.contact * lb.contact));
  CHECK(lb.total == doctest::Approx(lb.simple + lb.kin_total));
}

TEST_CASE("zero weights zero out the kinematic total") {
  std::mt19937 rng(12);
  Skeleton skel = toy_skeleton3();
  MotionSequence gt = random_motion(skel, 4, rng);
  MotionSequence pred = random_motion(skel, 4, rng);
  LossWeights w{0, 0, 0, 0};
  LossBreakdown lb = loss_kinematic(gt, pred, skel, w);
  CHECK(lb.kin_total == doctest::Approx(0.0));
  CHECK(lb.total == doctest::Approx(lb.simple));
}

TEST_CASE("differentiable loss graph agrees with the value-level loss") {
  std::mt19937 rng(14);
  Skeleton skel = toy_skeleton3();
  MotionSequence gt = random_motion(skel, 4, rng);
  MotionSequence pred = random_motion(skel, 4, rng);
  LossWeights w;
  LossBreakdown lb = loss_kinematic(gt, pred, skel, w);

  Tape<double> t;
  int p = t.constant(pred.frames.cast<double>());
  KinLossIds ids =
      kinematic_loss_graph(t, p, gt.frames.cast<double>(), skel, w);
  CHECK(t.val(ids.simple).item() == doctest::Approx(lb.simple).epsilon(1e-5));
  CHECK(t.val(ids.joint).item() == doctest::Approx(lb.joint).epsilon(1e-5));
  CHECK(t.val(ids.vel).item() == doctest::Approx(lb.vel).epsilon(1e-5));
  CHECK(t.val(ids.acc).item() == doctest::Approx(lb.acc).epsilon(1e-5));
  CHECK(t.val(ids.contact).item() == doctest::Approx(lb.contact).epsilon(1e-5));
  CHECK(t.val(ids.total).item() == doctest::Approx(lb.total).epsilon(1e-5));
}

TEST_CASE("kinematic loss gradients pass the finite-difference check") {
  std::mt19937 rng(16);
  Skeleton skel = toy_skeleton3();
  MotionSequence gt = random_motion(skel, 3, rng);
  MotionSequence pred = random_motion(skel, 3, rng);
  ParamStore<double> ps;
  ps.add("pred", pred.frames.cast<double>());
  Tensor<double> gtd = gt.frames.cast<double>();
  auto build = [&](Context<double>& ctx) {
    int p = ctx.use(0);
    return kinematic_loss_graph(ctx.tape, p, gtd, skel, LossWeights{}).total;
  };
  GradReport r = gradient_check<double>(ps, build, 1e-4, 32, rng);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("skeleton JSON round-trips") {
  Skeleton s = smpl24_skeleton();
  std::string p =
      (std::filesystem::temp_directory_path() / "skel.json").string();
  save_skeleton(p, s);
  Skeleton back = load_skeleton(p);
  CHECK(back.joints == s.joints);
  CHECK(back.parents == s.parents);
  CHECK(back.contact_joints == s.contact_joints);
  for (int j = 0; j < s.joints; ++j)
    for (int c = 0; c < 3; ++c)
      CHECK(back.offsets[j][c] == doctest::Approx(s.offsets[j][c]));
}
