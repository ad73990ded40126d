#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "tmoe/dataset.hpp"
#include "tmoe/metrics.hpp"

using namespace tmoe;

namespace {

MotionSequence sinusoid_motion(const Skeleton& skel, int L, double period,
                               double amp = 0.5) {
  MotionSequence m;
  m.fps = 30;
  m.frames = Tensor<float>(L, MotionLayout::dim_for_joints(skel.joints));
  for (int i = 0; i < L; ++i) {
    float* row = m.frames.row(i);
    for (int j = 0; j < skel.joints; ++j) {
      // the 0.3-frame phase keeps speed minima off the exact midpoint between
      // samples; a symmetric sampling ties neighbours and defeats the strict
      // local-minimum test in the detector
      double theta = amp * std::cos(2.0 * M_PI * (i + 0.3) / period);
      float* r6 = row + MotionLayout::rot_begin + 6 * j;
      r6[0] = static_cast<float>(std::cos(theta));
      r6[1] = static_cast<float>(std::sin(theta));
      r6[3] = static_cast<float>(-std::sin(theta));
      r6[4] = static_cast<float>(std::cos(theta));
    }
  }
  return m;
}

MotionSequence constant_motion(const Skeleton& skel, int L) {
  return sinusoid_motion(skel, L, 1e18, 0.0);
}

FeatureSet gaussian_features(int N, int F, double mean, double std, uint32_t seed,
                             FeatureKind kind = FeatureKind::kinetic) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(mean, std);
  FeatureSet fs;
  fs.kind = kind;
  fs.vectors = Tensor<double>(N, F);
  for (auto& v : fs.vectors.data) v = g(rng);
  return fs;
}

}  // namespace

TEST_CASE("constant pose has no dance beats") {
  Skeleton skel = toy_skeleton3();
  BeatSet b = detect_dance_beats(constant_motion(skel, 60), skel);
  CHECK(b.frames.empty());
  CHECK_THROWS_AS(detect_dance_beats(constant_motion(skel, 4), skel),
                  std::invalid_argument);
}

TEST_CASE("sinusoidal joint motion yields beats at the oscillation period") {
  Skeleton skel = toy_skeleton3();
  double period = 20;
  BeatSet b = detect_dance_beats(sinusoid_motion(skel, 200, period), skel);
  REQUIRE(b.frames.size() >= 3);
  for (size_t i = 1; i < b.frames.size(); ++i) {
    int d = b.frames[i] - b.frames[i - 1];
    CHECK(std::abs(d - 10) <= 1);  // speed minima at every half period
  }
}

TEST_CASE("BAS identities and closed-form offset point") {
  BeatSet music;
  music.frames = {10, 40, 70, 100};
  CHECK(beat_alignment_score(music, music, 3.0) == doctest::Approx(1.0));

  BeatSet offset;
  for (int f : music.frames) offset.frames.push_back(f + 3);
  CHECK(beat_alignment_score(music, offset, 3.0) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-6));

  BeatSet empty;
  CHECK(beat_alignment_score(music, empty, 3.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(beat_alignment_score(empty, music, 3.0), std::invalid_argument);
}

TEST_CASE("BAS matches a scalar loop oracle on random offsets") {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> jitter(-6, 6);
  BeatSet music, dance;
  for (int f = 5; f < 200; f += 17) music.frames.push_back(f);
  for (int f = 2; f < 200; f += 13) dance.frames.push_back(f);
  double got = beat_alignment_score(music, dance, 3.0);
  double want = 0;
  for (int tm : music.frames) {
    double best = 1e18;
    for (int td : dance.frames)
      best = std::min(best, double(td - tm) * (td - tm));
    want += std::exp(-best / 18.0);
  }
  want /= music.frames.size();
  CHECK(got == doctest::Approx(want).epsilon(1e-9));
  CHECK(got >= 0.0);
  CHECK(got <= 1.0);
}

TEST_CASE("BAS decays monotonically with growing uniform offset") {
  BeatSet music;
  for (int f = 0; f < 300; f += 15) music.frames.push_back(f);
  // only up to half the beat spacing: past 7.5 frames the previous dance
  // beat becomes the nearest neighbour and the score climbs again
  double prev = 2.0;
  for (int off = 0; off <= 7; ++off) {
    BeatSet d;
    for (int f : music.frames) d.frames.push_back(f + off);
    double s = beat_alignment_score(music, d, 3.0);
    CHECK(s <= prev + 1e-12);
    prev = s;
  }
}

TEST_CASE("kinetic features: zeros for static pose, quadratic in speed") {
  Skeleton skel = toy_skeleton3();
  Tensor<double> still =
      extract_features(constant_motion(skel, 40), skel, FeatureKind::kinetic);
  for (double v : still.data) CHECK(v == doctest::Approx(0.0));

  MotionSequence slow = sinusoid_motion(skel, 40, 40, 0.1);
  MotionSequence fast = sinusoid_motion(skel, 40, 40, 0.2);
  Tensor<double> fs = extract_features(slow, skel, FeatureKind::kinetic);
  Tensor<double> ff = extract_features(fast, skel, FeatureKind::kinetic);
  // doubling amplitude doubles speeds, quadrupling kinetic energy (small-angle)
  for (int j = 1; j < skel.joints; ++j)
    if (fs.at(0, j) > 1e-10)
      CHECK(ff.at(0, j) / fs.at(0, j) == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("geometric features stay in [0,1] and ignore global translation") {
  Skeleton skel = smpl24_skeleton();
  MotionSequence m = synth_pair(120, 120, 30, skel, 9).second;
  Tensor<double> g = extract_features(m, skel, FeatureKind::geometric);
  REQUIRE(g.cols == 32);
  for (double v : g.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  MotionSequence shifted = m;
  for (int i = 0; i < m.length(); ++i) {
    shifted.frames.at(i, MotionLayout::root_begin + 0) += 5.0f;
    shifted.frames.at(i, MotionLayout::root_begin + 1) += 2.0f;
    shifted.frames.at(i, MotionLayout::root_begin + 2) -= 3.0f;
  }
  Tensor<double> gs = extract_features(shifted, skel, FeatureKind::geometric);
  for (int c = 0; c < 32; ++c) CHECK(gs.at(0, c) == doctest::Approx(g.at(0, c)));
}

TEST_CASE("fid identities: self-distance, symmetry, kind mismatch") {
  FeatureSet x = gaussian_features(64, 6, 0.0, 1.0, 1);
  CHECK(fid(x, x) < 1e-6);

  FeatureSet y = gaussian_features(64, 6, 0.5, 1.2, 2);
  double ab = fid(x, y), ba = fid(y, x);
  CHECK(ab >= 0.0);
  CHECK(std::abs(ab - ba) < 1e-6);

  FeatureSet geo = gaussian_features(64, 6, 0.0, 1.0, 3, FeatureKind::geometric);
  CHECK_THROWS_AS(fid(x, geo), std::invalid_argument);
  FeatureSet one = gaussian_features(1, 6, 0.0, 1.0, 4);
  CHECK_THROWS_AS(fid(x, one), std::invalid_argument);
}

TEST_CASE("fid approaches the analytic value for shifted 1-D Gaussians") {
  double m = 1.5;
  FeatureSet a = gaussian_features(4096, 1, 0.0, 1.0, 7);
  FeatureSet b = gaussian_features(4096, 1, m, 1.0, 8);
  // analytic Frechet distance between N(0,1) and N(m,1) is m^2
  CHECK(fid(a, b) == doctest::Approx(m * m).epsilon(0.10));
}

TEST_CASE("diversity identities") {
  FeatureSet same = gaussian_features(16, 4, 0.0, 1.0, 9);
  for (int i = 1; i < 16; ++i)
    for (int c = 0; c < 4; ++c) same.vectors.at(i, c) = same.vectors.at(0, c);
  CHECK(diversity(same, 200, 1) == doctest::Approx(0.0));

  FeatureSet x = gaussian_features(32, 4, 0.0, 1.0, 10);
  double d1 = diversity(x, 500, 2);
  FeatureSet x3 = x;
  for (auto& v : x3.vectors.data) v *= 3.0;
  CHECK(diversity(x3, 500, 2) == doctest::Approx(3.0 * d1).epsilon(1e-6));

  FeatureSet one = gaussian_features(1, 4, 0.0, 1.0, 11);
  CHECK_THROWS_AS(diversity(one, 10, 0), std::invalid_argument);
}

TEST_CASE("diversity matches the loop oracle on a two-cluster set") {
  // rows at +e1 and -e1: distance 2 for cross pairs, 0 within clusters
  FeatureSet fs;
  fs.kind = FeatureKind::kinetic;
  fs.vectors = Tensor<double>(8, 3);
  for (int i = 0; i < 8; ++i) fs.vectors.at(i, 0) = i < 4 ? 1.0 : -1.0;
  int pairs = 2000;
  uint64_t seed = 77;
  double got = diversity(fs, pairs, seed);
  std::mt19937 rng(static_cast<uint32_t>(seed));
  std::uniform_int_distribution<int> pick(0, 7);
  double want = 0;
  for (int p = 0; p < pairs; ++p) {
    int i = pick(rng), j = pick(rng);
    want += ((i < 4) != (j < 4)) ? 2.0 : 0.0;
  }
  CHECK(got == doctest::Approx(want / pairs).epsilon(1e-9));
}
