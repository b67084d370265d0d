#include "mpiv/diffusion.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mpiv/common.hpp"
#include "mpiv/rng.hpp"
#include "test_util.hpp"

using namespace mpiv;

TEST_CASE("make_schedule produces the linear beta ramp") {
  NoiseSchedule s = make_schedule(1000);
  CHECK(s.T == 1000);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == 0.02);
  CHECK(s.alpha_bar(1) == 1.0 - s.beta(1));
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-12));
  CHECK(s.alpha_bar(0) == 1.0);

  NoiseSchedule one = make_schedule(1);
  CHECK(one.betas.size() == 1);
  CHECK(one.beta(1) == 1e-4);

  for (int t = 1; t <= s.T; ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK(s.alpha_bar(s.T) < s.alpha_bar(1));

  CHECK_THROWS_AS(make_schedule(0), InvalidT);
  CHECK_THROWS_AS(make_schedule(-5), InvalidT);
  CHECK_THROWS_AS(s.beta(0), StepOutOfRange);
  CHECK_THROWS_AS(s.beta(1001), StepOutOfRange);
}

TEST_CASE("q_sample interpolates between signal and noise") {
  NoiseSchedule s = make_schedule(64);
  int t = 37;
  double bar = s.alpha_bar(t);
  CHECK(q_sample(0.8, t, 0.0, s) == doctest::Approx(std::sqrt(bar) * 0.8).epsilon(1e-15));
  CHECK(q_sample(0.0, t, -1.3, s) ==
        doctest::Approx(-std::sqrt(1.0 - bar) * 1.3).epsilon(1e-15));

  std::vector<float> x0 = {0.1f, -0.5f, 0.9f};
  std::vector<float> noise = {1.0f, 0.0f, -2.0f};
  std::vector<float> out(3);
  q_sample(x0, t, noise, s, out);
  for (int i = 0; i < 3; ++i)
    CHECK(out[i] == doctest::Approx(q_sample(x0[i], t, noise[i], s)).epsilon(1e-6));

  std::vector<float> shorter(2);
  CHECK_THROWS_AS(q_sample(x0, t, noise, s, shorter), ShapeMismatch);
  CHECK_THROWS_AS(q_sample(std::span<const float>(x0), t,
                           std::span<const float>(noise).subspan(1), s, out),
                  ShapeMismatch);
  CHECK_THROWS_AS(q_sample(0.5, 0, 0.0, s), StepOutOfRange);
  CHECK_THROWS_AS(q_sample(0.5, 65, 0.0, s), StepOutOfRange);
}

TEST_CASE("q_sample matches its closed-form moments over many draws") {
  NoiseSchedule s = make_schedule(64);
  const int t = 40;
  const double x0 = 0.7;
  const int n = 100000;
  Rng rng(99);
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = q_sample(x0, t, rng.gaussian(), s);
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  double want_mean = std::sqrt(s.alpha_bar(t)) * x0;
  double want_var = 1.0 - s.alpha_bar(t);
  // Three standard errors of the estimators.
  double se_mean = std::sqrt(want_var / n);
  double se_var = want_var * std::sqrt(2.0 / (n - 1));
  CHECK(std::abs(mean - want_mean) < 3 * se_mean);
  CHECK(std::abs(var - want_var) < 3 * se_var);
}

TEST_CASE("posterior_step implements the ancestral reverse kernel") {
  NoiseSchedule s = make_schedule(4);

  SUBCASE("t = 1 returns the clean prediction exactly") {
    CHECK(posterior_step(0.31, -0.77, 1, s, 123.0) == -0.77);
    std::vector<float> x_t = {0.5f}, x0 = {0.125f}, noise = {9.0f}, out(1, 0.0f);
    posterior_step(x_t, x0, 1, s, noise, out);
    CHECK(out[0] == 0.125f);
  }

  SUBCASE("value frozen from an independent evaluation of the formula") {
    // T=4 linear schedule, x_t = 0.5, x0_hat = 0.2, t = 3, evaluated with
    // 40-digit decimal arithmetic.
    double mu = posterior_step(0.5, 0.2, 3, s, 0.0);
    CHECK(mu == doctest::Approx(0.3012535496330570).epsilon(1e-14));
    double sigma = posterior_step(0.5, 0.2, 3, s, 1.0) - mu;
    CHECK(sigma == doctest::Approx(0.0673941283418348).epsilon(1e-12));
  }

  SUBCASE("no-noise limit keeps a fixed point") {
    // With x0_hat == x_t the mean stays near x_t, and the pull vanishes as
    // beta does: at the smallest beta the drift is far below sigma.
    NoiseSchedule fine = make_schedule(1000);
    double drift = posterior_step(0.4, 0.4, 2, fine, 0.0) - 0.4;
    CHECK(std::abs(drift) < 1e-6);
  }

  CHECK_THROWS_AS(posterior_step(0.0, 0.0, 0, s, 0.0), StepOutOfRange);
  CHECK_THROWS_AS(posterior_step(0.0, 0.0, 5, s, 0.0), StepOutOfRange);
}

TEST_CASE("ddim_step is deterministic at eta 0 and ancestral at eta 1") {
  NoiseSchedule s = make_schedule(16);
  Rng rng(7);

  SUBCASE("t_prev = 0 with eta 0 returns x0_hat exactly") {
    CHECK(ddim_step(1.25, -0.375, 5, 0, s, 0.0, 99.0) == -0.375);
    std::vector<float> x_t = {1.0f, 2.0f}, x0 = {0.25f, -0.5f}, out(2);
    ddim_step(x_t, x0, 5, 0, s, 0.0, {}, out);
    CHECK(out[0] == 0.25f);
    CHECK(out[1] == -0.5f);
  }

  SUBCASE("eta 0 trajectories are reproducible") {
    for (int i = 0; i < 10; ++i) {
      double x_t = rng.uniform(-2, 2), x0 = rng.uniform(-1, 1);
      double a = ddim_step(x_t, x0, 9, 4, s, 0.0, 0.0);
      double b = ddim_step(x_t, x0, 9, 4, s, 0.0, 0.0);
      CHECK(a == b);
    }
  }

  SUBCASE("eta 1 adjacent step matches the posterior kernel") {
    for (int t = 2; t <= s.T; ++t) {
      double x_t = rng.uniform(-2, 2), x0 = rng.uniform(-1, 1);
      double mean_ddim = ddim_step(x_t, x0, t, t - 1, s, 1.0, 0.0);
      double mean_post = posterior_step(x_t, x0, t, s, 0.0);
      CHECK(std::abs(mean_ddim - mean_post) < 1e-12);
      double sig_ddim = ddim_step(x_t, x0, t, t - 1, s, 1.0, 1.0) - mean_ddim;
      double sig_post = posterior_step(x_t, x0, t, s, 1.0) - mean_post;
      CHECK(std::abs(sig_ddim - sig_post) < 1e-12);
    }
  }

  CHECK_THROWS_AS(ddim_step(0.0, 0.0, 3, 3, s, 0.0, 0.0), StepOutOfRange);
  CHECK_THROWS_AS(ddim_step(0.0, 0.0, 3, -1, s, 0.0, 0.0), StepOutOfRange);
  CHECK_THROWS_AS(ddim_step(0.0, 0.0, 17, 3, s, 0.0, 0.0), StepOutOfRange);
}

TEST_CASE("cfg_combine interpolates the three conditional predictions") {
  Rng rng(21);
  std::vector<float> u(32), r(32), f(32), out(32);
  for (int i = 0; i < 32; ++i) {
    u[i] = static_cast<float>(rng.uniform(-1, 1));
    r[i] = static_cast<float>(rng.uniform(-1, 1));
    f[i] = static_cast<float>(rng.uniform(-1, 1));
  }

  SUBCASE("scale 1 with no first-frame weight recovers the reference branch") {
    cfg_combine(u, r, f, 1.0, 0.0, out);
    for (int i = 0; i < 32; ++i) CHECK(out[i] == doctest::Approx(r[i]).epsilon(1e-6));
  }

  SUBCASE("scale 1 with full first-frame weight recovers the full branch") {
    cfg_combine(u, r, f, 1.0, 1.0, out);
    for (int i = 0; i < 32; ++i) CHECK(out[i] == doctest::Approx(f[i]).epsilon(1e-5));
  }

  SUBCASE("identical branch outputs pass through bit-identically") {
    cfg_combine(u, u, u, 1.5, 0.5333, out);
    for (int i = 0; i < 32; ++i) CHECK(out[i] == u[i]);
  }

  SUBCASE("extrapolation follows the declared linear form") {
    cfg_combine(u, r, f, 1.5, 0.25, out);
    for (int i = 0; i < 32; ++i) {
      float want = u[i] + 1.5f * (r[i] - u[i]) + 0.25f * (f[i] - r[i]);
      CHECK(out[i] == want);
    }
  }

  std::vector<float> shorter(31);
  CHECK_THROWS_AS(cfg_combine(u, r, f, 1.0, 0.0, shorter), ShapeMismatch);
  CHECK_THROWS_AS(cfg_combine(u, shorter, f, 1.0, 0.0, out), ShapeMismatch);
}

TEST_CASE("guidance ramp hits the declared endpoints") {
  GuidanceSchedule g;
  g.video_frames = 32;
  CHECK(g.ref_scale == 1.5);
  CHECK(g.first_frame_scale(1) == 1.0);
  CHECK(g.first_frame_scale(8) == doctest::Approx(8.0 / 15).epsilon(1e-15));
  CHECK(g.first_frame_scale(16) == 0.0);
  for (int f = 17; f <= 32; ++f) CHECK(g.first_frame_scale(f) == 0.0);

  // Short videos shrink the ramp to half the frame count.
  GuidanceSchedule short_g;
  short_g.video_frames = 8;
  CHECK(short_g.first_frame_scale(1) == 1.0);
  CHECK(short_g.first_frame_scale(4) == 0.0);
  CHECK(short_g.first_frame_scale(5) == 0.0);

  GuidanceSchedule tiny;
  tiny.video_frames = 2;
  CHECK(tiny.first_frame_scale(1) == 0.0);
}

TEST_CASE("sample_steps lays out a strictly decreasing ladder") {
  std::vector<int> want = {64, 56, 48, 40, 32, 24, 16, 8};
  CHECK(sample_steps(64, 8) == want);

  std::vector<int> full = sample_steps(16, 16);
  CHECK(full.size() == 16);
  for (int i = 0; i < 16; ++i) CHECK(full[i] == 16 - i);

  CHECK(sample_steps(64, 1) == std::vector<int>{64});

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    int T = static_cast<int>(rng.uniform_int(1, 200));
    int k = static_cast<int>(rng.uniform_int(1, T));
    std::vector<int> steps = sample_steps(T, k);
    REQUIRE(!steps.empty());
    CHECK(steps.front() == T);
    CHECK(steps.back() >= 1);
    for (size_t i = 1; i < steps.size(); ++i) CHECK(steps[i] < steps[i - 1]);
  }

  CHECK_THROWS_AS(sample_steps(8, 0), StepOutOfRange);
  CHECK_THROWS_AS(sample_steps(8, 9), StepOutOfRange);
}

namespace {

// Clip whose frame contents encode (clip, index) for position bookkeeping.
MpiVideo tagged_clip(int clip, int frames) {
  MpiVideo v;
  Rng rng(1000 + clip);
  for (int i = 0; i < frames; ++i) {
    MpiFrame f = test::random_mpi_frame<float>(rng, 4, 4, 2);
    f.frontal.at(0, 0, 0) = static_cast<float>(clip * 100 + i);
    v.frames.push_back(std::move(f));
  }
  return v;
}

}  // namespace

TEST_CASE("stitch_clips drops duplicated boundary frames") {
  SUBCASE("single clip is returned unchanged") {
    std::vector<MpiVideo> clips = {tagged_clip(0, 5)};
    MpiVideo out = stitch_clips(clips);
    REQUIRE(out.frames.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(out.frames[i].frontal.at(0, 0, 0) == i);
  }

  SUBCASE("two 32-frame clips make 63 frames") {
    std::vector<MpiVideo> clips = {tagged_clip(0, 32), tagged_clip(1, 32)};
    CHECK(stitch_clips(clips).frames.size() == 63);
  }

  SUBCASE("three 4-frame clips keep source order") {
    std::vector<MpiVideo> clips = {tagged_clip(0, 4), tagged_clip(1, 4), tagged_clip(2, 4)};
    MpiVideo out = stitch_clips(clips);
    std::vector<float> want = {0, 1, 2, 3, 101, 102, 103, 201, 202, 203};
    REQUIRE(out.frames.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(out.frames[i].frontal.at(0, 0, 0) == want[i]);
  }

  SUBCASE("shape disagreements are rejected") {
    MpiVideo narrow;
    Rng rng(5);
    narrow.frames.push_back(test::random_mpi_frame<float>(rng, 3, 4, 2));
    std::vector<MpiVideo> clips = {tagged_clip(0, 2), narrow};
    CHECK_THROWS_AS(stitch_clips(clips), IncompatibleClips);
    CHECK_THROWS_AS(stitch_clips({}), IncompatibleClips);
    std::vector<MpiVideo> with_empty = {tagged_clip(0, 2), MpiVideo{}};
    CHECK_THROWS_AS(stitch_clips(with_empty), IncompatibleClips);
  }
}
