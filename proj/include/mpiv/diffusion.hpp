#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mpiv/mpi.hpp"

namespace mpiv {

enum class ScheduleKind { kLinear };

// DDPM-style noise schedule. Accessors are 1-indexed in t; alpha_bar(0) is
// exactly 1 so that the final reverse step returns the clean prediction.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // beta_1..beta_T
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // running product of alphas

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;  // accepts t = 0
};

// Linear kind: beta_t = 1e-4 + (t-1)/(T-1) * (0.02 - 1e-4). Throws InvalidT
// if T < 1.
NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::kLinear);

// Two-condition guidance scales. ref_scale weighs the reference portrait;
// first_frame_scale(f) ramps linearly from 1 at frame 1 to 0 at frame
// min(ramp_frames, video_frames/2) and stays 0 afterwards. Frames are
// 1-indexed.
struct GuidanceSchedule {
  double ref_scale = 1.5;
  int ramp_frames = 16;
  int video_frames = 0;

  double first_frame_scale(int f) const;
};

struct SamplerConfig {
  int steps = 8;      // DDIM step count, 1 <= steps <= T
  double eta = 0.0;   // 0 = deterministic
  uint64_t seed = 0;
};

// Forward marginal x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
double q_sample(double x0, int t, double noise, const NoiseSchedule& s);
void q_sample(std::span<const float> x0, int t, std::span<const float> noise,
              const NoiseSchedule& s, std::span<float> out);

// One ancestral reverse step from t to t-1 given the clean prediction x0_hat.
// At t = 1 the posterior collapses and x0_hat is returned exactly.
double posterior_step(double x_t, double x0_hat, int t, const NoiseSchedule& s,
                      double noise);
void posterior_step(std::span<const float> x_t, std::span<const float> x0_hat,
                    int t, const NoiseSchedule& s, std::span<const float> noise,
                    std::span<float> out);

// DDIM step from t to t_prev < t. eta = 0 is deterministic; eta = 1 with
// t_prev = t-1 matches the ancestral posterior. `noise` may be empty in the
// span form when eta = 0.
double ddim_step(double x_t, double x0_hat, int t, int t_prev,
                 const NoiseSchedule& s, double eta, double noise);
void ddim_step(std::span<const float> x_t, std::span<const float> x0_hat, int t,
               int t_prev, const NoiseSchedule& s, double eta,
               std::span<const float> noise, std::span<float> out);

// out = e_uncond + ref_scale (e_ref - e_uncond) + ff_scale (e_full - e_ref).
// Equal inputs pass through bit-identically for any finite scales.
void cfg_combine(std::span<const float> e_uncond, std::span<const float> e_ref,
                 std::span<const float> e_full, double ref_scale,
                 double ff_scale, std::span<float> out);

// Timestep ladder for k-step sampling of a T-step schedule: t_j = round(T j/k)
// for j = k..1, strictly decreasing. Element 0 is the starting (largest) step.
std::vector<int> sample_steps(int T, int k);

// Concatenates clips generated with last-frame chaining: every clip after the
// first drops its first frame (it reproduces the previous clip's last frame).
MpiVideo stitch_clips(const std::vector<MpiVideo>& clips);

}  // namespace mpiv
