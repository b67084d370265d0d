#include "mpiv/diffusion.hpp"

#include <cmath>
#include <cstddef>

#include "mpiv/common.hpp"

namespace mpiv {
namespace {

void check_step(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T)
    throw StepOutOfRange("step " + std::to_string(t) + " outside [1, " +
                         std::to_string(s.T) + "]");
}

void check_sizes(size_t a, size_t b, const char* what) {
  if (a != b)
    throw ShapeMismatch(std::string(what) + ": " + std::to_string(a) + " vs " +
                        std::to_string(b));
}

}  // namespace

double NoiseSchedule::beta(int t) const {
  check_step(t, *this);
  return betas[static_cast<size_t>(t) - 1];
}

double NoiseSchedule::alpha(int t) const {
  check_step(t, *this);
  return alphas[static_cast<size_t>(t) - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_step(t, *this);
  return alpha_bars[static_cast<size_t>(t) - 1];
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
  if (T < 1) throw InvalidT("schedule needs T >= 1, got " + std::to_string(T));
  (void)kind;  // only the linear schedule exists
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alphas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T));
  constexpr double kBetaLo = 1e-4, kBetaHi = 0.02;
  double bar = 1.0;
  for (int t = 1; t <= T; ++t) {
    double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    double beta = kBetaLo + frac * (kBetaHi - kBetaLo);
    s.betas[t - 1] = beta;
    s.alphas[t - 1] = 1.0 - beta;
    bar *= 1.0 - beta;
    s.alpha_bars[t - 1] = bar;
  }
  return s;
}

double GuidanceSchedule::first_frame_scale(int f) const {
  int m = ramp_frames;
  if (video_frames > 0) m = std::min(m, video_frames / 2);
  if (m <= 1) return 0.0;
  if (f > m) return 0.0;
  return static_cast<double>(m - f) / (m - 1);
}

double q_sample(double x0, int t, double noise, const NoiseSchedule& s) {
  check_step(t, s);
  double bar = s.alpha_bar(t);
  return std::sqrt(bar) * x0 + std::sqrt(1.0 - bar) * noise;
}

void q_sample(std::span<const float> x0, int t, std::span<const float> noise,
              const NoiseSchedule& s, std::span<float> out) {
  check_step(t, s);
  check_sizes(x0.size(), noise.size(), "q_sample x0/noise");
  check_sizes(x0.size(), out.size(), "q_sample x0/out");
  double bar = s.alpha_bar(t);
  const float cs = static_cast<float>(std::sqrt(bar));
  const float cn = static_cast<float>(std::sqrt(1.0 - bar));
  for (size_t i = 0; i < out.size(); ++i) out[i] = cs * x0[i] + cn * noise[i];
}

namespace {

struct PosteriorCoeffs {
  double c0;     // weight of x0_hat
  double ct;     // weight of x_t
  double sigma;  // posterior standard deviation
};

PosteriorCoeffs posterior_coeffs(int t, const NoiseSchedule& s) {
  double bar_t = s.alpha_bar(t);
  double bar_prev = s.alpha_bar(t - 1);
  double beta = s.beta(t);
  double denom = 1.0 - bar_t;
  PosteriorCoeffs c;
  c.c0 = std::sqrt(bar_prev) * beta / denom;
  c.ct = std::sqrt(s.alpha(t)) * (1.0 - bar_prev) / denom;
  c.sigma = std::sqrt((1.0 - bar_prev) / denom * beta);
  return c;
}

}  // namespace

double posterior_step(double x_t, double x0_hat, int t, const NoiseSchedule& s,
                      double noise) {
  check_step(t, s);
  if (t == 1) return x0_hat;
  PosteriorCoeffs c = posterior_coeffs(t, s);
  return c.c0 * x0_hat + c.ct * x_t + c.sigma * noise;
}

void posterior_step(std::span<const float> x_t, std::span<const float> x0_hat,
                    int t, const NoiseSchedule& s, std::span<const float> noise,
                    std::span<float> out) {
  check_step(t, s);
  check_sizes(x_t.size(), x0_hat.size(), "posterior_step x_t/x0_hat");
  check_sizes(x_t.size(), out.size(), "posterior_step x_t/out");
  if (t == 1) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = x0_hat[i];
    return;
  }
  check_sizes(x_t.size(), noise.size(), "posterior_step x_t/noise");
  PosteriorCoeffs c = posterior_coeffs(t, s);
  const float c0 = static_cast<float>(c.c0);
  const float ct = static_cast<float>(c.ct);
  const float cs = static_cast<float>(c.sigma);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = c0 * x0_hat[i] + ct * x_t[i] + cs * noise[i];
}

namespace {

struct DdimCoeffs {
  double c0;     // weight of x0_hat
  double ceps;   // weight of the implied noise direction
  double inv;    // 1/sqrt(1 - abar_t), folded into ceps' epsilon estimate
  double sigma;  // stochastic part
};

DdimCoeffs ddim_coeffs(int t, int t_prev, const NoiseSchedule& s, double eta) {
  double bar_t = s.alpha_bar(t);
  double bar_prev = s.alpha_bar(t_prev);
  DdimCoeffs c;
  c.sigma = eta * std::sqrt((1.0 - bar_prev) / (1.0 - bar_t)) *
            std::sqrt(1.0 - bar_t / bar_prev);
  c.c0 = std::sqrt(bar_prev);
  double rem = 1.0 - bar_prev - c.sigma * c.sigma;
  c.ceps = std::sqrt(rem > 0.0 ? rem : 0.0);
  c.inv = 1.0 / std::sqrt(1.0 - bar_t);
  return c;
}

void check_ddim_steps(int t, int t_prev, const NoiseSchedule& s) {
  check_step(t, s);
  if (t_prev < 0 || t_prev >= t)
    throw StepOutOfRange("ddim target step " + std::to_string(t_prev) +
                         " not in [0, " + std::to_string(t) + ")");
}

}  // namespace

double ddim_step(double x_t, double x0_hat, int t, int t_prev,
                 const NoiseSchedule& s, double eta, double noise) {
  check_ddim_steps(t, t_prev, s);
  if (t_prev == 0 && eta == 0.0) return x0_hat;
  DdimCoeffs c = ddim_coeffs(t, t_prev, s, eta);
  double eps = (x_t - std::sqrt(s.alpha_bar(t)) * x0_hat) * c.inv;
  return c.c0 * x0_hat + c.ceps * eps + c.sigma * noise;
}

void ddim_step(std::span<const float> x_t, std::span<const float> x0_hat, int t,
               int t_prev, const NoiseSchedule& s, double eta,
               std::span<const float> noise, std::span<float> out) {
  check_ddim_steps(t, t_prev, s);
  check_sizes(x_t.size(), x0_hat.size(), "ddim_step x_t/x0_hat");
  check_sizes(x_t.size(), out.size(), "ddim_step x_t/out");
  if (t_prev == 0 && eta == 0.0) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = x0_hat[i];
    return;
  }
  DdimCoeffs c = ddim_coeffs(t, t_prev, s, eta);
  const float sq = static_cast<float>(std::sqrt(s.alpha_bar(t)));
  const float inv = static_cast<float>(c.inv);
  const float c0 = static_cast<float>(c.c0);
  const float ce = static_cast<float>(c.ceps);
  const float cs = static_cast<float>(c.sigma);
  if (cs != 0.0f) {
    check_sizes(x_t.size(), noise.size(), "ddim_step x_t/noise");
    for (size_t i = 0; i < out.size(); ++i) {
      float eps = (x_t[i] - sq * x0_hat[i]) * inv;
      out[i] = c0 * x0_hat[i] + ce * eps + cs * noise[i];
    }
  } else {
    for (size_t i = 0; i < out.size(); ++i) {
      float eps = (x_t[i] - sq * x0_hat[i]) * inv;
      out[i] = c0 * x0_hat[i] + ce * eps;
    }
  }
}

void cfg_combine(std::span<const float> e_uncond, std::span<const float> e_ref,
                 std::span<const float> e_full, double ref_scale,
                 double ff_scale, std::span<float> out) {
  check_sizes(e_uncond.size(), e_ref.size(), "cfg_combine uncond/ref");
  check_sizes(e_uncond.size(), e_full.size(), "cfg_combine uncond/full");
  check_sizes(e_uncond.size(), out.size(), "cfg_combine uncond/out");
  const float rs = static_cast<float>(ref_scale);
  const float fs = static_cast<float>(ff_scale);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = e_uncond[i] + rs * (e_ref[i] - e_uncond[i]) +
             fs * (e_full[i] - e_ref[i]);
}

std::vector<int> sample_steps(int T, int k) {
  if (T < 1) throw InvalidT("sample_steps needs T >= 1");
  if (k < 1 || k > T)
    throw StepOutOfRange("step count " + std::to_string(k) + " not in [1, " +
                         std::to_string(T) + "]");
  std::vector<int> steps;
  steps.reserve(static_cast<size_t>(k));
  int next_below = T + 1;
  for (int j = k; j >= 1; --j) {
    int t = static_cast<int>(std::lround(static_cast<double>(T) * j / k));
    if (t >= next_below) t = next_below - 1;
    if (t < 1) break;
    steps.push_back(t);
    next_below = t;
  }
  return steps;
}

MpiVideo stitch_clips(const std::vector<MpiVideo>& clips) {
  if (clips.empty()) throw IncompatibleClips("no clips to stitch");
  const MpiFrame* ref = nullptr;
  for (const MpiVideo& clip : clips) {
    if (clip.frames.empty()) throw IncompatibleClips("empty clip");
    if (!ref) {
      ref = &clip.frames.front();
      continue;
    }
    const MpiFrame& f = clip.frames.front();
    if (f.width() != ref->width() || f.height() != ref->height() ||
        f.planes() != ref->planes())
      throw IncompatibleClips("clip shape mismatch");
  }
  MpiVideo out;
  out.fps = clips.front().fps;
  for (size_t j = 0; j < clips.size(); ++j) {
    size_t first = j == 0 ? 0 : 1;  // frame 1 duplicates the previous clip's tail
    for (size_t i = first; i < clips[j].frames.size(); ++i)
      out.frames.push_back(clips[j].frames[i]);
  }
  return out;
}

}  // namespace mpiv
