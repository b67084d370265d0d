#include "mpiv/sampler.hpp"

#include "mpiv/render.hpp"
#include "mpiv/rng.hpp"

namespace mpiv {

namespace {

// Per-frame pre-activation guidance; the first-frame scale ramps with the
// 1-indexed frame number.
DenoiserOutput combine_guided(const DenoiserOutput& e_uncond, const DenoiserOutput& e_ref,
                              const DenoiserOutput& e_full, const GuidanceSchedule& guide) {
  DenoiserOutput out;
  out.frames = e_ref.frames;
  for (size_t f = 0; f < out.frames.size(); ++f) {
    const double ff = guide.first_frame_scale(static_cast<int>(f) + 1);
    auto blend = [&](const std::vector<float>& eu, const std::vector<float>& er,
                     const std::vector<float>& ef, std::vector<float>& o) {
      cfg_combine(eu, er, ef, guide.ref_scale, ff, o);
    };
    blend(e_uncond.frames[f].frontal_pre.data, e_ref.frames[f].frontal_pre.data,
          e_full.frames[f].frontal_pre.data, out.frames[f].frontal_pre.data);
    blend(e_uncond.frames[f].residual_pre.data, e_ref.frames[f].residual_pre.data,
          e_full.frames[f].residual_pre.data, out.frames[f].residual_pre.data);
    blend(e_uncond.frames[f].alpha_pre.data, e_ref.frames[f].alpha_pre.data,
          e_full.frames[f].alpha_pre.data, out.frames[f].alpha_pre.data);
  }
  return out;
}

}  // namespace

MpiVideo reverse_sample(const DenoiseFn& denoiser, const ConditionBundle& cond,
                        const std::vector<FrameGeometry>& geometry,
                        const NoiseSchedule& schedule, const SamplerConfig& sampler,
                        const GuidanceSchedule& guidance) {
  const int n = static_cast<int>(geometry.size());
  if (n == 0) throw ShapeMismatch("reverse_sample: empty frame geometry");
  if (cond.frames() != n)
    throw ShapeMismatch("reverse_sample: condition bundle covers " +
                        std::to_string(cond.frames()) + " frames, geometry has " +
                        std::to_string(n));
  const int w = geometry[0].camera.intrinsics.width;
  const int h = geometry[0].camera.intrinsics.height;
  if (w < 1 || h < 1) throw ShapeMismatch("reverse_sample: degenerate camera image size");
  for (const auto& g : geometry)
    if (g.camera.intrinsics.width != w || g.camera.intrinsics.height != h)
      throw ShapeMismatch("reverse_sample: cameras disagree on image size");

  GuidanceSchedule guide = guidance;
  guide.video_frames = n;
  bool want_full = cond.has_first_frame && !cond.first_frame_dropped;
  if (want_full) {
    bool any_scale = false;
    for (int f = 1; f <= n && !any_scale; ++f) any_scale = guide.first_frame_scale(f) != 0.0;
    want_full = any_scale;
  }
  const bool want_uncond = guide.ref_scale != 1.0;
  const ConditionBundle cond_ref = with_drops(cond, false, true);
  const ConditionBundle cond_uncond =
      want_uncond ? with_drops(cond, true, true) : ConditionBundle{};

  Rng rng(sampler.seed);
  Video3<float> x(n);
  for (auto& img : x) {
    img = Image3f(w, h);
    for (auto& v : img.data) v = static_cast<float>(rng.gaussian());
  }

  const std::vector<int> ladder = sample_steps(schedule.T, sampler.steps);

  MpiVideo video;
  std::vector<float> noise;
  for (size_t j = 0; j < ladder.size(); ++j) {
    const int t = ladder[j];

    DenoiserOutput e_ref = denoiser(x, t, cond_ref);
    DenoiserOutput e_full, e_uncond;
    if (want_full) e_full = denoiser(x, t, cond);
    if (want_uncond) e_uncond = denoiser(x, t, cond_uncond);
    DenoiserOutput combined = combine_guided(want_uncond ? e_uncond : e_ref, e_ref,
                                             want_full ? e_full : e_ref, guide);

    video = activate_video(combined, geometry);
    if (j + 1 == ladder.size()) break;

    const int t_prev = ladder[j + 1];
    for (int f = 0; f < n; ++f) {
      const Image3f clean = render(video.frames[f], geometry[f].camera).rgb;
      std::span<const float> nf;
      if (sampler.eta != 0.0) {
        noise.resize(clean.data.size());
        for (auto& v : noise) v = static_cast<float>(rng.gaussian());
        nf = noise;
      }
      Image3f next(w, h);
      ddim_step(x[f].data, clean.data, t, t_prev, schedule, sampler.eta, nf, next.data);
      x[f] = std::move(next);
    }
  }
  return video;
}

}  // namespace mpiv
