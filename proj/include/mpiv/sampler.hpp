#pragma once

#include <functional>

#include "mpiv/diffusion.hpp"
#include "mpiv/model.hpp"

namespace mpiv {

// Denoiser seam for sampling: model-backed in production, hand-built oracles
// in tests. Must be pure (same inputs give the same output), because guidance
// evaluates it under several condition variants per step.
using DenoiseFn =
    std::function<DenoiserOutput(const Video3<float>&, int, const ConditionBundle&)>;

// Reverse diffusion in image space with the MPI renderer inside the loop.
// Starts from standard-normal frames (drawn frame-major from the seeded rng),
// walks the sample_steps ladder, and per step: combines denoiser outputs under
// classifier-free guidance (pre-activation), activates them into an MPI video,
// renders every frame in its own frontal camera to get the clean image
// estimate, and takes a ddim_step. Guidance evaluations that cannot change
// the result are skipped: the unconditional pass when ref_scale is 1 and the
// first-frame pass when that condition is absent, dropped, or fully ramped
// off. Returns the MPI video activated from the final step's prediction.
MpiVideo reverse_sample(const DenoiseFn& denoiser, const ConditionBundle& cond,
                        const std::vector<FrameGeometry>& geometry,
                        const NoiseSchedule& schedule, const SamplerConfig& sampler,
                        const GuidanceSchedule& guidance);

}  // namespace mpiv
