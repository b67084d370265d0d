#pragma once

#include <span>
#include <string>
#include <vector>

#include "mpiv/image.hpp"
#include "mpiv/mpi.hpp"
#include "mpiv/rng.hpp"

namespace mpiv {

// Channels per condition map (layer-UV scalar + expression).
inline constexpr int kCondChannels = 2;
// Sinusoidal timestep embedding broadcast as constant feature maps.
inline constexpr int kTimeChannels = 4;

// Conditioning inputs for one denoiser call. Dropped conditions are
// represented as all-zero tensors with the matching flag set; the zeros are
// what the network sees, the flags are bookkeeping for samplers and training.
template <typename T>
struct ConditionBundleT {
  Image3<T> reference_image;                // H x W x 3
  PlaneStack<T> reference_cond;             // kCondChannels x H x W
  std::vector<PlaneStack<T>> frame_cond;    // per frame, kCondChannels x H x W
  std::vector<PlaneStack<T>> proxy_alphas;  // per frame, D x H x W
  Image3<T> first_frame;                    // H x W x 3, zeros when absent
  bool has_first_frame = false;
  bool reference_dropped = false;
  bool first_frame_dropped = false;

  int frames() const { return static_cast<int>(frame_cond.size()); }
};

// Pre-activation denoiser prediction for one frame. activate_frame turns it
// into a valid MpiFrame: frontal and alphas through the logistic function,
// residual through tanh.
template <typename T>
struct DenoiserFrameT {
  Image3<T> frontal_pre;
  Image3<T> residual_pre;
  PlaneStack<T> alpha_pre;
};

template <typename T>
struct DenoiserOutputT {
  std::vector<DenoiserFrameT<T>> frames;
};

// Contiguous slice of the flat parameter vector; offset and count are in
// elements. Section names are stable and used for checkpoints and freezing.
struct ParamSection {
  std::string name;
  size_t offset = 0;
  size_t count = 0;
};

// Two-branch convolutional denoiser with frame-wise weight sharing. The color
// branch maps the noisy frame plus reference/first-frame/condition channels to
// frontal and residual pre-activations; the geometry branch maps conditions
// plus proxy alpha planes to alpha pre-activations. Color features reach the
// geometry branch only through 1x1 links initialized to exactly zero, so at
// init the predicted geometry is independent of the reference image and the
// noisy input. Three 3x3 layers per branch give a 7-pixel receptive field.
template <typename T>
class DenoiserT {
 public:
  struct Config {
    int planes = 0;   // D
    int hidden = 32;  // feature maps per interior layer
    int steps = 64;   // diffusion T, scales the timestep embedding
  };

  explicit DenoiserT(const Config& config);

  const Config& config() const { return config_; }
  size_t param_count() const { return param_count_; }
  const std::vector<ParamSection>& sections() const { return sections_; }
  const ParamSection& section(const std::string& name) const;

  // Fan-in scaled zero-mean kernels, zero biases, zero link layers.
  std::vector<T> init_params(Rng& rng) const;

  DenoiserOutputT<T> denoise(std::span<const T> params, const Video3<T>& noisy, int t,
                             const ConditionBundleT<T>& cond) const;

  // Exact vector-Jacobian product of denoise. Parameter gradients are
  // accumulated into d_params (the caller zeroes it); if d_noisy is non-null
  // it is overwritten with the gradient with respect to the noisy video.
  void denoise_backward(std::span<const T> params, const Video3<T>& noisy, int t,
                        const ConditionBundleT<T>& cond, const DenoiserOutputT<T>& d_output,
                        std::span<T> d_params, Video3<T>* d_noisy) const;

 private:
  struct FrameTrace;
  void check_inputs(std::span<const T> params, const Video3<T>& noisy, int t,
                    const ConditionBundleT<T>& cond) const;
  void forward_frame(std::span<const T> params, const Image3<T>& noisy_frame, double tau,
                     const ConditionBundleT<T>& cond, int frame, FrameTrace& trace) const;

  Config config_;
  std::vector<ParamSection> sections_;
  size_t param_count_ = 0;
};

using Denoiser = DenoiserT<float>;
using ConditionBundle = ConditionBundleT<float>;
using DenoiserOutput = DenoiserOutputT<float>;

// Independently zeroes-and-flags the first-frame condition (probability
// p_first_frame, drawn first) and the reference condition (p_reference).
template <typename T>
ConditionBundleT<T> drop_conditions(const ConditionBundleT<T>& cond, Rng& rng,
                                    double p_first_frame = 0.7, double p_reference = 0.1);

// Deterministic variant used by classifier-free guidance.
template <typename T>
ConditionBundleT<T> with_drops(const ConditionBundleT<T>& cond, bool drop_reference,
                               bool drop_first_frame);

// frontal/alphas through the logistic function, residual through tanh; the
// result satisfies every MpiFrame invariant for any finite pre-activations.
template <typename T>
MpiFrameT<T> activate_frame(const DenoiserFrameT<T>& pre, const FrameGeometry& geometry);
template <typename T>
MpiVideoT<T> activate_video(const DenoiserOutputT<T>& output,
                            const std::vector<FrameGeometry>& geometry, double fps = 30.0);

// Chain-rule factor of activate_frame: d_pre = d_activated * activation'.
// Uses the activated values (sigma' = a(1-a), tanh' = 1-a^2).
template <typename T>
DenoiserFrameT<T> activate_frame_backward(const MpiFrameT<T>& activated,
                                          const MpiFrameT<T>& d_activated);

// Checkpoint container (little-endian): magic "MPCK", u32 version=1, u32
// parameter count, u32 section count, per section {u32 name length, name
// bytes, u64 byte offset, u64 byte length}, then the f32 payload.
struct Checkpoint {
  std::vector<ParamSection> sections;
  std::vector<float> params;
};

void write_checkpoint(const std::string& path, const std::vector<ParamSection>& sections,
                      std::span<const float> params);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace mpiv
