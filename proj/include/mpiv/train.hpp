#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpiv/diffusion.hpp"
#include "mpiv/model.hpp"
#include "mpiv/render.hpp"
#include "mpiv/rng.hpp"
#include "mpiv/sampler.hpp"

namespace mpiv {

enum class TrainStage { kBootstrap, kAlternating };

// kFrontal: MPIs in the target cameras, rendered frontally against the clip's
// ground truth. kSide: MPIs in the reference camera seeded from pseudo ground
// truth, rendered into the target cameras.
enum class TrainBranch { kFrontal, kSide };

struct TrainConfig {
  TrainStage stage = TrainStage::kBootstrap;

  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double mask_w = 0.01;
  double smooth_w = 0.01;
  double disparity_w = 0.001;
  double lpips_w = 0.1;  // paid only when a perceptual hook is installed

  double p_side = 0.2;           // probability of the reference-camera branch
  int pseudo_gt_steps = 4;       // k
  int late_stage_min = 0;        // 0 = ceil(T/2)
  double p_drop_first_frame = 0.7;
  double p_drop_reference = 0.1;

  // Ablation switches; both on for the full method.
  bool use_residual = true;
  bool late_stage = true;

  // Throws ConfigInvalid; T is the diffusion step count the config must fit.
  void validate(int T) const;
};

// One clip: a reference view plus N contiguous target frames with ground
// truth. Condition maps and proxy alpha planes come rasterized in both
// cameras so either branch can build its bundle without re-rendering.
struct TrainSample {
  Image3f reference_image;
  PlaneStack<float> reference_cond;
  Camera reference_camera;

  std::vector<Image3f> target_images;
  std::vector<Image1f> target_mattes;
  std::vector<Image1f> target_proxy_disparity;
  std::vector<PlaneStack<float>> target_cond;
  std::vector<PlaneStack<float>> target_proxy_alphas;
  std::vector<Camera> target_cameras;

  std::vector<PlaneStack<float>> reference_frame_cond;
  std::vector<PlaneStack<float>> reference_proxy_alphas;

  Image3f first_frame;   // clip's first frame, the run-time chaining condition
  Image3f background;    // compositing target for the full-image loss term
  double d_near = 0, d_far = 0;

  int frames() const { return static_cast<int>(target_images.size()); }
  void validate() const;  // throws ShapeMismatch / InvalidRange
};

// One JSON-lines record per optimizer step.
struct StepReport {
  int64_t step = 0;
  std::string stage;    // "bootstrap" | "alternating"
  std::string branch;   // "frontal" | "side"
  double loss_total = 0;
  double loss_frontal = 0;
  double loss_side = 0;
  double loss_mask = 0;
  double loss_smooth = 0;
  double loss_disp = 0;
  int t = 0;

  std::string to_json() const;
};

// Sum of two mean-squared-error terms over all 3HW entries: the foreground
// render against the matte-multiplied ground truth, and the
// background-composited render against the full ground truth. If d_render is
// non-null its rgb and alpha cotangents are overwritten (disparity zeroed).
template <typename T>
T loss_frontal(const RenderOutputT<T>& render, const Image3<T>& gt, const Image1<T>& matte,
               const Image3<T>& background, RenderCotangentT<T>* d_render = nullptr);

// Identical functional form applied to the side-camera render.
template <typename T>
T loss_side(const RenderOutputT<T>& render, const Image3<T>& gt_side, const Image1<T>& matte,
            const Image3<T>& background, RenderCotangentT<T>* d_render = nullptr);

// Mean squared error between the rendered alpha and the matte.
template <typename T>
T loss_mask(const Image1<T>& alpha, const Image1<T>& matte, Image1<T>* d_alpha = nullptr);

// Edge-aware smoothness: mean over pixels of |Lap(disparity)| weighted by
// exp(-|Lap(luma(gt))|), with the 5-point Laplacian and zero-flux borders
// (missing neighbors contribute no difference). Luma is Rec. 601.
template <typename T>
T loss_depth_smooth(const Image1<T>& disparity, const Image3<T>& gt,
                    Image1<T>* d_disparity = nullptr);

// Matte-weighted mean squared error against the proxy disparity.
template <typename T>
T loss_disparity(const Image1<T>& disparity, const Image1<T>& proxy, const Image1<T>& matte,
                 Image1<T>* d_disparity = nullptr);

template <typename T>
struct FrameLossT {
  T total = 0;  // image + weighted regularizers
  T image = 0;  // loss_frontal or loss_side depending on the branch
  T mask = 0;
  T smooth = 0;
  T disparity = 0;
};
using FrameLoss = FrameLossT<float>;

// Weighted per-frame training loss. d_render, when non-null, receives the
// cotangents of `total` with respect to the render output.
template <typename T>
FrameLossT<T> training_loss(const RenderOutputT<T>& render, const Image3<T>& gt,
                            const Image1<T>& matte, const Image1<T>& proxy_disparity,
                            const Image3<T>& background, const TrainConfig& config,
                            RenderCotangentT<T>* d_render = nullptr);

struct AdamState {
  std::vector<double> m, v;
  int64_t steps = 0;
};

// One Adam update with bias correction. `trainable` (empty = all) marks the
// parameters eligible for updates; frozen parameters keep their value and
// their moments are not advanced, so a frozen section stays bit-identical to
// one that never entered the optimizer.
void adam_step(std::span<float> params, std::span<const float> grads,
               std::span<const uint8_t> trainable, double lr, double beta1, double beta2,
               double eps, AdamState& state);

// Optional perceptual distance (render rgb vs gt); returns the value and, if
// the pointer is non-null, overwrites d_rgb with its gradient. Disabled while
// unset; its contribution is weighted by TrainConfig::lpips_w.
using PerceptualHook = std::function<double(const Image3f& rgb, const Image3f& gt,
                                            Image3f* d_rgb)>;

// Frontal-view pseudo ground truth: k deterministic DDIM steps with every MPI
// placed in the reference camera, conditions rasterized in the reference
// camera, and the first-frame condition withheld; the sampled MPIs are
// rendered back into the reference camera.
Video3<float> make_pseudo_gt(const DenoiseFn& denoiser, const TrainSample& sample,
                             const NoiseSchedule& schedule, int k, uint64_t seed);

// Owns the parameters, optimizer state, and step counter of one training run.
// Stage freeze rules: bootstrap trains the color branch only; alternating
// trains the geometry branch, the zero-convolution links, and the color output
// layer while the color interior stays frozen.
class Trainer {
 public:
  Trainer(const Denoiser::Config& model, const TrainConfig& config);

  const Denoiser& denoiser() const { return denoiser_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const TrainConfig& config() const { return config_; }
  TrainConfig& config() { return config_; }
  int64_t steps_taken() const { return step_; }

  std::span<const float> params() const { return params_; }
  void set_params(std::vector<float> params);  // ShapeMismatch on a size mismatch
  void init_params(Rng& rng);
  void set_perceptual_hook(PerceptualHook hook) { perceptual_ = std::move(hook); }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);  // layout must match

  // Dispatches on config().stage.
  StepReport train_step(const TrainSample& sample, Rng& rng);

  StepReport bootstrap_step(const TrainSample& sample, Rng& rng);
  StepReport alternating_step(const TrainSample& sample, Rng& rng);
  StepReport alternating_step(const TrainSample& sample, Rng& rng, TrainBranch branch);

  TrainBranch draw_branch(Rng& rng) {
    return rng.uniform() < config_.p_side ? TrainBranch::kSide : TrainBranch::kFrontal;
  }

  Video3<float> make_pseudo_gt(const TrainSample& sample, int k, uint64_t seed) const;

  // Per-parameter trainability under the stage's freeze rules.
  std::vector<uint8_t> trainable_mask(TrainStage stage) const;

 private:
  StepReport run_branch(const TrainSample& sample, Rng& rng, TrainStage stage,
                        TrainBranch branch);

  Denoiser denoiser_;
  TrainConfig config_;
  NoiseSchedule schedule_;
  std::vector<float> params_;
  AdamState adam_;
  PerceptualHook perceptual_;
  int64_t step_ = 0;
};

}  // namespace mpiv
