#include <algorithm>
#include <cmath>
#include <utility>

#include "json.hpp"
#include "mpiv/train.hpp"

namespace mpiv {

namespace {

template <typename T>
Image1<T> luma(const Image3<T>& rgb) {
  Image1<T> out(rgb.width, rgb.height);
  const T* r = rgb.plane(0);
  const T* g = rgb.plane(1);
  const T* b = rgb.plane(2);
  for (size_t i = 0; i < out.size(); ++i)
    out.data[i] = T(0.299) * r[i] + T(0.587) * g[i] + T(0.114) * b[i];
  return out;
}

constexpr int kLapDy[4] = {-1, 1, 0, 0};
constexpr int kLapDx[4] = {0, 0, -1, 1};

// 5-point Laplacian; out-of-range neighbors contribute no difference, so a
// constant image maps to exactly zero everywhere including borders.
template <typename T>
Image1<T> laplacian5(const Image1<T>& in) {
  Image1<T> out(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      const T c = in.at(y, x);
      T acc = 0;
      for (int k = 0; k < 4; ++k) {
        const int ny = y + kLapDy[k], nx = x + kLapDx[k];
        if (ny >= 0 && ny < in.height && nx >= 0 && nx < in.width) acc += in.at(ny, nx) - c;
      }
      out.at(y, x) = acc;
    }
  return out;
}

template <typename T>
int sgn(T v) {
  return (v > T(0)) - (v < T(0));
}

std::string stage_name(TrainStage stage) {
  return stage == TrainStage::kBootstrap ? "bootstrap" : "alternating";
}

std::string branch_name(TrainBranch branch) {
  return branch == TrainBranch::kFrontal ? "frontal" : "side";
}

}  // namespace

template <typename T>
T loss_frontal(const RenderOutputT<T>& render, const Image3<T>& gt, const Image1<T>& matte,
               const Image3<T>& background, RenderCotangentT<T>* d_render) {
  if (!render.rgb.same_shape(gt) || !render.rgb.same_shape(background) ||
      render.alpha.width != gt.width || render.alpha.height != gt.height ||
      !render.alpha.same_shape(matte))
    throw ShapeMismatch("loss_frontal: input shapes disagree");
  const size_t hw = render.rgb.plane_size();
  const T norm = T(1) / (T(3) * static_cast<T>(hw));
  if (d_render) {
    d_render->d_rgb = Image3<T>(gt.width, gt.height);
    d_render->d_alpha = Image1<T>(gt.width, gt.height);
    d_render->d_disparity = Image1<T>(gt.width, gt.height);
  }
  T acc = 0;
  for (int c = 0; c < 3; ++c) {
    const T* rp = render.rgb.plane(c);
    const T* gp = gt.plane(c);
    const T* bp = background.plane(c);
    const T* ap = render.alpha.data.data();
    const T* mp = matte.data.data();
    T* drp = d_render ? d_render->d_rgb.plane(c) : nullptr;
    T* dap = d_render ? d_render->d_alpha.data.data() : nullptr;
    for (size_t i = 0; i < hw; ++i) {
      const T fg = rp[i] - mp[i] * gp[i];
      const T full = rp[i] + (T(1) - ap[i]) * bp[i] - gp[i];
      acc += fg * fg + full * full;
      if (d_render) {
        drp[i] = T(2) * norm * (fg + full);
        dap[i] -= T(2) * norm * full * bp[i];
      }
    }
  }
  return acc * norm;
}

template <typename T>
T loss_side(const RenderOutputT<T>& render, const Image3<T>& gt_side, const Image1<T>& matte,
            const Image3<T>& background, RenderCotangentT<T>* d_render) {
  return loss_frontal(render, gt_side, matte, background, d_render);
}

template <typename T>
T loss_mask(const Image1<T>& alpha, const Image1<T>& matte, Image1<T>* d_alpha) {
  if (!alpha.same_shape(matte)) throw ShapeMismatch("loss_mask: input shapes disagree");
  const T norm = T(1) / static_cast<T>(alpha.size());
  if (d_alpha) *d_alpha = Image1<T>(alpha.width, alpha.height);
  T acc = 0;
  for (size_t i = 0; i < alpha.size(); ++i) {
    const T e = alpha.data[i] - matte.data[i];
    acc += e * e;
    if (d_alpha) d_alpha->data[i] = T(2) * norm * e;
  }
  return acc * norm;
}

template <typename T>
T loss_depth_smooth(const Image1<T>& disparity, const Image3<T>& gt, Image1<T>* d_disparity) {
  if (disparity.width != gt.width || disparity.height != gt.height)
    throw ShapeMismatch("loss_depth_smooth: input shapes disagree");
  const Image1<T> lap_d = laplacian5(disparity);
  const Image1<T> lap_l = laplacian5(luma(gt));
  const T norm = T(1) / static_cast<T>(disparity.size());
  if (d_disparity) *d_disparity = Image1<T>(disparity.width, disparity.height);
  T acc = 0;
  for (int y = 0; y < disparity.height; ++y)
    for (int x = 0; x < disparity.width; ++x) {
      const T weight = std::exp(-std::abs(lap_l.at(y, x)));
      acc += std::abs(lap_d.at(y, x)) * weight;
      if (d_disparity) {
        // Adjoint of the Laplacian applied to sign(lap_d) * weight.
        const T s = norm * weight * static_cast<T>(sgn(lap_d.at(y, x)));
        if (s == T(0)) continue;
        for (int k = 0; k < 4; ++k) {
          const int ny = y + kLapDy[k], nx = x + kLapDx[k];
          if (ny >= 0 && ny < disparity.height && nx >= 0 && nx < disparity.width) {
            d_disparity->at(ny, nx) += s;
            d_disparity->at(y, x) -= s;
          }
        }
      }
    }
  return acc * norm;
}

template <typename T>
T loss_disparity(const Image1<T>& disparity, const Image1<T>& proxy, const Image1<T>& matte,
                 Image1<T>* d_disparity) {
  if (!disparity.same_shape(proxy) || !disparity.same_shape(matte))
    throw ShapeMismatch("loss_disparity: input shapes disagree");
  const T norm = T(1) / static_cast<T>(disparity.size());
  if (d_disparity) *d_disparity = Image1<T>(disparity.width, disparity.height);
  T acc = 0;
  for (size_t i = 0; i < disparity.size(); ++i) {
    const T e = disparity.data[i] - proxy.data[i];
    acc += matte.data[i] * e * e;
    if (d_disparity) d_disparity->data[i] = T(2) * norm * matte.data[i] * e;
  }
  return acc * norm;
}

template <typename T>
FrameLossT<T> training_loss(const RenderOutputT<T>& render, const Image3<T>& gt,
                            const Image1<T>& matte, const Image1<T>& proxy_disparity,
                            const Image3<T>& background, const TrainConfig& config,
                            RenderCotangentT<T>* d_render) {
  FrameLossT<T> out;
  Image1<T> d_mask, d_smooth, d_disp;
  out.image = loss_frontal(render, gt, matte, background, d_render);
  out.mask = loss_mask(render.alpha, matte, d_render ? &d_mask : nullptr);
  out.smooth = loss_depth_smooth(render.disparity, gt, d_render ? &d_smooth : nullptr);
  out.disparity =
      loss_disparity(render.disparity, proxy_disparity, matte, d_render ? &d_disp : nullptr);
  out.total = out.image + static_cast<T>(config.mask_w) * out.mask +
              static_cast<T>(config.smooth_w) * out.smooth +
              static_cast<T>(config.disparity_w) * out.disparity;
  if (d_render) {
    for (size_t i = 0; i < d_mask.size(); ++i) {
      d_render->d_alpha.data[i] += static_cast<T>(config.mask_w) * d_mask.data[i];
      d_render->d_disparity.data[i] = static_cast<T>(config.smooth_w) * d_smooth.data[i] +
                                      static_cast<T>(config.disparity_w) * d_disp.data[i];
    }
  }
  return out;
}

void TrainConfig::validate(int T) const {
  auto bad = [](const std::string& what) { throw ConfigInvalid("train config: " + what); };
  if (!(lr >= 0) || !std::isfinite(lr)) bad("lr must be finite and non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    bad("adam betas must lie in [0, 1)");
  if (!(eps > 0)) bad("adam eps must be positive");
  for (double w : {mask_w, smooth_w, disparity_w, lpips_w})
    if (!(w >= 0) || !std::isfinite(w)) bad("loss weights must be finite and non-negative");
  if (!(p_side >= 0 && p_side <= 1)) bad("p_side must lie in [0, 1]");
  if (!(p_drop_first_frame >= 0 && p_drop_first_frame <= 1) ||
      !(p_drop_reference >= 0 && p_drop_reference <= 1))
    bad("drop probabilities must lie in [0, 1]");
  if (pseudo_gt_steps < 1 || pseudo_gt_steps > T)
    bad("pseudo_gt_steps must lie in [1, T]");
  if (late_stage_min != 0 && (late_stage_min < 1 || late_stage_min > T))
    bad("late_stage_min must be 0 (auto) or lie in [1, T]");
}

void TrainSample::validate() const {
  const size_t n = target_images.size();
  if (n == 0) throw ShapeMismatch("train sample: no target frames");
  if (target_mattes.size() != n || target_proxy_disparity.size() != n ||
      target_cond.size() != n || target_proxy_alphas.size() != n ||
      target_cameras.size() != n || reference_frame_cond.size() != n ||
      reference_proxy_alphas.size() != n)
    throw ShapeMismatch("train sample: per-frame array lengths disagree");

  const int w = reference_image.width, h = reference_image.height;
  if (w < 1 || h < 1) throw ShapeMismatch("train sample: empty reference image");
  auto check_dims = [&](int iw, int ih, const char* what) {
    if (iw != w || ih != h) throw ShapeMismatch(std::string("train sample: ") + what);
  };
  check_dims(first_frame.width, first_frame.height, "first frame shape");
  check_dims(background.width, background.height, "background shape");
  check_dims(reference_cond.width, reference_cond.height, "reference condition shape");
  if (reference_cond.planes != kCondChannels)
    throw ShapeMismatch("train sample: reference condition channels");
  auto check_camera = [&](const Camera& cam, const char* what) {
    if (cam.intrinsics.width != w || cam.intrinsics.height != h)
      throw ShapeMismatch(std::string("train sample: ") + what);
  };
  check_camera(reference_camera, "reference camera size");

  const int planes = target_proxy_alphas[0].planes;
  for (size_t f = 0; f < n; ++f) {
    check_dims(target_images[f].width, target_images[f].height, "target image shape");
    check_dims(target_mattes[f].width, target_mattes[f].height, "matte shape");
    check_dims(target_proxy_disparity[f].width, target_proxy_disparity[f].height,
               "proxy disparity shape");
    check_dims(target_cond[f].width, target_cond[f].height, "target condition shape");
    check_dims(target_proxy_alphas[f].width, target_proxy_alphas[f].height,
               "target proxy alpha shape");
    check_dims(reference_frame_cond[f].width, reference_frame_cond[f].height,
               "reference-frame condition shape");
    check_dims(reference_proxy_alphas[f].width, reference_proxy_alphas[f].height,
               "reference proxy alpha shape");
    if (target_cond[f].planes != kCondChannels ||
        reference_frame_cond[f].planes != kCondChannels)
      throw ShapeMismatch("train sample: condition channels");
    if (target_proxy_alphas[f].planes != planes || reference_proxy_alphas[f].planes != planes)
      throw ShapeMismatch("train sample: proxy alpha plane counts disagree");
    check_camera(target_cameras[f], "target camera size");
    for (float m : target_mattes[f].data)
      if (!(m >= 0.0f && m <= 1.0f)) throw InvalidRange("train sample: matte outside [0, 1]");
  }
  if (!(d_near > 0 && d_near < d_far)) throw InvalidRange("train sample: depth volume");
}

std::string StepReport::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["stage"] = stage;
  j["branch"] = branch;
  j["loss_total"] = loss_total;
  j["loss_frontal"] = loss_frontal;
  j["loss_side"] = loss_side;
  j["loss_mask"] = loss_mask;
  j["loss_smooth"] = loss_smooth;
  j["loss_disp"] = loss_disp;
  j["t"] = t;
  return j.dump();
}

void adam_step(std::span<float> params, std::span<const float> grads,
               std::span<const uint8_t> trainable, double lr, double beta1, double beta2,
               double eps, AdamState& state) {
  if (grads.size() != params.size()) throw ShapeMismatch("adam_step: gradient size");
  if (!trainable.empty() && trainable.size() != params.size())
    throw ShapeMismatch("adam_step: trainable mask size");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeMismatch("adam_step: optimizer state size");

  state.steps += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  for (size_t i = 0; i < params.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    const double g = grads[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double update = lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
    params[i] = static_cast<float>(params[i] - update);
  }
}

Video3<float> make_pseudo_gt(const DenoiseFn& denoiser, const TrainSample& sample,
                             const NoiseSchedule& schedule, int k, uint64_t seed) {
  sample.validate();
  const int n = sample.frames();
  ConditionBundle cond;
  cond.reference_image = sample.reference_image;
  cond.reference_cond = sample.reference_cond;
  cond.frame_cond = sample.reference_frame_cond;
  cond.proxy_alphas = sample.reference_proxy_alphas;
  cond.first_frame = Image3f(sample.reference_image.width, sample.reference_image.height);
  cond.has_first_frame = false;

  std::vector<FrameGeometry> geometry(
      n, FrameGeometry{sample.reference_camera, sample.d_near, sample.d_far});
  SamplerConfig sampler;
  sampler.steps = k;
  sampler.eta = 0.0;
  sampler.seed = seed;
  GuidanceSchedule guide;  // ref_scale 1 and no ramp: one denoiser pass per step
  guide.ref_scale = 1.0;
  guide.ramp_frames = 0;
  guide.video_frames = n;

  MpiVideo sampled = reverse_sample(denoiser, cond, geometry, schedule, sampler, guide);
  Video3<float> out;
  out.reserve(n);
  for (int f = 0; f < n; ++f)
    out.push_back(render(sampled.frames[f], sample.reference_camera).rgb);
  return out;
}

Trainer::Trainer(const Denoiser::Config& model, const TrainConfig& config)
    : denoiser_(model), config_(config), schedule_(make_schedule(model.steps)) {
  config_.validate(schedule_.T);
  params_.assign(denoiser_.param_count(), 0.0f);
}

void Trainer::set_params(std::vector<float> params) {
  if (params.size() != denoiser_.param_count())
    throw ShapeMismatch("trainer: parameter count mismatch");
  params_ = std::move(params);
  adam_ = {};
}

void Trainer::init_params(Rng& rng) {
  params_ = denoiser_.init_params(rng);
  adam_ = {};
  step_ = 0;
}

void Trainer::save_checkpoint(const std::string& path) const {
  write_checkpoint(path, denoiser_.sections(), params_);
}

void Trainer::load_checkpoint(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  const auto& want = denoiser_.sections();
  if (ck.params.size() != denoiser_.param_count() || ck.sections.size() != want.size())
    throw ShapeMismatch("trainer: checkpoint layout mismatch");
  for (size_t i = 0; i < want.size(); ++i)
    if (ck.sections[i].name != want[i].name || ck.sections[i].offset != want[i].offset ||
        ck.sections[i].count != want[i].count)
      throw ShapeMismatch("trainer: checkpoint section '" + ck.sections[i].name +
                          "' does not match the model");
  params_ = std::move(ck.params);
  adam_ = {};
}

std::vector<uint8_t> Trainer::trainable_mask(TrainStage stage) const {
  std::vector<uint8_t> mask(params_.size(), 0);
  for (const auto& s : denoiser_.sections()) {
    const bool color = s.name.rfind("color.", 0) == 0;
    const bool color_interior = s.name.rfind("color.conv", 0) == 0;
    const bool on =
        stage == TrainStage::kBootstrap ? color : !color_interior;
    std::fill_n(mask.begin() + static_cast<ptrdiff_t>(s.offset), s.count,
                static_cast<uint8_t>(on));
  }
  return mask;
}

Video3<float> Trainer::make_pseudo_gt(const TrainSample& sample, int k, uint64_t seed) const {
  DenoiseFn fn = [this](const Video3<float>& x, int t, const ConditionBundle& c) {
    return denoiser_.denoise(std::span<const float>(params_), x, t, c);
  };
  return mpiv::make_pseudo_gt(fn, sample, schedule_, k, seed);
}

StepReport Trainer::train_step(const TrainSample& sample, Rng& rng) {
  return config_.stage == TrainStage::kBootstrap ? bootstrap_step(sample, rng)
                                                 : alternating_step(sample, rng);
}

StepReport Trainer::bootstrap_step(const TrainSample& sample, Rng& rng) {
  return run_branch(sample, rng, TrainStage::kBootstrap, TrainBranch::kFrontal);
}

StepReport Trainer::alternating_step(const TrainSample& sample, Rng& rng) {
  return alternating_step(sample, rng, draw_branch(rng));
}

StepReport Trainer::alternating_step(const TrainSample& sample, Rng& rng, TrainBranch branch) {
  return run_branch(sample, rng, TrainStage::kAlternating, branch);
}

StepReport Trainer::run_branch(const TrainSample& sample, Rng& rng, TrainStage stage,
                               TrainBranch branch) {
  sample.validate();
  const int n = sample.frames();
  const int w = sample.reference_image.width, h = sample.reference_image.height;
  const int T = schedule_.T;

  Video3<float> x0;
  std::vector<FrameGeometry> geometry(n);
  ConditionBundle cond;
  cond.reference_image = sample.reference_image;
  cond.reference_cond = sample.reference_cond;
  cond.has_first_frame = true;
  int t_lo = 1;

  if (branch == TrainBranch::kFrontal) {
    x0 = sample.target_images;
    for (int f = 0; f < n; ++f)
      geometry[f] = {sample.target_cameras[f], sample.d_near, sample.d_far};
    cond.frame_cond = sample.target_cond;
    cond.proxy_alphas = sample.target_proxy_alphas;
    cond.first_frame = sample.first_frame;
  } else {
    const uint64_t seed = rng.next_u64();
    x0 = make_pseudo_gt(sample, config_.pseudo_gt_steps, seed);
    for (int f = 0; f < n; ++f)
      geometry[f] = {sample.reference_camera, sample.d_near, sample.d_far};
    cond.frame_cond = sample.reference_frame_cond;
    cond.proxy_alphas = sample.reference_proxy_alphas;
    cond.first_frame = x0[0];
    if (config_.late_stage)
      t_lo = config_.late_stage_min > 0 ? config_.late_stage_min : (T + 1) / 2;
  }

  const int t = static_cast<int>(rng.uniform_int(t_lo, T));
  cond = drop_conditions(cond, rng, config_.p_drop_first_frame, config_.p_drop_reference);

  Video3<float> noisy(n);
  Image3f eps(w, h);
  for (int f = 0; f < n; ++f) {
    for (auto& e : eps.data) e = static_cast<float>(rng.gaussian());
    noisy[f] = Image3f(w, h);
    q_sample(x0[f].data, t, eps.data, schedule_, noisy[f].data);
  }

  DenoiserOutput out = denoiser_.denoise(params_, noisy, t, cond);
  if (!config_.use_residual)
    for (auto& frame : out.frames)
      std::fill(frame.residual_pre.data.begin(), frame.residual_pre.data.end(), 0.0f);

  DenoiserOutput d_out;
  d_out.frames.resize(n);
  FrameLossT<double> mean;
  const float inv_n = 1.0f / static_cast<float>(n);
  for (int f = 0; f < n; ++f) {
    const MpiFrame activated = activate_frame(out.frames[f], geometry[f]);
    const RenderOutput rendered = render(activated, sample.target_cameras[f]);
    RenderCotangent d_rend;
    const FrameLoss losses =
        training_loss(rendered, sample.target_images[f], sample.target_mattes[f],
                      sample.target_proxy_disparity[f], sample.background, config_, &d_rend);
    double frame_total = losses.total;
    if (perceptual_ && config_.lpips_w > 0) {
      Image3f d_perceptual;
      frame_total +=
          config_.lpips_w * perceptual_(rendered.rgb, sample.target_images[f], &d_perceptual);
      if (!d_perceptual.same_shape(d_rend.d_rgb))
        throw ShapeMismatch("perceptual hook returned a mis-shaped gradient");
      for (size_t i = 0; i < d_rend.d_rgb.size(); ++i)
        d_rend.d_rgb.data[i] += static_cast<float>(config_.lpips_w) * d_perceptual.data[i];
    }
    for (auto& v : d_rend.d_rgb.data) v *= inv_n;
    for (auto& v : d_rend.d_alpha.data) v *= inv_n;
    for (auto& v : d_rend.d_disparity.data) v *= inv_n;

    const RenderGradients render_grads =
        render_backward(activated, sample.target_cameras[f], d_rend);
    MpiFrame d_activated;
    d_activated.frontal = render_grads.d_frontal;
    d_activated.residual = render_grads.d_residual;
    d_activated.alphas = render_grads.d_alphas;
    d_out.frames[f] = activate_frame_backward(activated, d_activated);
    if (!config_.use_residual)
      std::fill(d_out.frames[f].residual_pre.data.begin(),
                d_out.frames[f].residual_pre.data.end(), 0.0f);

    mean.total += frame_total / n;
    mean.image += static_cast<double>(losses.image) / n;
    mean.mask += static_cast<double>(losses.mask) / n;
    mean.smooth += static_cast<double>(losses.smooth) / n;
    mean.disparity += static_cast<double>(losses.disparity) / n;
  }

  std::vector<float> d_params(params_.size(), 0.0f);
  denoiser_.denoise_backward(params_, noisy, t, cond, d_out, d_params, nullptr);
  const std::vector<uint8_t> mask = trainable_mask(stage);
  adam_step(params_, d_params, mask, config_.lr, config_.beta1, config_.beta2, config_.eps,
            adam_);

  StepReport report;
  report.step = ++step_;
  report.stage = stage_name(stage);
  report.branch = branch_name(branch);
  report.loss_total = mean.total;
  (branch == TrainBranch::kFrontal ? report.loss_frontal : report.loss_side) = mean.image;
  report.loss_mask = mean.mask;
  report.loss_smooth = mean.smooth;
  report.loss_disp = mean.disparity;
  report.t = t;
  return report;
}

#define MPIV_INSTANTIATE_TRAIN(T)                                                            \
  template T loss_frontal(const RenderOutputT<T>&, const Image3<T>&, const Image1<T>&,       \
                          const Image3<T>&, RenderCotangentT<T>*);                           \
  template T loss_side(const RenderOutputT<T>&, const Image3<T>&, const Image1<T>&,          \
                       const Image3<T>&, RenderCotangentT<T>*);                              \
  template T loss_mask(const Image1<T>&, const Image1<T>&, Image1<T>*);                      \
  template T loss_depth_smooth(const Image1<T>&, const Image3<T>&, Image1<T>*);              \
  template T loss_disparity(const Image1<T>&, const Image1<T>&, const Image1<T>&,            \
                            Image1<T>*);                                                     \
  template FrameLossT<T> training_loss(const RenderOutputT<T>&, const Image3<T>&,            \
                                       const Image1<T>&, const Image1<T>&, const Image3<T>&, \
                                       const TrainConfig&, RenderCotangentT<T>*);

MPIV_INSTANTIATE_TRAIN(float)
MPIV_INSTANTIATE_TRAIN(double)

#undef MPIV_INSTANTIATE_TRAIN

}  // namespace mpiv
