#include <algorithm>
#include <cmath>
#include <cstring>

#include "binary_io.hpp"
#include "mpiv/model.hpp"
#include "mpiv/threading.hpp"

namespace mpiv {

namespace {

// Section order inside the flat parameter vector.
enum SectionId : int {
  kC1W, kC1B, kC2W, kC2B, kCoW, kCoB,
  kG1W, kG1B, kG2W, kG2B, kGoW, kGoB,
  kL1W, kL1B, kL2W, kL2B,
  kSectionCount
};

constexpr const char* kSectionNames[kSectionCount] = {
    "color.conv1.weight", "color.conv1.bias", "color.conv2.weight", "color.conv2.bias",
    "color.out.weight",   "color.out.bias",   "geo.conv1.weight",   "geo.conv1.bias",
    "geo.conv2.weight",   "geo.conv2.bias",   "geo.out.weight",     "geo.out.bias",
    "link1.weight",       "link1.bias",       "link2.weight",       "link2.bias"};

constexpr int kColorOut = 6;  // frontal RGB + residual RGB pre-activations

template <typename T>
T logistic(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

// Same-size KxK convolution with zero padding, K odd. Writes bias + conv when
// add is false, accumulates bias + conv on top of out when true. The x loops
// are contiguous axpys so the compiler vectorizes them.
template <typename T>
void conv_forward(const PlaneStack<T>& in, const T* w, const T* b, int k, bool add,
                  PlaneStack<T>& out) {
  const int width = in.width, height = in.height, cin = in.planes, cout = out.planes;
  const int r = k / 2;
  global_pool().parallel_for(0, cout, [&](int64_t lo, int64_t hi) {
    for (int oc = static_cast<int>(lo); oc < static_cast<int>(hi); ++oc) {
      T* op = out.plane(oc);
      const size_t n = out.plane_size();
      if (add) {
        for (size_t i = 0; i < n; ++i) op[i] += b[oc];
      } else {
        std::fill(op, op + n, b[oc]);
      }
      for (int ic = 0; ic < cin; ++ic) {
        const T* sp = in.plane(ic);
        const T* wk = w + (static_cast<size_t>(oc) * cin + ic) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - r;
          const int y0 = std::max(0, -dy), y1 = std::min(height, height - dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - r;
            const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
            const T wv = wk[ky * k + kx];
            for (int y = y0; y < y1; ++y) {
              T* o = op + static_cast<size_t>(y) * width;
              const T* s = sp + static_cast<size_t>(y + dy) * width + dx;
              for (int x = x0; x < x1; ++x) o[x] += wv * s[x];
            }
          }
        }
      }
    }
  });
}

// Accumulates kernel and bias gradients; parallel over output channels, whose
// gradient slices are disjoint.
template <typename T>
void conv_backward_params(const PlaneStack<T>& in, const PlaneStack<T>& d_out, int k,
                          T* d_w, T* d_b) {
  const int width = in.width, height = in.height, cin = in.planes, cout = d_out.planes;
  const int r = k / 2;
  global_pool().parallel_for(0, cout, [&](int64_t lo, int64_t hi) {
    for (int oc = static_cast<int>(lo); oc < static_cast<int>(hi); ++oc) {
      const T* gp = d_out.plane(oc);
      T bsum = T(0);
      for (size_t i = 0; i < d_out.plane_size(); ++i) bsum += gp[i];
      d_b[oc] += bsum;
      for (int ic = 0; ic < cin; ++ic) {
        const T* sp = in.plane(ic);
        T* wk = d_w + (static_cast<size_t>(oc) * cin + ic) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - r;
          const int y0 = std::max(0, -dy), y1 = std::min(height, height - dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - r;
            const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
            T acc = T(0);
            for (int y = y0; y < y1; ++y) {
              const T* g = gp + static_cast<size_t>(y) * width;
              const T* s = sp + static_cast<size_t>(y + dy) * width + dx;
              for (int x = x0; x < x1; ++x) acc += g[x] * s[x];
            }
            wk[ky * k + kx] += acc;
          }
        }
      }
    }
  });
}

// Accumulates input gradients for the first `limit` input channels; parallel
// over input channels, whose planes are disjoint.
template <typename T>
void conv_backward_data(const T* w, const PlaneStack<T>& d_out, int k, int cin, int limit,
                        PlaneStack<T>& d_in) {
  const int width = d_out.width, height = d_out.height, cout = d_out.planes;
  const int r = k / 2;
  global_pool().parallel_for(0, limit, [&](int64_t lo, int64_t hi) {
    for (int ic = static_cast<int>(lo); ic < static_cast<int>(hi); ++ic) {
      T* dp = d_in.plane(ic);
      for (int oc = 0; oc < cout; ++oc) {
        const T* gp = d_out.plane(oc);
        const T* wk = w + (static_cast<size_t>(oc) * cin + ic) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - r;
          const int y0 = std::max(0, -dy), y1 = std::min(height, height - dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - r;
            const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
            const T wv = wk[ky * k + kx];
            for (int y = y0; y < y1; ++y) {
              T* d = dp + static_cast<size_t>(y + dy) * width + dx;
              const T* g = gp + static_cast<size_t>(y) * width;
              for (int x = x0; x < x1; ++x) d[x] += wv * g[x];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void tanh_inplace(PlaneStack<T>& s) {
  for (T& v : s.data) v = std::tanh(v);
}

// d_pre = d_post * (1 - post^2), in place on d_post.
template <typename T>
void tanh_backward_inplace(const PlaneStack<T>& post, PlaneStack<T>& d_post) {
  for (size_t i = 0; i < post.data.size(); ++i)
    d_post.data[i] *= T(1) - post.data[i] * post.data[i];
}

template <typename T>
void fill_time_embedding(PlaneStack<T>& stack, int first_plane, double tau) {
  const double a = 2.0 * M_PI * tau;
  const double vals[kTimeChannels] = {std::sin(a), std::cos(a), std::sin(2 * a),
                                      std::cos(2 * a)};
  for (int i = 0; i < kTimeChannels; ++i) {
    T* p = stack.plane(first_plane + i);
    std::fill(p, p + stack.plane_size(), static_cast<T>(vals[i]));
  }
}

template <typename T>
void copy_plane(PlaneStack<T>& dst, int dst_plane, const T* src) {
  std::memcpy(dst.plane(dst_plane), src, sizeof(T) * dst.plane_size());
}

}  // namespace

template <typename T>
struct DenoiserT<T>::FrameTrace {
  PlaneStack<T> cin, h1c, h2c, gin, g1, g2;
  DenoiserFrameT<T> pre;
};

template <typename T>
DenoiserT<T>::DenoiserT(const Config& config) : config_(config) {
  if (config.planes < 2 || config.hidden < 1 || config.steps < 1)
    throw ConfigInvalid("denoiser config requires planes >= 2, hidden >= 1, steps >= 1");
  const size_t h = config.hidden, d = config.planes;
  const size_t cc = 3 + 3 + 2 * kCondChannels + 3 + kTimeChannels;
  const size_t cg = kCondChannels + d + kTimeChannels;
  const size_t counts[kSectionCount] = {
      h * cc * 9, h, h * h * 9, h, kColorOut * h * 9, kColorOut,
      h * cg * 9, h, h * h * 9, h, d * h * 9,         d,
      h * h,      h, h * h,     h};
  sections_.reserve(kSectionCount);
  for (int i = 0; i < kSectionCount; ++i) {
    sections_.push_back({kSectionNames[i], param_count_, counts[i]});
    param_count_ += counts[i];
  }
}

template <typename T>
const ParamSection& DenoiserT<T>::section(const std::string& name) const {
  for (const auto& s : sections_)
    if (s.name == name) return s;
  throw IndexOutOfRange("unknown parameter section: " + name);
}

template <typename T>
std::vector<T> DenoiserT<T>::init_params(Rng& rng) const {
  std::vector<T> p(param_count_, T(0));
  const double h = config_.hidden;
  const double fan_in[kSectionCount] = {
      (3 + 3 + 2 * kCondChannels + 3 + kTimeChannels) * 9.0, 0, h * 9, 0, h * 9, 0,
      (kCondChannels + config_.planes + kTimeChannels) * 9.0, 0, h * 9, 0, h * 9, 0,
      0, 0, 0, 0};  // biases and zero-convolution links stay at 0
  for (int i = 0; i < kSectionCount; ++i) {
    if (fan_in[i] == 0) continue;
    const T scale = static_cast<T>(1.0 / std::sqrt(fan_in[i]));
    T* w = p.data() + sections_[i].offset;
    for (size_t j = 0; j < sections_[i].count; ++j) w[j] = scale * static_cast<T>(rng.gaussian());
  }
  return p;
}

template <typename T>
void DenoiserT<T>::check_inputs(std::span<const T> params, const Video3<T>& noisy, int t,
                                const ConditionBundleT<T>& cond) const {
  if (params.size() != param_count_)
    throw ShapeMismatch("denoise: parameter vector has " + std::to_string(params.size()) +
                        " elements, expected " + std::to_string(param_count_));
  if (t < 1 || t > config_.steps) throw StepOutOfRange("denoise: t=" + std::to_string(t));
  if (noisy.empty()) throw ShapeMismatch("denoise: empty noisy video");
  const int w = noisy[0].width, h = noisy[0].height;
  if (w < 1 || h < 1) throw ShapeMismatch("denoise: empty frames");
  for (const auto& f : noisy)
    if (f.width != w || f.height != h) throw ShapeMismatch("denoise: noisy frames disagree");
  const size_t n = noisy.size();
  if (cond.frame_cond.size() != n || cond.proxy_alphas.size() != n)
    throw ShapeMismatch("denoise: condition bundle covers " +
                        std::to_string(cond.frame_cond.size()) + "/" +
                        std::to_string(cond.proxy_alphas.size()) + " frames, video has " +
                        std::to_string(n));
  if (cond.reference_image.width != w || cond.reference_image.height != h)
    throw ShapeMismatch("denoise: reference image shape");
  if (cond.reference_cond.planes != kCondChannels || cond.reference_cond.width != w ||
      cond.reference_cond.height != h)
    throw ShapeMismatch("denoise: reference condition shape");
  for (const auto& c : cond.frame_cond)
    if (c.planes != kCondChannels || c.width != w || c.height != h)
      throw ShapeMismatch("denoise: frame condition shape");
  for (const auto& a : cond.proxy_alphas)
    if (a.planes != config_.planes || a.width != w || a.height != h)
      throw ShapeMismatch("denoise: proxy alpha shape");
  if (cond.has_first_frame && (cond.first_frame.width != w || cond.first_frame.height != h))
    throw ShapeMismatch("denoise: first frame shape");
}

template <typename T>
void DenoiserT<T>::forward_frame(std::span<const T> params, const Image3<T>& noisy_frame,
                                 double tau, const ConditionBundleT<T>& cond, int frame,
                                 FrameTrace& trace) const {
  const int w = noisy_frame.width, h = noisy_frame.height;
  const int hid = config_.hidden, d = config_.planes;
  const T* p = params.data();
  auto wp = [&](int s) { return p + sections_[s].offset; };

  auto& cin = trace.cin;
  cin = PlaneStack<T>(3 + 3 + 2 * kCondChannels + 3 + kTimeChannels, w, h);
  for (int c = 0; c < 3; ++c) copy_plane(cin, c, noisy_frame.plane(c));
  for (int c = 0; c < 3; ++c) copy_plane(cin, 3 + c, cond.reference_image.plane(c));
  for (int c = 0; c < kCondChannels; ++c) copy_plane(cin, 6 + c, cond.reference_cond.plane(c));
  for (int c = 0; c < kCondChannels; ++c)
    copy_plane(cin, 6 + kCondChannels + c, cond.frame_cond[frame].plane(c));
  if (cond.has_first_frame)
    for (int c = 0; c < 3; ++c)
      copy_plane(cin, 6 + 2 * kCondChannels + c, cond.first_frame.plane(c));
  fill_time_embedding(cin, 9 + 2 * kCondChannels, tau);

  trace.h1c = PlaneStack<T>(hid, w, h);
  conv_forward(cin, wp(kC1W), wp(kC1B), 3, false, trace.h1c);
  tanh_inplace(trace.h1c);
  trace.h2c = PlaneStack<T>(hid, w, h);
  conv_forward(trace.h1c, wp(kC2W), wp(kC2B), 3, false, trace.h2c);
  tanh_inplace(trace.h2c);
  PlaneStack<T> pre_color(kColorOut, w, h);
  conv_forward(trace.h2c, wp(kCoW), wp(kCoB), 3, false, pre_color);

  auto& gin = trace.gin;
  gin = PlaneStack<T>(kCondChannels + d + kTimeChannels, w, h);
  for (int c = 0; c < kCondChannels; ++c) copy_plane(gin, c, cond.frame_cond[frame].plane(c));
  for (int c = 0; c < d; ++c)
    copy_plane(gin, kCondChannels + c, cond.proxy_alphas[frame].plane(c));
  fill_time_embedding(gin, kCondChannels + d, tau);

  trace.g1 = PlaneStack<T>(hid, w, h);
  conv_forward(gin, wp(kG1W), wp(kG1B), 3, false, trace.g1);
  conv_forward(trace.h1c, wp(kL1W), wp(kL1B), 1, true, trace.g1);
  tanh_inplace(trace.g1);
  trace.g2 = PlaneStack<T>(hid, w, h);
  conv_forward(trace.g1, wp(kG2W), wp(kG2B), 3, false, trace.g2);
  conv_forward(trace.h2c, wp(kL2W), wp(kL2B), 1, true, trace.g2);
  tanh_inplace(trace.g2);
  trace.pre.alpha_pre = PlaneStack<T>(d, w, h);
  conv_forward(trace.g2, wp(kGoW), wp(kGoB), 3, false, trace.pre.alpha_pre);

  trace.pre.frontal_pre = Image3<T>(w, h);
  trace.pre.residual_pre = Image3<T>(w, h);
  const size_t n = pre_color.plane_size();
  for (int c = 0; c < 3; ++c) {
    std::memcpy(trace.pre.frontal_pre.plane(c), pre_color.plane(c), sizeof(T) * n);
    std::memcpy(trace.pre.residual_pre.plane(c), pre_color.plane(3 + c), sizeof(T) * n);
  }
}

template <typename T>
DenoiserOutputT<T> DenoiserT<T>::denoise(std::span<const T> params, const Video3<T>& noisy,
                                         int t, const ConditionBundleT<T>& cond) const {
  check_inputs(params, noisy, t, cond);
  const double tau = static_cast<double>(t) / config_.steps;
  DenoiserOutputT<T> out;
  out.frames.resize(noisy.size());
  FrameTrace trace;
  for (size_t f = 0; f < noisy.size(); ++f) {
    forward_frame(params, noisy[f], tau, cond, static_cast<int>(f), trace);
    out.frames[f] = std::move(trace.pre);
  }
  return out;
}

template <typename T>
void DenoiserT<T>::denoise_backward(std::span<const T> params, const Video3<T>& noisy, int t,
                                    const ConditionBundleT<T>& cond,
                                    const DenoiserOutputT<T>& d_output, std::span<T> d_params,
                                    Video3<T>* d_noisy) const {
  check_inputs(params, noisy, t, cond);
  if (d_params.size() != param_count_) throw ShapeMismatch("denoise_backward: d_params size");
  if (d_output.frames.size() != noisy.size())
    throw ShapeMismatch("denoise_backward: d_output frame count");
  const int w = noisy[0].width, h = noisy[0].height;
  for (const auto& f : d_output.frames)
    if (f.frontal_pre.width != w || f.frontal_pre.height != h ||
        !f.frontal_pre.same_shape(f.residual_pre) || f.alpha_pre.planes != config_.planes ||
        f.alpha_pre.width != w || f.alpha_pre.height != h)
      throw ShapeMismatch("denoise_backward: d_output frame shape");
  if (d_noisy) {
    d_noisy->assign(noisy.size(), Image3<T>(w, h));
  }

  const double tau = static_cast<double>(t) / config_.steps;
  const int hid = config_.hidden;
  const T* p = params.data();
  auto wp = [&](int s) { return p + sections_[s].offset; };
  auto gp = [&](int s) { return d_params.data() + sections_[s].offset; };

  FrameTrace trace;
  for (size_t f = 0; f < noisy.size(); ++f) {
    forward_frame(params, noisy[f], tau, cond, static_cast<int>(f), trace);
    const auto& dof = d_output.frames[f];

    PlaneStack<T> d_pre6(kColorOut, w, h);
    const size_t n = d_pre6.plane_size();
    for (int c = 0; c < 3; ++c) {
      std::memcpy(d_pre6.plane(c), dof.frontal_pre.plane(c), sizeof(T) * n);
      std::memcpy(d_pre6.plane(3 + c), dof.residual_pre.plane(c), sizeof(T) * n);
    }

    // Geometry head.
    conv_backward_params(trace.g2, dof.alpha_pre, 3, gp(kGoW), gp(kGoB));
    PlaneStack<T> d_g2(hid, w, h);
    conv_backward_data(wp(kGoW), dof.alpha_pre, 3, hid, hid, d_g2);
    tanh_backward_inplace(trace.g2, d_g2);

    // g2 pre-activation = conv3(g1) + link2(h2c).
    conv_backward_params(trace.g1, d_g2, 3, gp(kG2W), gp(kG2B));
    PlaneStack<T> d_g1(hid, w, h);
    conv_backward_data(wp(kG2W), d_g2, 3, hid, hid, d_g1);
    conv_backward_params(trace.h2c, d_g2, 1, gp(kL2W), gp(kL2B));
    PlaneStack<T> d_h2c(hid, w, h);
    conv_backward_data(wp(kL2W), d_g2, 1, hid, hid, d_h2c);

    // Color head joins the link contribution before the tanh factor.
    conv_backward_params(trace.h2c, d_pre6, 3, gp(kCoW), gp(kCoB));
    conv_backward_data(wp(kCoW), d_pre6, 3, hid, hid, d_h2c);
    tanh_backward_inplace(trace.h2c, d_h2c);

    conv_backward_params(trace.h1c, d_h2c, 3, gp(kC2W), gp(kC2B));
    PlaneStack<T> d_h1c(hid, w, h);
    conv_backward_data(wp(kC2W), d_h2c, 3, hid, hid, d_h1c);

    // g1 pre-activation = conv3(gin) + link1(h1c); gin holds no noisy pixels,
    // so its input gradient is never needed.
    tanh_backward_inplace(trace.g1, d_g1);
    conv_backward_params(trace.gin, d_g1, 3, gp(kG1W), gp(kG1B));
    conv_backward_params(trace.h1c, d_g1, 1, gp(kL1W), gp(kL1B));
    conv_backward_data(wp(kL1W), d_g1, 1, hid, hid, d_h1c);

    tanh_backward_inplace(trace.h1c, d_h1c);
    conv_backward_params(trace.cin, d_h1c, 3, gp(kC1W), gp(kC1B));
    if (d_noisy) {
      PlaneStack<T> d_cin(3, w, h);
      conv_backward_data(wp(kC1W), d_h1c, 3, trace.cin.planes, 3, d_cin);
      Image3<T>& dn = (*d_noisy)[f];
      for (int c = 0; c < 3; ++c)
        std::memcpy(dn.plane(c), d_cin.plane(c), sizeof(T) * d_cin.plane_size());
    }
  }
}

template <typename T>
ConditionBundleT<T> with_drops(const ConditionBundleT<T>& cond, bool drop_reference,
                               bool drop_first_frame) {
  ConditionBundleT<T> out = cond;
  if (drop_reference) {
    std::fill(out.reference_image.data.begin(), out.reference_image.data.end(), T(0));
    std::fill(out.reference_cond.data.begin(), out.reference_cond.data.end(), T(0));
    out.reference_dropped = true;
  }
  if (drop_first_frame) {
    std::fill(out.first_frame.data.begin(), out.first_frame.data.end(), T(0));
    out.first_frame_dropped = true;
  }
  return out;
}

template <typename T>
ConditionBundleT<T> drop_conditions(const ConditionBundleT<T>& cond, Rng& rng,
                                    double p_first_frame, double p_reference) {
  // First-frame draw happens first; tests pin this order.
  const bool drop_ff = rng.bernoulli(p_first_frame);
  const bool drop_ref = rng.bernoulli(p_reference);
  return with_drops(cond, drop_ref, drop_ff);
}

template <typename T>
MpiFrameT<T> activate_frame(const DenoiserFrameT<T>& pre, const FrameGeometry& geometry) {
  MpiFrameT<T> out;
  out.camera = geometry.camera;
  out.d_near = geometry.d_near;
  out.d_far = geometry.d_far;
  out.frontal = Image3<T>(pre.frontal_pre.width, pre.frontal_pre.height);
  out.residual = Image3<T>(pre.residual_pre.width, pre.residual_pre.height);
  out.alphas = PlaneStack<T>(pre.alpha_pre.planes, pre.alpha_pre.width, pre.alpha_pre.height);
  for (size_t i = 0; i < out.frontal.data.size(); ++i)
    out.frontal.data[i] = logistic(pre.frontal_pre.data[i]);
  for (size_t i = 0; i < out.residual.data.size(); ++i)
    out.residual.data[i] = std::tanh(pre.residual_pre.data[i]);
  for (size_t i = 0; i < out.alphas.data.size(); ++i)
    out.alphas.data[i] = logistic(pre.alpha_pre.data[i]);
  return out;
}

template <typename T>
MpiVideoT<T> activate_video(const DenoiserOutputT<T>& output,
                            const std::vector<FrameGeometry>& geometry, double fps) {
  if (output.frames.size() != geometry.size())
    throw ShapeMismatch("activate_video: " + std::to_string(output.frames.size()) +
                        " frames vs " + std::to_string(geometry.size()) + " geometries");
  MpiVideoT<T> video;
  video.fps = fps;
  video.frames.reserve(output.frames.size());
  for (size_t i = 0; i < output.frames.size(); ++i)
    video.frames.push_back(activate_frame(output.frames[i], geometry[i]));
  return video;
}

template <typename T>
DenoiserFrameT<T> activate_frame_backward(const MpiFrameT<T>& activated,
                                          const MpiFrameT<T>& d_activated) {
  if (!activated.frontal.same_shape(d_activated.frontal) ||
      !activated.alphas.same_shape(d_activated.alphas))
    throw ShapeMismatch("activate_frame_backward: cotangent shape");
  DenoiserFrameT<T> d_pre;
  d_pre.frontal_pre = Image3<T>(activated.frontal.width, activated.frontal.height);
  d_pre.residual_pre = Image3<T>(activated.residual.width, activated.residual.height);
  d_pre.alpha_pre =
      PlaneStack<T>(activated.alphas.planes, activated.alphas.width, activated.alphas.height);
  for (size_t i = 0; i < d_pre.frontal_pre.data.size(); ++i) {
    const T a = activated.frontal.data[i];
    d_pre.frontal_pre.data[i] = d_activated.frontal.data[i] * a * (T(1) - a);
  }
  for (size_t i = 0; i < d_pre.residual_pre.data.size(); ++i) {
    const T a = activated.residual.data[i];
    d_pre.residual_pre.data[i] = d_activated.residual.data[i] * (T(1) - a * a);
  }
  for (size_t i = 0; i < d_pre.alpha_pre.data.size(); ++i) {
    const T a = activated.alphas.data[i];
    d_pre.alpha_pre.data[i] = d_activated.alphas.data[i] * a * (T(1) - a);
  }
  return d_pre;
}

void write_checkpoint(const std::string& path, const std::vector<ParamSection>& sections,
                      std::span<const float> params) {
  for (const auto& s : sections)
    if (s.offset + s.count > params.size())
      throw InvalidRange("checkpoint section '" + s.name + "' exceeds the parameter vector");
  binio::Writer w(path);
  w.bytes("MPCK", 4);
  w.u32(1);
  w.u32(static_cast<uint32_t>(params.size()));
  w.u32(static_cast<uint32_t>(sections.size()));
  for (const auto& s : sections) {
    w.u32(static_cast<uint32_t>(s.name.size()));
    w.bytes(s.name.data(), s.name.size());
    w.u64(s.offset * sizeof(float));
    w.u64(s.count * sizeof(float));
  }
  if (!params.empty()) w.bytes(params.data(), params.size() * sizeof(float));
}

Checkpoint read_checkpoint(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MPCK", 4) != 0) throw BadMagic("not an MPCK file");
  const uint32_t version = r.u32();
  if (version != 1) throw UnsupportedVersion("MPCK version " + std::to_string(version));
  const uint32_t count = r.u32();
  const uint32_t nsections = r.u32();
  if (count > (1u << 28) || nsections > 4096)
    throw CorruptHeader("implausible MPCK header");
  Checkpoint ck;
  ck.sections.reserve(nsections);
  for (uint32_t i = 0; i < nsections; ++i) {
    const uint32_t name_len = r.u32();
    if (name_len > 4096) throw CorruptHeader("implausible MPCK section name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint64_t off = r.u64(), len = r.u64();
    if (off % sizeof(float) || len % sizeof(float) ||
        off / sizeof(float) + len / sizeof(float) > count)
      throw CorruptHeader("MPCK section '" + name + "' out of bounds");
    ck.sections.push_back(
        {std::move(name), static_cast<size_t>(off / sizeof(float)),
         static_cast<size_t>(len / sizeof(float))});
  }
  ck.params.resize(count);
  if (count > 0) r.bytes(ck.params.data(), static_cast<size_t>(count) * sizeof(float));
  return ck;
}

#define MPIV_INSTANTIATE_MODEL(T)                                                        \
  template class DenoiserT<T>;                                                           \
  template ConditionBundleT<T> with_drops(const ConditionBundleT<T>&, bool, bool);        \
  template ConditionBundleT<T> drop_conditions(const ConditionBundleT<T>&, Rng&, double,  \
                                               double);                                  \
  template MpiFrameT<T> activate_frame(const DenoiserFrameT<T>&, const FrameGeometry&);   \
  template MpiVideoT<T> activate_video(const DenoiserOutputT<T>&,                        \
                                       const std::vector<FrameGeometry>&, double);       \
  template DenoiserFrameT<T> activate_frame_backward(const MpiFrameT<T>&,                \
                                                     const MpiFrameT<T>&);

MPIV_INSTANTIATE_MODEL(float)
MPIV_INSTANTIATE_MODEL(double)

#undef MPIV_INSTANTIATE_MODEL

}  // namespace mpiv
