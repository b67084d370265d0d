#pragma once

#include "mpiv/mpi.hpp"

namespace mpiv {

template <typename T>
struct RenderOutputT {
  Image3<T> rgb;         // premultiplied by accumulated alpha, [0,1]
  Image1<T> alpha;       // [0,1]
  Image1<T> disparity;   // 1/meters
};

// Cotangents of a scalar loss with respect to a RenderOutput.
template <typename T>
struct RenderCotangentT {
  Image3<T> d_rgb;
  Image1<T> d_alpha;
  Image1<T> d_disparity;
};

// Cotangents with respect to the MpiFrame fields.
template <typename T>
struct RenderGradientsT {
  Image3<T> d_frontal;
  Image3<T> d_residual;
  PlaneStack<T> d_alphas;
};

using RenderOutput = RenderOutputT<float>;
using RenderCotangent = RenderCotangentT<float>;
using RenderGradients = RenderGradientsT<float>;

// Division guard when normalizing the composited disparity by accumulated alpha.
inline constexpr double kDisparityDivEps = 1e-6;

// Resamples the image at H^-1 * p for each output pixel p, bilinear with
// zero padding outside the source rectangle. Throws SingularHomography.
template <typename T>
Image1<T> warp_plane(const Image1<T>& image, const Mat3& h, int out_width, int out_height);
template <typename T>
Image3<T> warp_plane(const Image3<T>& image, const Mat3& h, int out_width, int out_height);

// Differentiable MPI rendering: for each plane far to near, warp plane color
// and alpha into the target view by the plane-induced homography and
// over-composite rgb, alpha, and per-plane disparity 1/d_i; the disparity
// accumulator is finally divided by max(alpha, kDisparityDivEps).
template <typename T>
RenderOutputT<T> render(const MpiFrameT<T>& frame, const Camera& target);

// Brute-force per-pixel ray/plane-intersection reference with the same
// sampling and compositing semantics; scalar double-precision loops.
template <typename T>
RenderOutputT<T> oracle_render(const MpiFrameT<T>& frame, const Camera& target);

// full = rgb + (1 - alpha) * background (rgb is already premultiplied).
template <typename T>
Image3<T> composite_background(const RenderOutputT<T>& out, const Image3<T>& background);

// Views from two cameras displaced -/+ baseline/2 along the center camera's
// x-axis (left eye first), same orientation and intrinsics.
template <typename T>
std::pair<RenderOutputT<T>, RenderOutputT<T>> render_stereo(const MpiFrameT<T>& frame,
                                                            const Camera& center,
                                                            double baseline);

// Exact vector-Jacobian product of render with respect to frontal, residual,
// and alphas. Deterministic for any thread count.
template <typename T>
RenderGradientsT<T> render_backward(const MpiFrameT<T>& frame, const Camera& target,
                                    const RenderCotangentT<T>& d_out);

}  // namespace mpiv
