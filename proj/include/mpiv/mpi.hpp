#pragma once

#include <string>
#include <vector>

#include "mpiv/geometry.hpp"
#include "mpiv/image.hpp"

namespace mpiv {

// One MPI: D fronto-parallel RGBA planes in the frontal camera, equally spaced
// in disparity between d_near and d_far. Plane colors are derived from the
// frontal/residual image pair (see plane_color); plane 0 is the nearest.
template <typename T>
struct MpiFrameT {
  Image3<T> frontal;        // [0,1]
  Image3<T> residual;       // [-1,1]
  PlaneStack<T> alphas;     // D x H x W, [0,1], plane 0 nearest
  double d_near = 0, d_far = 0;
  Camera camera;            // frontal camera

  int planes() const { return alphas.planes; }
  int width() const { return frontal.width; }
  int height() const { return frontal.height; }

  // Throws on any representation invariant violation (shape agreement with the
  // camera, depth ordering, channel bounds).
  void validate() const;
};

template <typename T>
struct MpiVideoT {
  std::vector<MpiFrameT<T>> frames;
  double fps = 30.0;
};

// Per-frame MPI placement: the frontal camera plus the adaptive depth volume.
struct FrameGeometry {
  Camera camera;
  double d_near = 0, d_far = 0;
};

using MpiFrame = MpiFrameT<float>;
using MpiVideo = MpiVideoT<float>;

// Depths d_0..d_{D-1} whose reciprocals interpolate linearly from 1/d_near to
// 1/d_far. Throws InvalidRange unless 0 < d_near < d_far and planes >= 2.
std::vector<double> plane_depths(double d_near, double d_far, int planes);

// Depth volume adapted to head distance r. Throws InvalidRange if r <= 0.15.
std::pair<double, double> adaptive_near_far(double r);

// Color of plane i: clamp(frontal + w_i * residual, 0, 1), w_i = i/(D-1).
// The nearest plane shows the frontal image unchanged.
template <typename T>
Image3<T> plane_color(const MpiFrameT<T>& frame, int i);

// Blend weight of plane i as used by plane_color.
inline double plane_weight(int i, int planes) {
  return static_cast<double>(i) / static_cast<double>(planes - 1);
}

// MPIV container (little-endian): magic "MPIV", u32 version=1, u32 W,H,D,N,
// f32 fps; then N frames, each: f32 d_near, d_far; camera as f32 fx,fy,cx,cy,
// 9x f32 row-major rotation, 3x f32 translation; frontal W*H*3 f32 interleaved
// RGB row-major; residual likewise; alphas D*W*H f32, plane 0 first.
void write_mpiv(const MpiVideo& video, const std::string& path);
MpiVideo read_mpiv(const std::string& path);

}  // namespace mpiv
