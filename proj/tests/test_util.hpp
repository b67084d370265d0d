#pragma once

#include <cmath>

#include "mpiv/geometry.hpp"
#include "mpiv/model.hpp"
#include "mpiv/mpi.hpp"
#include "mpiv/rng.hpp"

namespace mpiv::test {

// Orthonormal rotation from a random unit quaternion.
inline Mat3 random_rotation(Rng& rng) {
  double q[4];
  double norm = 0;
  for (double& v : q) {
    v = rng.gaussian();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : q) v /= norm;
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

// Small rotation (within max_angle radians about a random axis).
inline Mat3 small_rotation(Rng& rng, double max_angle) {
  Vec3 axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
  axis.normalize();
  return Eigen::AngleAxisd(rng.uniform(-max_angle, max_angle), axis).toRotationMatrix();
}

inline CameraPose random_pose(Rng& rng) {
  CameraPose p;
  p.rotation = random_rotation(rng);
  p.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  return p;
}

// Camera looking roughly down +z from near the origin, as used by MPI scenes.
inline Camera nearby_camera(Rng& rng, int width, int height, double max_angle_deg = 5.0) {
  Camera cam;
  cam.intrinsics.width = width;
  cam.intrinsics.height = height;
  cam.intrinsics.fx = rng.uniform(0.8, 1.6) * width;
  cam.intrinsics.fy = cam.intrinsics.fx * rng.uniform(0.95, 1.05);
  cam.intrinsics.cx = (width - 1) / 2.0 + rng.uniform(-2, 2);
  cam.intrinsics.cy = (height - 1) / 2.0 + rng.uniform(-2, 2);
  cam.pose.rotation = small_rotation(rng, max_angle_deg * M_PI / 180.0);
  cam.pose.translation =
      Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
  return cam;
}

template <typename T>
Video3<T> random_video(Rng& rng, int width, int height, int frames, double lo = -1,
                       double hi = 1) {
  Video3<T> v(frames, Image3<T>(width, height));
  for (auto& img : v)
    for (auto& x : img.data) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

template <typename T>
ConditionBundleT<T> random_bundle(Rng& rng, int width, int height, int planes, int frames,
                                  bool with_first_frame = true) {
  ConditionBundleT<T> b;
  b.reference_image = Image3<T>(width, height);
  b.reference_cond = PlaneStack<T>(kCondChannels, width, height);
  for (auto& v : b.reference_image.data) v = static_cast<T>(rng.uniform(0, 1));
  for (auto& v : b.reference_cond.data) v = static_cast<T>(rng.uniform(0, 1));
  for (int f = 0; f < frames; ++f) {
    PlaneStack<T> c(kCondChannels, width, height);
    PlaneStack<T> a(planes, width, height);
    for (auto& v : c.data) v = static_cast<T>(rng.uniform(0, 1));
    for (auto& v : a.data) v = static_cast<T>(rng.uniform(0, 1));
    b.frame_cond.push_back(std::move(c));
    b.proxy_alphas.push_back(std::move(a));
  }
  if (with_first_frame) {
    b.first_frame = Image3<T>(width, height);
    for (auto& v : b.first_frame.data) v = static_cast<T>(rng.uniform(0, 1));
    b.has_first_frame = true;
  }
  return b;
}

template <typename T>
MpiFrameT<T> random_mpi_frame(Rng& rng, int width, int height, int planes,
                              double d_near = 0.85, double d_far = 1.05) {
  MpiFrameT<T> f;
  f.camera.intrinsics = {1.2 * width, 1.2 * width, (width - 1) / 2.0, (height - 1) / 2.0,
                         width, height};
  f.d_near = d_near;
  f.d_far = d_far;
  f.frontal = Image3<T>(width, height);
  f.residual = Image3<T>(width, height);
  f.alphas = PlaneStack<T>(planes, width, height);
  for (auto& v : f.frontal.data) v = static_cast<T>(rng.uniform(0.05, 0.95));
  for (auto& v : f.residual.data) v = static_cast<T>(rng.uniform(-0.9, 0.9));
  for (auto& v : f.alphas.data) v = static_cast<T>(rng.uniform(0.0, 1.0));
  return f;
}

}  // namespace mpiv::test
