#pragma once

#include <Eigen/Dense>

#include "mpiv/common.hpp"

namespace mpiv {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Convention used everywhere: right-handed, camera looks down +z, image origin
// top-left, +u right, +v down, pixel centers at integer coordinates. Poses are
// world-to-camera: X_cam = R·X_world + t.

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  Mat3 matrix() const;       // K
  Mat3 inverse_matrix() const;
};

struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  // Throws InvalidPose unless rotation is orthonormal with det +1 within tol.
  void validate(double tol = 1e-9) const;

  Vec3 to_camera(const Vec3& x_world) const { return rotation * x_world + translation; }
  Vec3 to_world(const Vec3& x_cam) const { return rotation.transpose() * (x_cam - translation); }
  Vec3 center() const { return -(rotation.transpose() * translation); }
};

struct Camera {
  CameraIntrinsics intrinsics;
  CameraPose pose;

  void validate() const {
    intrinsics.validate();
    pose.validate();
  }
};

// Transform mapping src-camera coordinates to dst-camera coordinates.
CameraPose relative_pose(const CameraPose& src, const CameraPose& dst);

// Pinhole projection of a camera-frame point. Throws NonPositiveDepth if z <= 0.
Vec2 project(const Camera& camera, const Vec3& point_cam);

// Camera-frame point on the plane z = depth seen through pixel (u, v).
Vec3 unproject(const Camera& camera, double u, double v, double depth);

// Homography sending homogeneous pixels of the plane {z = depth in mpi_cam's
// frame} from mpi_cam's image to target_cam's image. Normalized so H(2,2) = 1
// when nonzero. Throws DegenerateHomography when target_cam's center lies on
// the plane.
Mat3 plane_homography(const Camera& mpi_cam, const Camera& target_cam, double depth);

// Dehomogenized application of a 3x3 homography to a pixel.
inline Vec2 apply_homography(const Mat3& h, double u, double v) {
  double w = h(2, 0) * u + h(2, 1) * v + h(2, 2);
  return {(h(0, 0) * u + h(0, 1) * v + h(0, 2)) / w,
          (h(1, 0) * u + h(1, 1) * v + h(1, 2)) / w};
}

// Camera displaced by `offset` expressed in the camera's own axes, keeping
// orientation and intrinsics (render_stereo moves along the x-axis this way).
Camera displaced_camera(const Camera& camera, const Vec3& offset);

// Rotation by `radians` about the camera-frame axis (0=x,1=y,2=z) applied to
// the pose, pivoting about a world-space point. Used for novel-view sweeps.
Camera orbited_camera(const Camera& camera, int axis, double radians, const Vec3& pivot_world);

}  // namespace mpiv
