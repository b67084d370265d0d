#include "mpiv/geometry.hpp"

#include <cmath>

namespace mpiv {

void CameraIntrinsics::validate() const {
  if (width <= 0 || height <= 0)
    throw InvalidRange("intrinsics: width/height must be positive");
  if (!(fx > 0) || !(fy > 0))
    throw InvalidRange("intrinsics: focal lengths must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
    throw InvalidRange("intrinsics: principal point outside the image");
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Mat3 CameraIntrinsics::inverse_matrix() const {
  Mat3 k;
  k << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
  return k;
}

void CameraPose::validate(double tol) const {
  Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
    throw InvalidPose("pose: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > tol)
    throw InvalidPose("pose: rotation determinant is not +1");
}

CameraPose relative_pose(const CameraPose& src, const CameraPose& dst) {
  CameraPose rel;
  rel.rotation = dst.rotation * src.rotation.transpose();
  rel.translation = dst.translation - rel.rotation * src.translation;
  return rel;
}

Vec2 project(const Camera& camera, const Vec3& point_cam) {
  if (!(point_cam.z() > 0))
    throw NonPositiveDepth("project: point has non-positive depth");
  const auto& in = camera.intrinsics;
  return {in.fx * point_cam.x() / point_cam.z() + in.cx,
          in.fy * point_cam.y() / point_cam.z() + in.cy};
}

Vec3 unproject(const Camera& camera, double u, double v, double depth) {
  const auto& in = camera.intrinsics;
  return {(u - in.cx) / in.fx * depth, (v - in.cy) / in.fy * depth, depth};
}

Mat3 plane_homography(const Camera& mpi_cam, const Camera& target_cam, double depth) {
  if (!(depth > 0)) throw NonPositiveDepth("plane_homography: depth must be positive");
  CameraPose rel = relative_pose(mpi_cam.pose, target_cam.pose);

  // Points of the plane {n.X = depth}, n = (0,0,1), satisfy X_t = R.X_s + t =
  // (R + t.n^T/depth).X_s. The map collapses exactly when the target camera
  // center C = -R^T.t lies on the plane, i.e. det = 1 + (R^T.t).z/depth = 0.
  double axial = (rel.rotation.transpose() * rel.translation).z() / depth;
  if (std::abs(1.0 + axial) <= 1e-12 * std::max(1.0, std::abs(axial)))
    throw DegenerateHomography("plane_homography: target camera lies on the plane");

  Mat3 e = rel.rotation;
  e.col(2) += rel.translation / depth;
  Mat3 h = target_cam.intrinsics.matrix() * e * mpi_cam.intrinsics.inverse_matrix();
  if (h(2, 2) != 0.0) h /= h(2, 2);
  return h;
}

Camera displaced_camera(const Camera& camera, const Vec3& offset) {
  // Center moves by R^T.offset in world space, so t_new = t - offset.
  Camera out = camera;
  out.pose.translation -= offset;
  return out;
}

Camera orbited_camera(const Camera& camera, int axis, double radians, const Vec3& pivot_world) {
  Vec3 unit = Vec3::Zero();
  unit[axis] = 1.0;
  Mat3 rot = Eigen::AngleAxisd(radians, unit).toRotationMatrix();
  Camera out = camera;
  out.pose.rotation = rot * camera.pose.rotation;
  out.pose.translation =
      camera.pose.translation + (camera.pose.rotation - out.pose.rotation) * pivot_world;
  return out;
}

}  // namespace mpiv
