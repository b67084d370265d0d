#pragma once

#include <string>
#include <vector>

#include "mpiv/geometry.hpp"

namespace mpiv {

// Cameras travel between tools as flat JSON objects with exactly these keys:
//   fx, fy, cx, cy  numbers
//   width, height   integers
//   rotation        nine numbers, row-major world-to-camera
//   translation     three numbers
// Missing, extra, or mistyped keys raise ConfigInvalid; the decoded camera is
// then validated (InvalidRange for the intrinsics, InvalidPose for the pose).
std::string camera_to_json(const Camera& camera);
Camera camera_from_json(const std::string& text);

void write_camera_json(const Camera& camera, const std::string& path);
Camera read_camera_json(const std::string& path);

// A trajectory file is a bare JSON array of camera objects.
std::vector<Camera> read_camera_trajectory(const std::string& path);

}  // namespace mpiv
