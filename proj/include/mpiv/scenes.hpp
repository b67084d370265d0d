#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpiv/geometry.hpp"
#include "mpiv/image.hpp"
#include "mpiv/train.hpp"

namespace mpiv {

// One textured fronto-parallel rectangle in the canonical head frame, facing
// the canonical camera at the origin.
struct SceneLayer {
  double depth = 0;  // meters along +z from the canonical camera
  double center_x = 0, center_y = 0;
  double half_width = 0, half_height = 0;
  uint64_t texture_seed = 0;
};

// A layered stand-in for a talking head filmed by a static camera: K value-
// noise rectangles at increasing depth around the head distance r, a smooth
// scalar expression stream that modulates a mouth region on the front layer,
// and a per-frame head pose. Poses are stored in camera-relative form (the
// pose a camera must take over the static canonical layers to reproduce the
// frame), which is the same information by relativity.
struct SyntheticScene {
  std::vector<SceneLayer> layers;  // front to back, depths strictly increasing
  std::vector<double> expression;  // e(f) in [0,1]
  std::vector<CameraPose> poses;   // per frame, world-to-camera over canonical layers
  CameraIntrinsics intrinsics;
  double head_distance = 0;  // r

  int frames() const { return static_cast<int>(expression.size()); }
  void validate() const;  // throws InvalidRange / ShapeMismatch
};

// Deterministic in seed. K in [2,4] layers with depths inside the adaptive
// MPI volume (r - 0.15, r + 0.05); expression and yaw follow smooth clipped
// random walks, yaw staying within ~15 degrees either way.
SyntheticScene generate_scene(uint64_t seed, int frames = 32);

// The camera reproducing frame f of the monocular clip.
Camera target_camera(const SyntheticScene& scene, int frame);

// One rasterized frame: over-composited color against a black background, a
// binary layer-coverage matte, the reciprocal camera-frame depth of the
// frontmost hit (0 outside the matte), and the two condition channels
// (front-layer identity folded with its UV coordinates, and the expression).
struct LayerRender {
  Image3f image;
  Image1f matte;
  Image1f disparity;
  PlaneStack<float> cond;
};

// Core rasterizer over the canonical layers rigidly moved by head_pose
// (canonical -> world). Rendering a moved head from a fixed camera and
// rendering the static head from a counter-moved camera agree to
// rasterization precision; production paths always use the identity head
// pose and move the camera.
LayerRender render_layers(const SyntheticScene& scene, const CameraPose& head_pose,
                          double expression, const Camera& camera);

enum class CameraMode {
  kTarget,     // each frame from its own camera: the monocular clip
  kReference,  // every frame from the first requested frame's camera
};

struct RenderedSample {
  std::vector<Image3f> images;
  std::vector<Image1f> mattes;
  std::vector<Image1f> disparities;
  std::vector<PlaneStack<float>> conds;
  std::vector<Camera> cameras;

  int frames() const { return static_cast<int>(images.size()); }
};

// Rasterizes the requested frames. Throws InvalidRange on an out-of-range
// frame index.
RenderedSample render_sample(const SyntheticScene& scene, const std::vector<int>& frame_indices,
                             CameraMode mode);

// Coarse geometry conditioning: each matte pixel turns on the alpha plane
// whose disparity is nearest to the pixel's, everything else stays zero.
PlaneStack<float> proxy_alpha_planes(const Image1f& disparity, const Image1f& matte, int planes,
                                     double d_near, double d_far);

// Assembles one training clip: targets in their own cameras, the reference
// frame's view as conditioning, and per-frame condition/proxy rasterizations
// in the reference camera for the side branch. Proxy disparity is the ground
// truth disparity; the background is black, matching the rasterizer.
TrainSample make_train_sample(const SyntheticScene& scene, int reference_frame, int target_start,
                              int target_count, int planes);

struct DatasetClip {
  int index = 0;
  std::string path;     // directory relative to the manifest
  uint64_t scene_seed = 0;
  int frames = 0;
  int reference = 0;    // uniformly drawn reference frame
};

struct DatasetManifest {
  uint64_t seed = 0;
  int frames_per_clip = 0;
  std::vector<DatasetClip> clips;
};

// Writes scene_{i}/frame_{f}.pfm with _matte/_disp/_cond siblings and a
// camera JSON per frame, plus manifest.json at the root; returns the
// manifest. Scene rasterization parallelizes across clips.
DatasetManifest make_dataset(int n_scenes, int frames_per_clip, const std::string& out_dir,
                             uint64_t seed);

void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);  // throws ConfigInvalid / IoError

}  // namespace mpiv
