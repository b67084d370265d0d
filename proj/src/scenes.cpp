#include "mpiv/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mpiv/camera_json.hpp"
#include "mpiv/image_io.hpp"
#include "mpiv/mpi.hpp"
#include "mpiv/rng.hpp"
#include "mpiv/threading.hpp"

namespace mpiv {
namespace {

constexpr int kSceneSize = 64;
constexpr double kSceneFocal = 150.0;
constexpr double kHeadDistance = 1.0;

// Mouth rectangle in the front layer's UV space; expression dims it.
constexpr double kMouthU0 = 0.35, kMouthU1 = 0.65;
constexpr double kMouthV0 = 0.62, kMouthV1 = 0.80;
constexpr double kMouthGain = 0.6;

uint64_t splitmix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double to_unit(uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

double lattice(uint64_t seed, int64_t ix, int64_t iy) {
  const uint64_t hx = splitmix(seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(ix)));
  return to_unit(splitmix(hx ^ (0xC2B2AE3D27D4EB4Full * static_cast<uint64_t>(iy))));
}

// Seeded value noise: lattice values blended with a smoothstep, so the
// texture is a pure continuous function of (x, y).
double value_noise(uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double v00 = lattice(seed, ix, iy), v10 = lattice(seed, ix + 1, iy);
  const double v01 = lattice(seed, ix, iy + 1), v11 = lattice(seed, ix + 1, iy + 1);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

struct Rgb {
  double r, g, b;
};

Rgb layer_color(const SceneLayer& layer, double u, double v, double expression, bool front) {
  const uint64_t s = layer.texture_seed;
  const double f1 = 3.0 + static_cast<double>(splitmix(s ^ 1) % 4);
  const double f2 = 7.0 + static_cast<double>(splitmix(s ^ 2) % 5);
  double c[3];
  for (int i = 0; i < 3; ++i) {
    const double base = 0.35 + 0.4 * to_unit(splitmix(s ^ static_cast<uint64_t>(10 + i)));
    const double n = 0.65 * value_noise(s ^ static_cast<uint64_t>(20 + i), u * f1, v * f1) +
                     0.35 * value_noise(s ^ static_cast<uint64_t>(30 + i), u * f2, v * f2);
    c[i] = std::clamp(base + 0.7 * (n - 0.5), 0.05, 0.95);
  }
  if (front && u >= kMouthU0 && u <= kMouthU1 && v >= kMouthV0 && v <= kMouthV1) {
    const double dim = 1.0 - kMouthGain * expression;
    for (double& ci : c) ci *= dim;
  }
  return {c[0], c[1], c[2]};
}

// Smooth random walk reflected into [lo, hi], steps clipped to max_step.
std::vector<double> reflected_walk(Rng& rng, int n, double lo, double hi, double sigma,
                                   double max_step) {
  std::vector<double> out(n);
  double x = rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo));
  for (int i = 0; i < n; ++i) {
    out[i] = x;
    x += std::clamp(rng.gaussian() * sigma, -max_step, max_step);
    if (x > hi) x = 2 * hi - x;
    if (x < lo) x = 2 * lo - x;
  }
  return out;
}

}  // namespace

void SyntheticScene::validate() const {
  if (layers.empty()) throw ShapeMismatch("scene: no layers");
  if (expression.size() != poses.size())
    throw ShapeMismatch("scene: expression and pose streams disagree");
  if (expression.empty()) throw ShapeMismatch("scene: no frames");
  if (!(head_distance > 0.15)) throw InvalidRange("scene: head distance too small");
  const auto [d_near, d_far] = adaptive_near_far(head_distance);
  double prev = 0;
  for (const SceneLayer& l : layers) {
    if (!(l.depth > d_near && l.depth < d_far))
      throw InvalidRange("scene: layer depth outside the adaptive MPI volume");
    if (!(l.depth > prev)) throw InvalidRange("scene: layer depths must strictly increase");
    if (!(l.half_width > 0 && l.half_height > 0))
      throw InvalidRange("scene: layer extent must be positive");
    prev = l.depth;
  }
  for (double e : expression)
    if (!(e >= 0 && e <= 1)) throw InvalidRange("scene: expression outside [0,1]");
  intrinsics.validate();
  for (const CameraPose& p : poses) p.validate();
}

SyntheticScene generate_scene(uint64_t seed, int frames) {
  if (frames < 1) throw InvalidRange("generate_scene: frames must be positive");
  Rng rng(seed);
  SyntheticScene scene;
  scene.head_distance = kHeadDistance;
  scene.intrinsics = {kSceneFocal, kSceneFocal, (kSceneSize - 1) / 2.0, (kSceneSize - 1) / 2.0,
                      kSceneSize, kSceneSize};

  const int layer_count = static_cast<int>(rng.uniform_int(2, 4));
  for (int k = 0; k < layer_count; ++k) {
    SceneLayer layer;
    layer.depth = kHeadDistance - 0.12 + 0.14 * (k + rng.uniform(0.2, 0.8)) / layer_count;
    layer.half_width = 0.09 + 0.03 * k + rng.uniform(0.0, 0.015);
    layer.half_height = 0.09 + 0.03 * k + rng.uniform(0.0, 0.015);
    const double wiggle = 0.01 + 0.005 * k;
    layer.center_x = rng.uniform(-wiggle, wiggle);
    layer.center_y = rng.uniform(-wiggle, wiggle);
    layer.texture_seed = rng.next_u64();
    scene.layers.push_back(layer);
  }

  scene.expression = reflected_walk(rng, frames, 0.0, 1.0, 0.08, 0.2);
  const std::vector<double> yaw = reflected_walk(rng, frames, -0.26, 0.26, 0.03, 0.06);
  const std::vector<double> jx = reflected_walk(rng, frames, -0.015, 0.015, 0.003, 0.008);
  const std::vector<double> jy = reflected_walk(rng, frames, -0.015, 0.015, 0.003, 0.008);

  const Camera canonical{scene.intrinsics, CameraPose{}};
  const Vec3 pivot(0, 0, kHeadDistance);
  for (int f = 0; f < frames; ++f) {
    Camera cam = orbited_camera(canonical, 1, yaw[f], pivot);
    cam.pose.translation += Vec3(jx[f], jy[f], 0);
    scene.poses.push_back(cam.pose);
  }
  scene.validate();
  return scene;
}

Camera target_camera(const SyntheticScene& scene, int frame) {
  if (frame < 0 || frame >= scene.frames())
    throw InvalidRange("target_camera: frame index out of range");
  return Camera{scene.intrinsics, scene.poses[frame]};
}

LayerRender render_layers(const SyntheticScene& scene, const CameraPose& head_pose,
                          double expression, const Camera& camera) {
  scene.validate();
  camera.validate();
  head_pose.validate();

  const int w = camera.intrinsics.width, h = camera.intrinsics.height;
  LayerRender out;
  out.image = Image3f(w, h);
  out.matte = Image1f(w, h);
  out.disparity = Image1f(w, h);
  out.cond = PlaneStack<float>(kCondChannels, w, h);

  const Mat3 k_inv = camera.intrinsics.inverse_matrix();
  const Vec3 origin = camera.pose.center();
  const Mat3 cam_rot_t = camera.pose.rotation.transpose();
  const int layer_count = static_cast<int>(scene.layers.size());

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Vec3 dir = cam_rot_t * (k_inv * Vec3(x, y, 1.0));
      // Binary coverage makes far-to-near over-compositing equal to taking
      // the nearest hit, so track the minimum camera depth directly.
      int best = -1;
      double best_z = 0, best_u = 0, best_v = 0;
      for (int k = 0; k < layer_count; ++k) {
        const SceneLayer& layer = scene.layers[k];
        const Vec3 plane_point =
            head_pose.rotation * Vec3(layer.center_x, layer.center_y, layer.depth) +
            head_pose.translation;
        const Vec3 normal = head_pose.rotation * Vec3(0, 0, 1);
        const double denom = normal.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        const double s = normal.dot(plane_point - origin) / denom;
        if (s <= 0) continue;
        const Vec3 hit = origin + s * dir;
        const Vec3 local = head_pose.rotation.transpose() * (hit - head_pose.translation);
        const double u = (local.x() - layer.center_x + layer.half_width) / (2 * layer.half_width);
        const double v =
            (local.y() - layer.center_y + layer.half_height) / (2 * layer.half_height);
        if (u < 0 || u > 1 || v < 0 || v > 1) continue;
        const double z_cam = camera.pose.to_camera(hit).z();
        if (z_cam <= 0) continue;
        if (best < 0 || z_cam < best_z) {
          best = k;
          best_z = z_cam;
          best_u = u;
          best_v = v;
        }
      }
      out.cond.at(1, y, x) = static_cast<float>(expression);
      if (best < 0) continue;
      const Rgb c = layer_color(scene.layers[best], best_u, best_v, expression, best == 0);
      out.image.at(0, y, x) = static_cast<float>(c.r);
      out.image.at(1, y, x) = static_cast<float>(c.g);
      out.image.at(2, y, x) = static_cast<float>(c.b);
      out.matte.at(y, x) = 1.0f;
      out.disparity.at(y, x) = static_cast<float>(1.0 / best_z);
      out.cond.at(0, y, x) = static_cast<float>((best + 0.5 * (best_u + best_v)) / layer_count);
    }
  return out;
}

RenderedSample render_sample(const SyntheticScene& scene, const std::vector<int>& frame_indices,
                             CameraMode mode) {
  if (frame_indices.empty()) throw InvalidRange("render_sample: no frames requested");
  for (int f : frame_indices)
    if (f < 0 || f >= scene.frames()) throw InvalidRange("render_sample: frame index out of range");

  RenderedSample out;
  const Camera reference = target_camera(scene, frame_indices[0]);
  for (int f : frame_indices) {
    const Camera cam = mode == CameraMode::kTarget ? target_camera(scene, f) : reference;
    LayerRender frame = render_layers(scene, CameraPose{}, scene.expression[f], cam);
    out.images.push_back(std::move(frame.image));
    out.mattes.push_back(std::move(frame.matte));
    out.disparities.push_back(std::move(frame.disparity));
    out.conds.push_back(std::move(frame.cond));
    out.cameras.push_back(cam);
  }
  return out;
}

PlaneStack<float> proxy_alpha_planes(const Image1f& disparity, const Image1f& matte, int planes,
                                     double d_near, double d_far) {
  if (planes < 2) throw InvalidRange("proxy_alpha_planes: need at least two planes");
  if (!disparity.same_shape(matte)) throw ShapeMismatch("proxy_alpha_planes: shapes disagree");
  const double disp_near = 1.0 / d_near, disp_far = 1.0 / d_far;
  const double step = (disp_near - disp_far) / (planes - 1);
  PlaneStack<float> out(planes, disparity.width, disparity.height);
  for (int y = 0; y < disparity.height; ++y)
    for (int x = 0; x < disparity.width; ++x) {
      if (matte.at(y, x) <= 0.5f) continue;
      const double idx = (disp_near - disparity.at(y, x)) / step;
      const int plane = std::clamp(static_cast<int>(std::lround(idx)), 0, planes - 1);
      out.at(plane, y, x) = 1.0f;
    }
  return out;
}

TrainSample make_train_sample(const SyntheticScene& scene, int reference_frame, int target_start,
                              int target_count, int planes) {
  if (reference_frame < 0 || reference_frame >= scene.frames())
    throw InvalidRange("make_train_sample: reference frame out of range");
  if (target_count < 1 || target_start < 0 || target_start + target_count > scene.frames())
    throw InvalidRange("make_train_sample: target window out of range");

  std::vector<int> targets(target_count);
  for (int i = 0; i < target_count; ++i) targets[i] = target_start + i;

  TrainSample sample;
  std::tie(sample.d_near, sample.d_far) = adaptive_near_far(scene.head_distance);

  const RenderedSample ref = render_sample(scene, {reference_frame}, CameraMode::kTarget);
  sample.reference_image = ref.images[0];
  sample.reference_cond = ref.conds[0];
  sample.reference_camera = ref.cameras[0];

  RenderedSample tgt = render_sample(scene, targets, CameraMode::kTarget);
  for (int i = 0; i < target_count; ++i) {
    sample.target_proxy_alphas.push_back(proxy_alpha_planes(
        tgt.disparities[i], tgt.mattes[i], planes, sample.d_near, sample.d_far));
  }
  sample.target_images = std::move(tgt.images);
  sample.target_mattes = std::move(tgt.mattes);
  sample.target_proxy_disparity = std::move(tgt.disparities);
  sample.target_cond = std::move(tgt.conds);
  sample.target_cameras = std::move(tgt.cameras);

  std::vector<int> ref_view = {reference_frame};
  ref_view.insert(ref_view.end(), targets.begin(), targets.end());
  RenderedSample refv = render_sample(scene, ref_view, CameraMode::kReference);
  for (int i = 0; i < target_count; ++i) {
    sample.reference_frame_cond.push_back(std::move(refv.conds[i + 1]));
    sample.reference_proxy_alphas.push_back(proxy_alpha_planes(
        refv.disparities[i + 1], refv.mattes[i + 1], planes, sample.d_near, sample.d_far));
  }

  sample.first_frame = sample.target_images[0];
  sample.background = Image3f(scene.intrinsics.width, scene.intrinsics.height);
  sample.validate();
  return sample;
}

DatasetManifest make_dataset(int n_scenes, int frames_per_clip, const std::string& out_dir,
                             uint64_t seed) {
  if (n_scenes < 1) throw InvalidRange("make_dataset: need at least one scene");
  if (frames_per_clip < 1) throw InvalidRange("make_dataset: need at least one frame");

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.frames_per_clip = frames_per_clip;

  Rng meta(seed);
  std::error_code ec;
  for (int i = 0; i < n_scenes; ++i) {
    DatasetClip clip;
    clip.index = i;
    clip.path = "scene_" + std::to_string(i);
    clip.scene_seed = meta.next_u64();
    clip.frames = frames_per_clip;
    clip.reference = static_cast<int>(meta.uniform_int(0, frames_per_clip - 1));
    manifest.clips.push_back(clip);
    std::filesystem::create_directories(std::filesystem::path(out_dir) / clip.path, ec);
    if (ec) throw IoError("make_dataset: cannot create " + clip.path + ": " + ec.message());
  }

  global_pool().parallel_for(0, n_scenes, [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) {
      const DatasetClip& clip = manifest.clips[i];
      const SyntheticScene scene = generate_scene(clip.scene_seed, frames_per_clip);
      std::vector<int> all(frames_per_clip);
      for (int f = 0; f < frames_per_clip; ++f) all[f] = f;
      const RenderedSample sample = render_sample(scene, all, CameraMode::kTarget);
      const std::string base = out_dir + "/" + clip.path + "/frame_";
      for (int f = 0; f < frames_per_clip; ++f) {
        const std::string stem = base + std::to_string(f);
        write_pfm(sample.images[f], stem + ".pfm");
        write_pfm(sample.mattes[f], stem + "_matte.pfm");
        write_pfm(sample.disparities[f], stem + "_disp.pfm");
        write_cond_pfm(sample.conds[f], stem + "_cond.pfm");
        write_camera_json(sample.cameras[f], stem + "_camera.json");
      }
    }
  });

  write_manifest(manifest, out_dir + "/manifest.json");
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  nlohmann::ordered_json clips = nlohmann::ordered_json::array();
  for (const DatasetClip& c : manifest.clips)
    clips.push_back({{"index", c.index},
                     {"path", c.path},
                     {"scene_seed", c.scene_seed},
                     {"frames", c.frames},
                     {"reference", c.reference}});
  const nlohmann::ordered_json doc = {
      {"seed", manifest.seed}, {"frames_per_clip", manifest.frames_per_clip}, {"clips", clips}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("write failed on " + path);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ConfigInvalid("manifest: not a JSON object");
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (key != "seed" && key != "frames_per_clip" && key != "clips")
      throw ConfigInvalid("manifest: unknown key \"" + key + "\"");
  }
  if (!doc.contains("seed") || !doc["seed"].is_number_unsigned())
    throw ConfigInvalid("manifest: seed must be an unsigned integer");
  if (!doc.contains("frames_per_clip") || !doc["frames_per_clip"].is_number_integer())
    throw ConfigInvalid("manifest: frames_per_clip must be an integer");
  if (!doc.contains("clips") || !doc["clips"].is_array())
    throw ConfigInvalid("manifest: clips must be an array");

  DatasetManifest manifest;
  manifest.seed = doc["seed"].get<uint64_t>();
  manifest.frames_per_clip = doc["frames_per_clip"].get<int>();
  for (const auto& entry : doc["clips"]) {
    if (!entry.is_object()) throw ConfigInvalid("manifest: clip entries must be objects");
    for (const char* key : {"index", "path", "scene_seed", "frames", "reference"})
      if (!entry.contains(key))
        throw ConfigInvalid(std::string("manifest: clip missing \"") + key + "\"");
    DatasetClip clip;
    if (!entry["index"].is_number_integer() || !entry["frames"].is_number_integer() ||
        !entry["reference"].is_number_integer() || !entry["scene_seed"].is_number_unsigned() ||
        !entry["path"].is_string())
      throw ConfigInvalid("manifest: clip field has the wrong type");
    clip.index = entry["index"].get<int>();
    clip.path = entry["path"].get<std::string>();
    clip.scene_seed = entry["scene_seed"].get<uint64_t>();
    clip.frames = entry["frames"].get<int>();
    clip.reference = entry["reference"].get<int>();
    manifest.clips.push_back(clip);
  }
  return manifest;
}

}  // namespace mpiv
