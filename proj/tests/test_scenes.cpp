#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mpiv/camera_json.hpp"
#include "mpiv/image_io.hpp"
#include "mpiv/mpi.hpp"
#include "mpiv/scenes.hpp"
#include "test_util.hpp"

using namespace mpiv;

namespace {

bool images_equal(const Image3f& a, const Image3f& b) {
  return a.same_shape(b) && std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

CameraPose yaw_about_head(double radians, const Vec3& pivot) {
  CameraPose pose;
  pose.rotation = Eigen::AngleAxisd(radians, Vec3::UnitY()).toRotationMatrix();
  pose.translation = pivot - pose.rotation * pivot;
  return pose;
}

}  // namespace

TEST_CASE("scene generation is deterministic and varied") {
  const SyntheticScene a = generate_scene(123, 16);
  const SyntheticScene b = generate_scene(123, 16);
  REQUIRE(a.layers.size() == b.layers.size());
  for (size_t k = 0; k < a.layers.size(); ++k) {
    CHECK(a.layers[k].depth == b.layers[k].depth);
    CHECK(a.layers[k].texture_seed == b.layers[k].texture_seed);
    CHECK(a.layers[k].half_width == b.layers[k].half_width);
  }
  CHECK(a.expression == b.expression);
  for (int f = 0; f < 16; ++f) {
    CHECK((a.poses[f].rotation - b.poses[f].rotation).norm() == 0.0);
    CHECK((a.poses[f].translation - b.poses[f].translation).norm() == 0.0);
  }
  const RenderedSample ra = render_sample(a, {0}, CameraMode::kTarget);
  const RenderedSample rb = render_sample(b, {0}, CameraMode::kTarget);
  CHECK(images_equal(ra.images[0], rb.images[0]));

  const SyntheticScene c = generate_scene(124, 16);
  bool seeds_differ = c.layers[0].texture_seed != a.layers[0].texture_seed;
  CHECK(seeds_differ);
  const RenderedSample rc = render_sample(c, {0}, CameraMode::kTarget);
  CHECK(!images_equal(ra.images[0], rc.images[0]));
}

TEST_CASE("generated scenes keep their invariants across 100 seeds") {
  std::set<int> layer_counts;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const SyntheticScene scene = generate_scene(seed, 8);
    scene.validate();
    layer_counts.insert(static_cast<int>(scene.layers.size()));
    const auto [d_near, d_far] = adaptive_near_far(scene.head_distance);
    for (size_t k = 0; k < scene.layers.size(); ++k) {
      CHECK(scene.layers[k].depth > d_near);
      CHECK(scene.layers[k].depth < d_far);
      if (k > 0) CHECK(scene.layers[k].depth > scene.layers[k - 1].depth);
    }
    for (size_t f = 1; f < scene.expression.size(); ++f)
      CHECK(std::abs(scene.expression[f] - scene.expression[f - 1]) <= 0.2 + 1e-12);
  }
  for (int k : layer_counts) {
    CHECK(k >= 2);
    CHECK(k <= 4);
  }
  CHECK(layer_counts.size() == 3);  // all of 2, 3, 4 appear over 100 draws
}

TEST_CASE("zero expression and identity pose give a static video") {
  SyntheticScene scene = generate_scene(7, 6);
  std::fill(scene.expression.begin(), scene.expression.end(), 0.0);
  std::fill(scene.poses.begin(), scene.poses.end(), CameraPose{});
  const RenderedSample video = render_sample(scene, {0, 1, 2, 3}, CameraMode::kTarget);
  for (int f = 1; f < 4; ++f) {
    CHECK(images_equal(video.images[0], video.images[f]));
    CHECK(max_abs_diff(video.disparities[0].data, video.disparities[f].data) == 0.0f);
  }
}

TEST_CASE("ground truth disparity is the reciprocal frontmost depth") {
  SUBCASE("single layer") {
    SyntheticScene scene = generate_scene(9, 2);
    scene.layers.resize(1);
    scene.layers[0].depth = 0.95;
    std::fill(scene.poses.begin(), scene.poses.end(), CameraPose{});
    const RenderedSample r = render_sample(scene, {0}, CameraMode::kTarget);
    const float expected = static_cast<float>(1.0 / 0.95);
    int fg = 0, bg = 0;
    for (size_t i = 0; i < r.mattes[0].size(); ++i) {
      if (r.mattes[0].data[i] == 1.0f) {
        CHECK(r.disparities[0].data[i] == expected);
        ++fg;
      } else {
        CHECK(r.disparities[0].data[i] == 0.0f);
        ++bg;
      }
    }
    CHECK(fg > 100);
    CHECK(bg > 100);
  }

  SUBCASE("multiple layers cover the frame with their own depths") {
    SyntheticScene scene = generate_scene(11, 2);
    std::fill(scene.poses.begin(), scene.poses.end(), CameraPose{});
    std::set<float> allowed;
    for (const SceneLayer& l : scene.layers)
      allowed.insert(static_cast<float>(1.0 / l.depth));
    const RenderedSample r = render_sample(scene, {0}, CameraMode::kTarget);
    std::set<float> seen;
    for (size_t i = 0; i < r.mattes[0].size(); ++i)
      if (r.mattes[0].data[i] == 1.0f) {
        CHECK(allowed.count(r.disparities[0].data[i]) == 1);
        seen.insert(r.disparities[0].data[i]);
      }
    CHECK(seen.count(*allowed.rbegin()) == 1);  // the front layer is visible
  }
}

TEST_CASE("moving the head equals counter-moving the camera") {
  const SyntheticScene scene = generate_scene(33, 4);
  const Camera camera{scene.intrinsics, CameraPose{}};
  const Vec3 pivot(0, 0, scene.head_distance);

  for (double angle : {-0.2, 0.1, 0.25}) {
    CameraPose head = yaw_about_head(angle, pivot);
    head.translation += Vec3(0.008, -0.004, 0.002);

    // x_cam = C(H(p)) folds into one world-to-camera pose over static layers.
    Camera moved = camera;
    moved.pose.rotation = camera.pose.rotation * head.rotation;
    moved.pose.translation = camera.pose.rotation * head.translation + camera.pose.translation;

    const LayerRender posed = render_layers(scene, head, scene.expression[0], camera);
    const LayerRender fused = render_layers(scene, CameraPose{}, scene.expression[0], moved);
    CHECK(max_abs_diff(posed.image.data, fused.image.data) <= 1e-6f);
    CHECK(max_abs_diff(posed.matte.data, fused.matte.data) <= 1e-6f);
    CHECK(max_abs_diff(posed.disparity.data, fused.disparity.data) <= 1e-6f);
    CHECK(max_abs_diff(posed.cond.data, fused.cond.data) <= 1e-6f);
  }
}

TEST_CASE("expression dims the mouth region only") {
  const SyntheticScene scene = generate_scene(21, 2);
  const Camera camera{scene.intrinsics, CameraPose{}};
  const LayerRender closed = render_layers(scene, CameraPose{}, 0.0, camera);
  const LayerRender open = render_layers(scene, CameraPose{}, 1.0, camera);

  int dimmed = 0;
  for (int y = 0; y < closed.image.height; ++y)
    for (int x = 0; x < closed.image.width; ++x) {
      bool changed = false;
      for (int c = 0; c < 3; ++c)
        changed |= std::abs(open.image.at(c, y, x) - closed.image.at(c, y, x)) > 1e-7f;
      if (!changed) continue;
      ++dimmed;
      for (int c = 0; c < 3; ++c)
        CHECK(open.image.at(c, y, x) ==
              doctest::Approx(0.4f * closed.image.at(c, y, x)).epsilon(1e-5));
    }
  CHECK(dimmed >= 10);

  for (size_t i = 0; i < closed.cond.plane_size(); ++i) {
    CHECK(closed.cond.plane(1)[i] == 0.0f);
    CHECK(open.cond.plane(1)[i] == 1.0f);
    CHECK(closed.cond.plane(0)[i] >= 0.0f);
    CHECK(closed.cond.plane(0)[i] <= 1.0f);
  }
}

TEST_CASE("render_sample camera modes") {
  const SyntheticScene scene = generate_scene(55, 12);
  const std::vector<int> indices = {2, 5, 9};

  const RenderedSample target = render_sample(scene, indices, CameraMode::kTarget);
  for (size_t j = 0; j < indices.size(); ++j) {
    CHECK((target.cameras[j].pose.rotation - scene.poses[indices[j]].rotation).norm() == 0.0);
    CHECK((target.cameras[j].pose.translation - scene.poses[indices[j]].translation).norm() ==
          0.0);
  }

  const RenderedSample reference = render_sample(scene, indices, CameraMode::kReference);
  for (size_t j = 0; j < indices.size(); ++j)
    CHECK((reference.cameras[j].pose.rotation - scene.poses[2].rotation).norm() == 0.0);
  CHECK(images_equal(reference.images[0], target.images[0]));
  CHECK(!images_equal(reference.images[1], target.images[1]));

  CHECK_THROWS_AS(render_sample(scene, {12}, CameraMode::kTarget), InvalidRange);
  CHECK_THROWS_AS(render_sample(scene, {}, CameraMode::kTarget), InvalidRange);
}

TEST_CASE("proxy alpha planes snap matte pixels to the nearest disparity plane") {
  const int planes = 5;
  const double d_near = 0.85, d_far = 1.05;
  Image1f disp(3, 1), matte(3, 1, 1.0f);
  disp.at(0, 0) = static_cast<float>(1.0 / d_near);
  disp.at(0, 1) = static_cast<float>(1.0 / d_far);
  disp.at(0, 2) = static_cast<float>(1.0 / d_near - 0.9 * (1.0 / d_near - 1.0 / d_far) / 4.0);
  matte.at(0, 1) = 0.0f;

  const PlaneStack<float> proxy = proxy_alpha_planes(disp, matte, planes, d_near, d_far);
  CHECK(proxy.at(0, 0, 0) == 1.0f);
  for (int p = 1; p < planes; ++p) CHECK(proxy.at(p, 0, 0) == 0.0f);
  for (int p = 0; p < planes; ++p) CHECK(proxy.at(p, 0, 1) == 0.0f);  // matte off
  CHECK(proxy.at(1, 0, 2) == 1.0f);  // 0.9 plane-steps from the front rounds to plane 1

  CHECK_THROWS_AS(proxy_alpha_planes(disp, Image1f(2, 1), planes, d_near, d_far), ShapeMismatch);
  CHECK_THROWS_AS(proxy_alpha_planes(disp, matte, 1, d_near, d_far), InvalidRange);
}

TEST_CASE("make_train_sample assembles a consistent clip") {
  const SyntheticScene scene = generate_scene(77, 16);
  const int planes = 6;
  const TrainSample sample = make_train_sample(scene, 3, 6, 4, planes);
  sample.validate();

  CHECK(sample.frames() == 4);
  CHECK((sample.reference_camera.pose.rotation - scene.poses[3].rotation).norm() == 0.0);
  for (int i = 0; i < 4; ++i) {
    CHECK((sample.target_cameras[i].pose.rotation - scene.poses[6 + i].rotation).norm() == 0.0);
    CHECK(sample.reference_frame_cond[i].at(1, 0, 0) ==
          static_cast<float>(scene.expression[6 + i]));
    CHECK(sample.target_proxy_alphas[i].planes == planes);
    CHECK(sample.reference_proxy_alphas[i].planes == planes);
  }
  CHECK(images_equal(sample.first_frame, sample.target_images[0]));
  const auto [d_near, d_far] = adaptive_near_far(scene.head_distance);
  CHECK(sample.d_near == d_near);
  CHECK(sample.d_far == d_far);
  for (float v : sample.background.data) CHECK(v == 0.0f);

  CHECK_THROWS_AS(make_train_sample(scene, 16, 0, 4, planes), InvalidRange);
  CHECK_THROWS_AS(make_train_sample(scene, 0, 14, 4, planes), InvalidRange);

  // The assembled clip drives the trainer directly.
  Trainer trainer({planes, 8, 10}, TrainConfig{});
  Rng rng(1);
  trainer.init_params(rng);
  const StepReport report = trainer.bootstrap_step(sample, rng);
  CHECK(std::isfinite(report.loss_total));
}

TEST_CASE("make_dataset writes a loadable deterministic corpus") {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "mpiv_dataset_test";
  fs::remove_all(root);

  const DatasetManifest manifest = make_dataset(2, 3, root.string(), 99);
  REQUIRE(manifest.clips.size() == 2);
  CHECK(manifest.seed == 99);
  CHECK(manifest.frames_per_clip == 3);
  for (const DatasetClip& clip : manifest.clips) {
    CHECK(clip.reference >= 0);
    CHECK(clip.reference < 3);
    for (int f = 0; f < 3; ++f) {
      const fs::path stem = root / clip.path / ("frame_" + std::to_string(f));
      for (const char* suffix : {".pfm", "_matte.pfm", "_disp.pfm", "_cond.pfm", "_camera.json"})
        CHECK(fs::exists(fs::path(stem.string() + suffix)));
    }
  }

  const DatasetManifest loaded = read_manifest((root / "manifest.json").string());
  CHECK(loaded.seed == manifest.seed);
  CHECK(loaded.frames_per_clip == manifest.frames_per_clip);
  REQUIRE(loaded.clips.size() == manifest.clips.size());
  for (size_t i = 0; i < loaded.clips.size(); ++i) {
    CHECK(loaded.clips[i].scene_seed == manifest.clips[i].scene_seed);
    CHECK(loaded.clips[i].reference == manifest.clips[i].reference);
    CHECK(loaded.clips[i].path == manifest.clips[i].path);
  }

  // Files hold exactly what the in-memory pipeline renders.
  const SyntheticScene scene = generate_scene(manifest.clips[0].scene_seed, 3);
  const RenderedSample rendered = render_sample(scene, {0, 1, 2}, CameraMode::kTarget);
  const Image3f round = read_pfm3((root / "scene_0" / "frame_1.pfm").string());
  CHECK(images_equal(round, rendered.images[1]));
  const Camera cam = read_camera_json((root / "scene_0" / "frame_1_camera.json").string());
  CHECK((cam.pose.rotation - rendered.cameras[1].pose.rotation).norm() == 0.0);

  const fs::path second = fs::temp_directory_path() / "mpiv_dataset_test_b";
  fs::remove_all(second);
  const DatasetManifest again = make_dataset(2, 3, second.string(), 99);
  for (size_t i = 0; i < again.clips.size(); ++i) {
    CHECK(again.clips[i].scene_seed == manifest.clips[i].scene_seed);
    CHECK(again.clips[i].reference == manifest.clips[i].reference);
  }
  const Image3f other = read_pfm3((second / "scene_0" / "frame_1.pfm").string());
  CHECK(images_equal(other, round));

  CHECK_THROWS_AS(read_manifest((root / "nope.json").string()), IoError);
  {
    std::ofstream bad(root / "bad.json");
    bad << "{\"seed\": 1, \"frames_per_clip\": 2, \"clips\": [], \"extra\": 0}";
  }
  CHECK_THROWS_AS(read_manifest((root / "bad.json").string()), ConfigInvalid);

  fs::remove_all(root);
  fs::remove_all(second);
}
