#include <cmath>
#include <map>

#include "doctest.h"
#include "mpiv/eval.hpp"
#include "mpiv/render.hpp"
#include "mpiv/scenes.hpp"
#include "test_util.hpp"

using namespace mpiv;

namespace {

// Smooth incommensurate-frequency texture: locally distinctive along x (for
// matching) yet stable under bilinear resampling.
Image3f stereo_texture(int w, int h, uint64_t seed) {
  Rng rng(seed);
  double phase[4];
  for (double& p : phase) p = rng.uniform(0, 6.28318);
  Image3f img(w, h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = 0.5 +
                         0.2 * std::sin(0.55 * x + 1.3 * c + phase[0]) *
                             std::sin(0.38 * y - 0.7 * c + phase[1]) +
                         0.15 * std::sin(0.23 * (x + y) + phase[2]) +
                         0.1 * std::sin(0.81 * x - 0.29 * y + c + phase[3]);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.05, 0.95));
      }
  return img;
}

Camera stereo_camera(int size, double focal) {
  Camera cam;
  cam.intrinsics = {focal, focal, (size - 1) / 2.0, (size - 1) / 2.0, size, size};
  return cam;
}

}  // namespace

TEST_CASE("l1 and psnr closed forms") {
  Rng rng(3);
  const int w = 24, h = 18;
  Image3f a(w, h);
  for (auto& v : a.data) v = static_cast<float>(rng.uniform(0.1, 0.85));

  CHECK(metric_l1(a, a) == 0.0f);
  CHECK(metric_psnr(a, a) == 99.0f);

  Image3f b = a;
  for (auto& v : b.data) v += 0.1f;
  CHECK(metric_l1(a, b) == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(metric_psnr(a, b) == doctest::Approx(20.0).epsilon(1e-4));

  Image3f c(w, h);
  for (auto& v : c.data) v = static_cast<float>(rng.uniform(0, 1));
  CHECK(metric_l1(a, c) == metric_l1(c, a));
  CHECK(metric_psnr(a, c) == metric_psnr(c, a));

  CHECK_THROWS_AS(metric_l1(a, Image3f(w - 1, h)), ShapeMismatch);
  CHECK_THROWS_AS(metric_psnr(a, Image3f(w, h + 1)), ShapeMismatch);
}

TEST_CASE("block_match on identical images finds zero disparity") {
  const Image3f img = stereo_texture(48, 32, 5);
  const DisparityMap map = block_match(img, img, 7, 12);
  map.validate();

  int valid_count = 0;
  for (size_t i = 0; i < map.values.size(); ++i)
    if (map.valid.data[i]) {
      CHECK(map.values.data[i] == 0.0f);
      ++valid_count;
    }
  CHECK(valid_count > 200);
  for (int x = 0; x < map.values.width; ++x) {
    CHECK(map.valid.at(0, x) == 0);  // border rows stay invalid
    CHECK(map.values.at(0, x) == -1.0f);
  }
}

TEST_CASE("block_match recovers an integer shift exactly") {
  const int w = 64, h = 32, shift = 5;
  const Image3f left = stereo_texture(w, h, 8);
  Image3f right(w, h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        right.at(c, y, x) = left.at(c, y, std::min(x + shift, w - 1));

  const DisparityMap map = block_match(left, right, 5, 10);
  int valid_count = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w - shift - 2; ++x)  // clamp padding pollutes the right edge
      if (map.valid.at(y, x)) {
        CHECK(map.values.at(y, x) == static_cast<float>(shift));
        ++valid_count;
      }
  CHECK(valid_count > 300);
}

TEST_CASE("block_match rejects nonsense") {
  const Image3f img = stereo_texture(16, 16, 1);
  CHECK_THROWS_AS(block_match(img, Image3f(15, 16), 5, 4), ShapeMismatch);
  CHECK_THROWS_AS(block_match(img, img, 4, 4), InvalidRange);
  CHECK_THROWS_AS(block_match(img, img, -3, 4), InvalidRange);
  CHECK_THROWS_AS(block_match(img, img, 5, -1), InvalidRange);

  // A flat pair has no SAD contrast anywhere.
  const Image3f flat(16, 16, 0.5f);
  const DisparityMap map = block_match(flat, flat, 5, 4);
  for (uint8_t v : map.valid.data) CHECK(v == 0);
}

TEST_CASE("disparity map validation catches corrupted entries") {
  DisparityMap map;
  map.values = Image1f(4, 4, -1.0f);
  map.valid = Image1<uint8_t>(4, 4, 0);
  map.max_disp = 8;
  map.values.at(1, 2) = 3.0f;
  map.valid.at(1, 2) = 1;
  map.validate();

  DisparityMap broken = map;
  broken.values.at(1, 2) = 9.5f;  // above max_disp
  CHECK_THROWS_AS(broken.validate(), InvalidRange);
  broken = map;
  broken.values.at(0, 0) = 0.0f;  // invalid entry must stay -1
  CHECK_THROWS_AS(broken.validate(), InvalidRange);
  broken = map;
  broken.valid = Image1<uint8_t>(3, 4, 0);
  CHECK_THROWS_AS(broken.validate(), ShapeMismatch);
}

TEST_CASE("a single textured plane at one meter yields the textbook disparity") {
  const int size = 128;
  const double focal = 512.0, baseline = 0.05, depth = 1.0;
  MpiFrame frame;
  frame.camera = stereo_camera(size, focal);
  frame.d_near = 1.0;
  frame.d_far = 1.25;  // plane 0 of two sits exactly at z = 1
  frame.frontal = stereo_texture(size, size, 17);
  frame.residual = Image3f(size, size);
  frame.alphas = PlaneStack<float>(2, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) frame.alphas.at(0, y, x) = 1.0f;
  frame.validate();

  const auto [left, right] = render_stereo(frame, frame.camera, baseline);
  const DisparityMap map = block_match(left.rgb, right.rgb, 7, 40);

  std::vector<float> found;
  for (size_t i = 0; i < map.values.size(); ++i)
    if (map.valid.data[i]) found.push_back(map.values.data[i]);
  REQUIRE(found.size() > 1000);
  std::nth_element(found.begin(), found.begin() + found.size() / 2, found.end());
  const double expected = focal * baseline / depth;  // 25.6
  CHECK(std::abs(found[found.size() / 2] - expected) <= 1.0);

  // The renderer's own disparity channel must tell the same story.
  Image1f renderer_px(size, size);
  for (size_t i = 0; i < renderer_px.size(); ++i)
    renderer_px.data[i] = static_cast<float>(focal * baseline * left.disparity.data[i]);
  Image1f mask(size, size);
  for (size_t i = 0; i < mask.size(); ++i) mask.data[i] = map.valid.data[i] ? 1.0f : 0.0f;
  CHECK(median_abs_error(map.values, renderer_px, mask) <= 1.5f);
}

TEST_CASE("two planes produce a bimodal disparity histogram") {
  const int size = 128;
  const double focal = 512.0, baseline = 0.05;
  MpiFrame frame;
  frame.camera = stereo_camera(size, focal);
  frame.d_near = 0.9;
  frame.d_far = 1.1;  // two planes at exactly 0.9 and 1.1
  frame.frontal = stereo_texture(size, size, 23);
  frame.residual = Image3f(size, size);
  frame.alphas = PlaneStack<float>(2, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      frame.alphas.at(1, y, x) = 1.0f;                       // opaque backdrop
      if (x < size / 2 - 8) frame.alphas.at(0, y, x) = 1.0f;  // near slab on the left
    }
  frame.validate();

  const auto [left, right] = render_stereo(frame, frame.camera, baseline);
  const DisparityMap map = block_match(left.rgb, right.rgb, 7, 40);

  std::map<int, int> histogram;
  for (size_t i = 0; i < map.values.size(); ++i)
    if (map.valid.data[i]) ++histogram[static_cast<int>(map.values.data[i])];

  int first_peak = -1, second_peak = -1, first_count = 0, second_count = 0;
  for (const auto& [d, count] : histogram)
    if (count > first_count) {
      first_peak = d;
      first_count = count;
    }
  for (const auto& [d, count] : histogram)
    if (std::abs(d - first_peak) > 2 && count > second_count) {
      second_peak = d;
      second_count = count;
    }
  REQUIRE(first_peak >= 0);
  REQUIRE(second_peak >= 0);
  CHECK(second_count > 300);

  const double near_mode = focal * baseline / 0.9;   // 28.44
  const double far_mode = focal * baseline / 1.1;    // 23.27
  const double lo = std::min(first_peak, second_peak), hi = std::max(first_peak, second_peak);
  CHECK(std::abs(hi - near_mode) <= 1.0);
  CHECK(std::abs(lo - far_mode) <= 1.0);
}

TEST_CASE("block_match agrees with the rasterizer's disparity on synthetic scenes") {
  SyntheticScene scene = generate_scene(61, 2);
  const double baseline = 0.05;
  const Camera center{scene.intrinsics, CameraPose{}};
  const Camera left_cam = displaced_camera(center, Vec3(-baseline / 2, 0, 0));
  const Camera right_cam = displaced_camera(center, Vec3(baseline / 2, 0, 0));

  const LayerRender left = render_layers(scene, CameraPose{}, scene.expression[0], left_cam);
  const LayerRender right = render_layers(scene, CameraPose{}, scene.expression[0], right_cam);
  const DisparityMap map = block_match(left.image, right.image, 5, 12);

  Image1f expected_px(left.image.width, left.image.height);
  Image1f mask(left.image.width, left.image.height);
  for (size_t i = 0; i < expected_px.size(); ++i) {
    expected_px.data[i] =
        static_cast<float>(scene.intrinsics.fx * baseline * left.disparity.data[i]);
    mask.data[i] = map.valid.data[i] && left.matte.data[i] > 0.5f ? 1.0f : 0.0f;
  }
  CHECK(median_abs_error(map.values, expected_px, mask) <= 1.5f);
}

TEST_CASE("median_abs_error basics") {
  Image1f a(3, 1), b(3, 1), mask(3, 1, 1.0f);
  a.at(0, 0) = 1.0f;
  a.at(0, 1) = 2.0f;
  a.at(0, 2) = 5.0f;
  b.at(0, 0) = 1.5f;
  b.at(0, 1) = 2.0f;
  b.at(0, 2) = 1.0f;
  CHECK(median_abs_error(a, b, mask) == 0.5f);
  mask.at(0, 2) = 0.0f;
  CHECK(median_abs_error(a, b, mask) == 0.5f);  // upper median of {0, 0.5}
  CHECK_THROWS_AS(median_abs_error(a, b, Image1f(3, 1, 0.0f)), InvalidRange);
  CHECK_THROWS_AS(median_abs_error(a, b, Image1f(2, 1, 1.0f)), ShapeMismatch);
}
