#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mpiv/camera_json.hpp"
#include "mpiv/image_io.hpp"
#include "test_util.hpp"

using namespace mpiv;
using namespace mpiv::test;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit_bytes(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("pfm roundtrips are bit-exact") {
  Rng rng(404);
  const std::string p1 = tmp_path("io_gray.pfm");
  const std::string p3 = tmp_path("io_color.pfm");

  Image1f gray(7, 5);
  for (auto& v : gray.data) v = static_cast<float>(rng.uniform(-3, 3));
  gray.at(0, 0) = -0.0f;
  gray.at(1, 2) = 1e-39f;  // subnormal survives the trip untouched
  write_pfm(gray, p1);
  Image1f gray2 = read_pfm1(p1);
  REQUIRE(gray2.width == 7);
  REQUIRE(gray2.height == 5);
  CHECK(std::memcmp(gray.data.data(), gray2.data.data(), gray.size() * sizeof(float)) == 0);

  Image3f color(4, 6);
  for (auto& v : color.data) v = static_cast<float>(rng.uniform(-2, 2));
  write_pfm(color, p3);
  Image3f color2 = read_pfm3(p3);
  REQUIRE(color2.same_shape(color));
  CHECK(std::memcmp(color.data.data(), color2.data.data(), color.size() * sizeof(float)) == 0);

  std::remove(p1.c_str());
  std::remove(p3.c_str());
}

TEST_CASE("pfm files store rows bottom-up with interleaved color") {
  const std::string path = tmp_path("io_golden.pfm");

  SUBCASE("grayscale row order") {
    Image1f img(2, 2);
    img.at(0, 0) = 1;  // top row
    img.at(0, 1) = 2;
    img.at(1, 0) = 3;  // bottom row
    img.at(1, 1) = 4;
    write_pfm(img, path);

    auto bytes = slurp_bytes(path);
    const std::string header = "Pf\n2 2\n-1.0\n";
    REQUIRE(bytes.size() == header.size() + 4 * sizeof(float));
    CHECK(std::memcmp(bytes.data(), header.data(), header.size()) == 0);
    float payload[4];
    std::memcpy(payload, bytes.data() + header.size(), sizeof payload);
    // Bottom image row is first in the file.
    CHECK(payload[0] == 3);
    CHECK(payload[1] == 4);
    CHECK(payload[2] == 1);
    CHECK(payload[3] == 2);
  }

  SUBCASE("color pixels are interleaved") {
    Image3f img(2, 1);
    img.at(0, 0, 0) = 10;  // r of pixel 0
    img.at(1, 0, 0) = 11;
    img.at(2, 0, 0) = 12;
    img.at(0, 0, 1) = 20;
    img.at(1, 0, 1) = 21;
    img.at(2, 0, 1) = 22;
    write_pfm(img, path);

    auto bytes = slurp_bytes(path);
    const std::string header = "PF\n2 1\n-1.0\n";
    REQUIRE(bytes.size() == header.size() + 6 * sizeof(float));
    CHECK(std::memcmp(bytes.data(), header.data(), header.size()) == 0);
    float payload[6];
    std::memcpy(payload, bytes.data() + header.size(), sizeof payload);
    const float want[6] = {10, 11, 12, 20, 21, 22};
    CHECK(std::memcmp(payload, want, sizeof want) == 0);
  }

  std::remove(path.c_str());
}

TEST_CASE("pfm readers reject what they cannot represent") {
  const std::string path = tmp_path("io_bad.pfm");

  Image3f color(2, 2, 0.5f);
  write_pfm(color, path);
  CHECK_THROWS_AS(read_pfm1(path), BadMagic);

  Image1f gray(2, 2, 0.5f);
  write_pfm(gray, path);
  CHECK_THROWS_AS(read_pfm3(path), BadMagic);

  spit_bytes(path, {'P', '7', '\n', '2', ' ', '2', '\n'});
  CHECK_THROWS_AS(read_pfm1(path), BadMagic);

  {
    std::ofstream out(path, std::ios::binary);
    out << "Pf\n2 2\n1.0\n";
    const float zeros[4] = {};
    out.write(reinterpret_cast<const char*>(zeros), sizeof zeros);
  }
  CHECK_THROWS_AS(read_pfm1(path), UnsupportedVersion);

  {
    std::ofstream out(path, std::ios::binary);
    out << "Pf\n0 2\n-1.0\n";
  }
  CHECK_THROWS_AS(read_pfm1(path), CorruptHeader);

  {
    std::ofstream out(path, std::ios::binary);
    out << "Pf\nx 2\n-1.0\n";
  }
  CHECK_THROWS_AS(read_pfm1(path), CorruptHeader);

  write_pfm(gray, path);
  auto bytes = slurp_bytes(path);
  bytes.resize(bytes.size() - 5);
  spit_bytes(path, bytes);
  CHECK_THROWS_AS(read_pfm1(path), CorruptHeader);

  CHECK_THROWS_AS(read_pfm1(tmp_path("io_does_not_exist.pfm")), IoError);
  std::remove(path.c_str());
}

TEST_CASE("condition maps ride in color pfms with an empty third channel") {
  const std::string path = tmp_path("io_cond.pfm");
  Rng rng(77);
  PlaneStack<float> cond(2, 5, 3);
  for (auto& v : cond.data) v = static_cast<float>(rng.uniform(0, 1));

  write_cond_pfm(cond, path);
  Image3f as_color = read_pfm3(path);
  for (size_t i = 0; i < as_color.plane_size(); ++i) CHECK(as_color.plane(2)[i] == 0.0f);

  PlaneStack<float> back = read_cond_pfm(path);
  REQUIRE(back.same_shape(cond));
  CHECK(std::memcmp(back.data.data(), cond.data.data(), cond.size() * sizeof(float)) == 0);

  PlaneStack<float> three(3, 5, 3);
  CHECK_THROWS_AS(write_cond_pfm(three, path), ShapeMismatch);
  std::remove(path.c_str());
}

TEST_CASE("ppm preview bytes clamp and round half-up") {
  const std::string path = tmp_path("io_preview.ppm");
  Image3f img(2, 1);
  img.at(0, 0, 0) = -3.0f;         // clamps to 0
  img.at(1, 0, 0) = 0.5f / 255;    // rounds up to 1
  img.at(2, 0, 0) = 0.49f / 255;   // rounds down to 0
  img.at(0, 0, 1) = 7.0f;          // clamps to 255
  img.at(1, 0, 1) = 1.0f;
  img.at(2, 0, 1) = 254.5f / 255;  // rounds up to 255
  write_ppm(img, path);

  auto bytes = slurp_bytes(path);
  const std::string header = "P6\n2 1\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(std::memcmp(bytes.data(), header.data(), header.size()) == 0);
  const unsigned char want[6] = {0, 1, 0, 255, 255, 255};
  CHECK(std::memcmp(bytes.data() + header.size(), want, 6) == 0);
  std::remove(path.c_str());
}

TEST_CASE("camera json roundtrips every field exactly") {
  Rng rng(1234);
  const std::string path = tmp_path("io_camera.json");

  for (int trial = 0; trial < 8; ++trial) {
    Camera cam;
    cam.intrinsics = {rng.uniform(50, 900), rng.uniform(50, 900), rng.uniform(0, 63),
                      rng.uniform(0, 47),   64,                   48};
    cam.pose.rotation = random_rotation(rng);
    cam.pose.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));

    Camera back = camera_from_json(camera_to_json(cam));
    CHECK(back.intrinsics.fx == cam.intrinsics.fx);
    CHECK(back.intrinsics.fy == cam.intrinsics.fy);
    CHECK(back.intrinsics.cx == cam.intrinsics.cx);
    CHECK(back.intrinsics.cy == cam.intrinsics.cy);
    CHECK(back.intrinsics.width == cam.intrinsics.width);
    CHECK(back.intrinsics.height == cam.intrinsics.height);
    CHECK(back.pose.rotation == cam.pose.rotation);
    CHECK(back.pose.translation == cam.pose.translation);

    write_camera_json(cam, path);
    Camera from_file = read_camera_json(path);
    CHECK(from_file.pose.rotation == cam.pose.rotation);
  }
  std::remove(path.c_str());
}

TEST_CASE("camera json rejects structural and geometric nonsense") {
  Rng rng(5);
  Camera cam;
  cam.intrinsics = {150, 150, 31.5, 31.5, 64, 64};
  cam.pose.rotation = random_rotation(rng);
  cam.pose.translation = Vec3(0.1, -0.2, 0.3);
  const std::string good = camera_to_json(cam);

  CHECK_THROWS_AS(camera_from_json("not json at all"), ConfigInvalid);
  CHECK_THROWS_AS(camera_from_json("[1,2,3]"), ConfigInvalid);

  auto patched = [&](const char* find, const char* replace) {
    std::string s = good;
    const auto pos = s.find(find);
    REQUIRE(pos != std::string::npos);
    s.replace(pos, std::strlen(find), replace);
    return s;
  };
  CHECK_THROWS_AS(camera_from_json(patched("\"fx\"", "\"focal_x\"")), ConfigInvalid);
  CHECK_THROWS_AS(camera_from_json(patched("\"fx\":", "\"fx\": \"fast\", \"fx2\":")),
                  ConfigInvalid);
  CHECK_THROWS_AS(camera_from_json(patched("\"width\": 64", "\"width\": 64.5")), ConfigInvalid);
  CHECK_THROWS_AS(camera_from_json(patched("\"translation\": [", "\"translation\": [9,")),
                  ConfigInvalid);

  // Structurally valid JSON still has to decode to a legal camera.
  Camera skewed = cam;
  skewed.pose.rotation(0, 0) += 0.5;
  CHECK_THROWS_AS(camera_from_json(camera_to_json(skewed)), InvalidPose);
  Camera negative = cam;
  negative.intrinsics.fx = -10;
  CHECK_THROWS_AS(camera_from_json(camera_to_json(negative)), InvalidRange);

  CHECK_THROWS_AS(read_camera_json(tmp_path("io_missing_camera.json")), IoError);
}

TEST_CASE("camera trajectories parse as bare arrays") {
  Rng rng(6);
  const std::string path = tmp_path("io_trajectory.json");
  std::vector<Camera> cams;
  for (int i = 0; i < 3; ++i) {
    Camera cam;
    cam.intrinsics = {150, 150, 31.5, 31.5, 64, 64};
    cam.pose.rotation = random_rotation(rng);
    cam.pose.translation = Vec3(i * 0.1, 0, 0);
    cams.push_back(cam);
  }
  {
    std::ofstream out(path);
    out << "[" << camera_to_json(cams[0]) << "," << camera_to_json(cams[1]) << ","
        << camera_to_json(cams[2]) << "]";
  }
  auto back = read_camera_trajectory(path);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].pose.rotation == cams[i].pose.rotation);
    CHECK(back[i].pose.translation == cams[i].pose.translation);
  }

  {
    std::ofstream out(path);
    out << camera_to_json(cams[0]);  // an object, not an array
  }
  CHECK_THROWS_AS(read_camera_trajectory(path), ConfigInvalid);
  std::remove(path.c_str());
}
