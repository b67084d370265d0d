#include <cstring>
#include <limits>

#include "binary_io.hpp"
#include "mpiv/mpi.hpp"

namespace mpiv {

namespace {

using binio::Reader;
using binio::Writer;

void write_camera(Writer& w, const Camera& cam) {
  w.f32(static_cast<float>(cam.intrinsics.fx));
  w.f32(static_cast<float>(cam.intrinsics.fy));
  w.f32(static_cast<float>(cam.intrinsics.cx));
  w.f32(static_cast<float>(cam.intrinsics.cy));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(cam.pose.rotation(r, c)));
  for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(cam.pose.translation[i]));
}

Camera read_camera(Reader& r, int width, int height) {
  Camera cam;
  cam.intrinsics.fx = r.f32();
  cam.intrinsics.fy = r.f32();
  cam.intrinsics.cx = r.f32();
  cam.intrinsics.cy = r.f32();
  cam.intrinsics.width = width;
  cam.intrinsics.height = height;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) cam.pose.rotation(i, c) = r.f32();
  for (int i = 0; i < 3; ++i) cam.pose.translation[i] = r.f32();
  return cam;
}

// File stores interleaved RGB; memory is planar.
void write_interleaved(Writer& w, const Image3f& img) {
  size_t n = img.plane_size();
  std::vector<float> row(img.data.size());
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) row[i * 3 + c] = img.data[c * n + i];
  w.bytes(row.data(), row.size() * 4);
}

Image3f read_interleaved(Reader& r, int width, int height) {
  Image3f img(width, height);
  size_t n = img.plane_size();
  std::vector<float> row(img.data.size());
  r.bytes(row.data(), row.size() * 4);
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) img.data[c * n + i] = row[i * 3 + c];
  return img;
}

constexpr uint32_t kMpivVersion = 1;

}  // namespace

void write_mpiv(const MpiVideo& video, const std::string& path) {
  if (video.frames.empty()) throw InvalidRange("write_mpiv: empty video");
  const MpiFrame& f0 = video.frames.front();
  for (const auto& f : video.frames)
    if (f.width() != f0.width() || f.height() != f0.height() || f.planes() != f0.planes())
      throw ShapeMismatch("write_mpiv: frames disagree in H/W/D");

  Writer w(path);
  w.bytes("MPIV", 4);
  w.u32(kMpivVersion);
  w.u32(static_cast<uint32_t>(f0.width()));
  w.u32(static_cast<uint32_t>(f0.height()));
  w.u32(static_cast<uint32_t>(f0.planes()));
  w.u32(static_cast<uint32_t>(video.frames.size()));
  w.f32(static_cast<float>(video.fps));
  for (const auto& f : video.frames) {
    w.f32(static_cast<float>(f.d_near));
    w.f32(static_cast<float>(f.d_far));
    write_camera(w, f.camera);
    write_interleaved(w, f.frontal);
    write_interleaved(w, f.residual);
    w.bytes(f.alphas.data.data(), f.alphas.data.size() * 4);
  }
}

MpiVideo read_mpiv(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MPIV", 4) != 0) throw BadMagic("not an MPIV file");
  uint32_t version = r.u32();
  if (version != kMpivVersion)
    throw UnsupportedVersion("MPIV version " + std::to_string(version));
  uint32_t w = r.u32(), h = r.u32(), d = r.u32(), n = r.u32();
  if (w == 0 || h == 0 || w > 65536 || h > 65536 || d < 2 || d > 4096 || n == 0 ||
      n > 1000000)
    throw CorruptHeader("implausible MPIV dimensions");
  MpiVideo video;
  video.fps = r.f32();
  video.frames.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    MpiFrame f;
    f.d_near = r.f32();
    f.d_far = r.f32();
    f.camera = read_camera(r, static_cast<int>(w), static_cast<int>(h));
    f.frontal = read_interleaved(r, static_cast<int>(w), static_cast<int>(h));
    f.residual = read_interleaved(r, static_cast<int>(w), static_cast<int>(h));
    f.alphas = PlaneStack<float>(static_cast<int>(d), static_cast<int>(w), static_cast<int>(h));
    r.bytes(f.alphas.data.data(), f.alphas.data.size() * 4);
    video.frames.push_back(std::move(f));
  }
  return video;
}

}  // namespace mpiv
