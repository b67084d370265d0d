#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <vector>

#include "binary_io.hpp"
#include "mpiv/image_io.hpp"

namespace mpiv {

namespace {

void write_pfm_header(binio::Writer& w, const char* magic, int width, int height) {
  char header[64];
  const int len = std::snprintf(header, sizeof header, "%s\n%d %d\n-1.0\n", magic, width, height);
  w.bytes(header, static_cast<size_t>(len));
}

// PFM rows are stored bottom-up; ours are top-down.
template <typename WriteRow>
void write_rows_flipped(int height, WriteRow&& write_row) {
  for (int y = height - 1; y >= 0; --y) write_row(y);
}

struct PfmHeader {
  bool color = false;
  int width = 0, height = 0;
};

PfmHeader read_pfm_header(binio::Reader& r) {
  char magic[2];
  r.bytes(magic, 2);
  if (magic[0] != 'P' || (magic[1] != 'F' && magic[1] != 'f'))
    throw BadMagic("not a PFM file");
  PfmHeader h;
  h.color = magic[1] == 'F';

  auto token = [&] {
    std::string s;
    char c;
    do {
      r.bytes(&c, 1);
    } while (c == ' ' || c == '\n' || c == '\r' || c == '\t');
    while (c != ' ' && c != '\n' && c != '\r' && c != '\t') {
      s.push_back(c);
      r.bytes(&c, 1);
    }
    return s;
  };
  try {
    h.width = std::stoi(token());
    h.height = std::stoi(token());
    const double scale = std::stod(token());
    if (scale > 0) throw UnsupportedVersion("big-endian PFM");
    if (scale == 0) throw CorruptHeader("PFM scale is zero");
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw CorruptHeader("malformed PFM header");
  }
  if (h.width < 1 || h.height < 1 || h.width > 65536 || h.height > 65536)
    throw CorruptHeader("implausible PFM dimensions");
  return h;
}

}  // namespace

void write_pfm(const Image1f& image, const std::string& path) {
  if (image.width < 1 || image.height < 1) throw ShapeMismatch("write_pfm: empty image");
  binio::Writer w(path);
  write_pfm_header(w, "Pf", image.width, image.height);
  write_rows_flipped(image.height,
                     [&](int y) { w.bytes(image.row(y), sizeof(float) * image.width); });
}

void write_pfm(const Image3f& image, const std::string& path) {
  if (image.width < 1 || image.height < 1) throw ShapeMismatch("write_pfm: empty image");
  binio::Writer w(path);
  write_pfm_header(w, "PF", image.width, image.height);
  std::vector<float> row(static_cast<size_t>(image.width) * 3);
  write_rows_flipped(image.height, [&](int y) {
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) row[x * 3 + c] = image.at(c, y, x);
    w.bytes(row.data(), sizeof(float) * row.size());
  });
}

Image1f read_pfm1(const std::string& path) {
  binio::Reader r(path);
  const PfmHeader h = read_pfm_header(r);
  if (h.color) throw BadMagic("expected a grayscale PFM: " + path);
  Image1f image(h.width, h.height);
  for (int y = h.height - 1; y >= 0; --y) r.bytes(image.row(y), sizeof(float) * h.width);
  return image;
}

Image3f read_pfm3(const std::string& path) {
  binio::Reader r(path);
  const PfmHeader h = read_pfm_header(r);
  if (!h.color) throw BadMagic("expected a color PFM: " + path);
  Image3f image(h.width, h.height);
  std::vector<float> row(static_cast<size_t>(h.width) * 3);
  for (int y = h.height - 1; y >= 0; --y) {
    r.bytes(row.data(), sizeof(float) * row.size());
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = row[x * 3 + c];
  }
  return image;
}

void write_cond_pfm(const PlaneStack<float>& cond, const std::string& path) {
  if (cond.planes != 2) throw ShapeMismatch("write_cond_pfm: expected 2 channels");
  Image3f image(cond.width, cond.height);
  std::copy(cond.plane(0), cond.plane(0) + cond.plane_size(), image.plane(0));
  std::copy(cond.plane(1), cond.plane(1) + cond.plane_size(), image.plane(1));
  write_pfm(image, path);
}

PlaneStack<float> read_cond_pfm(const std::string& path) {
  const Image3f image = read_pfm3(path);
  PlaneStack<float> cond(2, image.width, image.height);
  std::copy(image.plane(0), image.plane(0) + image.plane_size(), cond.plane(0));
  std::copy(image.plane(1), image.plane(1) + image.plane_size(), cond.plane(1));
  return cond;
}

void write_ppm(const Image3f& image, const std::string& path) {
  if (image.width < 1 || image.height < 1) throw ShapeMismatch("write_ppm: empty image");
  binio::Writer w(path);
  char header[64];
  const int len =
      std::snprintf(header, sizeof header, "P6\n%d %d\n255\n", image.width, image.height);
  w.bytes(header, static_cast<size_t>(len));
  std::vector<uint8_t> row(static_cast<size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[x * 3 + c] = static_cast<uint8_t>(std::floor(v * 255.0f + 0.5f));
      }
    w.bytes(row.data(), row.size());
  }
}

}  // namespace mpiv
