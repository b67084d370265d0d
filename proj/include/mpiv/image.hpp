#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mpiv/common.hpp"

namespace mpiv {

// Dense row-major single-channel image.
template <typename T>
struct Image1 {
  int width = 0, height = 0;
  std::vector<T> data;

  Image1() = default;
  Image1(int w, int h, T fill = T(0)) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  T& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  const T& at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
  T* row(int y) { return data.data() + static_cast<size_t>(y) * width; }
  const T* row(int y) const { return data.data() + static_cast<size_t>(y) * width; }
  size_t size() const { return data.size(); }
  bool same_shape(const Image1& o) const { return width == o.width && height == o.height; }
};

// Planar three-channel image: channel c occupies data[c*W*H .. (c+1)*W*H).
// Planar layout keeps the warp inner loops free of strided loads.
template <typename T>
struct Image3 {
  int width = 0, height = 0;
  std::vector<T> data;

  Image3() = default;
  Image3(int w, int h, T fill = T(0)) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

  size_t plane_size() const { return static_cast<size_t>(width) * height; }
  T* plane(int c) { return data.data() + c * plane_size(); }
  const T* plane(int c) const { return data.data() + c * plane_size(); }
  T& at(int c, int y, int x) { return plane(c)[static_cast<size_t>(y) * width + x]; }
  const T& at(int c, int y, int x) const { return plane(c)[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return data.size(); }
  bool same_shape(const Image3& o) const { return width == o.width && height == o.height; }
};

// Stack of single-channel planes sharing one spatial size. Used for MPI alpha
// planes (plane 0 = nearest) and for feature maps inside the denoiser.
template <typename T>
struct PlaneStack {
  int planes = 0, width = 0, height = 0;
  std::vector<T> data;

  PlaneStack() = default;
  PlaneStack(int p, int w, int h, T fill = T(0))
      : planes(p), width(w), height(h), data(static_cast<size_t>(p) * w * h, fill) {}

  size_t plane_size() const { return static_cast<size_t>(width) * height; }
  T* plane(int p) { return data.data() + p * plane_size(); }
  const T* plane(int p) const { return data.data() + p * plane_size(); }
  T& at(int p, int y, int x) { return plane(p)[static_cast<size_t>(y) * width + x]; }
  const T& at(int p, int y, int x) const { return plane(p)[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return data.size(); }
  bool same_shape(const PlaneStack& o) const {
    return planes == o.planes && width == o.width && height == o.height;
  }
};

template <typename T>
using Video3 = std::vector<Image3<T>>;

using Image1f = Image1<float>;
using Image3f = Image3<float>;
using Image1d = Image1<double>;
using Image3d = Image3<double>;

}  // namespace mpiv
