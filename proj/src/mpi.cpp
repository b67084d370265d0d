#include "mpiv/mpi.hpp"

#include <algorithm>
#include <cmath>

namespace mpiv {

template <typename T>
void MpiFrameT<T>::validate() const {
  if (!(d_near > 0) || !(d_near < d_far))
    throw InvalidRange("MpiFrame: requires 0 < d_near < d_far");
  if (alphas.planes < 2) throw InvalidRange("MpiFrame: needs at least 2 planes");
  camera.validate();
  int w = camera.intrinsics.width, h = camera.intrinsics.height;
  if (frontal.width != w || frontal.height != h || !frontal.same_shape(residual) ||
      alphas.width != w || alphas.height != h)
    throw ShapeMismatch("MpiFrame: image sizes disagree with the frontal camera");
  auto in = [](const auto& v, T lo, T hi) {
    return std::all_of(v.begin(), v.end(), [&](T x) { return x >= lo && x <= hi; });
  };
  if (!in(frontal.data, T(0), T(1))) throw InvalidRange("MpiFrame: frontal outside [0,1]");
  if (!in(residual.data, T(-1), T(1))) throw InvalidRange("MpiFrame: residual outside [-1,1]");
  if (!in(alphas.data, T(0), T(1))) throw InvalidRange("MpiFrame: alphas outside [0,1]");
}

std::vector<double> plane_depths(double d_near, double d_far, int planes) {
  if (!(d_near > 0) || !(d_near < d_far))
    throw InvalidRange("plane_depths: requires 0 < d_near < d_far");
  if (planes < 2) throw InvalidRange("plane_depths: needs at least 2 planes");
  std::vector<double> depths(planes);
  double dn = 1.0 / d_near, df = 1.0 / d_far;
  for (int i = 0; i < planes; ++i) {
    double a = static_cast<double>(i) / (planes - 1);
    depths[i] = 1.0 / (dn + (df - dn) * a);
  }
  return depths;
}

std::pair<double, double> adaptive_near_far(double r) {
  if (!(r > 0.15)) throw InvalidRange("adaptive_near_far: requires r > 0.15");
  return {r - 0.15, r + 0.05};
}

template <typename T>
Image3<T> plane_color(const MpiFrameT<T>& frame, int i) {
  if (i < 0 || i >= frame.planes()) throw IndexOutOfRange("plane_color: plane index");
  T w = static_cast<T>(plane_weight(i, frame.planes()));
  Image3<T> out(frame.width(), frame.height());
  for (size_t k = 0; k < out.data.size(); ++k) {
    T v = frame.frontal.data[k] + w * frame.residual.data[k];
    out.data[k] = std::clamp(v, T(0), T(1));
  }
  return out;
}

template struct MpiFrameT<float>;
template struct MpiFrameT<double>;
template Image3<float> plane_color(const MpiFrameT<float>&, int);
template Image3<double> plane_color(const MpiFrameT<double>&, int);

}  // namespace mpiv
