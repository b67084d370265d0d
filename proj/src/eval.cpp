#include "mpiv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mpiv/threading.hpp"

namespace mpiv {

namespace {
constexpr float kPsnrCap = 99.0f;
}

float metric_l1(const Image3f& a, const Image3f& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("metric_l1: image sizes disagree");
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += std::abs(double(a.data[i]) - b.data[i]);
  return static_cast<float>(acc / a.size());
}

float metric_psnr(const Image3f& a, const Image3f& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("metric_psnr: image sizes disagree");
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double e = double(a.data[i]) - b.data[i];
    acc += e * e;
  }
  const double mse = acc / a.size();
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, static_cast<float>(10.0 * std::log10(1.0 / mse)));
}

void DisparityMap::validate() const {
  if (values.width != valid.width || values.height != valid.height)
    throw ShapeMismatch("disparity map: value and validity sizes disagree");
  if (max_disp < 0) throw InvalidRange("disparity map: negative max_disp");
  for (size_t i = 0; i < values.size(); ++i) {
    if (valid.data[i]) {
      if (values.data[i] < 0 || values.data[i] > static_cast<float>(max_disp))
        throw InvalidRange("disparity map: valid entry outside [0, max_disp]");
    } else if (values.data[i] != -1.0f) {
      throw InvalidRange("disparity map: invalid entry must be -1");
    }
  }
}

DisparityMap block_match(const Image3f& left, const Image3f& right, int window, int max_disp,
                         float min_contrast) {
  if (!left.same_shape(right)) throw ShapeMismatch("block_match: image sizes disagree");
  if (window < 1 || window % 2 == 0)
    throw InvalidRange("block_match: window must be odd and positive");
  if (max_disp < 0) throw InvalidRange("block_match: max_disp must be non-negative");

  const int w = left.width, h = left.height, half = window / 2;
  DisparityMap map;
  map.values = Image1f(w, h, -1.0f);
  map.valid = Image1<uint8_t>(w, h, 0);
  map.max_disp = max_disp;

  const double norm = 1.0 / (3.0 * window * window);
  global_pool().parallel_for(half, h - half, [&](int64_t y_begin, int64_t y_end) {
    for (int y = static_cast<int>(y_begin); y < y_end; ++y)
      for (int x = half + max_disp; x < w - half; ++x) {
        double best = std::numeric_limits<double>::infinity(), worst = 0;
        int best_d = 0;
        for (int d = 0; d <= max_disp; ++d) {
          double sad = 0;
          for (int c = 0; c < 3; ++c) {
            const float* lp = left.plane(c);
            const float* rp = right.plane(c);
            for (int dy = -half; dy <= half; ++dy) {
              const size_t row = static_cast<size_t>(y + dy) * w;
              for (int dx = -half; dx <= half; ++dx)
                sad += std::abs(double(lp[row + x + dx]) - rp[row + x - d + dx]);
            }
          }
          if (sad < best) {
            best = sad;
            best_d = d;
          }
          worst = std::max(worst, sad);
        }
        if ((worst - best) * norm >= min_contrast) {
          map.values.at(y, x) = static_cast<float>(best_d);
          map.valid.at(y, x) = 1;
        }
      }
  });
  return map;
}

float median_abs_error(const Image1f& a, const Image1f& b, const Image1f& mask) {
  if (!a.same_shape(b) || !a.same_shape(mask))
    throw ShapeMismatch("median_abs_error: image sizes disagree");
  std::vector<float> errs;
  for (size_t i = 0; i < a.size(); ++i)
    if (mask.data[i] > 0.5f) errs.push_back(std::abs(a.data[i] - b.data[i]));
  if (errs.empty()) throw InvalidRange("median_abs_error: mask selects no pixels");
  const size_t mid = errs.size() / 2;
  std::nth_element(errs.begin(), errs.begin() + mid, errs.end());
  return errs[mid];
}

}  // namespace mpiv
