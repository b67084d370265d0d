#pragma once

#include <cstdint>

#include "mpiv/image.hpp"

namespace mpiv {

// Mean absolute difference over all channels. Throws ShapeMismatch.
float metric_l1(const Image3f& a, const Image3f& b);

// 10*log10(1/MSE) for images in [0,1], capped at 99 dB (the cap also stands
// in for the infinite PSNR of identical images).
float metric_psnr(const Image3f& a, const Image3f& b);

// Per-pixel stereo disparity in pixels. Invalid entries hold -1 in `values`
// and 0 in `valid`; valid entries lie in [0, max_disp].
struct DisparityMap {
  Image1f values;
  Image1<uint8_t> valid;
  int max_disp = 0;

  void validate() const;  // throws ShapeMismatch / InvalidRange
};

// Winner-take-all SAD block matching over a rectified pair (left pixel (x, y)
// against right pixel (x - d, y), d in [0, max_disp]). Ties break toward the
// smaller disparity. Pixels whose window leaves the image for any candidate
// are invalid, as are pixels whose SAD contrast (worst minus best, per window
// entry) falls below min_contrast. Parallel over rows.
DisparityMap block_match(const Image3f& left, const Image3f& right, int window, int max_disp,
                         float min_contrast = 0.01f);

// Median of |a - b| over pixels where mask > 0.5. Throws InvalidRange when
// the mask selects nothing.
float median_abs_error(const Image1f& a, const Image1f& b, const Image1f& mask);

}  // namespace mpiv
