#pragma once

#include <string>

#include "mpiv/image.hpp"

namespace mpiv {

// PFM, written little-endian (scale -1.0) with rows bottom-up per the format.
// "Pf" carries one channel, "PF" three interleaved channels.
void write_pfm(const Image1f& image, const std::string& path);
void write_pfm(const Image3f& image, const std::string& path);
Image1f read_pfm1(const std::string& path);
Image3f read_pfm3(const std::string& path);

// Two-channel condition maps ride in color PFMs with a zero third channel.
void write_cond_pfm(const PlaneStack<float>& cond, const std::string& path);
PlaneStack<float> read_cond_pfm(const std::string& path);

// 8-bit P6 preview; values clamped to [0,1], then rounded half-up to 0..255.
void write_ppm(const Image3f& image, const std::string& path);

}  // namespace mpiv
