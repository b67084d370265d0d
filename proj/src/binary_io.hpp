#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "mpiv/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "MPIV/MPCK serialization assumes a little-endian host");

namespace mpiv::binio {

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw IoError("cannot open for writing: " + path);
  }
  void bytes(const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed");
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
};

struct Reader {
  std::ifstream in;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw IoError("cannot open for reading: " + path);
  }
  void bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      throw CorruptHeader("file truncated");
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
};

}  // namespace mpiv::binio
