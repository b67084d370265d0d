#include "mpiv/render.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "mpiv/threading.hpp"

namespace mpiv {

namespace {

// Row-major 3x3 homography coefficients in the working scalar type.
template <typename T>
struct HCoeffs {
  T m[9];
};

template <typename T>
HCoeffs<T> inverse_coeffs(const Mat3& h) {
  double det = h.determinant();
  double scale = h.cwiseAbs().maxCoeff();
  if (std::abs(det) <= 1e-12 * scale * scale * scale)
    throw SingularHomography("homography is not invertible");
  Mat3 inv = h.inverse();
  HCoeffs<T> c;
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.m[r * 3 + k] = static_cast<T>(inv(r, k));
  return c;
}

// Bilinear footprint of source coordinate (sx, sy) against a zero-padded
// buffer of interior size w x h (padded pitch w+2, one-pixel zero ring).
// Out-of-range and NaN coordinates land in the zero ring, so sampling needs
// no branches. Index math must match between the forward kernel and the
// backward scatter, which both call this.
template <typename T>
struct Footprint {
  int o00, o01, o10, o11;  // padded-buffer offsets of the 4 corners
  T w00, w01, w10, w11;
};

template <typename T>
inline Footprint<T> footprint(T sx, T sy, int w, int h) {
  const T xlo = T(-2), xhi = T(w + 1), ylo = T(-2), yhi = T(h + 1);
  T sxc = sx > xlo ? sx : xlo;  // NaN compares false and falls to the ring
  sxc = sxc < xhi ? sxc : xhi;
  T syc = sy > ylo ? sy : ylo;
  syc = syc < yhi ? syc : yhi;
  T fx0 = std::floor(sxc), fy0 = std::floor(syc);
  int ix = static_cast<int>(fx0), iy = static_cast<int>(fy0);
  T fx = sxc - fx0, fy = syc - fy0;
  int ix0 = ix < -1 ? -1 : (ix > w ? w : ix);
  int ix1 = ix + 1 < -1 ? -1 : (ix + 1 > w ? w : ix + 1);
  int iy0 = iy < -1 ? -1 : (iy > h ? h : iy);
  int iy1 = iy + 1 < -1 ? -1 : (iy + 1 > h ? h : iy + 1);
  int pitch = w + 2;
  int r0 = (iy0 + 1) * pitch, r1 = (iy1 + 1) * pitch;
  Footprint<T> f;
  f.o00 = r0 + ix0 + 1;
  f.o01 = r0 + ix1 + 1;
  f.o10 = r1 + ix0 + 1;
  f.o11 = r1 + ix1 + 1;
  T gx = T(1) - fx, gy = T(1) - fy;
  f.w00 = gx * gy;
  f.w01 = fx * gy;
  f.w10 = gx * fy;
  f.w11 = fx * fy;
  return f;
}

// Bilinear tap from a single-channel padded buffer.
template <typename T>
inline T sample(const T* __restrict buf, const Footprint<T>& f) {
  return buf[f.o00] * f.w00 + buf[f.o01] * f.w01 + buf[f.o10] * f.w10 + buf[f.o11] * f.w11;
}

// Bilinear tap of channel c from an RGBA-interleaved padded buffer.
template <typename T>
inline T sample(const T* __restrict buf, const Footprint<T>& f, int c) {
  return buf[4 * f.o00 + c] * f.w00 + buf[4 * f.o01 + c] * f.w01 + buf[4 * f.o10 + c] * f.w10 +
         buf[4 * f.o11 + c] * f.w11;
}

// Write padded rows [r0, r1) of one plane, RGBA interleaved so a texel is one
// 16-byte load. dst's first element is padded row r0. Interior texels hold
// clamp(frontal + weight * residual, 0, 1) and the plane's alpha; ring rows
// and the two ring columns are zero.
template <typename T>
void fill_band(const MpiFrameT<T>& frame, int plane, T weight, int r0, int r1,
               T* __restrict dst) {
  const int w = frame.width(), h = frame.height(), pitch = w + 2;
  const size_t ps = frame.frontal.plane_size();
  const T* fr = frame.frontal.data.data();
  const T* fg = fr + ps;
  const T* fb = fg + ps;
  const T* rr = frame.residual.data.data();
  const T* rg = rr + ps;
  const T* rb = rg + ps;
  const T* al = frame.alphas.plane(plane);
  for (int r = r0; r < r1; ++r) {
    T* __restrict px = dst + static_cast<size_t>(r - r0) * pitch * 4;
    if (r == 0 || r == h + 1) {
      std::fill(px, px + static_cast<size_t>(pitch) * 4, T(0));
      continue;
    }
    for (int c = 0; c < 4; ++c) {
      px[c] = T(0);
      px[(pitch - 1) * 4 + c] = T(0);
    }
    size_t src = static_cast<size_t>(r - 1) * w;
    px += 4;
    int x = 0;
#if defined(__AVX2__) && defined(__FMA__)
    // Vector interior for the float path: clamp-mix eight texels, then a
    // 4x8 transpose into the interleaved layout.
    if constexpr (std::is_same_v<T, float>) {
      const __m256 vw = _mm256_set1_ps(weight);
      const __m256 lo = _mm256_setzero_ps(), hi = _mm256_set1_ps(1.0f);
      for (; x + 8 <= w; x += 8) {
        __m256 red = _mm256_fmadd_ps(vw, _mm256_loadu_ps(rr + src + x),
                                     _mm256_loadu_ps(fr + src + x));
        __m256 grn = _mm256_fmadd_ps(vw, _mm256_loadu_ps(rg + src + x),
                                     _mm256_loadu_ps(fg + src + x));
        __m256 blu = _mm256_fmadd_ps(vw, _mm256_loadu_ps(rb + src + x),
                                     _mm256_loadu_ps(fb + src + x));
        red = _mm256_min_ps(_mm256_max_ps(red, lo), hi);
        grn = _mm256_min_ps(_mm256_max_ps(grn, lo), hi);
        blu = _mm256_min_ps(_mm256_max_ps(blu, lo), hi);
        __m256 alp = _mm256_loadu_ps(al + src + x);
        __m256 t0 = _mm256_unpacklo_ps(red, grn);  // r0 g0 r1 g1 | r4 g4 r5 g5
        __m256 t1 = _mm256_unpackhi_ps(red, grn);
        __m256 t2 = _mm256_unpacklo_ps(blu, alp);
        __m256 t3 = _mm256_unpackhi_ps(blu, alp);
        __m256 u0 = _mm256_shuffle_ps(t0, t2, 0x44);  // texels 0,4
        __m256 u1 = _mm256_shuffle_ps(t0, t2, 0xEE);  // texels 1,5
        __m256 u2 = _mm256_shuffle_ps(t1, t3, 0x44);  // texels 2,6
        __m256 u3 = _mm256_shuffle_ps(t1, t3, 0xEE);  // texels 3,7
        float* out = px + 4 * x;
        _mm256_storeu_ps(out, _mm256_permute2f128_ps(u0, u1, 0x20));
        _mm256_storeu_ps(out + 8, _mm256_permute2f128_ps(u2, u3, 0x20));
        _mm256_storeu_ps(out + 16, _mm256_permute2f128_ps(u0, u1, 0x31));
        _mm256_storeu_ps(out + 24, _mm256_permute2f128_ps(u2, u3, 0x31));
      }
    }
#endif
    for (; x < w; ++x) {
      T red = fr[src + x] + weight * rr[src + x];
      T grn = fg[src + x] + weight * rg[src + x];
      T blu = fb[src + x] + weight * rb[src + x];
      px[4 * x + 0] = red < T(0) ? T(0) : (red > T(1) ? T(1) : red);
      px[4 * x + 1] = grn < T(0) ? T(0) : (grn > T(1) ? T(1) : grn);
      px[4 * x + 2] = blu < T(0) ? T(0) : (blu > T(1) ? T(1) : blu);
      px[4 * x + 3] = al[src + x];
    }
  }
}

// Full zero-padded copy of one plane for the generic kernels.
template <typename T>
struct PaddedPlane {
  int w = 0, h = 0, pitch = 0;
  std::vector<T> rgba;

  void resize(int width, int height) {
    w = width;
    h = height;
    pitch = w + 2;
    rgba.assign(static_cast<size_t>(pitch) * (h + 2) * 4, T(0));
  }

  void fill(const MpiFrameT<T>& frame, int plane, T weight) {
    global_pool().parallel_for(0, h + 2, [&](int64_t r0, int64_t r1) {
      fill_band(frame, plane, weight, static_cast<int>(r0), static_cast<int>(r1),
                rgba.data() + static_cast<size_t>(r0) * pitch * 4);
    });
  }
};

// One output row of warp + over-composite for a single plane. With Record the
// kernel also stores the sampled plane values and the pre-update accumulator
// state, which the backward pass consumes.
template <typename T, bool Record>
void composite_row(const HCoeffs<T>& hc, const PaddedPlane<T>& pp, T recip, int tw, int y,
                   T* __restrict accR, T* __restrict accG, T* __restrict accB,
                   T* __restrict accA, T* __restrict accD, T* __restrict smpR,
                   T* __restrict smpG, T* __restrict smpB, T* __restrict smpA,
                   T* __restrict befR, T* __restrict befG, T* __restrict befB,
                   T* __restrict befA, T* __restrict befD) {
  const T yf = T(y);
  const T ax = hc.m[1] * yf + hc.m[2];
  const T by = hc.m[4] * yf + hc.m[5];
  const T wy = hc.m[7] * yf + hc.m[8];
  const T h00 = hc.m[0], h10 = hc.m[3], h20 = hc.m[6];
  const T* __restrict px = pp.rgba.data();
  const int w = pp.w, h = pp.h;
  for (int x = 0; x < tw; ++x) {
    T xf = T(x);
    T hw = h20 * xf + wy;
    T inv = T(1) / hw;
    T sx = (h00 * xf + ax) * inv;
    T sy = (h10 * xf + by) * inv;
    Footprint<T> f = footprint(sx, sy, w, h);
    T a = sample(px, f, 3);
    T r = sample(px, f, 0);
    T g = sample(px, f, 1);
    T b = sample(px, f, 2);
    T om = T(1) - a;
    if constexpr (Record) {
      smpR[x] = r;
      smpG[x] = g;
      smpB[x] = b;
      smpA[x] = a;
      befR[x] = accR[x];
      befG[x] = accG[x];
      befB[x] = accB[x];
      befA[x] = accA[x];
      befD[x] = accD[x];
    }
    accR[x] = r * a + accR[x] * om;
    accG[x] = g * a + accG[x] * om;
    accB[x] = b * a + accB[x] * om;
    accA[x] = a + accA[x] * om;
    accD[x] = recip * a + accD[x] * om;
  }
}

#if defined(__AVX2__) && defined(__FMA__)

// Padded row range [lo, hi) of the source plane touched by target rows
// [y0, y1) at any x in [0, tw). The denominator of the warp is affine, so a
// pole inside the tile shows as a sign change at the corners; without a pole
// sy is a Mobius function along every segment of the tile and its extremes
// sit at the corners. One extra row on each side absorbs rounding-order
// differences with the vector kernel; a pole falls back to the whole plane.
inline std::pair<int, int> band_rows(const HCoeffs<float>& hc, int tw, int y0, int y1, int sh) {
  float symin = 0, symax = 0;
  bool pos = false, neg = false, bad = false, first = true;
  const float xs[2] = {0.0f, float(tw - 1)};
  const float ys[2] = {float(y0), float(y1 - 1)};
  for (float yf : ys) {
    for (float xf : xs) {
      float hw = hc.m[6] * xf + hc.m[7] * yf + hc.m[8];
      float sy = (hc.m[3] * xf + hc.m[4] * yf + hc.m[5]) / hw;
      if (!(std::abs(hw) > 1e-20f) || std::isnan(sy)) {
        bad = true;
        continue;
      }
      (hw > 0 ? pos : neg) = true;
      symin = first ? sy : std::min(symin, sy);
      symax = first ? sy : std::max(symax, sy);
      first = false;
    }
  }
  if (bad || (pos && neg) || first) return {0, sh + 2};
  auto touched_row = [&](float sy, int corner) {
    float syc = sy > -2.0f ? sy : -2.0f;
    syc = syc < float(sh + 1) ? syc : float(sh + 1);
    int iy = static_cast<int>(std::floor(syc)) + corner;
    return std::clamp(iy, -1, sh) + 1;
  };
  int lo = std::max(0, touched_row(symin, 0) - 1);
  int hi = std::min(sh + 2, touched_row(symax, 1) + 2);
  return {lo, hi};
}

// Vector form of composite_row for the float forward pass: coordinates and
// footprints for eight pixels at a time, then one 16-byte RGBA load per tap.
// min/max_ps return the second operand for NaN, matching the scalar ternaries.
// band points at padded source row band_lo; accumulators are RGBA-interleaved
// with disparity accumulating separately.
void composite_row_avx2(const HCoeffs<float>& hc, const float* __restrict base, int band_lo,
                        int w, int h, float recip, int tw, int y, float* __restrict acc,
                        float* __restrict accD) {
  const float yf = float(y);
  const float axs = hc.m[1] * yf + hc.m[2];
  const float bys = hc.m[4] * yf + hc.m[5];
  const float wys = hc.m[7] * yf + hc.m[8];
  const int band_off = band_lo * (w + 2);

  const __m256 viota = _mm256_setr_ps(0, 1, 2, 3, 4, 5, 6, 7);
  const __m256 vh00 = _mm256_set1_ps(hc.m[0]);
  const __m256 vh10 = _mm256_set1_ps(hc.m[3]);
  const __m256 vh20 = _mm256_set1_ps(hc.m[6]);
  const __m256 vax = _mm256_set1_ps(axs), vby = _mm256_set1_ps(bys), vwy = _mm256_set1_ps(wys);
  const __m256 vone = _mm256_set1_ps(1.0f);
  const __m256 vxlo = _mm256_set1_ps(-2.0f), vxhi = _mm256_set1_ps(float(w + 1));
  const __m256 vyhi = _mm256_set1_ps(float(h + 1));
  const __m256i ineg1 = _mm256_set1_epi32(-1);
  const __m256i iw = _mm256_set1_epi32(w), ih = _mm256_set1_epi32(h);
  const __m256i ipitch = _mm256_set1_epi32(w + 2), ione = _mm256_set1_epi32(1);
  const __m256i iband = _mm256_set1_epi32(band_off);
  const __m256i itwo = _mm256_set1_epi32(2);
  const __m256 vrecip = _mm256_set1_ps(recip);
  const __m256 vzero = _mm256_setzero_ps();
  const __m256 vxin = _mm256_set1_ps(float(w - 2)), vyin = _mm256_set1_ps(float(h - 2));
  const __m256i cl0 = _mm256_setr_epi32(0, 0, 0, 0, 1, 1, 1, 1);
  const __m256i cl1 = _mm256_setr_epi32(2, 2, 2, 2, 3, 3, 3, 3);
  const __m256i ch0 = _mm256_setr_epi32(4, 4, 4, 4, 5, 5, 5, 5);
  const __m256i ch1 = _mm256_setr_epi32(6, 6, 6, 6, 7, 7, 7, 7);
  const int pitch4 = 4 * (w + 2);

  alignas(32) int o00[8], o01[8], o10[8], o11[8];

  // Two 16-byte texels fetched into one register: pixel p in the low lane,
  // pixel p+1 in the high lane. Offsets are float indices (4 * texel) and
  // come back from the spill slot as a single 64-bit read per pair.
  auto pair_taps = [](const float* __restrict b, const int* off, int p) {
    uint64_t two;
    std::memcpy(&two, off + p, sizeof two);
    return _mm256_insertf128_ps(
        _mm256_castps128_ps256(_mm_loadu_ps(b + uint32_t(two))),
        _mm_loadu_ps(b + uint32_t(two >> 32)), 1);
  };

  int x = 0;
  for (; x + 8 <= tw; x += 8) {
    __m256 xf = _mm256_add_ps(_mm256_set1_ps(float(x)), viota);
    __m256 inv = _mm256_div_ps(vone, _mm256_fmadd_ps(vh20, xf, vwy));
    __m256 sx = _mm256_mul_ps(_mm256_fmadd_ps(vh00, xf, vax), inv);
    __m256 sy = _mm256_mul_ps(_mm256_fmadd_ps(vh10, xf, vby), inv);
    sx = _mm256_min_ps(_mm256_max_ps(sx, vxlo), vxhi);
    sy = _mm256_min_ps(_mm256_max_ps(sy, vxlo), vyhi);
    __m256 fx0 = _mm256_floor_ps(sx), fy0 = _mm256_floor_ps(sy);
    __m256i ix = _mm256_cvttps_epi32(fx0), iy = _mm256_cvttps_epi32(fy0);
    __m256 fx = _mm256_sub_ps(sx, fx0), fy = _mm256_sub_ps(sy, fy0);
    __m256i ix0 = _mm256_min_epi32(_mm256_max_epi32(ix, ineg1), iw);
    __m256i iy0 = _mm256_min_epi32(_mm256_max_epi32(iy, ineg1), ih);
    __m256i r0 =
        _mm256_sub_epi32(_mm256_mullo_epi32(_mm256_add_epi32(iy0, ione), ipitch), iband);
    __m256i c0 = _mm256_add_epi32(ix0, ione);
    _mm256_store_si256(reinterpret_cast<__m256i*>(o00),
                       _mm256_slli_epi32(_mm256_add_epi32(r0, c0), 2));
    __m256 gx = _mm256_sub_ps(vone, fx), gy = _mm256_sub_ps(vone, fy);
    const __m256 w00 = _mm256_mul_ps(gx, gy);
    const __m256 w01 = _mm256_mul_ps(fx, gy);
    const __m256 w10 = _mm256_mul_ps(gx, fy);
    const __m256 w11 = _mm256_mul_ps(fx, fy);

    // A block is interior when every footprint lies strictly inside the
    // image, so no tap clamps and both tap rows are contiguous texel pairs.
    __m256 okx = _mm256_and_ps(_mm256_cmp_ps(fx0, vzero, _CMP_GE_OQ),
                               _mm256_cmp_ps(fx0, vxin, _CMP_LE_OQ));
    __m256 oky = _mm256_and_ps(_mm256_cmp_ps(fy0, vzero, _CMP_GE_OQ),
                               _mm256_cmp_ps(fy0, vyin, _CMP_LE_OQ));
    __m256 a01, a23, a45, a67;
    if (_mm256_movemask_ps(_mm256_and_ps(okx, oky)) == 0xFF) {
      // Transpose the weights to one register per pixel pair: z0 holds
      // pixels 0 and 4, z1 holds 1 and 5, and so on.
      __m256 u0 = _mm256_unpacklo_ps(w00, w10), u1 = _mm256_unpackhi_ps(w00, w10);
      __m256 v0 = _mm256_unpacklo_ps(w01, w11), v1 = _mm256_unpackhi_ps(w01, w11);
      __m256 z0 = _mm256_unpacklo_ps(u0, v0), z1 = _mm256_unpackhi_ps(u0, v0);
      __m256 z2 = _mm256_unpacklo_ps(u1, v1), z3 = _mm256_unpackhi_ps(u1, v1);
      auto fast_pair = [&](int p, __m256 zA, __m256 zB, __m256i s0, __m256i s1) {
        uint64_t two;
        std::memcpy(&two, o00 + p, sizeof two);
        const float* bp = base + uint32_t(two);
        const float* bq = base + uint32_t(two >> 32);
        __m256 sp = _mm256_fmadd_ps(_mm256_loadu_ps(bp + pitch4),
                                    _mm256_permutevar8x32_ps(zA, s1),
                                    _mm256_mul_ps(_mm256_loadu_ps(bp),
                                                  _mm256_permutevar8x32_ps(zA, s0)));
        __m256 sq = _mm256_fmadd_ps(_mm256_loadu_ps(bq + pitch4),
                                    _mm256_permutevar8x32_ps(zB, s1),
                                    _mm256_mul_ps(_mm256_loadu_ps(bq),
                                                  _mm256_permutevar8x32_ps(zB, s0)));
        __m256 smp = _mm256_add_ps(_mm256_permute2f128_ps(sp, sq, 0x20),
                                   _mm256_permute2f128_ps(sp, sq, 0x31));
        __m256 a = _mm256_shuffle_ps(smp, smp, 0xFF);
        // (r, g, b, a) composites as (r*a, g*a, b*a, a*1) + acc * (1 - a).
        __m256 scale = _mm256_blend_ps(a, vone, 0x88);
        float* ap = acc + 4 * size_t(x + p);
        __m256 av = _mm256_loadu_ps(ap);
        av = _mm256_fmadd_ps(av, _mm256_sub_ps(vone, a), _mm256_mul_ps(smp, scale));
        _mm256_storeu_ps(ap, av);
        return a;
      };
      a01 = fast_pair(0, z0, z1, cl0, cl1);
      a23 = fast_pair(2, z2, z3, cl0, cl1);
      a45 = fast_pair(4, z0, z1, ch0, ch1);
      a67 = fast_pair(6, z2, z3, ch0, ch1);
    } else {
      __m256i ix1 = _mm256_min_epi32(_mm256_max_epi32(_mm256_add_epi32(ix, ione), ineg1), iw);
      __m256i iy1 = _mm256_min_epi32(_mm256_max_epi32(_mm256_add_epi32(iy, ione), ineg1), ih);
      __m256i r1 =
          _mm256_sub_epi32(_mm256_mullo_epi32(_mm256_add_epi32(iy1, ione), ipitch), iband);
      __m256i c1 = _mm256_add_epi32(ix1, ione);
      _mm256_store_si256(reinterpret_cast<__m256i*>(o01),
                         _mm256_slli_epi32(_mm256_add_epi32(r0, c1), 2));
      _mm256_store_si256(reinterpret_cast<__m256i*>(o10),
                         _mm256_slli_epi32(_mm256_add_epi32(r1, c0), 2));
      _mm256_store_si256(reinterpret_cast<__m256i*>(o11),
                         _mm256_slli_epi32(_mm256_add_epi32(r1, c1), 2));

      // Composite two pixels per iteration. Weights stay in registers; the
      // permute replicates lane p into the low half and lane p+1 into the
      // high half to match the paired texels.
      auto pair = [&](int p, __m256i sel) {
        __m256 smp = _mm256_mul_ps(pair_taps(base, o00, p), _mm256_permutevar8x32_ps(w00, sel));
        smp = _mm256_fmadd_ps(pair_taps(base, o01, p), _mm256_permutevar8x32_ps(w01, sel), smp);
        smp = _mm256_fmadd_ps(pair_taps(base, o10, p), _mm256_permutevar8x32_ps(w10, sel), smp);
        smp = _mm256_fmadd_ps(pair_taps(base, o11, p), _mm256_permutevar8x32_ps(w11, sel), smp);
        __m256 a = _mm256_shuffle_ps(smp, smp, 0xFF);
        // (r, g, b, a) composites as (r*a, g*a, b*a, a*1) + acc * (1 - a).
        __m256 scale = _mm256_blend_ps(a, vone, 0x88);
        float* ap = acc + 4 * size_t(x + p);
        __m256 av = _mm256_loadu_ps(ap);
        av = _mm256_fmadd_ps(av, _mm256_sub_ps(vone, a), _mm256_mul_ps(smp, scale));
        _mm256_storeu_ps(ap, av);
        return a;
      };
      __m256i sel = cl0;
      a01 = pair(0, sel);
      sel = _mm256_add_epi32(sel, itwo);
      a23 = pair(2, sel);
      sel = _mm256_add_epi32(sel, itwo);
      a45 = pair(4, sel);
      sel = _mm256_add_epi32(sel, itwo);
      a67 = pair(6, sel);
    }

    // Gather the eight alphas back into pixel order for the disparity row.
    __m256 q01 = _mm256_shuffle_ps(a01, a23, 0x00);
    __m256 q23 = _mm256_shuffle_ps(a45, a67, 0x00);
    __m256 a8 = _mm256_permutevar8x32_ps(_mm256_shuffle_ps(q01, q23, 0x88),
                                         _mm256_setr_epi32(0, 4, 1, 5, 2, 6, 3, 7));
    __m256 dv = _mm256_loadu_ps(accD + x);
    dv = _mm256_fmadd_ps(dv, _mm256_sub_ps(vone, a8), _mm256_mul_ps(vrecip, a8));
    _mm256_storeu_ps(accD + x, dv);
  }

  // Scalar tail for widths that are not a multiple of eight.
  for (; x < tw; ++x) {
    float xf = float(x);
    float inv = 1.0f / (hc.m[6] * xf + wys);
    float sx = (hc.m[0] * xf + axs) * inv;
    float sy = (hc.m[3] * xf + bys) * inv;
    Footprint<float> f = footprint(sx, sy, w, h);
    f.o00 -= band_off;
    f.o01 -= band_off;
    f.o10 -= band_off;
    f.o11 -= band_off;
    float a = sample(base, f, 3);
    float om = 1.0f - a;
    float* __restrict av = acc + 4 * size_t(x);
    av[0] = sample(base, f, 0) * a + av[0] * om;
    av[1] = sample(base, f, 1) * a + av[1] * om;
    av[2] = sample(base, f, 2) * a + av[2] * om;
    av[3] = a + av[3] * om;
    accD[x] = recip * a + accD[x] * om;
  }
}

// Float forward path. Target rows are processed in tiles and each
// (tile, plane) pair fills only the source band it actually samples, so the
// accumulator tile and the band stay cache-resident instead of streaming
// whole planes through memory. Per-pixel math is identical to the untiled
// kernel, so results do not depend on tile shape or thread count.
RenderOutputT<float> render_fast(const MpiFrameT<float>& frame, const Camera& target,
                                 const std::vector<double>& depths) {
  const int tw = target.intrinsics.width, th = target.intrinsics.height;
  const int d = frame.planes();
  const int sh = frame.height(), pitch = frame.width() + 2;
  const size_t n = static_cast<size_t>(tw) * th;
  std::vector<float> acc(n * 4, 0.0f), accD(n, 0.0f);

  std::vector<HCoeffs<float>> hcs;
  hcs.reserve(d);
  std::vector<float> weights(d), recips(d);
  for (int i = 0; i < d; ++i) {
    hcs.push_back(inverse_coeffs<float>(plane_homography(frame.camera, target, depths[i])));
    weights[i] = static_cast<float>(plane_weight(i, d));
    recips[i] = static_cast<float>(1.0 / depths[i]);
  }

  constexpr int kTileRows = 32;
  const int tiles = (th + kTileRows - 1) / kTileRows;
  global_pool().parallel_for(0, tiles, [&](int64_t t0, int64_t t1) {
    thread_local std::vector<float> band;
    for (int64_t t = t0; t < t1; ++t) {
      const int y0 = static_cast<int>(t) * kTileRows;
      const int y1 = std::min(th, y0 + kTileRows);
      for (int i = d - 1; i >= 0; --i) {
        auto [lo, hi] = band_rows(hcs[i], tw, y0, y1, sh);
        band.resize(static_cast<size_t>(hi - lo) * pitch * 4);
        fill_band(frame, i, weights[i], lo, hi, band.data());
        for (int y = y0; y < y1; ++y)
          composite_row_avx2(hcs[i], band.data(), lo, frame.width(), sh, recips[i], tw, y,
                             acc.data() + static_cast<size_t>(y) * tw * 4,
                             accD.data() + static_cast<size_t>(y) * tw);
      }
    }
  });
  RenderOutputT<float> out{Image3f(tw, th), Image1f(tw, th), Image1f(tw, th)};
  float* __restrict r = out.rgb.plane(0);
  float* __restrict g = out.rgb.plane(1);
  float* __restrict b = out.rgb.plane(2);
  float* __restrict al = out.alpha.data.data();
  float* __restrict dsp = out.disparity.data.data();
  const float eps = static_cast<float>(kDisparityDivEps);
  global_pool().parallel_for(0, static_cast<int64_t>(n), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      r[i] = acc[4 * i + 0];
      g[i] = acc[4 * i + 1];
      b[i] = acc[4 * i + 2];
      al[i] = acc[4 * i + 3];
      dsp[i] = accD[i] / (al[i] > eps ? al[i] : eps);
    }
  });
  return out;
}

#endif  // __AVX2__ && __FMA__

template <typename T>
void check_target(const Camera& target) {
  target.intrinsics.validate();
}

// Forward pass over all planes far-to-near. When record pointers are given,
// per-plane samples/befores are stored with plane-major layout (plane i at
// offset i * tw * th).
template <typename T, bool Record>
void render_planes(const MpiFrameT<T>& frame, const Camera& target,
                   const std::vector<double>& depths, T* accR, T* accG, T* accB, T* accA,
                   T* accD, T* smpR, T* smpG, T* smpB, T* smpA, T* befR, T* befG, T* befB,
                   T* befA, T* befD) {
  const int tw = target.intrinsics.width, th = target.intrinsics.height;
  const int d = frame.planes();
  const size_t n = static_cast<size_t>(tw) * th;
  PaddedPlane<T> pp;
  pp.resize(frame.width(), frame.height());
  for (int i = d - 1; i >= 0; --i) {
    Mat3 h = plane_homography(frame.camera, target, depths[i]);
    HCoeffs<T> hc = inverse_coeffs<T>(h);
    pp.fill(frame, i, static_cast<T>(plane_weight(i, d)));
    T recip = static_cast<T>(1.0 / depths[i]);
    size_t rec = static_cast<size_t>(i) * n;
    global_pool().parallel_for(0, th, [&](int64_t y0, int64_t y1) {
      for (int64_t y = y0; y < y1; ++y) {
        size_t off = static_cast<size_t>(y) * tw;
        composite_row<T, Record>(
            hc, pp, recip, tw, static_cast<int>(y), accR + off, accG + off, accB + off,
            accA + off, accD + off, Record ? smpR + rec + off : nullptr,
            Record ? smpG + rec + off : nullptr, Record ? smpB + rec + off : nullptr,
            Record ? smpA + rec + off : nullptr, Record ? befR + rec + off : nullptr,
            Record ? befG + rec + off : nullptr, Record ? befB + rec + off : nullptr,
            Record ? befA + rec + off : nullptr, Record ? befD + rec + off : nullptr);
      }
    });
  }
}

}  // namespace

template <typename T>
RenderOutputT<T> render(const MpiFrameT<T>& frame, const Camera& target) {
  check_target<T>(target);
  const int tw = target.intrinsics.width, th = target.intrinsics.height;
  auto depths = plane_depths(frame.d_near, frame.d_far, frame.planes());
#if defined(__AVX2__) && defined(__FMA__)
  if constexpr (std::is_same_v<T, float>) return render_fast(frame, target, depths);
#endif
  RenderOutputT<T> out{Image3<T>(tw, th), Image1<T>(tw, th), Image1<T>(tw, th)};
  const size_t n = out.alpha.size();
  std::vector<T> accD(n, T(0));
  render_planes<T, false>(frame, target, depths, out.rgb.plane(0), out.rgb.plane(1),
                          out.rgb.plane(2), out.alpha.data.data(), accD.data(), nullptr,
                          nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr,
                          nullptr);
  const T eps = static_cast<T>(kDisparityDivEps);
  T* __restrict dsp = out.disparity.data.data();
  const T* __restrict acc = accD.data();
  const T* __restrict al = out.alpha.data.data();
  global_pool().parallel_for(0, static_cast<int64_t>(n), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) dsp[i] = acc[i] / (al[i] > eps ? al[i] : eps);
  });
  return out;
}

template <typename T>
RenderOutputT<T> oracle_render(const MpiFrameT<T>& frame, const Camera& target) {
  check_target<T>(target);
  const int tw = target.intrinsics.width, th = target.intrinsics.height;
  const int sw = frame.width(), sh = frame.height(), d = frame.planes();
  auto depths = plane_depths(frame.d_near, frame.d_far, frame.planes());
  CameraPose rel = relative_pose(target.pose, frame.camera.pose);
  Mat3 kt_inv = target.intrinsics.inverse_matrix();
  const double fx = frame.camera.intrinsics.fx, fy = frame.camera.intrinsics.fy;
  const double cx = frame.camera.intrinsics.cx, cy = frame.camera.intrinsics.cy;
  const size_t ps = frame.frontal.plane_size();

  // Zero-padded bilinear sample of clamp(frontal + w*residual) and alpha at
  // (u, v), corners clamped before mixing, all in double.
  auto sample_plane = [&](int plane, double wgt, double u, double v, double out[4]) {
    out[0] = out[1] = out[2] = out[3] = 0.0;
    double fu = std::floor(u), fv = std::floor(v);
    int x0 = static_cast<int>(fu), y0 = static_cast<int>(fv);
    double bu = u - fu, bv = v - fv;
    const double wts[4] = {(1 - bu) * (1 - bv), bu * (1 - bv), (1 - bu) * bv, bu * bv};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int k = 0; k < 4; ++k) {
      if (xs[k] < 0 || xs[k] >= sw || ys[k] < 0 || ys[k] >= sh) continue;
      size_t at = static_cast<size_t>(ys[k]) * sw + xs[k];
      for (int c = 0; c < 3; ++c) {
        double col = static_cast<double>(frame.frontal.data[c * ps + at]) +
                     wgt * static_cast<double>(frame.residual.data[c * ps + at]);
        out[c] += wts[k] * std::clamp(col, 0.0, 1.0);
      }
      out[3] += wts[k] * static_cast<double>(frame.alphas.plane(plane)[at]);
    }
  };

  RenderOutputT<T> result{Image3<T>(tw, th), Image1<T>(tw, th), Image1<T>(tw, th)};
  for (int y = 0; y < th; ++y) {
    for (int x = 0; x < tw; ++x) {
      Vec3 dir = kt_inv * Vec3(x, y, 1.0);
      Vec3 dm = rel.rotation * dir;
      const Vec3& om = rel.translation;
      double accum[5] = {0, 0, 0, 0, 0};  // r g b A disparity
      for (int i = d - 1; i >= 0; --i) {
        double rgba[4] = {0, 0, 0, 0};
        if (dm.z() != 0.0) {
          double s = (depths[i] - om.z()) / dm.z();
          double px = om.x() + s * dm.x();
          double py = om.y() + s * dm.y();
          double u = fx * px / depths[i] + cx;
          double v = fy * py / depths[i] + cy;
          sample_plane(i, plane_weight(i, d), u, v, rgba);
        }
        double a = rgba[3], omx = 1.0 - a;
        accum[0] = rgba[0] * a + accum[0] * omx;
        accum[1] = rgba[1] * a + accum[1] * omx;
        accum[2] = rgba[2] * a + accum[2] * omx;
        accum[3] = a + accum[3] * omx;
        accum[4] = (1.0 / depths[i]) * a + accum[4] * omx;
      }
      size_t at = static_cast<size_t>(y) * tw + x;
      for (int c = 0; c < 3; ++c) result.rgb.data[c * result.rgb.plane_size() + at] = static_cast<T>(accum[c]);
      result.alpha.data[at] = static_cast<T>(accum[3]);
      result.disparity.data[at] =
          static_cast<T>(accum[4] / std::max(accum[3], kDisparityDivEps));
    }
  }
  return result;
}

template <typename T>
Image3<T> composite_background(const RenderOutputT<T>& out, const Image3<T>& background) {
  if (!out.rgb.same_shape(background))
    throw ShapeMismatch("composite_background: size mismatch");
  Image3<T> full(background.width, background.height);
  const size_t n = background.plane_size();
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < n; ++i)
      full.data[c * n + i] =
          out.rgb.data[c * n + i] + (T(1) - out.alpha.data[i]) * background.data[c * n + i];
  return full;
}

template <typename T>
std::pair<RenderOutputT<T>, RenderOutputT<T>> render_stereo(const MpiFrameT<T>& frame,
                                                            const Camera& center,
                                                            double baseline) {
  if (!(baseline > 0)) throw InvalidRange("render_stereo: baseline must be positive");
  Camera left = displaced_camera(center, Vec3(-baseline / 2, 0, 0));
  Camera right = displaced_camera(center, Vec3(baseline / 2, 0, 0));
  return {render(frame, left), render(frame, right)};
}

template <typename T>
RenderGradientsT<T> render_backward(const MpiFrameT<T>& frame, const Camera& target,
                                    const RenderCotangentT<T>& d_out) {
  check_target<T>(target);
  const int tw = target.intrinsics.width, th = target.intrinsics.height;
  if (d_out.d_rgb.width != tw || d_out.d_rgb.height != th ||
      !d_out.d_alpha.same_shape(d_out.d_disparity) || d_out.d_alpha.width != tw ||
      d_out.d_alpha.height != th)
    throw ShapeMismatch("render_backward: cotangent sizes disagree with the target camera");
  const int sw = frame.width(), sh = frame.height(), d = frame.planes();
  const size_t n = static_cast<size_t>(tw) * th;
  const size_t dn = static_cast<size_t>(d) * n;
  auto depths = plane_depths(frame.d_near, frame.d_far, frame.planes());

  // Forward replay recording per-plane samples and pre-composite state.
  std::vector<T> accR(n, T(0)), accG(n, T(0)), accB(n, T(0)), accA(n, T(0)), accD(n, T(0));
  std::vector<T> smpR(dn), smpG(dn), smpB(dn), smpA(dn);
  std::vector<T> befR(dn), befG(dn), befB(dn), befA(dn), befD(dn);
  render_planes<T, true>(frame, target, depths, accR.data(), accG.data(), accB.data(),
                         accA.data(), accD.data(), smpR.data(), smpG.data(), smpB.data(),
                         smpA.data(), befR.data(), befG.data(), befB.data(), befA.data(),
                         befD.data());

  // Per-pixel cotangent recurrence, near plane first (it was composited last).
  // smp arrays are overwritten in place with the per-plane cotangents.
  std::vector<T> recips(d);
  for (int i = 0; i < d; ++i) recips[i] = static_cast<T>(1.0 / depths[i]);
  const T eps = static_cast<T>(kDisparityDivEps);
  global_pool().parallel_for(0, static_cast<int64_t>(n), [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      T m = accA[p] > eps ? accA[p] : eps;
      T gd = d_out.d_disparity.data[p] / m;
      T ga = d_out.d_alpha.data[p] -
             (accA[p] > eps ? d_out.d_disparity.data[p] * accD[p] / (m * m) : T(0));
      T gr = d_out.d_rgb.data[p];
      T gg = d_out.d_rgb.data[n + p];
      T gb = d_out.d_rgb.data[2 * n + p];
      for (int i = 0; i < d; ++i) {
        size_t at = static_cast<size_t>(i) * n + p;
        T a = smpA[at];
        T da = gr * (smpR[at] - befR[at]) + gg * (smpG[at] - befG[at]) +
               gb * (smpB[at] - befB[at]) + ga * (T(1) - befA[at]) +
               gd * (recips[i] - befD[at]);
        smpR[at] = gr * a;
        smpG[at] = gg * a;
        smpB[at] = gb * a;
        smpA[at] = da;
        T om = T(1) - a;
        gr *= om;
        gg *= om;
        gb *= om;
        ga *= om;
        gd *= om;
      }
    }
  });

  // Scatter through the bilinear weights into per-plane padded buffers; each
  // plane is scattered sequentially in row-major order, planes in parallel.
  const int pitch = sw + 2;
  const size_t pn = static_cast<size_t>(pitch) * (sh + 2);
  std::vector<T> gpr(static_cast<size_t>(d) * pn, T(0)), gpg(static_cast<size_t>(d) * pn, T(0)),
      gpb(static_cast<size_t>(d) * pn, T(0)), gpa(static_cast<size_t>(d) * pn, T(0));
  std::vector<HCoeffs<T>> hcs;
  hcs.reserve(d);
  for (int i = 0; i < d; ++i)
    hcs.push_back(inverse_coeffs<T>(plane_homography(frame.camera, target, depths[i])));
  global_pool().parallel_for(0, d, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const HCoeffs<T>& hc = hcs[static_cast<size_t>(i)];
      T* __restrict gr = gpr.data() + static_cast<size_t>(i) * pn;
      T* __restrict gg = gpg.data() + static_cast<size_t>(i) * pn;
      T* __restrict gb = gpb.data() + static_cast<size_t>(i) * pn;
      T* __restrict ga = gpa.data() + static_cast<size_t>(i) * pn;
      const size_t rec = static_cast<size_t>(i) * n;
      for (int y = 0; y < th; ++y) {
        const T yf = T(y);
        const T ax = hc.m[1] * yf + hc.m[2];
        const T by = hc.m[4] * yf + hc.m[5];
        const T wy = hc.m[7] * yf + hc.m[8];
        for (int x = 0; x < tw; ++x) {
          T xf = T(x);
          T inv = T(1) / (hc.m[6] * xf + wy);
          T sx = (hc.m[0] * xf + ax) * inv;
          T sy = (hc.m[3] * xf + by) * inv;
          Footprint<T> f = footprint(sx, sy, sw, sh);
          size_t at = rec + static_cast<size_t>(y) * tw + x;
          T dr = smpR[at], dg = smpG[at], db = smpB[at], da = smpA[at];
          gr[f.o00] += dr * f.w00;
          gr[f.o01] += dr * f.w01;
          gr[f.o10] += dr * f.w10;
          gr[f.o11] += dr * f.w11;
          gg[f.o00] += dg * f.w00;
          gg[f.o01] += dg * f.w01;
          gg[f.o10] += dg * f.w10;
          gg[f.o11] += dg * f.w11;
          gb[f.o00] += db * f.w00;
          gb[f.o01] += db * f.w01;
          gb[f.o10] += db * f.w10;
          gb[f.o11] += db * f.w11;
          ga[f.o00] += da * f.w00;
          ga[f.o01] += da * f.w01;
          ga[f.o10] += da * f.w10;
          ga[f.o11] += da * f.w11;
        }
      }
    }
  });

  // Chain through plane_color's clamp into frontal/residual, and copy the
  // padded alpha gradients; fixed plane order keeps reductions deterministic.
  RenderGradientsT<T> grads{Image3<T>(sw, sh), Image3<T>(sw, sh), PlaneStack<T>(d, sw, sh)};
  const size_t ps = frame.frontal.plane_size();
  global_pool().parallel_for(0, sh, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < sw; ++x) {
        size_t at = static_cast<size_t>(y) * sw + x;
        size_t pat = static_cast<size_t>(y + 1) * pitch + x + 1;
        for (int c = 0; c < 3; ++c) {
          const T* gp = (c == 0 ? gpr : c == 1 ? gpg : gpb).data();
          T f = frame.frontal.data[c * ps + at];
          T r = frame.residual.data[c * ps + at];
          T df = T(0), dr = T(0);
          for (int i = 0; i < d; ++i) {
            T w = static_cast<T>(plane_weight(i, d));
            T pre = f + w * r;
            if (pre > T(0) && pre < T(1)) {
              T g = gp[static_cast<size_t>(i) * pn + pat];
              df += g;
              dr += w * g;
            }
          }
          grads.d_frontal.data[c * ps + at] = df;
          grads.d_residual.data[c * ps + at] = dr;
        }
        for (int i = 0; i < d; ++i)
          grads.d_alphas.plane(i)[at] = gpa[static_cast<size_t>(i) * pn + pat];
      }
    }
  });
  return grads;
}

template <typename T>
static Image1<T> warp_plane_impl1(const Image1<T>& image, const Mat3& h, int ow, int oh) {
  if (ow <= 0 || oh <= 0) throw InvalidRange("warp_plane: output size must be positive");
  HCoeffs<T> hc = inverse_coeffs<T>(h);
  const int sw = image.width, sh = image.height;
  const int pitch = sw + 2;
  std::vector<T> padded(static_cast<size_t>(pitch) * (sh + 2), T(0));
  for (int y = 0; y < sh; ++y)
    std::memcpy(padded.data() + static_cast<size_t>(y + 1) * pitch + 1, image.row(y),
                sizeof(T) * sw);
  Image1<T> out(ow, oh);
  global_pool().parallel_for(0, oh, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y) {
      const T yf = T(y);
      const T ax = hc.m[1] * yf + hc.m[2];
      const T by = hc.m[4] * yf + hc.m[5];
      const T wy = hc.m[7] * yf + hc.m[8];
      T* __restrict row = out.row(static_cast<int>(y));
      const T* __restrict buf = padded.data();
      for (int x = 0; x < ow; ++x) {
        T xf = T(x);
        T inv = T(1) / (hc.m[6] * xf + wy);
        T sx = (hc.m[0] * xf + ax) * inv;
        T sy = (hc.m[3] * xf + by) * inv;
        row[x] = sample(buf, footprint(sx, sy, sw, sh));
      }
    }
  });
  return out;
}

template <typename T>
Image1<T> warp_plane(const Image1<T>& image, const Mat3& h, int ow, int oh) {
  return warp_plane_impl1(image, h, ow, oh);
}

template <typename T>
Image3<T> warp_plane(const Image3<T>& image, const Mat3& h, int ow, int oh) {
  Image3<T> out(ow, oh);
  for (int c = 0; c < 3; ++c) {
    Image1<T> chan(image.width, image.height);
    std::memcpy(chan.data.data(), image.plane(c), sizeof(T) * chan.size());
    Image1<T> warped = warp_plane_impl1(chan, h, ow, oh);
    std::memcpy(out.plane(c), warped.data.data(), sizeof(T) * warped.size());
  }
  return out;
}

#define MPIV_INSTANTIATE_RENDER(T)                                                       \
  template RenderOutputT<T> render(const MpiFrameT<T>&, const Camera&);                   \
  template RenderOutputT<T> oracle_render(const MpiFrameT<T>&, const Camera&);            \
  template Image3<T> composite_background(const RenderOutputT<T>&, const Image3<T>&);     \
  template std::pair<RenderOutputT<T>, RenderOutputT<T>> render_stereo(                   \
      const MpiFrameT<T>&, const Camera&, double);                                        \
  template RenderGradientsT<T> render_backward(const MpiFrameT<T>&, const Camera&,        \
                                               const RenderCotangentT<T>&);               \
  template Image1<T> warp_plane(const Image1<T>&, const Mat3&, int, int);                 \
  template Image3<T> warp_plane(const Image3<T>&, const Mat3&, int, int);

MPIV_INSTANTIATE_RENDER(float)
MPIV_INSTANTIATE_RENDER(double)

#undef MPIV_INSTANTIATE_RENDER

}  // namespace mpiv
