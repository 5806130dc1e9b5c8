#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace surge::kern {

using std::int64_t;

// Row-major GEMM, C(M,N) (+)= A(M,K)·B(K,N).
//
// Accumulation over k is strictly ascending with a single accumulator per
// output element, so results are bit-identical to the textbook triple loop.
// The 8x16 tile keeps 16 accumulator vectors live across the k loop.

namespace detail {

#if defined(__AVX512F__)
using vreal = double __attribute__((vector_size(64)));
#elif defined(__AVX__)
using vreal = double __attribute__((vector_size(32)));
#else
using vreal = double __attribute__((vector_size(16)));
#endif
constexpr int64_t kVL = sizeof(vreal) / sizeof(double);

constexpr int64_t kMR = 8;
constexpr int64_t kNR = 2 * kVL;

inline vreal vload(const double* p) {
  vreal v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

inline void vstore(double* p, vreal v) { __builtin_memcpy(p, &v, sizeof(v)); }

inline void micro_main(int64_t K, const double* __restrict a, int64_t lda,
                       const double* __restrict b, int64_t ldb, double* __restrict c,
                       int64_t ldc, bool accumulate) {
  vreal acc[kMR][2];
  for (int64_t mi = 0; mi < kMR; ++mi) {
    if (accumulate) {
      acc[mi][0] = vload(c + mi * ldc);
      acc[mi][1] = vload(c + mi * ldc + kVL);
    } else {
      acc[mi][0] = vreal{} * 0.0;
      acc[mi][1] = vreal{} * 0.0;
    }
  }
  for (int64_t k = 0; k < K; ++k) {
    const vreal b0 = vload(b + k * ldb);
    const vreal b1 = vload(b + k * ldb + kVL);
#pragma GCC unroll 8
    for (int64_t mi = 0; mi < kMR; ++mi) {
      const double am = a[mi * lda + k];
      acc[mi][0] += am * b0;
      acc[mi][1] += am * b1;
    }
  }
  for (int64_t mi = 0; mi < kMR; ++mi) {
    vstore(c + mi * ldc, acc[mi][0]);
    vstore(c + mi * ldc + kVL, acc[mi][1]);
  }
}

inline void micro_edge(int64_t mr, int64_t nr, int64_t K, const double* __restrict a,
                       int64_t lda, const double* __restrict b, int64_t ldb,
                       double* __restrict c, int64_t ldc, bool accumulate) {
  double acc[kMR][kNR];
  for (int64_t mi = 0; mi < mr; ++mi) {
    for (int64_t ni = 0; ni < nr; ++ni) {
      acc[mi][ni] = accumulate ? c[mi * ldc + ni] : 0.0;
    }
  }
  for (int64_t k = 0; k < K; ++k) {
    const double* __restrict brow = b + k * ldb;
    for (int64_t mi = 0; mi < mr; ++mi) {
      const double am = a[mi * lda + k];
      for (int64_t ni = 0; ni < nr; ++ni) {
        acc[mi][ni] += am * brow[ni];
      }
    }
  }
  for (int64_t mi = 0; mi < mr; ++mi) {
    for (int64_t ni = 0; ni < nr; ++ni) {
      c[mi * ldc + ni] = acc[mi][ni];
    }
  }
}

}  // namespace detail

inline void gemm_nn(int64_t M, int64_t N, int64_t K, const double* a, int64_t lda,
                    const double* b, int64_t ldb, double* c, int64_t ldc, bool accumulate) {
  using namespace detail;
  for (int64_t m0 = 0; m0 < M; m0 += kMR) {
    const int64_t mr = std::min(kMR, M - m0);
    for (int64_t n0 = 0; n0 < N; n0 += kNR) {
      const int64_t nr = std::min(kNR, N - n0);
      if (mr == kMR && nr == kNR) {
        micro_main(K, a + m0 * lda, lda, b + n0, ldb, c + m0 * ldc + n0, ldc, accumulate);
      } else {
        micro_edge(mr, nr, K, a + m0 * lda, lda, b + n0, ldb, c + m0 * ldc + n0, ldc,
                   accumulate);
      }
    }
  }
}

namespace detail {

inline void micro_tn_main(int64_t M, const double* __restrict a, int64_t lda,
                          const double* __restrict b, int64_t ldb, double* __restrict c,
                          int64_t ldc, bool accumulate) {
  vreal acc[kMR][2];
  for (int64_t ki = 0; ki < kMR; ++ki) {
    if (accumulate) {
      acc[ki][0] = vload(c + ki * ldc);
      acc[ki][1] = vload(c + ki * ldc + kVL);
    } else {
      acc[ki][0] = vreal{} * 0.0;
      acc[ki][1] = vreal{} * 0.0;
    }
  }
  for (int64_t m = 0; m < M; ++m) {
    const vreal b0 = vload(b + m * ldb);
    const vreal b1 = vload(b + m * ldb + kVL);
    const double* __restrict arow = a + m * lda;
#pragma GCC unroll 8
    for (int64_t ki = 0; ki < kMR; ++ki) {
      const double av = arow[ki];
      acc[ki][0] += av * b0;
      acc[ki][1] += av * b1;
    }
  }
  for (int64_t ki = 0; ki < kMR; ++ki) {
    vstore(c + ki * ldc, acc[ki][0]);
    vstore(c + ki * ldc + kVL, acc[ki][1]);
  }
}

inline void micro_tn_edge(int64_t kr, int64_t nr, int64_t M, const double* __restrict a,
                          int64_t lda, const double* __restrict b, int64_t ldb,
                          double* __restrict c, int64_t ldc, bool accumulate) {
  double acc[kMR][kNR];
  for (int64_t ki = 0; ki < kr; ++ki) {
    for (int64_t ni = 0; ni < nr; ++ni) {
      acc[ki][ni] = accumulate ? c[ki * ldc + ni] : 0.0;
    }
  }
  for (int64_t m = 0; m < M; ++m) {
    const double* __restrict arow = a + m * lda;
    const double* __restrict brow = b + m * ldb;
    for (int64_t ki = 0; ki < kr; ++ki) {
      const double av = arow[ki];
      for (int64_t ni = 0; ni < nr; ++ni) {
        acc[ki][ni] += av * brow[ni];
      }
    }
  }
  for (int64_t ki = 0; ki < kr; ++ki) {
    for (int64_t ni = 0; ni < nr; ++ni) {
      c[ki * ldc + ni] = acc[ki][ni];
    }
  }
}

}  // namespace detail

// C(K,N) (+)= A(M,K)ᵀ·B(M,N); the weight-gradient shape (sum over rows).
// Iterates m ascending, so each output element accumulates in a fixed order.
// M is blocked so the active B slice stays cache-resident across k tiles.
inline void gemm_tn(int64_t M, int64_t N, int64_t K, const double* a, int64_t lda,
                    const double* b, int64_t ldb, double* c, int64_t ldc, bool accumulate) {
  using namespace detail;
  constexpr int64_t kMB = 128;
  for (int64_t m0 = 0; m0 < M; m0 += kMB) {
    const int64_t mb = std::min(kMB, M - m0);
    const bool acc_block = accumulate || m0 > 0;
    for (int64_t k0 = 0; k0 < K; k0 += kMR) {
      const int64_t kr = std::min(kMR, K - k0);
      for (int64_t n0 = 0; n0 < N; n0 += kNR) {
        const int64_t nr = std::min(kNR, N - n0);
        if (kr == kMR && nr == kNR) {
          micro_tn_main(mb, a + m0 * lda + k0, lda, b + m0 * ldb + n0, ldb,
                        c + k0 * ldc + n0, ldc, acc_block);
        } else {
          micro_tn_edge(kr, nr, mb, a + m0 * lda + k0, lda, b + m0 * ldb + n0, ldb,
                        c + k0 * ldc + n0, ldc, acc_block);
        }
      }
    }
  }
}

inline void transpose(int64_t rows, int64_t cols, const double* src, double* dst) {
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      dst[c * rows + r] = src[r * cols + c];
    }
  }
}

// im2col for one (H,W,C) image, cross-correlation with zero padding.
// Row r = output position (oh,ow); column = (kh,kw,c) flattened, matching a
// (kh,kw,c_in,c_out) kernel reshaped to (kh·kw·c_in, c_out).
inline void im2col2d(const double* img, int64_t H, int64_t W, int64_t C, int64_t kh,
                     int64_t kw, int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t OH,
                     int64_t OW, double* cols) {
  const int64_t K = kh * kw * C;
  for (int64_t oh = 0; oh < OH; ++oh) {
    for (int64_t ow = 0; ow < OW; ++ow) {
      double* row = cols + (oh * OW + ow) * K;
      for (int64_t dh = 0; dh < kh; ++dh) {
        const int64_t ih = oh * sh + dh - ph;
        for (int64_t dw = 0; dw < kw; ++dw) {
          const int64_t iw = ow * sw + dw - pw;
          double* dst = row + (dh * kw + dw) * C;
          if (ih < 0 || ih >= H || iw < 0 || iw >= W) {
            std::fill(dst, dst + C, 0.0);
          } else {
            const double* src = img + (ih * W + iw) * C;
            std::copy(src, src + C, dst);
          }
        }
      }
    }
  }
}

inline void col2im2d(const double* cols, int64_t H, int64_t W, int64_t C, int64_t kh,
                     int64_t kw, int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t OH,
                     int64_t OW, double* img_grad) {
  const int64_t K = kh * kw * C;
  for (int64_t oh = 0; oh < OH; ++oh) {
    for (int64_t ow = 0; ow < OW; ++ow) {
      const double* row = cols + (oh * OW + ow) * K;
      for (int64_t dh = 0; dh < kh; ++dh) {
        const int64_t ih = oh * sh + dh - ph;
        if (ih < 0 || ih >= H) continue;
        for (int64_t dw = 0; dw < kw; ++dw) {
          const int64_t iw = ow * sw + dw - pw;
          if (iw < 0 || iw >= W) continue;
          const double* src = row + (dh * kw + dw) * C;
          double* dst = img_grad + (ih * W + iw) * C;
          for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// im2col for one (T,H,W,C) volume, with zero padding on all axes.
// Row r = output position (ot,oh,ow); column = (kt,kh,kw,c) flattened.
inline void im2col3d(const double* vol, int64_t T, int64_t H, int64_t W, int64_t C,
                     int64_t kt, int64_t kh, int64_t kw, int64_t st, int64_t sh, int64_t sw,
                     int64_t pt, int64_t ph, int64_t pw, int64_t OT, int64_t OH, int64_t OW,
                     double* cols) {
  const int64_t K = kt * kh * kw * C;
  for (int64_t ot = 0; ot < OT; ++ot) {
    for (int64_t oh = 0; oh < OH; ++oh) {
      for (int64_t ow = 0; ow < OW; ++ow) {
        double* row = cols + ((ot * OH + oh) * OW + ow) * K;
        for (int64_t dt = 0; dt < kt; ++dt) {
          const int64_t it = ot * st + dt - pt;
          for (int64_t dh = 0; dh < kh; ++dh) {
            const int64_t ih = oh * sh + dh - ph;
            for (int64_t dw = 0; dw < kw; ++dw) {
              const int64_t iw = ow * sw + dw - pw;
              double* dst = row + ((dt * kh + dh) * kw + dw) * C;
              if (it < 0 || it >= T || ih < 0 || ih >= H || iw < 0 || iw >= W) {
                std::fill(dst, dst + C, 0.0);
              } else {
                const double* src = vol + ((it * H + ih) * W + iw) * C;
                std::copy(src, src + C, dst);
              }
            }
          }
        }
      }
    }
  }
}

inline void col2im3d(const double* cols, int64_t T, int64_t H, int64_t W, int64_t C,
                     int64_t kt, int64_t kh, int64_t kw, int64_t st, int64_t sh, int64_t sw,
                     int64_t pt, int64_t ph, int64_t pw, int64_t OT, int64_t OH, int64_t OW,
                     double* vol_grad) {
  const int64_t K = kt * kh * kw * C;
  for (int64_t ot = 0; ot < OT; ++ot) {
    for (int64_t oh = 0; oh < OH; ++oh) {
      for (int64_t ow = 0; ow < OW; ++ow) {
        const double* row = cols + ((ot * OH + oh) * OW + ow) * K;
        for (int64_t dt = 0; dt < kt; ++dt) {
          const int64_t it = ot * st + dt - pt;
          if (it < 0 || it >= T) continue;
          for (int64_t dh = 0; dh < kh; ++dh) {
            const int64_t ih = oh * sh + dh - ph;
            if (ih < 0 || ih >= H) continue;
            for (int64_t dw = 0; dw < kw; ++dw) {
              const int64_t iw = ow * sw + dw - pw;
              if (iw < 0 || iw >= W) continue;
              const double* src = row + ((dt * kh + dh) * kw + dw) * C;
              double* dst = vol_grad + ((it * H + ih) * W + iw) * C;
              for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
            }
          }
        }
      }
    }
  }
}

}  // namespace surge::kern
