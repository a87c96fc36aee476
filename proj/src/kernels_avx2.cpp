// AVX2 kernels, 4 doubles per vector. Vectorization runs across output
// elements (the cout / cin / column axis); each lane performs the same
// reduction sequence as the scalar reference, so results match it bitwise.
// No FMA: multiply and add stay separate, matching -ffp-contract=off.

#include "ctseg/kernels.hpp"

#include <immintrin.h>

#include <vector>

namespace ctseg::kern {

namespace {

// Channel blocks form the outer loop so the kernel slice for one block
// (kh*kw*cin*4 doubles) stays cache-resident across all output pixels. The
// per-element reduction order (ky, kx, ci ascending) matches the scalar
// reference exactly.
void conv2d_forward_avx2(const ConvGeom& g, const double* in, const double* k,
                         const double* bias, double* out) {
  const int co4 = g.cout & ~3;
  // gather the kernel slice of one co block into a contiguous scratch pad
  std::vector<double> pad((size_t)g.kh * g.kw * g.cin * 4);
  for (int co = 0; co < g.cout; co += 4) {
    const bool full = co + 4 <= g.cout;
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int ci = 0; ci < g.cin; ++ci) {
          const double* src = k + ((int64_t)t * g.cin + ci) * g.cout + co;
          double* dst = pad.data() + ((size_t)t * g.cin + ci) * 4;
          dst[0] = src[0];
          dst[1] = src[1];
          dst[2] = src[2];
          dst[3] = src[3];
        }
    }
    for (int n = 0; n < g.n; ++n) {
      for (int oy = 0; oy < g.oh; ++oy) {
        for (int ox = 0; ox < g.ow; ++ox) {
          double* out_px =
              out + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
          const int iy0 = oy * g.stride - g.pad_y;
          const int ix0 = ox * g.stride - g.pad_x;
          if (full) {
            __m256d acc =
                bias ? _mm256_loadu_pd(bias + co) : _mm256_setzero_pd();
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                const double* in_px =
                    in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                const double* k_tap =
                    pad.data() + ((size_t)(ky * g.kw + kx) * g.cin) * 4;
                for (int ci = 0; ci < g.cin; ++ci) {
                  const __m256d v = _mm256_set1_pd(in_px[ci]);
                  const __m256d kw4 = _mm256_loadu_pd(k_tap + (size_t)ci * 4);
                  acc = _mm256_add_pd(acc, _mm256_mul_pd(v, kw4));
                }
              }
            }
            _mm256_storeu_pd(out_px + co, acc);
          } else {
            for (int c = co; c < g.cout; ++c) {
              double acc = bias ? bias[c] : 0.0;
              for (int ky = 0; ky < g.kh; ++ky) {
                const int iy = iy0 + ky * g.dilation;
                if (iy < 0 || iy >= g.h) continue;
                for (int kx = 0; kx < g.kw; ++kx) {
                  const int ix = ix0 + kx * g.dilation;
                  if (ix < 0 || ix >= g.w) continue;
                  const double* in_px =
                      in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                  const double* k_tap =
                      k + ((int64_t)ky * g.kw + kx) * g.cin * g.cout;
                  for (int ci = 0; ci < g.cin; ++ci)
                    acc += in_px[ci] * k_tap[(int64_t)ci * g.cout + c];
                }
              }
              out_px[c] = acc;
            }
          }
        }
      }
    }
  }
  (void)co4;
}

void conv2d_backward_input_avx2(const ConvGeom& g, const double* gout,
                                const double* k_swapped, double* gin) {
  // one ci block per pass; its swapped-kernel slice stays cache-resident
  std::vector<double> pad((size_t)g.kh * g.kw * g.cout * 4);
  for (int ci = 0; ci < g.cin; ci += 4) {
    const bool full = ci + 4 <= g.cin;
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int co = 0; co < g.cout; ++co) {
          const double* src = k_swapped + ((int64_t)t * g.cout + co) * g.cin + ci;
          double* dst = pad.data() + ((size_t)t * g.cout + co) * 4;
          dst[0] = src[0];
          dst[1] = src[1];
          dst[2] = src[2];
          dst[3] = src[3];
        }
    }
    for (int n = 0; n < g.n; ++n) {
      for (int iy = 0; iy < g.h; ++iy) {
        for (int ix = 0; ix < g.w; ++ix) {
          double* gin_px = gin + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
          if (full) {
            __m256d acc = _mm256_loadu_pd(gin_px + ci);
            for (int ky = 0; ky < g.kh; ++ky) {
              const int ty = iy + g.pad_y - ky * g.dilation;
              if (ty < 0 || ty % g.stride != 0) continue;
              const int oy = ty / g.stride;
              if (oy >= g.oh) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int tx = ix + g.pad_x - kx * g.dilation;
                if (tx < 0 || tx % g.stride != 0) continue;
                const int ox = tx / g.stride;
                if (ox >= g.ow) continue;
                const double* gout_px =
                    gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
                const double* kt_tap =
                    pad.data() + (size_t)(ky * g.kw + kx) * g.cout * 4;
                for (int co = 0; co < g.cout; ++co) {
                  const __m256d gv = _mm256_set1_pd(gout_px[co]);
                  const __m256d kt4 = _mm256_loadu_pd(kt_tap + (size_t)co * 4);
                  acc = _mm256_add_pd(acc, _mm256_mul_pd(gv, kt4));
                }
              }
            }
            _mm256_storeu_pd(gin_px + ci, acc);
          } else {
            for (int c = ci; c < g.cin; ++c) {
              double acc = gin_px[c];
              for (int ky = 0; ky < g.kh; ++ky) {
                const int ty = iy + g.pad_y - ky * g.dilation;
                if (ty < 0 || ty % g.stride != 0) continue;
                const int oy = ty / g.stride;
                if (oy >= g.oh) continue;
                for (int kx = 0; kx < g.kw; ++kx) {
                  const int tx = ix + g.pad_x - kx * g.dilation;
                  if (tx < 0 || tx % g.stride != 0) continue;
                  const int ox = tx / g.stride;
                  if (ox >= g.ow) continue;
                  const double* gout_px =
                      gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
                  const double* kt_tap =
                      k_swapped + ((int64_t)ky * g.kw + kx) * g.cout * g.cin;
                  for (int co = 0; co < g.cout; ++co)
                    acc += gout_px[co] * kt_tap[(int64_t)co * g.cin + c];
                }
              }
              gin_px[c] = acc;
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_kernel_avx2(const ConvGeom& g, const double* in,
                                 const double* gout, double* gk) {
  // per co block the gradient slice (kh*kw*cin*4 doubles) stays hot while
  // the activations stream past; contributions per element still arrive in
  // ascending (n, oy, ox) order
  std::vector<double> pad((size_t)g.kh * g.kw * g.cin * 4);
  for (int co = 0; co < g.cout; co += 4) {
    const bool full = co + 4 <= g.cout;
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int ci = 0; ci < g.cin; ++ci) {
          const double* src = gk + ((int64_t)t * g.cin + ci) * g.cout + co;
          double* dst = pad.data() + ((size_t)t * g.cin + ci) * 4;
          dst[0] = src[0];
          dst[1] = src[1];
          dst[2] = src[2];
          dst[3] = src[3];
        }
    }
    for (int n = 0; n < g.n; ++n) {
      for (int oy = 0; oy < g.oh; ++oy) {
        for (int ox = 0; ox < g.ow; ++ox) {
          const double* gout_px =
              gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
          const int iy0 = oy * g.stride - g.pad_y;
          const int ix0 = ox * g.stride - g.pad_x;
          if (full) {
            const __m256d gv = _mm256_loadu_pd(gout_px + co);
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                const double* in_px =
                    in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                double* gk_tap =
                    pad.data() + (size_t)(ky * g.kw + kx) * g.cin * 4;
                for (int ci = 0; ci < g.cin; ++ci) {
                  const __m256d v = _mm256_set1_pd(in_px[ci]);
                  __m256d acc = _mm256_loadu_pd(gk_tap + (size_t)ci * 4);
                  acc = _mm256_add_pd(acc, _mm256_mul_pd(v, gv));
                  _mm256_storeu_pd(gk_tap + (size_t)ci * 4, acc);
                }
              }
            }
          } else {
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                const double* in_px =
                    in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                double* gk_tap =
                    gk + ((int64_t)ky * g.kw + kx) * g.cin * g.cout;
                for (int ci = 0; ci < g.cin; ++ci) {
                  const double vs = in_px[ci];
                  double* gk_row = gk_tap + (int64_t)ci * g.cout;
                  for (int c = co; c < g.cout; ++c)
                    gk_row[c] += vs * gout_px[c];
                }
              }
            }
          }
        }
      }
    }
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int ci = 0; ci < g.cin; ++ci) {
          double* dst = gk + ((int64_t)t * g.cin + ci) * g.cout + co;
          const double* src = pad.data() + ((size_t)t * g.cin + ci) * 4;
          dst[0] = src[0];
          dst[1] = src[1];
          dst[2] = src[2];
          dst[3] = src[3];
        }
    }
  }
}

void matmul_avx2(int m, int k, int n, const double* a, const double* b,
                 double* c) {
  const int n4 = n & ~3;
  for (int i = 0; i < m; ++i) {
    double* c_row = c + (int64_t)i * n;
    for (int j = 0; j < n; ++j) c_row[j] = 0.0;
    const double* a_row = a + (int64_t)i * k;
    for (int p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(a_row[p]);
      const double* b_row = b + (int64_t)p * n;
      for (int j = 0; j < n4; j += 4) {
        __m256d acc = _mm256_loadu_pd(c_row + j);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, _mm256_loadu_pd(b_row + j)));
        _mm256_storeu_pd(c_row + j, acc);
      }
      const double avs = a_row[p];
      for (int j = n4; j < n; ++j) c_row[j] += avs * b_row[j];
    }
  }
}

void add_avx2(int64_t n, const double* a, const double* b, double* out) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_avx2(int64_t n, const double* a, const double* b, double* out) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void relu_avx2(int64_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(int64_t n, const double* x, const double* g,
                        double* gx) {
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d cur = _mm256_loadu_pd(gx + i);
    const __m256d sum = _mm256_add_pd(cur, _mm256_loadu_pd(g + i));
    // blend keeps gx untouched (not gx + 0.0) where x <= 0
    _mm256_storeu_pd(gx + i, _mm256_blendv_pd(cur, sum, mask));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += g[i];
  }
}

void accumulate_avx2(int64_t n, const double* src, double* dst) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i),
                                            _mm256_loadu_pd(src + i)));
  for (; i < n; ++i) dst[i] += src[i];
}

void scale_accumulate_avx2(int64_t n, double alpha, const double* src,
                           double* dst) {
  const __m256d a = _mm256_set1_pd(alpha);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_mul_pd(a, _mm256_loadu_pd(src + i));
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), v));
  }
  for (; i < n; ++i) dst[i] += alpha * src[i];
}


// ---- float32 variants, 8 lanes, same blocking and ordering contract ----

void conv2d_forward_avx2_f(const ConvGeom& g, const float* in, const float* k,
                           const float* bias, float* out) {
  std::vector<float> pad((size_t)g.kh * g.kw * g.cin * 8);
  for (int co = 0; co < g.cout; co += 8) {
    const bool full = co + 8 <= g.cout;
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int ci = 0; ci < g.cin; ++ci) {
          const float* src = k + ((int64_t)t * g.cin + ci) * g.cout + co;
          float* dst = pad.data() + ((size_t)t * g.cin + ci) * 8;
          for (int j = 0; j < 8; ++j) dst[j] = src[j];
        }
    }
    for (int n = 0; n < g.n; ++n) {
      for (int oy = 0; oy < g.oh; ++oy) {
        for (int ox = 0; ox < g.ow; ++ox) {
          float* out_px = out + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
          const int iy0 = oy * g.stride - g.pad_y;
          const int ix0 = ox * g.stride - g.pad_x;
          if (full) {
            __m256 acc = bias ? _mm256_loadu_ps(bias + co) : _mm256_setzero_ps();
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                const float* in_px =
                    in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                const float* k_tap =
                    pad.data() + ((size_t)(ky * g.kw + kx) * g.cin) * 8;
                for (int ci = 0; ci < g.cin; ++ci) {
                  const __m256 v = _mm256_set1_ps(in_px[ci]);
                  acc = _mm256_add_ps(
                      acc, _mm256_mul_ps(v, _mm256_loadu_ps(k_tap + (size_t)ci * 8)));
                }
              }
            }
            _mm256_storeu_ps(out_px + co, acc);
          } else {
            for (int c = co; c < g.cout; ++c) {
              float acc = bias ? bias[c] : 0.0f;
              for (int ky = 0; ky < g.kh; ++ky) {
                const int iy = iy0 + ky * g.dilation;
                if (iy < 0 || iy >= g.h) continue;
                for (int kx = 0; kx < g.kw; ++kx) {
                  const int ix = ix0 + kx * g.dilation;
                  if (ix < 0 || ix >= g.w) continue;
                  const float* in_px =
                      in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                  const float* k_tap =
                      k + ((int64_t)ky * g.kw + kx) * g.cin * g.cout;
                  for (int ci = 0; ci < g.cin; ++ci)
                    acc += in_px[ci] * k_tap[(int64_t)ci * g.cout + c];
                }
              }
              out_px[c] = acc;
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input_avx2_f(const ConvGeom& g, const float* gout,
                                  const float* k_swapped, float* gin) {
  std::vector<float> pad((size_t)g.kh * g.kw * g.cout * 8);
  for (int ci = 0; ci < g.cin; ci += 8) {
    const bool full = ci + 8 <= g.cin;
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int co = 0; co < g.cout; ++co) {
          const float* src = k_swapped + ((int64_t)t * g.cout + co) * g.cin + ci;
          float* dst = pad.data() + ((size_t)t * g.cout + co) * 8;
          for (int j = 0; j < 8; ++j) dst[j] = src[j];
        }
    }
    for (int n = 0; n < g.n; ++n) {
      for (int iy = 0; iy < g.h; ++iy) {
        for (int ix = 0; ix < g.w; ++ix) {
          float* gin_px = gin + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
          if (full) {
            __m256 acc = _mm256_loadu_ps(gin_px + ci);
            for (int ky = 0; ky < g.kh; ++ky) {
              const int ty = iy + g.pad_y - ky * g.dilation;
              if (ty < 0 || ty % g.stride != 0) continue;
              const int oy = ty / g.stride;
              if (oy >= g.oh) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int tx = ix + g.pad_x - kx * g.dilation;
                if (tx < 0 || tx % g.stride != 0) continue;
                const int ox = tx / g.stride;
                if (ox >= g.ow) continue;
                const float* gout_px =
                    gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
                const float* kt_tap =
                    pad.data() + (size_t)(ky * g.kw + kx) * g.cout * 8;
                for (int co = 0; co < g.cout; ++co) {
                  const __m256 gv = _mm256_set1_ps(gout_px[co]);
                  acc = _mm256_add_ps(
                      acc, _mm256_mul_ps(gv, _mm256_loadu_ps(kt_tap + (size_t)co * 8)));
                }
              }
            }
            _mm256_storeu_ps(gin_px + ci, acc);
          } else {
            for (int c = ci; c < g.cin; ++c) {
              float acc = gin_px[c];
              for (int ky = 0; ky < g.kh; ++ky) {
                const int ty = iy + g.pad_y - ky * g.dilation;
                if (ty < 0 || ty % g.stride != 0) continue;
                const int oy = ty / g.stride;
                if (oy >= g.oh) continue;
                for (int kx = 0; kx < g.kw; ++kx) {
                  const int tx = ix + g.pad_x - kx * g.dilation;
                  if (tx < 0 || tx % g.stride != 0) continue;
                  const int ox = tx / g.stride;
                  if (ox >= g.ow) continue;
                  const float* gout_px =
                      gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
                  const float* kt_tap =
                      k_swapped + ((int64_t)ky * g.kw + kx) * g.cout * g.cin;
                  for (int co = 0; co < g.cout; ++co)
                    acc += gout_px[co] * kt_tap[(int64_t)co * g.cin + c];
                }
              }
              gin_px[c] = acc;
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_kernel_avx2_f(const ConvGeom& g, const float* in,
                                   const float* gout, float* gk) {
  std::vector<float> pad((size_t)g.kh * g.kw * g.cin * 8);
  for (int co = 0; co < g.cout; co += 8) {
    const bool full = co + 8 <= g.cout;
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int ci = 0; ci < g.cin; ++ci) {
          const float* src = gk + ((int64_t)t * g.cin + ci) * g.cout + co;
          float* dst = pad.data() + ((size_t)t * g.cin + ci) * 8;
          for (int j = 0; j < 8; ++j) dst[j] = src[j];
        }
    }
    for (int n = 0; n < g.n; ++n) {
      for (int oy = 0; oy < g.oh; ++oy) {
        for (int ox = 0; ox < g.ow; ++ox) {
          const float* gout_px =
              gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
          const int iy0 = oy * g.stride - g.pad_y;
          const int ix0 = ox * g.stride - g.pad_x;
          if (full) {
            const __m256 gv = _mm256_loadu_ps(gout_px + co);
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                const float* in_px =
                    in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                float* gk_tap = pad.data() + (size_t)(ky * g.kw + kx) * g.cin * 8;
                for (int ci = 0; ci < g.cin; ++ci) {
                  const __m256 v = _mm256_set1_ps(in_px[ci]);
                  __m256 acc = _mm256_loadu_ps(gk_tap + (size_t)ci * 8);
                  acc = _mm256_add_ps(acc, _mm256_mul_ps(v, gv));
                  _mm256_storeu_ps(gk_tap + (size_t)ci * 8, acc);
                }
              }
            }
          } else {
            for (int ky = 0; ky < g.kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                const float* in_px =
                    in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
                float* gk_tap = gk + ((int64_t)ky * g.kw + kx) * g.cin * g.cout;
                for (int ci = 0; ci < g.cin; ++ci) {
                  const float vs = in_px[ci];
                  float* gk_row = gk_tap + (int64_t)ci * g.cout;
                  for (int c = co; c < g.cout; ++c)
                    gk_row[c] += vs * gout_px[c];
                }
              }
            }
          }
        }
      }
    }
    if (full) {
      for (int t = 0; t < g.kh * g.kw; ++t)
        for (int ci = 0; ci < g.cin; ++ci) {
          float* dst = gk + ((int64_t)t * g.cin + ci) * g.cout + co;
          const float* src = pad.data() + ((size_t)t * g.cin + ci) * 8;
          for (int j = 0; j < 8; ++j) dst[j] = src[j];
        }
    }
  }
}

}  // namespace

const Kernels& avx2_kernels() {
  static const Kernels k = [] {
    Kernels t;
    t.conv2d_forward = conv2d_forward_avx2;
    t.conv2d_backward_input = conv2d_backward_input_avx2;
    t.conv2d_backward_kernel = conv2d_backward_kernel_avx2;
    t.matmul = matmul_avx2;
    t.add = add_avx2;
    t.mul = mul_avx2;
    t.relu = relu_avx2;
    t.relu_backward = relu_backward_avx2;
    t.accumulate = accumulate_avx2;
    t.scale_accumulate = scale_accumulate_avx2;
    return t;
  }();
  return k;
}

const KernelsF& avx2_kernels_f() {
  static const KernelsF k = [] {
    KernelsF t;
    t.conv2d_forward = conv2d_forward_avx2_f;
    t.conv2d_backward_input = conv2d_backward_input_avx2_f;
    t.conv2d_backward_kernel = conv2d_backward_kernel_avx2_f;
    return t;
  }();
  return k;
}

}  // namespace ctseg::kern
