// Scalar reference kernels. These define the canonical arithmetic order;
// every vector variant must reproduce them bit-for-bit.

#include "ctseg/kernels.hpp"

namespace ctseg::kern {

namespace {

template <typename T>
void conv2d_forward_scalar(const ConvGeom& g, const T* in, const T* k,
                           const T* bias, T* out) {
  for (int n = 0; n < g.n; ++n) {
    for (int oy = 0; oy < g.oh; ++oy) {
      for (int ox = 0; ox < g.ow; ++ox) {
        T* out_px = out + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
        const int iy0 = oy * g.stride - g.pad_y;
        const int ix0 = ox * g.stride - g.pad_x;
        for (int co = 0; co < g.cout; ++co) out_px[co] = bias ? bias[co] : T(0);
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = iy0 + ky * g.dilation;
          if (iy < 0 || iy >= g.h) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ix0 + kx * g.dilation;
            if (ix < 0 || ix >= g.w) continue;
            const T* in_px = in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
            const T* k_tap = k + ((int64_t)ky * g.kw + kx) * g.cin * g.cout;
            for (int ci = 0; ci < g.cin; ++ci) {
              const T v = in_px[ci];
              const T* k_row = k_tap + (int64_t)ci * g.cout;
              for (int co = 0; co < g.cout; ++co) out_px[co] += v * k_row[co];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input_scalar(const ConvGeom& g, const T* gout,
                                  const T* k_swapped, T* gin) {
  for (int n = 0; n < g.n; ++n) {
    for (int iy = 0; iy < g.h; ++iy) {
      for (int ix = 0; ix < g.w; ++ix) {
        T* gin_px = gin + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
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
            const T* gout_px =
                gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
            const T* kt_tap =
                k_swapped + ((int64_t)ky * g.kw + kx) * g.cout * g.cin;
            for (int co = 0; co < g.cout; ++co) {
              const T gv = gout_px[co];
              const T* kt_row = kt_tap + (int64_t)co * g.cin;
              for (int ci = 0; ci < g.cin; ++ci) gin_px[ci] += gv * kt_row[ci];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_kernel_scalar(const ConvGeom& g, const T* in,
                                   const T* gout, T* gk) {
  // Single pass over output positions; per kernel element the contributions
  // arrive in ascending (n, oy, ox) order.
  for (int n = 0; n < g.n; ++n) {
    for (int oy = 0; oy < g.oh; ++oy) {
      for (int ox = 0; ox < g.ow; ++ox) {
        const T* gout_px =
            gout + (((int64_t)n * g.oh + oy) * g.ow + ox) * g.cout;
        const int iy0 = oy * g.stride - g.pad_y;
        const int ix0 = ox * g.stride - g.pad_x;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = iy0 + ky * g.dilation;
          if (iy < 0 || iy >= g.h) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ix0 + kx * g.dilation;
            if (ix < 0 || ix >= g.w) continue;
            const T* in_px =
                in + (((int64_t)n * g.h + iy) * g.w + ix) * g.cin;
            T* gk_tap = gk + ((int64_t)ky * g.kw + kx) * g.cin * g.cout;
            for (int ci = 0; ci < g.cin; ++ci) {
              const T v = in_px[ci];
              T* gk_row = gk_tap + (int64_t)ci * g.cout;
              for (int co = 0; co < g.cout; ++co) gk_row[co] += v * gout_px[co];
            }
          }
        }
      }
    }
  }
}

void matmul_scalar(int m, int k, int n, const double* a, const double* b,
                   double* c) {
  for (int i = 0; i < m; ++i) {
    double* c_row = c + (int64_t)i * n;
    for (int j = 0; j < n; ++j) c_row[j] = 0.0;
    const double* a_row = a + (int64_t)i * k;
    for (int p = 0; p < k; ++p) {
      const double av = a_row[p];
      const double* b_row = b + (int64_t)p * n;
      for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

void add_scalar(int64_t n, const double* a, const double* b, double* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_scalar(int64_t n, const double* a, const double* b, double* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void relu_scalar(int64_t n, const double* x, double* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(int64_t n, const double* x, const double* g,
                          double* gx) {
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += g[i];
  }
}

void accumulate_scalar(int64_t n, const double* src, double* dst) {
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void scale_accumulate_scalar(int64_t n, double alpha, const double* src,
                             double* dst) {
  for (int64_t i = 0; i < n; ++i) dst[i] += alpha * src[i];
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k = [] {
    Kernels t;
    t.conv2d_forward = conv2d_forward_scalar<double>;
    t.conv2d_backward_input = conv2d_backward_input_scalar<double>;
    t.conv2d_backward_kernel = conv2d_backward_kernel_scalar<double>;
    t.matmul = matmul_scalar;
    t.add = add_scalar;
    t.mul = mul_scalar;
    t.relu = relu_scalar;
    t.relu_backward = relu_backward_scalar;
    t.accumulate = accumulate_scalar;
    t.scale_accumulate = scale_accumulate_scalar;
    return t;
  }();
  return k;
}

const KernelsF& scalar_kernels_f() {
  static const KernelsF k = [] {
    KernelsF t;
    t.conv2d_forward = conv2d_forward_scalar<float>;
    t.conv2d_backward_input = conv2d_backward_input_scalar<float>;
    t.conv2d_backward_kernel = conv2d_backward_kernel_scalar<float>;
    return t;
  }();
  return k;
}

}  // namespace ctseg::kern
