#pragma once

#include <cstdint>
#include <string>

namespace ctseg::kern {

// Geometry of one 2-d cross-correlation.
// Layouts: input [n][h][w][cin], kernel [kh][kw][cin][cout],
// output [n][oh][ow][cout]. Padding is explicit (computed by the caller).
struct ConvGeom {
  int n = 0, h = 0, w = 0, cin = 0;
  int kh = 0, kw = 0, cout = 0;
  int stride = 1, dilation = 1;
  int pad_y = 0, pad_x = 0;
  int oh = 0, ow = 0;
};

// One implementation of the arithmetic inner loops. Every function is pure
// over its arguments. Backward kernels accumulate (+=) into their target so
// gradient contributions from several consumers stack in traversal order.
//
// Contract shared by all implementations: for each output element the
// reduction runs in ascending index order (ky, kx, ci / k / co as written in
// the scalar reference). Vector variants may only parallelize across output
// elements, never reorder a reduction, so every table is bit-identical.
struct Kernels {
  void (*conv2d_forward)(const ConvGeom&, const double* in, const double* k,
                         const double* bias, double* out) = nullptr;
  // k_swapped has layout [kh][kw][cout][cin] (kernel with last two axes swapped).
  void (*conv2d_backward_input)(const ConvGeom&, const double* gout,
                                const double* k_swapped, double* gin) = nullptr;
  void (*conv2d_backward_kernel)(const ConvGeom&, const double* in,
                                 const double* gout, double* gk) = nullptr;
  // c[m][n] = sum_k a[m][k] * b[k][n]; c is overwritten.
  void (*matmul)(int m, int k, int n, const double* a, const double* b,
                 double* c) = nullptr;
  void (*add)(int64_t n, const double* a, const double* b, double* out) = nullptr;
  void (*mul)(int64_t n, const double* a, const double* b, double* out) = nullptr;
  void (*relu)(int64_t n, const double* x, double* out) = nullptr;
  // gx += g where x > 0
  void (*relu_backward)(int64_t n, const double* x, const double* g,
                        double* gx) = nullptr;
  // dst += src
  void (*accumulate)(int64_t n, const double* src, double* dst) = nullptr;
  // dst += alpha * src
  void (*scale_accumulate)(int64_t n, double alpha, const double* src,
                           double* dst) = nullptr;
};

// Single-precision variants of the convolution inner loops, used by the
// optional float32 compute mode. Same ordering contract as Kernels.
struct KernelsF {
  void (*conv2d_forward)(const ConvGeom&, const float* in, const float* k,
                         const float* bias, float* out) = nullptr;
  void (*conv2d_backward_input)(const ConvGeom&, const float* gout,
                                const float* k_swapped, float* gin) = nullptr;
  void (*conv2d_backward_kernel)(const ConvGeom&, const float* in,
                                 const float* gout, float* gk) = nullptr;
};

enum class Isa { scalar = 0, avx2 = 1 };

// Active table. Resolved once at startup: AVX2 when the CPU supports it,
// scalar otherwise; the CTSEG_SIMD environment variable ("scalar" | "avx2" |
// "auto") overrides.
const Kernels& active();
const KernelsF& active_f();
Isa active_isa();
std::string isa_name(Isa isa);

bool isa_supported(Isa isa);
const Kernels& table(Isa isa);  // throws if unsupported; for equivalence tests
const KernelsF& table_f(Isa isa);
void force_isa(Isa isa);        // throws if unsupported

}  // namespace ctseg::kern
