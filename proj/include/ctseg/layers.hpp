#pragma once

#include <cstdint>
#include <vector>

#include "ctseg/tensor.hpp"

namespace ctseg {

enum class Padding { same, valid };
enum class Phase { train, eval };
enum class Init { glorot_normal, he_normal, zeros };

// Deterministic parameter draw. Variances: glorot 2/(fan_in+fan_out),
// he 2/fan_in. Rank-4 shapes are (kh, kw, cin, cout); rank-2 are (d_in, d_out).
Tensor init_params(Init kind, Shape shape, uint64_t seed,
                   bool requires_grad = true);

struct ConvOutGeom {
  int oh = 0, ow = 0, pad_y = 0, pad_x = 0;
};
ConvOutGeom conv_out_geom(int h, int w, int kh, int kw, int stride,
                          int dilation, Padding padding);

// input [N,H,W,Cin], kernel [kh,kw,Cin,Cout], optional bias [Cout].
// Cross-correlation, differentiable in input, kernel and bias.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int dilation, Padding padding);

// Running statistics of one normalization layer.
struct BatchNormState {
  std::vector<double> running_mean, running_var;
  int64_t updates = 0;
};

// Train phase normalizes with batch statistics over (N,H,W) per channel and
// updates the running averages; eval phase uses the running statistics and
// requires at least one prior update.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Phase phase, double epsilon = 1e-3,
                  double momentum = 0.99);

// Stride-2 2x2 mean pooling; spatial extents must be even.
Tensor down2(const Tensor& input);
// Nearest-neighbor doubling of both spatial extents.
Tensor up2(const Tensor& input);

// input [N,D] x weight [D,D'] + bias [D'].
Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const Tensor& bias);

// --- layer bundles used by the network builders

struct Conv2dLayer {
  Tensor kernel;  // [kh,kw,cin,cout]
  Tensor bias;    // optional (undefined when the conv feeds a norm)
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::same;
  Tensor forward(const Tensor& x) const {
    return conv2d(x, kernel, bias, stride, dilation, padding);
  }
};

struct BatchNormLayer {
  Tensor gamma, beta;
  BatchNormState state;
  double epsilon = 1e-3;
  double momentum = 0.99;
  Tensor forward(const Tensor& x, Phase phase) {
    return batch_norm(x, gamma, beta, state, phase, epsilon, momentum);
  }
};

struct FcLayer {
  Tensor weight, bias;
  Tensor forward(const Tensor& x) const {
    return fully_connected(x, weight, bias);
  }
};

Conv2dLayer make_conv(int kh, int kw, int cin, int cout, int stride,
                      int dilation, Padding padding, bool with_bias, Init init,
                      uint64_t seed);
BatchNormLayer make_batch_norm(int channels);
FcLayer make_fc(int d_in, int d_out, Init init, uint64_t seed);

}  // namespace ctseg
