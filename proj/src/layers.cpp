#include "ctseg/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "ctseg/kernels.hpp"
#include "ctseg/rng.hpp"

namespace ctseg {

namespace {

void fan_in_out(const Shape& shape, int64_t* fan_in, int64_t* fan_out) {
  if (shape.size() == 4) {
    const int64_t rf = (int64_t)shape[0] * shape[1];
    *fan_in = rf * shape[2];
    *fan_out = rf * shape[3];
  } else if (shape.size() == 2) {
    *fan_in = shape[0];
    *fan_out = shape[1];
  } else {
    const int64_t n = shape_numel(shape);
    *fan_in = n;
    *fan_out = n;
  }
}

}  // namespace

Tensor init_params(Init kind, Shape shape, uint64_t seed, bool requires_grad) {
  const int64_t count = shape_numel(shape);
  std::vector<double> data(count, 0.0);
  if (kind != Init::zeros) {
    int64_t fan_in = 0, fan_out = 0;
    fan_in_out(shape, &fan_in, &fan_out);
    const double var = kind == Init::glorot_normal
                           ? 2.0 / (double)(fan_in + fan_out)
                           : 2.0 / (double)fan_in;
    const double stddev = std::sqrt(var);
    Rng rng(seed);
    for (int64_t i = 0; i < count; ++i) data[i] = stddev * rng.normal();
  }
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

ConvOutGeom conv_out_geom(int h, int w, int kh, int kw, int stride,
                          int dilation, Padding padding) {
  if (stride < 1 || dilation < 1)
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1");
  const int eff_kh = (kh - 1) * dilation + 1;
  const int eff_kw = (kw - 1) * dilation + 1;
  ConvOutGeom g;
  if (padding == Padding::same) {
    g.oh = (h + stride - 1) / stride;
    g.ow = (w + stride - 1) / stride;
    const int pad_total_y = std::max(0, (g.oh - 1) * stride + eff_kh - h);
    const int pad_total_x = std::max(0, (g.ow - 1) * stride + eff_kw - w);
    g.pad_y = pad_total_y / 2;
    g.pad_x = pad_total_x / 2;
  } else {
    if (h < eff_kh || w < eff_kw)
      throw std::invalid_argument("conv2d: input smaller than kernel footprint");
    g.oh = (h - eff_kh) / stride + 1;
    g.ow = (w - eff_kw) / stride + 1;
  }
  return g;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int dilation, Padding padding) {
  if (input.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,H,W,C]");
  if (kernel.rank() != 4)
    throw std::invalid_argument("conv2d: kernel must be [kh,kw,cin,cout]");
  const int n = input.dim(0), h = input.dim(1), w = input.dim(2),
            cin = input.dim(3);
  const int kh = kernel.dim(0), kw = kernel.dim(1), kcin = kernel.dim(2),
            cout = kernel.dim(3);
  if (kcin != cin)
    throw std::invalid_argument("conv2d: channel mismatch (input " +
                                std::to_string(cin) + ", kernel " +
                                std::to_string(kcin) + ")");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw std::invalid_argument("conv2d: bias must be [cout]");

  const ConvOutGeom og = conv_out_geom(h, w, kh, kw, stride, dilation, padding);
  kern::ConvGeom geom;
  geom.n = n; geom.h = h; geom.w = w; geom.cin = cin;
  geom.kh = kh; geom.kw = kw; geom.cout = cout;
  geom.stride = stride; geom.dilation = dilation;
  geom.pad_y = og.pad_y; geom.pad_x = og.pad_x;
  geom.oh = og.oh; geom.ow = og.ow;

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  const bool f32 = compute_precision() == ComputePrecision::f32;

  Tensor out = make_op_node({n, og.oh, og.ow, cout}, inputs,
                            [geom, has_bias, f32](Node& self) {
    Node& p_in = *self.parents[0];
    Node& p_k = *self.parents[1];
    if (f32) {
      const auto& kr = kern::active_f();
      std::vector<float> gout(self.grad.begin(), self.grad.end());
      if (p_in.requires_grad) {
        std::vector<float> k_swapped((size_t)geom.kh * geom.kw * geom.cout *
                                     geom.cin);
        for (int t = 0; t < geom.kh * geom.kw; ++t) {
          const double* src = p_k.value.data() + (size_t)t * geom.cin * geom.cout;
          float* dst = k_swapped.data() + (size_t)t * geom.cout * geom.cin;
          for (int ci = 0; ci < geom.cin; ++ci)
            for (int co = 0; co < geom.cout; ++co)
              dst[(size_t)co * geom.cin + ci] =
                  (float)src[(size_t)ci * geom.cout + co];
        }
        std::vector<float> gin(p_in.value.size(), 0.0f);
        kr.conv2d_backward_input(geom, gout.data(), k_swapped.data(), gin.data());
        for (size_t i = 0; i < gin.size(); ++i) p_in.grad[i] += gin[i];
      }
      if (p_k.requires_grad) {
        std::vector<float> in_f(p_in.value.begin(), p_in.value.end());
        std::vector<float> gk(p_k.value.size(), 0.0f);
        kr.conv2d_backward_kernel(geom, in_f.data(), gout.data(), gk.data());
        for (size_t i = 0; i < gk.size(); ++i) p_k.grad[i] += gk[i];
      }
    } else {
      const auto& kr = kern::active();
      if (p_in.requires_grad) {
        // kernel with (cin, cout) swapped so the input-grad kernel reads rows
        std::vector<double> k_swapped((size_t)geom.kh * geom.kw * geom.cout *
                                      geom.cin);
        for (int t = 0; t < geom.kh * geom.kw; ++t) {
          const double* src = p_k.value.data() + (size_t)t * geom.cin * geom.cout;
          double* dst = k_swapped.data() + (size_t)t * geom.cout * geom.cin;
          for (int ci = 0; ci < geom.cin; ++ci)
            for (int co = 0; co < geom.cout; ++co)
              dst[(size_t)co * geom.cin + ci] = src[(size_t)ci * geom.cout + co];
        }
        kr.conv2d_backward_input(geom, self.grad.data(), k_swapped.data(),
                                 p_in.grad.data());
      }
      if (p_k.requires_grad)
        kr.conv2d_backward_kernel(geom, p_in.value.data(), self.grad.data(),
                                  p_k.grad.data());
    }
    if (has_bias && self.parents[2]->requires_grad) {
      Node& p_b = *self.parents[2];
      const int64_t px = (int64_t)geom.n * geom.oh * geom.ow;
      for (int64_t i = 0; i < px; ++i) {
        const double* g = self.grad.data() + i * geom.cout;
        for (int co = 0; co < geom.cout; ++co) p_b.grad[co] += g[co];
      }
    }
  });
  if (f32) {
    std::vector<float> in_f(input.data(), input.data() + input.numel());
    std::vector<float> k_f(kernel.data(), kernel.data() + kernel.numel());
    std::vector<float> b_f;
    if (has_bias) b_f.assign(bias.data(), bias.data() + bias.numel());
    std::vector<float> out_f(out.numel());
    kern::active_f().conv2d_forward(geom, in_f.data(), k_f.data(),
                                    has_bias ? b_f.data() : nullptr,
                                    out_f.data());
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = out_f[i];
  } else {
    kern::active().conv2d_forward(geom, input.data(), kernel.data(),
                                  has_bias ? bias.data() : nullptr, out.data());
  }
  check_finite(out.data(), out.numel(), "conv2d output");
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Phase phase, double epsilon,
                  double momentum) {
  if (input.rank() != 4)
    throw std::invalid_argument("batch_norm: input must be [N,H,W,C]");
  const int c = input.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    throw std::invalid_argument("batch_norm: gamma/beta extent must equal C");
  const int64_t m = input.numel() / c;  // positions per channel

  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (phase == Phase::train) {
    const double* x = input.data();
    for (int64_t i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j) mean[j] += x[i * c + j];
    for (int j = 0; j < c; ++j) mean[j] /= (double)m;
    std::vector<double> var(c, 0.0);
    for (int64_t i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j) {
        const double d = x[i * c + j] - mean[j];
        var[j] += d * d;
      }
    for (int j = 0; j < c; ++j) var[j] /= (double)m;
    for (int j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + epsilon);

    if (state.running_mean.empty()) {
      state.running_mean.assign(c, 0.0);
      state.running_var.assign(c, 0.0);
    }
    if (state.updates == 0) {
      state.running_mean = mean;
      state.running_var = var;
    } else {
      for (int j = 0; j < c; ++j) {
        state.running_mean[j] =
            momentum * state.running_mean[j] + (1.0 - momentum) * mean[j];
        state.running_var[j] =
            momentum * state.running_var[j] + (1.0 - momentum) * var[j];
      }
    }
    state.updates++;
  } else {
    if (state.updates == 0)
      throw std::runtime_error(
          "batch_norm: eval phase before any running-statistics update");
    mean = state.running_mean;
    for (int j = 0; j < c; ++j)
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + epsilon);
  }

  Tensor out = make_op_node(
      input.shape(), {input, gamma, beta},
      [mean, inv_std, m, c, phase](Node& self) {
        Node& p_x = *self.parents[0];
        Node& p_g = *self.parents[1];
        Node& p_b = *self.parents[2];
        const double* x = p_x.value.data();
        const double* g = self.grad.data();
        const double* gam = p_g.value.data();

        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (int64_t i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) {
            const double xh = (x[i * c + j] - mean[j]) * inv_std[j];
            sum_g[j] += g[i * c + j];
            sum_gx[j] += g[i * c + j] * xh;
          }
        if (p_b.requires_grad)
          for (int j = 0; j < c; ++j) p_b.grad[j] += sum_g[j];
        if (p_g.requires_grad)
          for (int j = 0; j < c; ++j) p_g.grad[j] += sum_gx[j];
        if (p_x.requires_grad) {
          if (phase == Phase::train) {
            for (int64_t i = 0; i < m; ++i)
              for (int j = 0; j < c; ++j) {
                const double xh = (x[i * c + j] - mean[j]) * inv_std[j];
                p_x.grad[i * c + j] +=
                    gam[j] * inv_std[j] *
                    (g[i * c + j] - sum_g[j] / (double)m -
                     xh * sum_gx[j] / (double)m);
              }
          } else {
            // running statistics are constants
            for (int64_t i = 0; i < m; ++i)
              for (int j = 0; j < c; ++j)
                p_x.grad[i * c + j] += g[i * c + j] * gam[j] * inv_std[j];
          }
        }
      });

  const double* x = input.data();
  const double* gam = gamma.data();
  const double* bet = beta.data();
  double* o = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j)
      o[i * c + j] = gam[j] * ((x[i * c + j] - mean[j]) * inv_std[j]) + bet[j];
  check_finite(o, out.numel(), "batch_norm output");
  return out;
}

Tensor down2(const Tensor& input) {
  if (input.rank() != 4)
    throw std::invalid_argument("down2: input must be [N,H,W,C]");
  const int n = input.dim(0), h = input.dim(1), w = input.dim(2),
            c = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("down2: spatial extents must be even, got " +
                                shape_str(input.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor out = make_op_node({n, oh, ow, c}, {input}, [n, h, w, c, oh, ow](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const double* g = self.grad.data() + (((int64_t)b * oh + y) * ow + x) * c;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              double* pg = p.grad.data() +
                           (((int64_t)b * h + 2 * y + dy) * w + 2 * x + dx) * c;
              for (int j = 0; j < c; ++j) pg[j] += 0.25 * g[j];
            }
        }
  });
  const double* in = input.data();
  double* o = out.data();
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double* op = o + (((int64_t)b * oh + y) * ow + x) * c;
        for (int j = 0; j < c; ++j) op[j] = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const double* ip =
                in + (((int64_t)b * h + 2 * y + dy) * w + 2 * x + dx) * c;
            for (int j = 0; j < c; ++j) op[j] += 0.25 * ip[j];
          }
      }
  return out;
}

Tensor up2(const Tensor& input) {
  if (input.rank() != 4)
    throw std::invalid_argument("up2: input must be [N,H,W,C]");
  const int n = input.dim(0), h = input.dim(1), w = input.dim(2),
            c = input.dim(3);
  const int oh = h * 2, ow = w * 2;
  Tensor out = make_op_node({n, oh, ow, c}, {input}, [n, h, w, c, oh, ow](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double* pg = p.grad.data() + (((int64_t)b * h + y) * w + x) * c;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double* g =
                  self.grad.data() +
                  (((int64_t)b * oh + 2 * y + dy) * ow + 2 * x + dx) * c;
              for (int j = 0; j < c; ++j) pg[j] += g[j];
            }
        }
  });
  const double* in = input.data();
  double* o = out.data();
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double* ip = in + (((int64_t)b * h + y) * w + x) * c;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            double* op = o + (((int64_t)b * oh + 2 * y + dy) * ow + 2 * x + dx) * c;
            for (int j = 0; j < c; ++j) op[j] = ip[j];
          }
      }
  return out;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const Tensor& bias) {
  if (input.rank() != 2)
    throw std::invalid_argument("fully_connected: input must be [N,D]");
  if (weight.rank() != 2 || weight.dim(0) != input.dim(1))
    throw std::invalid_argument(
        "fully_connected: weight extent mismatch (input " +
        shape_str(input.shape()) + ", weight " + shape_str(weight.shape()) + ")");
  return add(matmul(input, weight), bias);
}

Conv2dLayer make_conv(int kh, int kw, int cin, int cout, int stride,
                      int dilation, Padding padding, bool with_bias, Init init,
                      uint64_t seed) {
  Conv2dLayer l;
  l.kernel = init_params(init, {kh, kw, cin, cout}, seed);
  if (with_bias) l.bias = Tensor::zeros({cout}, true);
  l.stride = stride;
  l.dilation = dilation;
  l.padding = padding;
  return l;
}

BatchNormLayer make_batch_norm(int channels) {
  BatchNormLayer l;
  l.gamma = Tensor::full({channels}, 1.0, true);
  l.beta = Tensor::zeros({channels}, true);
  return l;
}

FcLayer make_fc(int d_in, int d_out, Init init, uint64_t seed) {
  FcLayer l;
  l.weight = init_params(init, {d_in, d_out}, seed);
  l.bias = Tensor::zeros({d_out}, true);
  return l;
}

}  // namespace ctseg
