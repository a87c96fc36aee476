#include "ctseg/roi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ctseg {

double box_iou(const Box& a, const Box& b) {
  const double iy = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
  const double ix = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
  const double inter = iy * ix;
  const double uni = a.height() * a.width() + b.height() * b.width() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

thread_local int64_t g_clamp_count = 0;

Box clamp_unit(const Box& b, bool* clamped) {
  Box c;
  c.ymin = std::clamp(b.ymin, 0.0, 1.0);
  c.xmin = std::clamp(b.xmin, 0.0, 1.0);
  c.ymax = std::clamp(b.ymax, 0.0, 1.0);
  c.xmax = std::clamp(b.xmax, 0.0, 1.0);
  *clamped = c.ymin != b.ymin || c.xmin != b.xmin || c.ymax != b.ymax ||
             c.xmax != b.xmax;
  return c;
}

// 4-tap bilinear weights at continuous point p (pixel-center coordinates),
// taps clamped to [0, extent-1].
struct Taps {
  int lo, hi;
  double w_lo, w_hi;
};

Taps taps_at(double p, int extent) {
  Taps t;
  const double f = std::floor(p);
  int lo = (int)f;
  int hi = lo + 1;
  double frac = p - f;
  if (lo < 0) { lo = 0; hi = 0; frac = 0.0; }
  else if (hi >= extent) { lo = extent - 1; hi = extent - 1; frac = 0.0; }
  t.lo = lo;
  t.hi = hi;
  t.w_lo = 1.0 - frac;
  t.w_hi = frac;
  return t;
}

}  // namespace

int64_t roi_clamp_count() { return g_clamp_count; }

Tensor roi_align(const Tensor& features, const Box& box_in, int out_size,
                 int samples_per_cell) {
  if (features.rank() != 3)
    throw std::invalid_argument("roi_align: features must be [H,W,C]");
  if (out_size < 1) throw std::invalid_argument("roi_align: out_size must be >= 1");
  if (samples_per_cell != 1 && samples_per_cell != 4)
    throw std::invalid_argument("roi_align: samples_per_cell must be 1 or 4");
  bool clamped = false;
  const Box box = clamp_unit(box_in, &clamped);
  if (clamped) {
    ++g_clamp_count;
    static thread_local bool warned = false;
    if (!warned) {
      std::fprintf(stderr,
                   "roi_align: box outside [0,1] clamped (reported once)\n");
      warned = true;
    }
  }
  if (!box.valid())
    throw std::invalid_argument("roi_align: degenerate box");

  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  const int s = out_size;
  const double y0 = box.ymin * h, y1 = box.ymax * h;
  const double x0 = box.xmin * w, x1 = box.xmax * w;
  const double bin_h = (y1 - y0) / s;
  const double bin_w = (x1 - x0) / s;
  const int grid = samples_per_cell == 4 ? 2 : 1;
  const double inv_samples = 1.0 / samples_per_cell;

  // sample points per output cell, fixed order
  struct Sample {
    Taps ty, tx;
  };
  std::vector<Sample> samples((size_t)s * s * grid * grid);
  for (int oy = 0; oy < s; ++oy)
    for (int ox = 0; ox < s; ++ox)
      for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
          const double fy = (gy + 0.5) / grid;
          const double fx = (gx + 0.5) / grid;
          const double py = y0 + (oy + fy) * bin_h - 0.5;
          const double px = x0 + (ox + fx) * bin_w - 0.5;
          samples[(((size_t)oy * s + ox) * grid + gy) * grid + gx] = {
              taps_at(py, h), taps_at(px, w)};
        }

  Tensor out = make_op_node({s, s, c}, {features},
                            [samples, s, grid, inv_samples, w, c](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int oy = 0; oy < s; ++oy)
      for (int ox = 0; ox < s; ++ox) {
        const double* g = self.grad.data() + ((size_t)oy * s + ox) * c;
        for (int gi = 0; gi < grid * grid; ++gi) {
          const Sample& sm = samples[((size_t)oy * s + ox) * grid * grid + gi];
          const double w00 = sm.ty.w_lo * sm.tx.w_lo * inv_samples;
          const double w01 = sm.ty.w_lo * sm.tx.w_hi * inv_samples;
          const double w10 = sm.ty.w_hi * sm.tx.w_lo * inv_samples;
          const double w11 = sm.ty.w_hi * sm.tx.w_hi * inv_samples;
          double* r0 = p.grad.data() + ((size_t)sm.ty.lo * w) * c;
          double* r1 = p.grad.data() + ((size_t)sm.ty.hi * w) * c;
          for (int j = 0; j < c; ++j) {
            r0[(size_t)sm.tx.lo * c + j] += w00 * g[j];
            r0[(size_t)sm.tx.hi * c + j] += w01 * g[j];
            r1[(size_t)sm.tx.lo * c + j] += w10 * g[j];
            r1[(size_t)sm.tx.hi * c + j] += w11 * g[j];
          }
        }
      }
  });

  const double* f = features.data();
  double* o = out.data();
  for (int oy = 0; oy < s; ++oy)
    for (int ox = 0; ox < s; ++ox) {
      double* op = o + ((size_t)oy * s + ox) * c;
      for (int j = 0; j < c; ++j) op[j] = 0.0;
      for (int gi = 0; gi < grid * grid; ++gi) {
        const Sample& sm = samples[((size_t)oy * s + ox) * grid * grid + gi];
        const double w00 = sm.ty.w_lo * sm.tx.w_lo;
        const double w01 = sm.ty.w_lo * sm.tx.w_hi;
        const double w10 = sm.ty.w_hi * sm.tx.w_lo;
        const double w11 = sm.ty.w_hi * sm.tx.w_hi;
        const double* r0 = f + ((size_t)sm.ty.lo * w) * c;
        const double* r1 = f + ((size_t)sm.ty.hi * w) * c;
        for (int j = 0; j < c; ++j) {
          op[j] += w00 * r0[(size_t)sm.tx.lo * c + j] +
                   w01 * r0[(size_t)sm.tx.hi * c + j] +
                   w10 * r1[(size_t)sm.tx.lo * c + j] +
                   w11 * r1[(size_t)sm.tx.hi * c + j];
        }
      }
      for (int j = 0; j < c; ++j) op[j] *= inv_samples;
    }
  check_finite(o, out.numel(), "roi_align output");
  return out;
}

Tensor bilinear_read(const Tensor& map, double y_norm, double x_norm) {
  if (map.rank() != 3)
    throw std::invalid_argument("bilinear_read: map must be [H,W,C]");
  const int h = map.dim(0), w = map.dim(1), c = map.dim(2);
  const double py = std::clamp(y_norm, 0.0, 1.0) * h - 0.5;
  const double px = std::clamp(x_norm, 0.0, 1.0) * w - 0.5;
  const Taps ty = taps_at(py, h);
  const Taps tx = taps_at(px, w);

  Tensor out = make_op_node({c}, {map}, [ty, tx, w, c](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int j = 0; j < c; ++j) {
      const double g = self.grad[j];
      p.grad[((size_t)ty.lo * w + tx.lo) * c + j] += ty.w_lo * tx.w_lo * g;
      p.grad[((size_t)ty.lo * w + tx.hi) * c + j] += ty.w_lo * tx.w_hi * g;
      p.grad[((size_t)ty.hi * w + tx.lo) * c + j] += ty.w_hi * tx.w_lo * g;
      p.grad[((size_t)ty.hi * w + tx.hi) * c + j] += ty.w_hi * tx.w_hi * g;
    }
  });
  const double* m = map.data();
  for (int j = 0; j < c; ++j) {
    out.data()[j] = ty.w_lo * tx.w_lo * m[((size_t)ty.lo * w + tx.lo) * c + j] +
                    ty.w_lo * tx.w_hi * m[((size_t)ty.lo * w + tx.hi) * c + j] +
                    ty.w_hi * tx.w_lo * m[((size_t)ty.hi * w + tx.lo) * c + j] +
                    ty.w_hi * tx.w_hi * m[((size_t)ty.hi * w + tx.hi) * c + j];
  }
  return out;
}

BinaryMask paste_mask(const Tensor& pred, const Box& box, int image_h,
                      int image_w, double threshold) {
  if (pred.rank() != 2 || pred.dim(0) != pred.dim(1))
    throw std::invalid_argument("paste_mask: pred must be square [S,S]");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("paste_mask: threshold must lie in (0,1)");
  const int s = pred.dim(0);
  BinaryMask mask(image_h, image_w);

  bool clamped = false;
  const Box b = clamp_unit(box, &clamped);
  const double y0 = b.ymin * image_h, y1 = b.ymax * image_h;
  const double x0 = b.xmin * image_w, x1 = b.xmax * image_w;
  if (y1 - y0 < 1.0 || x1 - x0 < 1.0) return mask;  // sub-pixel footprint

  const double* p = pred.data();
  const int iy0 = std::max(0, (int)std::floor(y0 - 0.5) );
  const int iy1 = std::min(image_h - 1, (int)std::ceil(y1));
  const int ix0 = std::max(0, (int)std::floor(x0 - 0.5));
  const int ix1 = std::min(image_w - 1, (int)std::ceil(x1));
  for (int iy = iy0; iy <= iy1; ++iy) {
    const double cy = iy + 0.5;
    if (cy < y0 || cy >= y1) continue;
    const double py = (cy - y0) / (y1 - y0) * s - 0.5;
    const Taps ty = taps_at(py, s);
    for (int ix = ix0; ix <= ix1; ++ix) {
      const double cx = ix + 0.5;
      if (cx < x0 || cx >= x1) continue;
      const double px = (cx - x0) / (x1 - x0) * s - 0.5;
      const Taps tx = taps_at(px, s);
      const double v = ty.w_lo * tx.w_lo * p[(size_t)ty.lo * s + tx.lo] +
                       ty.w_lo * tx.w_hi * p[(size_t)ty.lo * s + tx.hi] +
                       ty.w_hi * tx.w_lo * p[(size_t)ty.hi * s + tx.lo] +
                       ty.w_hi * tx.w_hi * p[(size_t)ty.hi * s + tx.hi];
      mask.at(iy, ix) = v > threshold ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace ctseg
