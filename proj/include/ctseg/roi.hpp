#pragma once

#include <cstdint>

#include "ctseg/mask.hpp"
#include "ctseg/tensor.hpp"

namespace ctseg {

// Axis-aligned box in normalized image coordinates.
struct Box {
  double ymin = 0, xmin = 0, ymax = 0, xmax = 0;

  double height() const { return ymax - ymin; }
  double width() const { return xmax - xmin; }
  double center_y() const { return 0.5 * (ymin + ymax); }
  double center_x() const { return 0.5 * (xmin + xmax); }
  bool valid() const { return ymin < ymax && xmin < xmax; }
};

double box_iou(const Box& a, const Box& b);

// Number of out-of-range boxes clamped by roi_align so far (this thread).
int64_t roi_clamp_count();

// Bilinear crop of features [H,W,C] to [out_size,out_size,C] under
// half-pixel alignment (pixel i covers [i,i+1), its center sits at i+0.5).
// samples_per_cell is 1 (cell center) or 4 (2x2 grid), averaged.
// Differentiable w.r.t. features; box coordinates carry no gradient.
// A degenerate box is an error; coordinates outside [0,1] are clamped.
Tensor roi_align(const Tensor& features, const Box& box, int out_size,
                 int samples_per_cell);

// Bilinear read of map [H,W,C] at one normalized point, same alignment as
// roi_align; taps clamp at the borders. Differentiable w.r.t. map.
Tensor bilinear_read(const Tensor& map, double y_norm, double x_norm);

// Resize pred [S,S] (probabilities) to the pixel footprint of `box`, zero
// outside, binarize with `value > threshold`. A footprint under one pixel
// in either direction yields an empty mask.
BinaryMask paste_mask(const Tensor& pred, const Box& box, int image_h,
                      int image_w, double threshold);

}  // namespace ctseg
