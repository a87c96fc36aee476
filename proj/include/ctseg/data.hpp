#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctseg/mask.hpp"
#include "ctseg/model.hpp"
#include "ctseg/tensor.hpp"

namespace ctseg {

enum class ShapeKind {
  disk = 1,
  square,
  triangle,
  ring,
  bar,
  ellipse,
  cross,
  crescent,
};

std::string shape_name(ShapeKind k);
ShapeKind shape_from_name(const std::string& name);
int category_id(ShapeKind k);

struct DatasetConfig {
  int image_size = 64;
  std::vector<ShapeKind> categories = {
      ShapeKind::disk, ShapeKind::square, ShapeKind::triangle, ShapeKind::ring,
      ShapeKind::bar,  ShapeKind::ellipse, ShapeKind::cross, ShapeKind::crescent};
  std::vector<ShapeKind> seen_categories = {ShapeKind::disk, ShapeKind::square,
                                            ShapeKind::bar, ShapeKind::ellipse};
  int min_instances = 1;
  int max_instances = 3;
  double max_box_overlap = 0.3;  // pairwise box IoU allowance
  int train_images = 2000;
  int val_images = 500;
  // intensity / size randomization: foreground and background draw from the
  // same range; only a minimum contrast against the local background keeps
  // boundaries visible, so absolute intensity never identifies a shape
  double intensity_low = 0.15, intensity_high = 0.85;
  double min_contrast = 0.10;
  double noise = 0.03;
  double min_radius_frac = 0.11, max_radius_frac = 0.21;
  uint64_t seed = 1;

  bool is_seen(int cat_id) const;
  void validate() const;
};

struct DatasetRecord {
  Tensor image;  // [H,W,3], values quantized to 1/255 steps
  std::vector<InstanceAnnotation> annotations;
  std::string split;  // "train" | "val"
};

struct Dataset {
  DatasetConfig config;
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
};

// Deterministic per config.seed. Groundtruth masks are the rasterized
// visible supports (z-order occlusion); boxes are tight on the masks.
// Train-split masks are emitted only for seen categories; the val split is
// fully annotated.
Dataset generate_dataset(const DatasetConfig& config);

// Column-major run-length encoding, first run counts zeros.
std::vector<int64_t> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const std::vector<int64_t>& counts, int h, int w);

// Annotation file + one PNG per image under `dir`.
void save_annotations(const Dataset& dataset, const std::string& dir);
Dataset load_annotations(const std::string& dir);

// Replaces every absent mask of the train split with the model's pasted
// prediction at the groundtruth box; output has has_mask set everywhere.
Dataset export_pseudo_labels(Model& model, const Dataset& dataset);

}  // namespace ctseg
