#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctseg/layers.hpp"
#include "ctseg/mask.hpp"
#include "ctseg/mask_head.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/roi.hpp"
#include "ctseg/tensor.hpp"

namespace ctseg {

// One labelled instance. `mask` is at image resolution and present only when
// has_mask is set (partial supervision).
struct InstanceAnnotation {
  Box box;
  int category_id = 0;
  bool has_mask = false;
  BinaryMask mask;
};

enum class BoxMode { gt_only, proposals_plus_gt };

struct JitterConfig {
  double min_iou = 0.5;
  double center_frac = 0.3;  // center shift as a fraction of box size
  double scale_frac = 0.4;   // log-scale range
  int max_tries = 50;
};

enum class BackboneKind { conv_stack, mini_hourglass };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::conv_stack;
  std::vector<int> channels = {24, 48, 48};  // stage widths; strides 2,2,1
};

struct ModelConfig {
  int crop_size = 32;  // 16 or 32
  bool use_instance_embedding = true;
  bool use_coordinate_embedding = true;
  double mask_loss_weight = 5.0;
  BoxMode training_box_mode = BoxMode::gt_only;
  JitterConfig jitter;
  BackboneConfig backbone;
  MaskHeadSpec head;
  int samples_per_cell = 1;
  double paste_threshold = 0.5;

  int pixel_channels = 16;     // embedding map fed to the crop
  int instance_channels = 32;  // per-instance conditioning vector

  int head_input_channels() const {
    return pixel_channels + (use_instance_embedding ? instance_channels : 0) +
           (use_coordinate_embedding ? 2 : 0);
  }
  void validate() const;
};

// Box-relative coordinate grid: channel 0 rises 0..1 across columns,
// channel 1 across rows; identical for every box.
Tensor coordinate_embedding(int size);

// Mean sigmoid cross-entropy over the pixels of annotated instances, times
// `weight`. Instances with has_mask false contribute nothing, to value or
// gradient; with none annotated the loss is exactly zero.
Tensor mask_loss(const Tensor& logits /*[K,S,S]*/,
                 const Tensor& targets /*[K,S,S] in [0,1]*/,
                 const std::vector<uint8_t>& has_mask, double weight);

// Rasterize the image-resolution mask to the SxS grid of the box footprint:
// area-average each cell, threshold at 0.5.
Tensor crop_target_mask(const BinaryMask& mask, const Box& box, int size);

// Training boxes per the configured mode. gt_only echoes the annotations and
// draws nothing from rng; proposals_plus_gt appends one IoU-constrained
// jittered copy per instance, paired with the source annotation index.
std::vector<std::pair<Box, int>> make_training_boxes(
    const std::vector<InstanceAnnotation>& gt, BoxMode mode,
    const JitterConfig& jitter, Rng& rng);

class Model {
 public:
  Model(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Feature maps of one image batch [N,H,W,3]:
  // pixel embedding [N,H/4,W/4,16] and, when enabled, instance embedding
  // [N,H/4,W/4,32].
  struct Features {
    Tensor pixel;
    Tensor instance;
  };
  Features backbone_forward(const Tensor& images, Phase phase);

  // Per-instance mask logits [K,S,S] for one image (batch of one).
  Tensor forward_masks(const Tensor& image, const std::vector<Box>& boxes,
                       Phase phase);

  // Same over an image batch; boxes[i] belong to image i; the result keeps
  // instance order (image-major).
  Tensor forward_masks_batch(const Tensor& images,
                             const std::vector<std::vector<Box>>& boxes,
                             Phase phase);

  // Full-image binary mask for one instance (eval path).
  BinaryMask predict_mask(const Tensor& image, const Box& box);

  // Crop of the instance-conditioned head input for one box (exposed for
  // inspection and tests).
  Tensor head_input(const Features& f, int image_index, const Box& box);

  std::vector<std::pair<std::string, Tensor>> parameters();
  std::vector<std::pair<std::string, BatchNormState*>> norm_states();

  void save(const std::string& dir, const std::string& name);
  static Model load(const std::string& dir, const std::string& name);

  MaskHeadNetwork& head() { return head_; }

 private:
  struct ConvBnRelu {
    Conv2dLayer conv;
    BatchNormLayer norm;
  };

  ModelConfig config_;
  std::vector<ConvBnRelu> backbone_;
  Conv2dLayer pixel_head_;
  Conv2dLayer instance_head_;  // defined only when use_instance_embedding
  MaskHeadNetwork head_;
};

// Model config (sans head rows) as a flat key-value text; the head spec is
// carried in its own file referenced by `head.file`.
std::string write_model_config(const ModelConfig& cfg,
                               const std::string& head_file);
ModelConfig parse_model_config(const std::string& text,
                               const std::string& base_dir);

}  // namespace ctseg
