#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctseg/layers.hpp"
#include "ctseg/tensor.hpp"

namespace ctseg {

enum class HeadFamily {
  resnet_basic,
  resnet_bottleneck,
  resnet_bottleneck_quarter,
  hourglass,
  fully_connected,
};

std::string head_family_name(HeadFamily f);
HeadFamily head_family_from_name(const std::string& name);

// One row of a head's block table: `repeat` blocks at `spatial` resolution,
// with per-conv output channels inside each block. Single-channel rows with
// repeat 1 at the start and (hourglass only) end of the table are the stem
// conv and the final feature conv rather than residual blocks.
struct BlockRow {
  int repeat = 1;
  int spatial = 32;
  std::vector<int> channels;

  bool operator==(const BlockRow&) const = default;
};

struct HeadAblations {
  bool no_long_range_skips = false;
  bool no_encoder_decoder = false;
  int dilated_layer_count = 0;

  bool operator==(const HeadAblations&) const = default;
};

struct MaskHeadSpec {
  HeadFamily family = HeadFamily::resnet_basic;
  int named_depth = 0;  // architecture label, not a validated conv count
  std::vector<BlockRow> rows;
  HeadAblations ablations;
  int output_channels = 1;  // class-agnostic logit

  // fully_connected only
  int fc_hidden_width = 0;
  int fc_size = 32;  // square crop edge; the head emits fc_size^2 logits

  bool operator==(const MaskHeadSpec&) const = default;

  int input_size() const;  // spatial size the built network expects
  void validate() const;
};

// Plain-text round-trippable serialization.
std::string write_mask_head_spec(const MaskHeadSpec& spec);
MaskHeadSpec parse_mask_head_spec(const std::string& text);
MaskHeadSpec load_mask_head_spec(const std::string& path);
void save_mask_head_spec(const MaskHeadSpec& spec, const std::string& path);

enum class HeadLayerKind { conv, proj, norm, act, down, up, add, flatten, fc, reshape };
enum class HeadLayerRole { none, stem, block, final_conv, output };

std::string head_layer_kind_name(HeadLayerKind k);

struct LayerInfo {
  HeadLayerKind kind = HeadLayerKind::conv;
  HeadLayerRole role = HeadLayerRole::none;
  int spatial = 0;
  int cin = 0;
  int cout = 0;
  int dilation = 1;
  int ksize = 0;  // conv / proj only
};

// Built network: a flat layer list; `input` / `input2` index earlier layers
// (-1 is the network input). Skip joins reference their saved producers.
class MaskHeadNetwork {
 public:
  struct Layer {
    HeadLayerKind kind;
    HeadLayerRole role = HeadLayerRole::none;
    int input = -1;
    int input2 = -1;
    int spatial = 0, cin = 0, cout = 0, dilation = 1;
    Conv2dLayer conv;    // conv / proj
    BatchNormLayer norm; // norm
    FcLayer fc;          // fc
  };

  MaskHeadSpec spec;
  int input_channels = 0;
  int input_size = 0;
  std::vector<Layer> layers;

  // [N,S,S,Cin] -> [N,S,S,1]
  Tensor forward(const Tensor& x, Phase phase);

  std::vector<std::pair<std::string, Tensor>> parameters();
  std::vector<std::pair<std::string, BatchNormState*>> norm_states();
};

MaskHeadNetwork build_mask_head(const MaskHeadSpec& spec, int input_channels,
                                uint64_t seed);

// MLP head on the flattened crop: `layers` affine stages with one
// nonlinearity between consecutive stages, Glorot-normal init,
// out_size^2 logits reshaped to (out_size, out_size, 1).
MaskHeadNetwork build_fc_head(int layers, int hidden_width, int out_size,
                              int input_channels, uint64_t seed);

std::vector<LayerInfo> layer_inventory(const MaskHeadNetwork& net);
int64_t count_parameters(MaskHeadNetwork& net);

// Marks the first `count` 3x3 block convolutions (build order) as dilation 2.
// The stem, final feature conv, output conv and projections keep rate 1.
MaskHeadSpec dilate_layers(const MaskHeadSpec& spec, int count);

// Number of convolutions dilate_layers may touch.
int dilatable_conv_count(const MaskHeadSpec& spec);

}  // namespace ctseg
