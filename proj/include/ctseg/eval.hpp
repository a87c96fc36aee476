#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctseg/data.hpp"
#include "ctseg/mask.hpp"
#include "ctseg/model.hpp"

namespace ctseg {

// Intersection over union; two empty masks count as a perfect match.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct Detection {
  Box box;
  int category_id = 0;
  double score = 0.0;
  BinaryMask mask;  // image resolution
};

// IoU thresholds 0.50 : 0.05 : 0.95.
constexpr int kApThresholds = 10;
std::array<double, kApThresholds> ap_thresholds();

struct CategoryMetrics {
  std::array<double, kApThresholds> ap{};  // valid only when has_ap
  bool has_ap = false;                     // false = no groundtruth
  double ap_mean = 0.0;
  double miou = 0.0;
  int64_t instances = 0;
};

struct SplitMetrics {
  double map = -1.0;   // -1 when undefined (no category with groundtruth)
  double ap50 = -1.0;
  double ap75 = -1.0;
  double miou = -1.0;
  int64_t instances = 0;
};

struct EvalReport {
  std::map<int, CategoryMetrics> per_category;
  SplitMetrics all, seen, unseen;
  std::string config_hash;
  uint64_t seed = 0;

  std::string to_csv(const std::function<std::string(int)>& category_name,
                     const std::function<bool(int)>& is_seen) const;
  std::string summary(const std::function<std::string(int)>& category_name,
                      const std::function<bool(int)>& is_seen) const;
};

// COCO-style greedy matching and 101-point interpolated AP, per category and
// threshold. Categories without groundtruth are excluded from every mean.
std::map<int, CategoryMetrics> mask_ap(
    const std::vector<Detection>& detections,
    const std::vector<std::pair<int, BinaryMask>>& groundtruth);

// Mean per-instance IoU of predictions at groundtruth boxes. The predictor
// maps (record, annotation) to a full-image mask; every val annotation must
// carry a mask.
using MaskPredictor =
    std::function<BinaryMask(const DatasetRecord&, const InstanceAnnotation&)>;

EvalReport miou_given_gt_boxes(const MaskPredictor& predictor,
                               const Dataset& dataset);
EvalReport miou_given_gt_boxes(Model& model, const Dataset& dataset);

// Full report: the mIOU protocol plus AP where detections are the model's
// pasted predictions at groundtruth boxes, scored by mean mask probability.
EvalReport evaluate_model(Model& model, const Dataset& dataset);

}  // namespace ctseg
