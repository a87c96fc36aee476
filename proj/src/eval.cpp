#include "ctseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ctseg {

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.h != b.h || a.w != b.w)
    throw std::invalid_argument("mask_iou: extents differ");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] & b.data[i];
    uni += a.data[i] | b.data[i];
  }
  if (uni == 0) return 1.0;  // both empty: a correct empty prediction
  return (double)inter / (double)uni;
}

std::array<double, kApThresholds> ap_thresholds() {
  std::array<double, kApThresholds> t{};
  for (int i = 0; i < kApThresholds; ++i) t[i] = 0.50 + 0.05 * i;
  return t;
}

std::map<int, CategoryMetrics> mask_ap(
    const std::vector<Detection>& detections,
    const std::vector<std::pair<int, BinaryMask>>& groundtruth) {
  std::map<int, std::vector<int>> dets_by_cat, gts_by_cat;
  for (size_t i = 0; i < detections.size(); ++i)
    dets_by_cat[detections[i].category_id].push_back((int)i);
  for (size_t i = 0; i < groundtruth.size(); ++i)
    gts_by_cat[groundtruth[i].first].push_back((int)i);

  const auto thresholds = ap_thresholds();
  std::map<int, CategoryMetrics> out;
  for (const auto& [cat, gt_idx] : gts_by_cat) {
    CategoryMetrics m;
    m.has_ap = true;
    m.instances = (int64_t)gt_idx.size();

    auto det_it = dets_by_cat.find(cat);
    std::vector<int> det_idx =
        det_it == dets_by_cat.end() ? std::vector<int>{} : det_it->second;
    // descending score; insertion order breaks ties
    std::stable_sort(det_idx.begin(), det_idx.end(), [&](int a, int b) {
      return detections[a].score > detections[b].score;
    });

    // IoU of every detection/groundtruth pair of this category
    std::vector<std::vector<double>> iou(det_idx.size(),
                                         std::vector<double>(gt_idx.size()));
    for (size_t d = 0; d < det_idx.size(); ++d)
      for (size_t g = 0; g < gt_idx.size(); ++g)
        iou[d][g] = mask_iou(detections[det_idx[d]].mask,
                             groundtruth[gt_idx[g]].second);

    for (int ti = 0; ti < kApThresholds; ++ti) {
      const double thr = thresholds[ti];
      std::vector<uint8_t> matched(gt_idx.size(), 0);
      std::vector<uint8_t> is_tp(det_idx.size(), 0);
      for (size_t d = 0; d < det_idx.size(); ++d) {
        int best = -1;
        double best_iou = thr;
        for (size_t g = 0; g < gt_idx.size(); ++g) {
          if (matched[g]) continue;
          if (iou[d][g] >= best_iou && (best < 0 || iou[d][g] > best_iou)) {
            best = (int)g;
            best_iou = iou[d][g];
          }
        }
        if (best >= 0) {
          matched[best] = 1;
          is_tp[d] = 1;
        }
      }
      // precision/recall staircase over the ranked detections
      std::vector<double> precision, recall;
      int tp = 0, fp = 0;
      for (size_t d = 0; d < det_idx.size(); ++d) {
        if (is_tp[d]) ++tp; else ++fp;
        precision.push_back((double)tp / (double)(tp + fp));
        recall.push_back((double)tp / (double)gt_idx.size());
      }
      // 101-point interpolation: envelope from the right
      double ap = 0.0;
      for (int r = 0; r <= 100; ++r) {
        const double want = r / 100.0;
        double best_prec = 0.0;
        for (size_t k = 0; k < precision.size(); ++k)
          if (recall[k] >= want) best_prec = std::max(best_prec, precision[k]);
        ap += best_prec;
      }
      m.ap[ti] = ap / 101.0;
    }
    m.ap_mean =
        std::accumulate(m.ap.begin(), m.ap.end(), 0.0) / (double)kApThresholds;
    out[cat] = m;
  }
  return out;
}

namespace {

void fill_split(SplitMetrics& split,
                const std::map<int, CategoryMetrics>& cats,
                const std::function<bool(int)>& take) {
  double ap_sum = 0, ap50_sum = 0, ap75_sum = 0;
  int ap_n = 0;
  double iou_sum = 0;
  int64_t inst = 0;
  for (const auto& [cat, m] : cats) {
    if (!take(cat)) continue;
    if (m.has_ap) {
      ap_sum += m.ap_mean;
      ap50_sum += m.ap[0];
      ap75_sum += m.ap[5];
      ++ap_n;
    }
    iou_sum += m.miou * (double)m.instances;
    inst += m.instances;
  }
  if (ap_n > 0) {
    split.map = ap_sum / ap_n;
    split.ap50 = ap50_sum / ap_n;
    split.ap75 = ap75_sum / ap_n;
  }
  if (inst > 0) split.miou = iou_sum / (double)inst;
  split.instances = inst;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

EvalReport miou_given_gt_boxes(const MaskPredictor& predictor,
                               const Dataset& dataset) {
  EvalReport report;
  report.seed = dataset.config.seed;
  std::map<int, std::vector<double>> ious;
  for (const auto& rec : dataset.val)
    for (const auto& ann : rec.annotations) {
      if (!ann.has_mask)
        throw std::runtime_error("miou_given_gt_boxes: val mask missing");
      const BinaryMask pred = predictor(rec, ann);
      ious[ann.category_id].push_back(mask_iou(pred, ann.mask));
    }
  for (auto& [cat, vals] : ious) {
    // summing in sorted order keeps the mean independent of record order
    std::sort(vals.begin(), vals.end());
    double total = 0.0;
    for (double v : vals) total += v;
    CategoryMetrics m;
    m.instances = (int64_t)vals.size();
    m.miou = total / (double)vals.size();
    report.per_category[cat] = m;
  }
  const auto& cfg = dataset.config;
  fill_split(report.all, report.per_category, [](int) { return true; });
  fill_split(report.seen, report.per_category,
             [&](int c) { return cfg.is_seen(c); });
  fill_split(report.unseen, report.per_category,
             [&](int c) { return !cfg.is_seen(c); });
  return report;
}

EvalReport miou_given_gt_boxes(Model& model, const Dataset& dataset) {
  return miou_given_gt_boxes(
      [&](const DatasetRecord& rec, const InstanceAnnotation& ann) {
        return model.predict_mask(rec.image, ann.box);
      },
      dataset);
}

EvalReport evaluate_model(Model& model, const Dataset& dataset) {
  std::vector<Detection> detections;
  std::vector<std::pair<int, BinaryMask>> gts;
  std::map<int, std::vector<double>> ious;
  const int s = model.config().crop_size;
  for (const auto& rec : dataset.val) {
    for (const auto& ann : rec.annotations) {
      if (!ann.has_mask)
        throw std::runtime_error("evaluate_model: val mask missing");
      NoGradGuard ng;
      Tensor logits = model.forward_masks(rec.image, {ann.box}, Phase::eval);
      Tensor probs = sigmoid(reshape(logits, {s, s}));
      double mean_prob = 0.0;
      for (int64_t i = 0; i < probs.numel(); ++i) mean_prob += probs.data()[i];
      mean_prob /= (double)probs.numel();
      Detection det;
      det.box = ann.box;
      det.category_id = ann.category_id;
      det.score = mean_prob;
      det.mask = paste_mask(probs, ann.box, rec.image.dim(0), rec.image.dim(1),
                            model.config().paste_threshold);
      ious[ann.category_id].push_back(mask_iou(det.mask, ann.mask));
      detections.push_back(std::move(det));
      gts.emplace_back(ann.category_id, ann.mask);
    }
  }
  EvalReport report;
  report.seed = dataset.config.seed;
  report.per_category = mask_ap(detections, gts);
  for (auto& [cat, m] : report.per_category) {
    auto& vals = ious[cat];
    std::sort(vals.begin(), vals.end());
    double total = 0.0;
    for (double v : vals) total += v;
    m.miou = total / (double)vals.size();
    m.instances = (int64_t)vals.size();
  }
  const auto& cfg = dataset.config;
  fill_split(report.all, report.per_category, [](int) { return true; });
  fill_split(report.seen, report.per_category,
             [&](int c) { return cfg.is_seen(c); });
  fill_split(report.unseen, report.per_category,
             [&](int c) { return !cfg.is_seen(c); });
  return report;
}

std::string EvalReport::to_csv(
    const std::function<std::string(int)>& category_name,
    const std::function<bool(int)>& is_seen) const {
  std::ostringstream os;
  os << "category,metric,value\n";
  const auto thresholds = ap_thresholds();
  for (const auto& [cat, m] : per_category) {
    const std::string name = category_name(cat);
    if (m.has_ap) {
      os << name << ",AP," << fmt(m.ap_mean) << "\n";
      for (int i = 0; i < kApThresholds; ++i)
        os << name << ",AP@" << fmt(thresholds[i]) << "," << fmt(m.ap[i]) << "\n";
    }
    os << name << ",mIOU," << fmt(m.miou) << "\n";
    os << name << ",instances," << m.instances << "\n";
    os << name << ",seen," << (is_seen(cat) ? 1 : 0) << "\n";
  }
  auto split_rows = [&](const char* label, const SplitMetrics& s) {
    if (s.map >= 0) {
      os << label << ",mAP," << fmt(s.map) << "\n";
      os << label << ",AP50," << fmt(s.ap50) << "\n";
      os << label << ",AP75," << fmt(s.ap75) << "\n";
    }
    if (s.miou >= 0) os << label << ",mIOU," << fmt(s.miou) << "\n";
    os << label << ",instances," << s.instances << "\n";
  };
  split_rows("all", all);
  split_rows("seen", seen);
  split_rows("unseen", unseen);
  if (!config_hash.empty()) os << "meta,config_hash," << config_hash << "\n";
  os << "meta,seed," << seed << "\n";
  return os.str();
}

std::string EvalReport::summary(
    const std::function<std::string(int)>& category_name,
    const std::function<bool(int)>& is_seen) const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "split      mIOU      mAP   instances\n";
  auto row = [&](const char* label, const SplitMetrics& s) {
    os << std::left << std::setw(8) << label << std::right;
    os << std::setw(9) << (s.miou >= 0 ? s.miou : 0.0);
    os << std::setw(9) << (s.map >= 0 ? s.map : 0.0);
    os << std::setw(10) << s.instances << "\n";
  };
  row("all", all);
  row("seen", seen);
  row("unseen", unseen);
  os << "per category (mIOU):";
  for (const auto& [cat, m] : per_category)
    os << " " << category_name(cat) << (is_seen(cat) ? "" : "*") << "="
       << std::setprecision(4) << m.miou;
  os << "  (* = unseen)\n";
  return os.str();
}

}  // namespace ctseg
