// Acceptance gate: one pass/fail line per criterion.
//
// 1-7 are exact property suites; 8-11 reproduce the directional effects on
// the synthetic dataset from one shared paired grid; 12 is the overfit
// sanity check. The binary exits nonzero when any criterion fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <thread>
#include <vector>

#include "ctseg/data.hpp"
#include "ctseg/eval.hpp"
#include "ctseg/kernels.hpp"
#include "ctseg/layers.hpp"
#include "ctseg/mask_head.hpp"
#include "ctseg/model.hpp"
#include "ctseg/recipes.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/roi.hpp"
#include "ctseg/train.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail = "") {
  std::printf("%-4s criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion,
              what.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const auto t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

// --------------------------------------------------------------------------
// criterion 1: finite-difference gradient suite

double fd_max_rel_err(const std::function<Tensor()>& loss_fn, Tensor leaf,
                      double h = 1e-5) {
  leaf.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  double worst = 0.0;
  for (int64_t i = 0; i < leaf.numel(); ++i) {
    const double saved = leaf.data()[i];
    leaf.data()[i] = saved + h;
    const double up = loss_fn().item();
    leaf.data()[i] = saved - h;
    const double down = loss_fn().item();
    leaf.data()[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({1e-6, std::fabs(analytic[i]), std::fabs(fd)});
    worst = std::max(worst, std::fabs(analytic[i] - fd) / denom);
  }
  leaf.zero_grad();
  return worst;
}

void fill(Tensor& t, Rng& rng, double lo, double hi) {
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
}

void criterion_gradients() {
  const double t0 = now_seconds();
  double worst = 0.0;
  std::string worst_op = "none";
  auto track = [&](const char* op, double err) {
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };
  Rng seeds(20260808);

  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(seeds.next_u64());

    {  // conv2d with stride/dilation/padding variants
      const int stride = trial % 2 + 1;
      const int dil = trial % 3 == 0 ? 2 : 1;
      const Padding pad = trial % 2 ? Padding::valid : Padding::same;
      Tensor x = Tensor::zeros({1, 6, 7, 2}, true);
      Tensor k = Tensor::zeros({3, 3, 2, 3}, true);
      Tensor b = Tensor::zeros({3}, true);
      fill(x, rng, -1, 1);
      fill(k, rng, -1, 1);
      fill(b, rng, -0.5, 0.5);
      auto loss = [&] {
        Tensor y = conv2d(x, k, b, stride, dil, pad);
        return sum(mul(y, y));
      };
      track("conv2d/input", fd_max_rel_err(loss, x));
      track("conv2d/kernel", fd_max_rel_err(loss, k));
      track("conv2d/bias", fd_max_rel_err(loss, b));
    }
    {  // batch_norm (train phase)
      auto bn = make_batch_norm(2);
      Tensor x = Tensor::zeros({2, 3, 3, 2}, true);
      Tensor w = Tensor::zeros({2, 3, 3, 2});
      fill(x, rng, -2, 2);
      fill(w, rng, -1, 1);
      fill(bn.gamma, rng, 0.5, 1.5);
      fill(bn.beta, rng, -0.5, 0.5);
      auto loss = [&] { return sum(mul(bn.forward(x, Phase::train), w)); };
      track("batch_norm/input", fd_max_rel_err(loss, x));
      track("batch_norm/gamma", fd_max_rel_err(loss, bn.gamma));
      track("batch_norm/beta", fd_max_rel_err(loss, bn.beta));
    }
    {  // resample
      Tensor x = Tensor::zeros({1, 4, 4, 2}, true);
      fill(x, rng, -1, 1);
      auto ld = [&] {
        Tensor y = down2(x);
        return sum(mul(y, y));
      };
      auto lu = [&] {
        Tensor y = up2(x);
        return sum(mul(y, y));
      };
      track("down2", fd_max_rel_err(ld, x));
      track("up2", fd_max_rel_err(lu, x));
    }
    {  // fully connected
      auto fc = make_fc(5, 3, Init::glorot_normal, rng.next_u64());
      Tensor x = Tensor::zeros({2, 5}, true);
      fill(x, rng, -1, 1);
      auto loss = [&] {
        Tensor y = fc.forward(x);
        return sum(mul(y, y));
      };
      track("fc/input", fd_max_rel_err(loss, x));
      track("fc/weight", fd_max_rel_err(loss, fc.weight));
      track("fc/bias", fd_max_rel_err(loss, fc.bias));
    }
    {  // roi_align
      Tensor f = Tensor::zeros({6, 7, 2}, true);
      fill(f, rng, -1, 1);
      Box box{rng.uniform(0.0, 0.4), rng.uniform(0.0, 0.4),
              rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)};
      const int spc = trial % 2 ? 4 : 1;
      auto loss = [&] {
        Tensor c = roi_align(f, box, 4, spc);
        return sum(mul(c, c));
      };
      track("roi_align", fd_max_rel_err(loss, f));
    }
    {  // mask loss
      Tensor logits = Tensor::zeros({2, 4, 4}, true);
      Tensor targets = Tensor::zeros({2, 4, 4});
      fill(logits, rng, -2, 2);
      for (int64_t i = 0; i < targets.numel(); ++i)
        targets.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
      auto loss = [&] { return mask_loss(logits, targets, {1, 1}, 5.0); };
      track("mask_loss", fd_max_rel_err(loss, logits));
    }
    {  // elementwise + matmul + sigmoid
      Tensor a = Tensor::zeros({3, 4}, true);
      Tensor b2 = Tensor::zeros({4, 2}, true);
      fill(a, rng, -1, 1);
      fill(b2, rng, -1, 1);
      auto loss = [&] {
        Tensor y = sigmoid(matmul(relu(a), b2));
        return sum(mul(y, y));
      };
      track("matmul/sigmoid/a", fd_max_rel_err(loss, a));
      track("matmul/sigmoid/b", fd_max_rel_err(loss, b2));
    }
  }
  const double elapsed = now_seconds() - t0;
  const bool pass = worst < 1e-4 && elapsed < 300.0;
  report(1, pass, "gradient suite vs central finite differences",
         "max rel err " + fmt(worst, 8) + " (" + worst_op + "), " +
             fmt(elapsed, 1) + "s");
}

// --------------------------------------------------------------------------
// criterion 2: RoIAlign identities

void criterion_roi_identities() {
  Rng rng(7);
  bool pass = true;
  std::string detail;

  {  // constant field
    Tensor f = Tensor::full({7, 9, 2}, 3.25);
    Tensor crop = roi_align(f, Box{0.13, 0.22, 0.77, 0.91}, 5, 4);
    for (int64_t i = 0; i < crop.numel(); ++i)
      if (std::fabs(crop.data()[i] - 3.25) > 1e-10) pass = false;
    if (!pass) detail = "constant field";
  }
  {  // full-image box
    Tensor f = Tensor::zeros({6, 6, 3});
    fill(f, rng, -4, 4);
    Tensor crop = roi_align(f, Box{0, 0, 1, 1}, 6, 1);
    for (int64_t i = 0; i < f.numel(); ++i)
      if (std::fabs(crop.data()[i] - f.data()[i]) > 1e-10) pass = false;
    if (!pass && detail.empty()) detail = "full-image box";
  }
  {  // linearity
    Tensor f1 = Tensor::zeros({9, 9, 2});
    Tensor f2 = Tensor::zeros({9, 9, 2});
    fill(f1, rng, -1, 1);
    fill(f2, rng, -1, 1);
    const double a = 0.6, b = -1.9;
    const Box box{0.05, 0.1, 0.8, 0.95};
    Tensor lhs = roi_align(add(scale(f1, a), scale(f2, b)), box, 4, 4);
    Tensor rhs = add(scale(roi_align(f1, box, 4, 4), a),
                     scale(roi_align(f2, box, 4, 4), b));
    for (int64_t i = 0; i < lhs.numel(); ++i)
      if (std::fabs(lhs.data()[i] - rhs.data()[i]) > 1e-10) pass = false;
    if (!pass && detail.empty()) detail = "linearity";
  }
  {  // linear ramp, closed form
    const int h = 8, w = 8, s = 4;
    Tensor f = Tensor::zeros({h, w, 1});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) f.data()[y * w + x] = (double)x;
    const Box b{0.25, 0.25, 0.75, 0.75};
    Tensor crop = roi_align(f, b, s, 1);
    const double x0 = b.xmin * w, bin = (b.xmax - b.xmin) * w / s;
    for (int oy = 0; oy < s; ++oy)
      for (int ox = 0; ox < s; ++ox) {
        const double expect = x0 + (ox + 0.5) * bin - 0.5;
        if (std::fabs(crop.at({oy, ox, 0}) - expect) > 1e-8) pass = false;
      }
    if (!pass && detail.empty()) detail = "linear ramp";
  }
  report(2, pass, "roi_align constant/full-image/linearity/ramp identities",
         detail);
}

// --------------------------------------------------------------------------
// criterion 3: architecture conformance

struct GoldenRow {
  int repeat, spatial;
  std::vector<int> ch;
};
struct GoldenHead {
  HeadFamily family;
  int depth;
  int stem_ch;
  std::vector<GoldenRow> blocks;
  int final_ch;
};

const std::vector<GoldenHead>& golden_heads() {
  static const std::vector<GoldenHead> g = {
      {HeadFamily::resnet_basic, 4, 64, {{2, 32, {128, 128}}}, -1},
      {HeadFamily::resnet_basic, 8, 64, {{4, 32, {128, 128}}}, -1},
      {HeadFamily::resnet_basic, 12, 64, {{6, 32, {128, 128}}}, -1},
      {HeadFamily::resnet_basic, 16, 64, {{8, 32, {128, 128}}}, -1},
      {HeadFamily::resnet_basic, 20, 64,
       {{8, 32, {128, 128}}, {2, 32, {128, 128}}}, -1},
      {HeadFamily::resnet_bottleneck, 6, 64, {{2, 32, {128, 512, 128}}}, -1},
      {HeadFamily::resnet_bottleneck, 9, 64, {{3, 32, {128, 512, 128}}}, -1},
      {HeadFamily::resnet_bottleneck, 12, 64, {{4, 32, {128, 512, 128}}}, -1},
      {HeadFamily::resnet_bottleneck, 15, 64, {{5, 32, {128, 512, 128}}}, -1},
      {HeadFamily::resnet_bottleneck, 21, 64,
       {{6, 32, {128, 512, 128}}, {1, 32, {192, 384, 192}}}, -1},
      {HeadFamily::resnet_bottleneck_quarter, 6, 16, {{2, 32, {32, 128, 32}}}, -1},
      {HeadFamily::resnet_bottleneck_quarter, 12, 16, {{4, 32, {32, 128, 32}}}, -1},
      {HeadFamily::resnet_bottleneck_quarter, 21, 16,
       {{6, 32, {32, 128, 32}}, {1, 32, {48, 192, 48}}}, -1},
      {HeadFamily::resnet_bottleneck_quarter, 30, 16,
       {{5, 32, {32, 128, 32}}, {5, 32, {48, 192, 48}}}, -1},
      {HeadFamily::resnet_bottleneck_quarter, 51, 16,
       {{6, 32, {32, 128, 32}}, {8, 32, {48, 192, 48}}, {3, 32, {64, 256, 64}}},
       -1},
      {HeadFamily::hourglass, 10, 64,
       {{3, 32, {128, 128}}, {1, 16, {128, 128}}}, 128},
      {HeadFamily::hourglass, 20, 64,
       {{3, 32, {128, 128}}, {4, 16, {128, 128}}, {2, 8, {192, 192}}}, 128},
      {HeadFamily::hourglass, 32, 64,
       {{5, 32, {128, 128}}, {4, 16, {128, 128}}, {4, 8, {192, 192}},
        {2, 4, {192, 192}}}, 128},
      {HeadFamily::hourglass, 52, 64,
       {{5, 32, {128, 128}}, {4, 16, {128, 128}}, {4, 8, {192, 192}},
        {4, 4, {192, 192}}, {4, 2, {192, 192}}, {4, 1, {256, 256}}}, 128},
      {HeadFamily::hourglass, 100, 64,
       {{9, 32, {128, 128}}, {8, 16, {128, 128}}, {8, 8, {192, 192}},
        {8, 4, {192, 192}}, {8, 2, {192, 192}}, {8, 1, {256, 256}}}, 128},
  };
  return g;
}

void criterion_conformance() {
  bool pass = true;
  std::string detail;
  for (const auto& g : golden_heads()) {
    const std::string path = std::string(CTSEG_SPEC_DIR) + "/" +
                             head_family_name(g.family) + "_" +
                             std::to_string(g.depth) + ".spec";
    MaskHeadNetwork net;
    try {
      net = build_mask_head(load_mask_head_spec(path), 50, 7);
    } catch (const std::exception& e) {
      pass = false;
      detail = std::string(e.what());
      break;
    }
    const auto inv = layer_inventory(net);
    const int cpb = (int)g.blocks.front().ch.size();

    // collect block convs in order, chunked into blocks
    std::vector<std::pair<int, std::vector<int>>> blocks;
    std::vector<int> cur;
    int cur_spatial = 0;
    const LayerInfo* stem = nullptr;
    const LayerInfo* final_conv = nullptr;
    const LayerInfo* output = nullptr;
    for (const auto& li : inv) {
      if (li.role == HeadLayerRole::stem) stem = &li;
      if (li.role == HeadLayerRole::final_conv) final_conv = &li;
      if (li.role == HeadLayerRole::output) output = &li;
      if (li.kind == HeadLayerKind::conv && li.role == HeadLayerRole::block) {
        if (cur.empty()) cur_spatial = li.spatial;
        cur.push_back(li.cout);
        if ((int)cur.size() == cpb) {
          blocks.emplace_back(cur_spatial, cur);
          cur.clear();
        }
      }
    }
    // aggregate built blocks and golden rows per (spatial, pattern)
    std::map<std::pair<int, std::vector<int>>, int> built_agg, golden_agg;
    for (const auto& b : blocks) built_agg[b] += 1;
    for (const auto& row : g.blocks) golden_agg[{row.spatial, row.ch}] += row.repeat;

    bool ok = stem && stem->cout == g.stem_ch && stem->spatial == 32 &&
              output && output->cout == 1 && built_agg == golden_agg &&
              cur.empty();
    if (g.final_ch >= 0)
      ok = ok && final_conv && final_conv->cout == g.final_ch &&
           final_conv->spatial == 32;
    else
      ok = ok && final_conv == nullptr;
    if (!ok) {
      pass = false;
      detail = head_family_name(g.family) + "-" + std::to_string(g.depth);
      break;
    }
  }

  // dilation preserves parameter counts exactly over the published grid
  if (pass) {
    const MaskHeadSpec r20 =
        load_mask_head_spec(std::string(CTSEG_SPEC_DIR) + "/resnet_basic_20.spec");
    MaskHeadNetwork base = build_mask_head(r20, 50, 3);
    const int64_t base_params = count_parameters(base);
    for (int count : {0, 10, 20}) {
      MaskHeadNetwork dil = build_mask_head(dilate_layers(r20, count), 50, 3);
      if (count_parameters(dil) != base_params) {
        pass = false;
        detail = "dilated parameter count drifted at count " +
                 std::to_string(count);
      }
    }
  }
  report(3, pass, "mask-head tables conform row-for-row; dilation is "
                  "parameter-neutral", detail);
}

// --------------------------------------------------------------------------
// criterion 4: loss and masking

void criterion_loss() {
  bool pass = true;
  std::string detail;
  Rng rng(5);
  const int s = 8;
  {  // saturated correct prediction
    Tensor logits = Tensor::zeros({1, s, s}, true);
    Tensor targets = Tensor::zeros({1, s, s});
    for (int i = 0; i < s * s; ++i) {
      const bool on = rng.uniform() < 0.5;
      targets.data()[i] = on ? 1.0 : 0.0;
      logits.data()[i] = on ? 30.0 : -30.0;
    }
    const double v = mask_loss(logits, targets, {1}, 5.0).item();
    if (!(v < 1e-9)) {
      pass = false;
      detail = "saturated loss " + fmt(v, 12);
    }
  }
  {  // all-zero logits
    Tensor logits = Tensor::zeros({2, s, s}, true);
    Tensor targets = Tensor::zeros({2, s, s});
    for (int i = 0; i < 2 * s * s; ++i)
      targets.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const double v = mask_loss(logits, targets, {1, 1}, 5.0).item();
    if (std::fabs(v - 5.0 * std::log(2.0)) > 1e-9) {
      pass = false;
      detail = "ln2 mismatch " + fmt(v, 12);
    }
  }
  {  // masked instances contribute nothing
    Tensor logits = Tensor::zeros({2, s, s}, true);
    Tensor targets = Tensor::zeros({2, s, s});
    fill(logits, rng, -2, 2);
    for (int i = 0; i < 2 * s * s; ++i)
      targets.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Tensor both = mask_loss(logits, targets, {1, 0}, 5.0);
    Tensor first_only = Tensor::zeros({1, s, s}, true);
    Tensor first_targets = Tensor::zeros({1, s, s});
    std::copy(logits.data(), logits.data() + s * s, first_only.data());
    std::copy(targets.data(), targets.data() + s * s, first_targets.data());
    const double ref = mask_loss(first_only, first_targets, {1}, 5.0).item();
    if (std::fabs(both.item() - ref) > 1e-12) {
      pass = false;
      detail = "masking changed the value";
    }
    backward(both);
    auto g = logits.grad();
    for (int i = s * s; i < 2 * s * s; ++i)
      if (g[i] != 0.0) {
        pass = false;
        detail = "masked instance received gradient";
      }
  }
  report(4, pass, "mask loss examples hold exactly", detail);
}

// --------------------------------------------------------------------------
// criterion 5: evaluator oracle

double ap_oracle(std::vector<std::pair<double, BinaryMask>> dets,
                 const std::vector<BinaryMask>& gts, double thr) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<bool> used(gts.size(), false);
  std::vector<int> tp_flags;
  for (const auto& [score, mask] : dets) {
    int best = -1;
    double best_iou = -1.0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      int64_t inter = 0, uni = 0;
      for (size_t i = 0; i < mask.data.size(); ++i) {
        inter += mask.data[i] & gts[g].data[i];
        uni += mask.data[i] | gts[g].data[i];
      }
      const double iou = uni == 0 ? 1.0 : (double)inter / uni;
      if (iou >= thr && iou > best_iou) {
        best_iou = iou;
        best = (int)g;
      }
    }
    if (best >= 0) used[best] = true;
    tp_flags.push_back(best >= 0 ? 1 : 0);
  }
  double ap = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double want = r / 100.0;
    double best_prec = 0.0;
    int tp = 0, n = 0;
    for (int flag : tp_flags) {
      tp += flag;
      ++n;
      if ((double)tp / gts.size() >= want)
        best_prec = std::max(best_prec, (double)tp / n);
    }
    ap += best_prec;
  }
  return ap / 101.0;
}

void criterion_evaluator() {
  Rng rng(11);
  bool pass = true;
  std::string detail;
  const auto thresholds = ap_thresholds();
  for (int rep = 0; rep < 200 && pass; ++rep) {
    const int n_det = rng.uniform_int(0, 6);
    const int n_gt = rng.uniform_int(1, 4);
    std::vector<Detection> dets(n_det);
    std::vector<std::pair<int, BinaryMask>> gts;
    std::vector<BinaryMask> gt_masks;
    for (int g = 0; g < n_gt; ++g) {
      BinaryMask m(5, 5);
      for (auto& v : m.data) v = rng.uniform() < 0.45 ? 1 : 0;
      gts.emplace_back(1, m);
      gt_masks.push_back(m);
    }
    std::vector<std::pair<double, BinaryMask>> od;
    for (int d = 0; d < n_det; ++d) {
      dets[d].category_id = 1;
      dets[d].score = rng.uniform(0.0, 1.0);
      BinaryMask m(5, 5);
      if (rng.uniform() < 0.5) {
        m = gt_masks[rng.uniform_int(0, n_gt - 1)];
        for (int flips = rng.uniform_int(0, 6); flips > 0; --flips)
          m.data[rng.uniform_int(0, 24)] ^= 1;
      } else {
        for (auto& v : m.data) v = rng.uniform() < 0.45 ? 1 : 0;
      }
      dets[d].mask = m;
      od.emplace_back(dets[d].score, m);
    }
    auto res = mask_ap(dets, gts);
    for (int t = 0; t < kApThresholds; ++t) {
      const double expect = ap_oracle(od, gt_masks, thresholds[t]);
      if (std::fabs(res[1].ap[t] - expect) > 1e-9) {
        pass = false;
        detail = "AP mismatch " + fmt(res[1].ap[t], 12) + " vs " +
                 fmt(expect, 12);
      }
    }
  }

  // aggregation identity on a small dataset
  if (pass) {
    DatasetConfig cfg;
    cfg.train_images = 2;
    cfg.val_images = 10;
    cfg.seed = 13;
    Dataset d = generate_dataset(cfg);
    auto jitter = [](const DatasetRecord&, const InstanceAnnotation& ann) {
      BinaryMask m = ann.mask;
      for (size_t i = 0; i < m.data.size(); i += 9) m.data[i] ^= 1;
      return m;
    };
    EvalReport r = miou_given_gt_boxes(jitter, d);
    const double weighted =
        (r.seen.miou * r.seen.instances + r.unseen.miou * r.unseen.instances) /
        (double)(r.seen.instances + r.unseen.instances);
    if (std::fabs(r.all.miou - weighted) > 1e-12) {
      pass = false;
      detail = "split aggregation identity broke";
    }
  }
  report(5, pass, "mask AP equals the brute-force oracle; aggregation identity",
         detail);
}

// --------------------------------------------------------------------------
// criterion 6: recipe determinism

void criterion_determinism(const std::string& out_root) {
  const std::string recipe_path =
      std::string(CTSEG_CONFIG_DIR) + "/determinism.recipe";
  const Recipe recipe = load_recipe(recipe_path);
  const RecipeRun a = run_recipe(recipe, out_root + "/det_a", 2);
  const RecipeRun b = run_recipe(recipe, out_root + "/det_b", 1);
  std::ifstream fa(out_root + "/det_a/results.csv"), fb(out_root + "/det_b/results.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  const bool pass = !sa.str().empty() && sa.str() == sb.str() &&
                    a.to_csv() == b.to_csv();
  report(6, pass, "recipe reruns with identical seeds give bit-identical CSVs");
}

// --------------------------------------------------------------------------
// criterion 7: class agnosticism

void criterion_class_agnostic() {
  DatasetConfig dc;
  dc.image_size = 64;
  dc.train_images = 2;
  dc.val_images = 8;
  dc.seed = 23;
  Dataset data = generate_dataset(dc);

  ModelConfig mc;
  mc.crop_size = 16;
  mc.backbone.channels = {8, 12, 12};
  mc.use_instance_embedding = false;
  mc.head.family = HeadFamily::resnet_basic;
  mc.head.named_depth = 4;
  mc.head.rows = {{1, 16, {8}}, {1, 16, {10, 10}}};
  Model model(mc, 3);
  {  // prime the norm statistics
    NoGradGuard ng;
    std::vector<std::vector<Box>> boxes{{Box{0.2, 0.2, 0.8, 0.8}}};
    Tensor imgs = stack_batch({data.val[0].image});
    model.forward_masks_batch(imgs, boxes, Phase::train);
  }

  // permute category ids over all annotations (1..8 -> 8..1)
  Dataset permuted = data;
  for (auto& rec : permuted.val)
    for (auto& ann : rec.annotations) ann.category_id = 9 - ann.category_id;
  for (auto& rec : permuted.train)
    for (auto& ann : rec.annotations) ann.category_id = 9 - ann.category_id;

  bool pass = true;
  // logits and loss untouched
  const DatasetRecord& rec = data.val[0];
  std::vector<Box> boxes;
  for (const auto& ann : rec.annotations) boxes.push_back(ann.box);
  NoGradGuard ng;
  Tensor la = model.forward_masks(rec.image, boxes, Phase::eval);
  Tensor lb = model.forward_masks(permuted.val[0].image, boxes, Phase::eval);
  if (std::memcmp(la.data(), lb.data(), la.numel() * sizeof(double)) != 0)
    pass = false;

  Tensor targets = Tensor::zeros(la.shape());
  std::vector<uint8_t> has;
  for (size_t i = 0; i < rec.annotations.size(); ++i) {
    Tensor t = crop_target_mask(rec.annotations[i].mask,
                                rec.annotations[i].box, 16);
    std::copy(t.data(), t.data() + 16 * 16, targets.data() + i * 16 * 16);
    has.push_back(1);
  }
  if (mask_loss(la, targets, has, 5.0).item() !=
      mask_loss(lb, targets, has, 5.0).item())
    pass = false;

  EvalReport ra = miou_given_gt_boxes(model, data);
  EvalReport rb = miou_given_gt_boxes(model, permuted);
  if (ra.all.miou != rb.all.miou) pass = false;

  report(7, pass, "permuting category ids changes no logits, loss or mIOU");
}

// --------------------------------------------------------------------------
// criteria 8-11: the paired directional grid

struct GridOutcome {
  // per seed, unseen/seen mIOU of each cell
  std::map<std::string, std::vector<double>> unseen, seen;
  std::vector<uint64_t> seeds;
};

GridOutcome run_directional_grid(const std::string& out_root) {
  const Recipe recipe =
      load_recipe(std::string(CTSEG_CONFIG_DIR) + "/acceptance.recipe");
  GridOutcome out;
  out.seeds = recipe.seeds;

  for (size_t si = 0; si < recipe.seeds.size(); ++si) {
    const uint64_t seed = recipe.seeds[si];
    DatasetConfig dc = recipe.dataset;
    dc.seed = splitmix64(recipe.dataset.seed ^ splitmix64(seed));
    const Dataset data = generate_dataset(dc);

    // train all cells of this seed, two at a time
    std::vector<Model> models;
    models.reserve(recipe.cells.size());
    std::vector<EvalReport> reports(recipe.cells.size());
    {
      std::atomic<size_t> next{0};
      std::vector<std::unique_ptr<Model>> slots(recipe.cells.size());
      std::vector<std::exception_ptr> errors(recipe.cells.size());
      auto work = [&] {
        for (;;) {
          const size_t i = next.fetch_add(1);
          if (i >= recipe.cells.size()) return;
          try {
            ModelConfig mc = cell_model_config(recipe, recipe.cells[i]);
            auto model = std::make_unique<Model>(
                mc, splitmix64(seed ^ 0x11aa22bb33cc44ddULL));
            TrainConfig tc = recipe.train;
            tc.set_seed(splitmix64(seed ^ 0x55ee66ff77881199ULL));
            train_model(*model, data, tc);
            reports[i] = miou_given_gt_boxes(*model, data);
            slots[i] = std::move(model);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      };
      std::thread t1(work), t2(work);
      t1.join();
      t2.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (size_t i = 0; i < recipe.cells.size(); ++i) {
        out.unseen[recipe.cells[i].name].push_back(reports[i].unseen.miou);
        out.seen[recipe.cells[i].name].push_back(reports[i].seen.miou);
        std::printf("    seed %llu %-14s seen %.4f unseen %.4f\n",
                    (unsigned long long)seed, recipe.cells[i].name.c_str(),
                    reports[i].seen.miou, reports[i].unseen.miou);
        std::fflush(stdout);
      }

      // two-stage: hourglass teacher labels the train split, the shallow
      // student retrains on it (paired with the directly trained cell)
      size_t teacher_idx = 0, student_idx = 0;
      for (size_t i = 0; i < recipe.cells.size(); ++i) {
        if (recipe.cells[i].name == "hourglass") teacher_idx = i;
        if (recipe.cells[i].name == "resnet4") student_idx = i;
      }
      const Dataset pseudo = export_pseudo_labels(*slots[teacher_idx], data);
      ModelConfig mc = cell_model_config(recipe, recipe.cells[student_idx]);
      Model student(mc, splitmix64(seed ^ 0x11aa22bb33cc44ddULL));
      TrainConfig tc = recipe.train;
      tc.set_seed(splitmix64(seed ^ 0x55ee66ff77881199ULL));
      train_model(student, pseudo, tc);
      EvalReport sr = miou_given_gt_boxes(student, pseudo);
      out.unseen["student_pseudo"].push_back(sr.unseen.miou);
      out.seen["student_pseudo"].push_back(sr.seen.miou);
      std::printf("    seed %llu %-14s seen %.4f unseen %.4f\n",
                  (unsigned long long)seed, "student_pseudo", sr.seen.miou,
                  sr.unseen.miou);
      std::fflush(stdout);
    }
  }

  // persist the grid for inspection
  fs::create_directories(out_root);
  std::ofstream csv(out_root + "/directional_grid.csv");
  csv << "cell,seed,split,mIOU\n";
  csv.precision(17);
  for (const auto& [cell, vals] : out.unseen)
    for (size_t i = 0; i < vals.size(); ++i)
      csv << cell << "," << out.seeds[i] << ",unseen," << vals[i] << "\n";
  for (const auto& [cell, vals] : out.seen)
    for (size_t i = 0; i < vals.size(); ++i)
      csv << cell << "," << out.seeds[i] << ",seen," << vals[i] << "\n";
  return out;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

void criteria_directional(const std::string& out_root) {
  const double t0 = now_seconds();
  const GridOutcome grid = run_directional_grid(out_root);
  const size_t n = grid.seeds.size();

  // 8: architecture ordering
  {
    bool pass = true;
    std::string detail;
    for (size_t i = 0; i < n; ++i) {
      const double gap_unseen =
          grid.unseen.at("hourglass")[i] - grid.unseen.at("resnet4")[i];
      const double gap_seen =
          std::fabs(grid.seen.at("hourglass")[i] - grid.seen.at("resnet4")[i]);
      detail += (i ? " / " : "") + fmt(gap_unseen) + " (seen " +
                fmt(gap_seen) + ")";
      if (gap_unseen < 0.05 || gap_seen >= 0.5 * gap_unseen) pass = false;
    }
    report(8, pass,
           "hourglass beats resnet-4 on unseen by >= 5 points each seed, seen "
           "gap under half",
           detail);
  }
  // 9: gt-only vs jittered proposals
  {
    bool pass = true;
    std::string detail;
    for (size_t i = 0; i < n; ++i) {
      const double drop =
          grid.unseen.at("hourglass")[i] - grid.unseen.at("hourglass_prop")[i];
      const double seen_change = std::fabs(grid.seen.at("hourglass")[i] -
                                           grid.seen.at("hourglass_prop")[i]);
      detail += (i ? " / " : "") + fmt(drop) + " (seen " + fmt(seen_change) + ")";
      if (drop < 0.03 || seen_change >= drop) pass = false;
    }
    report(9, pass,
           "jittered-proposal training drops unseen mIOU by >= 3 points each "
           "seed, seen moves less",
           detail);
  }
  // 10: encoder-decoder ablation
  {
    std::vector<double> removed_ed, removed_lrs, gaps;
    for (size_t i = 0; i < n; ++i) {
      const double gap_def =
          grid.unseen.at("hourglass")[i] - grid.unseen.at("resnet4")[i];
      const double gap_noed =
          grid.unseen.at("hourglass_noed")[i] - grid.unseen.at("resnet4")[i];
      const double gap_nolrs =
          grid.unseen.at("hourglass_nolrs")[i] - grid.unseen.at("resnet4")[i];
      gaps.push_back(gap_def);
      removed_ed.push_back(gap_def - gap_noed);
      removed_lrs.push_back(gap_def - gap_nolrs);
    }
    const double med_gap = median3(gaps);
    const double med_ed = median3(removed_ed);
    const double med_lrs = median3(removed_lrs);
    const bool pass = med_ed >= 0.5 * med_gap && med_lrs < med_ed;
    report(10, pass,
           "removing the encoder-decoder erases at least half the gap; "
           "removing skips erases less",
           "median gap " + fmt(med_gap) + ", no-ed removes " + fmt(med_ed) +
               ", no-lrs removes " + fmt(med_lrs));
  }
  // 11: two-stage training
  {
    int wins = 0;
    std::string detail;
    for (size_t i = 0; i < n; ++i) {
      const double student = grid.unseen.at("student_pseudo")[i];
      const double direct = grid.unseen.at("resnet4")[i];
      wins += student > direct ? 1 : 0;
      detail += (i ? " / " : "") + fmt(student) + " vs " + fmt(direct);
    }
    report(11, wins >= 2,
           "pseudo-label student beats the directly trained shallow head in "
           ">= 2 of 3 seeds",
           detail);
  }
  const double elapsed = now_seconds() - t0;
  std::printf("     directional grid runtime: %.1f s (budget 2700 s)\n", elapsed);
  if (elapsed > 2700.0)
    report(8, false, "directional grid exceeded the runtime budget",
           fmt(elapsed, 0) + "s");
}

// --------------------------------------------------------------------------
// criterion 12: overfit sanity

void criterion_overfit() {
  const Recipe recipe =
      load_recipe(std::string(CTSEG_CONFIG_DIR) + "/acceptance.recipe");
  DatasetConfig dc = recipe.dataset;
  dc.train_images = 1;
  dc.val_images = 1;
  dc.categories = dc.seen_categories;  // the lone image must carry masks
  dc.seed = 4242;
  const Dataset data = generate_dataset(dc);

  bool pass = true;
  std::string detail;
  const std::string spec_dir(CTSEG_SPEC_DIR);
  struct HeadCase {
    const char* label;
    MaskHeadSpec spec;
  };
  std::vector<HeadCase> heads;
  heads.push_back({"resnet4", load_mask_head_spec(spec_dir + "/desk32_resnet4.spec")});
  heads.push_back({"hourglass", load_mask_head_spec(spec_dir + "/desk32_hourglass20.spec")});
  {
    MaskHeadSpec fc;
    fc.family = HeadFamily::fully_connected;
    fc.named_depth = 2;
    fc.fc_hidden_width = 192;
    fc.fc_size = recipe.base_model.crop_size;
    heads.push_back({"fc2", fc});
  }

  for (auto& hc : heads) {
    ModelConfig mc = recipe.base_model;
    mc.head = hc.spec;
    mc.validate();
    Model model(mc, 17);
    TrainConfig tc = recipe.train;
    tc.steps = 500;
    tc.batch_size = 1;
    tc.set_seed(99);
    const TrainResult r = train_model(model, data, tc);
    const double best = *std::min_element(r.loss_trace.begin(),
                                          r.loss_trace.end());
    detail += std::string(detail.empty() ? "" : ", ") + hc.label + " " +
              fmt(best);
    if (!(best < 0.05 * mc.mask_loss_weight)) pass = false;
  }
  report(12, pass, "single-image loss falls below 0.05 x weight within 500 steps",
         detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::string out_root = "acceptance_out";
  if (argc > 1) out_root = argv[1];
  fs::create_directories(out_root);
  std::printf("kernels: %s\n", kern::isa_name(kern::active_isa()).c_str());

  criterion_gradients();
  criterion_roi_identities();
  criterion_conformance();
  criterion_loss();
  criterion_evaluator();
  criterion_determinism(out_root);
  criterion_class_agnostic();
  criteria_directional(out_root);
  criterion_overfit();

  std::printf("%s: %d criterion failure(s), total %.1f s\n",
              g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
              g_failures, now_seconds());
  return g_failures == 0 ? 0 : 1;
}
