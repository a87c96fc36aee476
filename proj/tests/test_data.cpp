#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "ctseg/data.hpp"
#include "ctseg/png_io.hpp"
#include "test_util.hpp"

using namespace ctseg;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.train_images = 12;
  cfg.val_images = 6;
  cfg.seed = 99;
  return cfg;
}

bool records_equal(const DatasetRecord& a, const DatasetRecord& b) {
  if (a.split != b.split) return false;
  if (a.image.shape() != b.image.shape()) return false;
  if (!testutil::bits_equal(a.image.data(), b.image.data(), a.image.numel()))
    return false;
  if (a.annotations.size() != b.annotations.size()) return false;
  for (size_t i = 0; i < a.annotations.size(); ++i) {
    const auto& x = a.annotations[i];
    const auto& y = b.annotations[i];
    if (x.category_id != y.category_id || x.has_mask != y.has_mask) return false;
    if (std::fabs(x.box.ymin - y.box.ymin) > 1e-12 ||
        std::fabs(x.box.xmin - y.box.xmin) > 1e-12 ||
        std::fabs(x.box.ymax - y.box.ymax) > 1e-12 ||
        std::fabs(x.box.xmax - y.box.xmax) > 1e-12)
      return false;
    if (x.has_mask && !(x.mask == y.mask)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("png io round trips bytes exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ctseg_png_test";
  fs::create_directories(dir);
  Rng rng(4);
  Image8 img(37, 23);
  for (auto& b : img.rgb) b = (uint8_t)rng.uniform_int(0, 255);
  const std::string path = (dir / "t.png").string();
  write_png(path, img);
  Image8 back = read_png(path);
  CHECK(back.h == img.h);
  CHECK(back.w == img.w);
  CHECK(back.rgb == img.rgb);
  fs::remove_all(dir);
}

TEST_CASE("single-disk dataset matches the analytic area") {
  DatasetConfig cfg;
  cfg.categories = {ShapeKind::disk};
  cfg.seen_categories = {ShapeKind::disk};
  cfg.min_instances = 1;
  cfg.max_instances = 1;
  cfg.train_images = 20;
  cfg.val_images = 0;
  cfg.seed = 5;
  // pin the radius so the analytic area is exact, not box-estimated
  cfg.min_radius_frac = 0.18;
  cfg.max_radius_frac = 0.18;
  Dataset d = generate_dataset(cfg);
  REQUIRE(d.train.size() == 20);
  for (const auto& rec : d.train) {
    REQUIRE(rec.annotations.size() == 1);
    const auto& ann = rec.annotations[0];
    REQUIRE(ann.has_mask);
    // box tight on the mask support
    const int h = rec.image.dim(0), w = rec.image.dim(1);
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (ann.mask.at(y, x)) {
          y0 = std::min(y0, y); y1 = std::max(y1, y);
          x0 = std::min(x0, x); x1 = std::max(x1, x);
        }
    CHECK(ann.box.ymin == doctest::Approx((double)y0 / h).epsilon(1e-12));
    CHECK(ann.box.ymax == doctest::Approx((double)(y1 + 1) / h).epsilon(1e-12));
    CHECK(ann.box.xmin == doctest::Approx((double)x0 / w).epsilon(1e-12));
    CHECK(ann.box.xmax == doctest::Approx((double)(x1 + 1) / w).epsilon(1e-12));
    // pixel count approximates pi r^2 for the configured radius
    const double r = 0.18 * cfg.image_size;
    const double expect = 3.14159265358979 * r * r;
    const double area = (double)ann.mask.count();
    CHECK(area > 0.9 * expect);
    CHECK(area < 1.1 * expect);
    // and the tight box spans roughly the diameter
    CHECK(std::abs((y1 - y0 + 1) - 2 * r) <= 2.0);
    CHECK(std::abs((x1 - x0 + 1) - 2 * r) <= 2.0);
  }
}

TEST_CASE("same seed reproduces the dataset bit for bit") {
  Dataset a = generate_dataset(small_config());
  Dataset b = generate_dataset(small_config());
  REQUIRE(a.train.size() == b.train.size());
  REQUIRE(a.val.size() == b.val.size());
  for (size_t i = 0; i < a.train.size(); ++i)
    CHECK(records_equal(a.train[i], b.train[i]));
  for (size_t i = 0; i < a.val.size(); ++i)
    CHECK(records_equal(a.val[i], b.val[i]));

  DatasetConfig other = small_config();
  other.seed = 100;
  Dataset c = generate_dataset(other);
  bool all_same = true;
  for (size_t i = 0; i < a.train.size() && all_same; ++i)
    all_same = records_equal(a.train[i], c.train[i]);
  CHECK_FALSE(all_same);
}

TEST_CASE("partial supervision: train masks exist exactly for seen categories") {
  Dataset d = generate_dataset(small_config());
  int seen_n = 0, unseen_n = 0;
  for (const auto& rec : d.train)
    for (const auto& ann : rec.annotations) {
      const bool seen = d.config.is_seen(ann.category_id);
      CHECK(ann.has_mask == seen);
      CHECK((ann.has_mask ? ann.mask.count() > 0 : ann.mask.data.empty()));
      (seen ? seen_n : unseen_n)++;
    }
  CHECK(seen_n > 0);
  CHECK(unseen_n > 0);
  for (const auto& rec : d.val)
    for (const auto& ann : rec.annotations) {
      CHECK(ann.has_mask);
      CHECK(ann.mask.count() > 0);
    }
}

TEST_CASE("category frequencies stay within 3 sigma of uniform") {
  DatasetConfig cfg = small_config();
  cfg.train_images = 300;
  cfg.val_images = 0;
  cfg.min_instances = 1;
  cfg.max_instances = 2;
  Dataset d = generate_dataset(cfg);
  std::map<int, int64_t> counts;
  int64_t total = 0;
  for (const auto& rec : d.train)
    for (const auto& ann : rec.annotations) {
      counts[ann.category_id]++;
      ++total;
    }
  const double p = 1.0 / 8.0;
  const double sigma = std::sqrt((double)total * p * (1 - p));
  for (int cat = 1; cat <= 8; ++cat) {
    CAPTURE(cat);
    CHECK(std::fabs((double)counts[cat] - total * p) <= 3.0 * sigma);
  }
}

TEST_CASE("rle encoding") {
  SUBCASE("all-zeros mask is a single run") {
    BinaryMask m(4, 4);
    const auto counts = rle_encode(m);
    REQUIRE(counts.size() == 1);
    CHECK(counts[0] == 16);
  }
  SUBCASE("column-major order, leading zero run") {
    BinaryMask m(2, 2);
    m.at(0, 0) = 1;  // first in column-major order
    const auto counts = rle_encode(m);
    // starts with a zero-count of 0, then a one-run of 1, then 3 zeros
    REQUIRE(counts.size() == 3);
    CHECK(counts[0] == 0);
    CHECK(counts[1] == 1);
    CHECK(counts[2] == 3);
  }
  SUBCASE("a thousand random masks round trip exactly") {
    Rng rng(6);
    for (int rep = 0; rep < 1000; ++rep) {
      const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
      BinaryMask m(h, w);
      for (auto& v : m.data) v = rng.uniform() < 0.4 ? 1 : 0;
      const BinaryMask back = rle_decode(rle_encode(m), h, w);
      CHECK(back == m);
    }
  }
  SUBCASE("inconsistent run totals are rejected") {
    CHECK_THROWS(rle_decode({5}, 2, 2));
    CHECK_THROWS(rle_decode({3, 2}, 2, 2));
  }
}

TEST_CASE("annotation files round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ctseg_ann_test";
  fs::remove_all(dir);

  Dataset d = generate_dataset(small_config());
  save_annotations(d, dir.string());
  Dataset back = load_annotations(dir.string());

  CHECK(back.config.seed == d.config.seed);
  CHECK(back.config.seen_categories == d.config.seen_categories);
  REQUIRE(back.train.size() == d.train.size());
  REQUIRE(back.val.size() == d.val.size());
  for (size_t i = 0; i < d.train.size(); ++i)
    CHECK(records_equal(d.train[i], back.train[i]));
  for (size_t i = 0; i < d.val.size(); ++i)
    CHECK(records_equal(d.val[i], back.val[i]));

  SUBCASE("malformed file reports a diagnostic") {
    std::ofstream f(dir / "annotations.json");
    f << "{ \"images\": [";
    f.close();
    CHECK_THROWS_WITH_AS(load_annotations(dir.string()),
                         doctest::Contains("parse error"), std::runtime_error);
  }
  fs::remove_all(dir);
}

TEST_CASE("pseudo-label export completes the annotations") {
  DatasetConfig cfg = small_config();
  cfg.train_images = 4;
  cfg.val_images = 2;
  Dataset d = generate_dataset(cfg);

  ModelConfig mc;
  mc.crop_size = 16;
  mc.backbone.channels = {6, 8, 8};
  mc.head.family = HeadFamily::resnet_basic;
  mc.head.named_depth = 4;
  mc.head.rows = {{1, 16, {6}}, {1, 16, {8, 8}}};
  Model model(mc, 3);
  // prime the norm statistics so eval-phase prediction works
  {
    std::vector<std::vector<Box>> boxes{{Box{0.2, 0.2, 0.8, 0.8}}};
    Tensor imgs = stack_batch({d.train[0].image});
    model.forward_masks_batch(imgs, boxes, Phase::train);
  }

  Dataset out = export_pseudo_labels(model, d);
  REQUIRE(out.train.size() == d.train.size());
  int replaced = 0;
  for (size_t i = 0; i < out.train.size(); ++i) {
    REQUIRE(out.train[i].annotations.size() == d.train[i].annotations.size());
    for (size_t j = 0; j < out.train[i].annotations.size(); ++j) {
      const auto& src = d.train[i].annotations[j];
      const auto& dst = out.train[i].annotations[j];
      CHECK(dst.has_mask);
      if (src.has_mask) {
        CHECK(dst.mask == src.mask);  // seen masks pass through unchanged
      } else {
        ++replaced;
        CHECK(dst.mask.h == d.config.image_size);
      }
    }
  }
  CHECK(replaced > 0);
}

TEST_SUITE_END();
