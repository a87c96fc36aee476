#include "ctseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "ctseg/png_io.hpp"
#include "ctseg/rng.hpp"

namespace ctseg {

using nlohmann::json;

std::string shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::ring: return "ring";
    case ShapeKind::bar: return "bar";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::cross: return "cross";
    case ShapeKind::crescent: return "crescent";
  }
  throw std::invalid_argument("unknown shape kind");
}

ShapeKind shape_from_name(const std::string& name) {
  for (int i = 1; i <= 8; ++i)
    if (shape_name((ShapeKind)i) == name) return (ShapeKind)i;
  throw std::invalid_argument("unknown shape '" + name + "'");
}

int category_id(ShapeKind k) { return (int)k; }

bool DatasetConfig::is_seen(int cat_id) const {
  for (ShapeKind k : seen_categories)
    if ((int)k == cat_id) return true;
  return false;
}

void DatasetConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("image_size too small");
  if (categories.empty()) throw std::invalid_argument("no categories");
  for (ShapeKind k : seen_categories)
    if (std::find(categories.begin(), categories.end(), k) == categories.end())
      throw std::invalid_argument("seen category not among categories");
  if (min_instances < 1 || max_instances < min_instances)
    throw std::invalid_argument("bad instance range");
  if (min_radius_frac <= 0 || max_radius_frac < min_radius_frac ||
      max_radius_frac > 0.35)
    throw std::invalid_argument("bad radius range");
}

// ---------------------------------------------------------------------------
// analytic shapes

namespace {

struct ShapeInstance {
  ShapeKind kind;
  double cy, cx;      // pixels
  double r;           // primary radius, pixels
  double angle = 0;   // orientation
  double aux1 = 0, aux2 = 0;  // per-kind extras
  double color[3];

  // loose circumscribed radius, for placement
  double bound() const {
    switch (kind) {
      case ShapeKind::square: return r * 1.4142135623730951;
      case ShapeKind::bar: return std::hypot(r, aux1);
      case ShapeKind::cross: return std::hypot(r, aux1);
      default: return r;
    }
  }

  bool inside(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    switch (kind) {
      case ShapeKind::disk:
        return dy * dy + dx * dx <= r * r;
      case ShapeKind::square:
        return std::fabs(dy) <= r && std::fabs(dx) <= r;
      case ShapeKind::triangle: {
        // vertices on the circumscribed circle
        double vy[3], vx[3];
        for (int k = 0; k < 3; ++k) {
          const double a = angle + k * 2.0943951023931953;
          vy[k] = cy + r * std::sin(a);
          vx[k] = cx + r * std::cos(a);
        }
        double side = 0;
        for (int k = 0; k < 3; ++k) {
          const int j = (k + 1) % 3;
          const double cross = (vx[j] - vx[k]) * (y - vy[k]) -
                               (vy[j] - vy[k]) * (x - vx[k]);
          if (k == 0)
            side = cross;
          else if (cross * side < 0)
            return false;
        }
        return true;
      }
      case ShapeKind::ring: {
        const double d2 = dy * dy + dx * dx;
        return d2 <= r * r && d2 >= aux1 * aux1;
      }
      case ShapeKind::bar: {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return std::fabs(u) <= r && std::fabs(v) <= aux1;
      }
      case ShapeKind::ellipse: {
        const double ey = dy / aux1, ex = dx / r;
        return ex * ex + ey * ey <= 1.0;
      }
      case ShapeKind::cross: {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return (std::fabs(u) <= r && std::fabs(v) <= aux1) ||
               (std::fabs(v) <= r && std::fabs(u) <= aux1);
      }
      case ShapeKind::crescent: {
        if (dy * dy + dx * dx > r * r) return false;
        const double oy = cy + aux2 * std::sin(angle);
        const double ox = cx + aux2 * std::cos(angle);
        const double gy = y - oy, gx = x - ox;
        return gy * gy + gx * gx > aux1 * aux1;
      }
    }
    return false;
  }
};

ShapeInstance sample_shape(ShapeKind kind, Rng& rng, const DatasetConfig& cfg,
                           double bg_base) {
  const double s = cfg.image_size;
  ShapeInstance out;
  out.kind = kind;
  out.r = rng.uniform(cfg.min_radius_frac, cfg.max_radius_frac) * s;
  out.angle = rng.uniform(0.0, 6.283185307179586);
  switch (kind) {
    case ShapeKind::square:
      out.r *= 0.9;  // half side; circumscribed radius stays comparable
      break;
    case ShapeKind::ring:
      out.aux1 = out.r * rng.uniform(0.45, 0.62);
      break;
    case ShapeKind::bar:
      out.r *= 1.05;                          // half length
      out.aux1 = out.r * rng.uniform(0.32, 0.46);  // half width
      break;
    case ShapeKind::ellipse:
      out.aux1 = out.r * rng.uniform(0.50, 0.75);  // second radius
      break;
    case ShapeKind::cross:
      out.aux1 = out.r * rng.uniform(0.24, 0.34);  // arm half width
      break;
    case ShapeKind::crescent:
      out.aux1 = out.r * rng.uniform(0.72, 0.88);  // cutter radius
      out.aux2 = out.r * rng.uniform(0.55, 0.80);  // cutter offset
      break;
    default:
      break;
  }
  const double margin = out.bound() + 1.5;
  out.cy = rng.uniform(margin, s - margin);
  out.cx = rng.uniform(margin, s - margin);
  double base = bg_base;
  while (std::fabs(base - bg_base) < cfg.min_contrast)
    base = rng.uniform(cfg.intensity_low, cfg.intensity_high);
  for (int c = 0; c < 3; ++c)
    out.color[c] = std::clamp(base + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  return out;
}

// 4x4 supersampled coverage of one pixel
double coverage(const ShapeInstance& sh, int py, int px) {
  const double b = sh.bound();
  if (py + 1.0 < sh.cy - b || py > sh.cy + b || px + 1.0 < sh.cx - b ||
      px > sh.cx + b)
    return 0.0;
  int hit = 0;
  for (int sy = 0; sy < 4; ++sy)
    for (int sx = 0; sx < 4; ++sx)
      hit += sh.inside(py + (sy + 0.5) / 4.0, px + (sx + 0.5) / 4.0) ? 1 : 0;
  return hit / 16.0;
}

struct RenderedInstance {
  ShapeInstance shape;
  BinaryMask support;   // coverage >= 0.5
  BinaryMask visible;   // support minus later shapes
};

Box tight_box(const BinaryMask& m) {
  int y0 = m.h, y1 = -1, x0 = m.w, x1 = -1;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(y, x)) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  Box b;
  if (y1 < 0) return b;  // empty -> invalid box
  b.ymin = (double)y0 / m.h;
  b.ymax = (double)(y1 + 1) / m.h;
  b.xmin = (double)x0 / m.w;
  b.xmax = (double)(x1 + 1) / m.w;
  return b;
}

DatasetRecord render_image(const DatasetConfig& cfg, Rng& rng,
                           const std::string& split) {
  const int s = cfg.image_size;
  const int min_visible = 12;

  for (int attempt = 0; attempt < 20; ++attempt) {
    const double bg_base = rng.uniform(cfg.intensity_low, cfg.intensity_high);
    const int want = rng.uniform_int(cfg.min_instances, cfg.max_instances);
    std::vector<ShapeInstance> shapes;
    bool placed_all = true;
    for (int i = 0; i < want; ++i) {
      bool placed = false;
      for (int tries = 0; tries < 40 && !placed; ++tries) {
        const ShapeKind kind =
            cfg.categories[rng.uniform_int(0, (int)cfg.categories.size() - 1)];
        ShapeInstance cand = sample_shape(kind, rng, cfg, bg_base);
        bool ok = true;
        for (const auto& other : shapes) {
          Box a{(cand.cy - cand.bound()) / s, (cand.cx - cand.bound()) / s,
                (cand.cy + cand.bound()) / s, (cand.cx + cand.bound()) / s};
          Box b{(other.cy - other.bound()) / s, (other.cx - other.bound()) / s,
                (other.cy + other.bound()) / s, (other.cx + other.bound()) / s};
          if (box_iou(a, b) > cfg.max_box_overlap) {
            ok = false;
            break;
          }
        }
        if (ok) {
          shapes.push_back(cand);
          placed = true;
        }
      }
      if (!placed) {
        placed_all = false;
        break;
      }
    }
    if (!placed_all || (int)shapes.size() < cfg.min_instances) continue;

    // rasterize supports and visibility (later shapes occlude earlier ones)
    std::vector<RenderedInstance> rendered;
    std::vector<std::vector<double>> covs;
    for (const auto& sh : shapes) {
      RenderedInstance ri;
      ri.shape = sh;
      ri.support = BinaryMask(s, s);
      std::vector<double> cov((size_t)s * s, 0.0);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double c = coverage(sh, y, x);
          cov[(size_t)y * s + x] = c;
          ri.support.at(y, x) = c >= 0.5 ? 1 : 0;
        }
      rendered.push_back(std::move(ri));
      covs.push_back(std::move(cov));
    }
    bool usable = true;
    for (size_t i = 0; i < rendered.size(); ++i) {
      rendered[i].visible = rendered[i].support;
      for (size_t j = i + 1; j < rendered.size(); ++j)
        for (int p = 0; p < s * s; ++p)
          if (rendered[j].support.data[p]) rendered[i].visible.data[p] = 0;
      if (rendered[i].visible.count() < min_visible) usable = false;
    }
    if (!usable) continue;

    // compose the image: background, then shapes in z order
    DatasetRecord rec;
    rec.split = split;
    rec.image = Tensor::zeros({s, s, 3});
    double* img = rec.image.data();
    double bg[3];
    for (int c = 0; c < 3; ++c)
      bg[c] = std::clamp(bg_base + rng.uniform(-0.03, 0.03), 0.0, 1.0);
    for (int p = 0; p < s * s; ++p)
      for (int c = 0; c < 3; ++c)
        img[p * 3 + c] =
            std::clamp(bg[c] + rng.uniform(-cfg.noise, cfg.noise), 0.0, 1.0);
    for (size_t i = 0; i < rendered.size(); ++i) {
      const auto& sh = rendered[i].shape;
      for (int p = 0; p < s * s; ++p) {
        const double a = covs[i][p];
        if (a <= 0.0) continue;
        for (int c = 0; c < 3; ++c)
          img[p * 3 + c] = (1.0 - a) * img[p * 3 + c] + a * sh.color[c];
      }
    }
    // quantize to the PNG grid so file round trips are exact
    for (int p = 0; p < s * s * 3; ++p)
      img[p] = std::round(img[p] * 255.0) / 255.0;

    for (auto& ri : rendered) {
      InstanceAnnotation ann;
      ann.category_id = category_id(ri.shape.kind);
      ann.box = tight_box(ri.visible);
      const bool keep_mask = split == "val" || cfg.is_seen(ann.category_id);
      ann.has_mask = keep_mask;
      if (keep_mask) ann.mask = ri.visible;
      rec.annotations.push_back(std::move(ann));
    }
    return rec;
  }
  throw std::runtime_error(
      "dataset generation: unsatisfiable placement (instances " +
      std::to_string(cfg.min_instances) + ".." +
      std::to_string(cfg.max_instances) + ", overlap allowance " +
      std::to_string(cfg.max_box_overlap) + ")");
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset out;
  out.config = config;
  Rng base(config.seed);
  for (int i = 0; i < config.train_images; ++i) {
    Rng rng = base.fork(1000000 + i);
    out.train.push_back(render_image(config, rng, "train"));
  }
  for (int i = 0; i < config.val_images; ++i) {
    Rng rng = base.fork(2000000 + i);
    out.val.push_back(render_image(config, rng, "val"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// RLE

std::vector<int64_t> rle_encode(const BinaryMask& mask) {
  std::vector<int64_t> counts;
  uint8_t value = 0;
  int64_t run = 0;
  for (int x = 0; x < mask.w; ++x)
    for (int y = 0; y < mask.h; ++y) {
      const uint8_t v = mask.at(y, x);
      if (v == value) {
        ++run;
      } else {
        counts.push_back(run);
        value = v;
        run = 1;
      }
    }
  counts.push_back(run);
  return counts;
}

BinaryMask rle_decode(const std::vector<int64_t>& counts, int h, int w) {
  BinaryMask mask(h, w);
  int64_t pos = 0;
  uint8_t value = 0;
  for (int64_t run : counts) {
    if (run < 0) throw std::runtime_error("rle_decode: negative run");
    for (int64_t i = 0; i < run; ++i) {
      if (pos >= (int64_t)h * w) throw std::runtime_error("rle_decode: overflow");
      mask.at((int)(pos % h), (int)(pos / h)) = value;
      ++pos;
    }
    value = value ? 0 : 1;
  }
  if (pos != (int64_t)h * w)
    throw std::runtime_error("rle_decode: runs cover " + std::to_string(pos) +
                             " of " + std::to_string((int64_t)h * w) +
                             " pixels");
  return mask;
}

// ---------------------------------------------------------------------------
// annotation file io

namespace {

json dataset_meta(const DatasetConfig& cfg) {
  json meta;
  meta["image_size"] = cfg.image_size;
  json cats = json::array(), seen = json::array();
  for (ShapeKind k : cfg.categories) cats.push_back(shape_name(k));
  for (ShapeKind k : cfg.seen_categories) seen.push_back(shape_name(k));
  meta["categories"] = cats;
  meta["seen_categories"] = seen;
  meta["min_instances"] = cfg.min_instances;
  meta["max_instances"] = cfg.max_instances;
  meta["max_box_overlap"] = cfg.max_box_overlap;
  meta["train_images"] = cfg.train_images;
  meta["val_images"] = cfg.val_images;
  meta["intensity_low"] = cfg.intensity_low;
  meta["intensity_high"] = cfg.intensity_high;
  meta["min_contrast"] = cfg.min_contrast;
  meta["noise"] = cfg.noise;
  meta["min_radius_frac"] = cfg.min_radius_frac;
  meta["max_radius_frac"] = cfg.max_radius_frac;
  meta["seed"] = cfg.seed;
  return meta;
}

DatasetConfig meta_to_config(const json& meta) {
  DatasetConfig cfg;
  cfg.image_size = meta.at("image_size").get<int>();
  cfg.categories.clear();
  for (const auto& c : meta.at("categories"))
    cfg.categories.push_back(shape_from_name(c.get<std::string>()));
  cfg.seen_categories.clear();
  for (const auto& c : meta.at("seen_categories"))
    cfg.seen_categories.push_back(shape_from_name(c.get<std::string>()));
  cfg.min_instances = meta.at("min_instances").get<int>();
  cfg.max_instances = meta.at("max_instances").get<int>();
  cfg.max_box_overlap = meta.at("max_box_overlap").get<double>();
  cfg.train_images = meta.at("train_images").get<int>();
  cfg.val_images = meta.at("val_images").get<int>();
  cfg.intensity_low = meta.at("intensity_low").get<double>();
  cfg.intensity_high = meta.at("intensity_high").get<double>();
  cfg.min_contrast = meta.at("min_contrast").get<double>();
  cfg.noise = meta.at("noise").get<double>();
  cfg.min_radius_frac = meta.at("min_radius_frac").get<double>();
  cfg.max_radius_frac = meta.at("max_radius_frac").get<double>();
  cfg.seed = meta.at("seed").get<uint64_t>();
  return cfg;
}

Image8 tensor_to_image8(const Tensor& t) {
  Image8 img(t.dim(0), t.dim(1));
  for (int64_t i = 0; i < t.numel(); ++i)
    img.rgb[i] = (uint8_t)std::lround(t.data()[i] * 255.0);
  return img;
}

Tensor image8_to_tensor(const Image8& img) {
  Tensor t = Tensor::zeros({img.h, img.w, 3});
  for (size_t i = 0; i < img.rgb.size(); ++i)
    t.data()[i] = img.rgb[i] / 255.0;
  return t;
}

}  // namespace

void save_annotations(const Dataset& dataset, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json root;
  root["meta"] = dataset_meta(dataset.config);
  json categories = json::array();
  for (ShapeKind k : dataset.config.categories) {
    json c;
    c["id"] = category_id(k);
    c["name"] = shape_name(k);
    c["seen"] = dataset.config.is_seen(category_id(k));
    categories.push_back(c);
  }
  root["categories"] = categories;

  json images = json::array(), annotations = json::array();
  int image_id = 0, ann_id = 0;
  auto emit_split = [&](const std::vector<DatasetRecord>& records,
                        const std::string& split) {
    int index = 0;
    for (const auto& rec : records) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%06d.png", split.c_str(), index++);
      write_png((fs::path(dir) / name).string(), tensor_to_image8(rec.image));
      json im;
      im["id"] = ++image_id;
      im["file_name"] = name;
      im["width"] = rec.image.dim(1);
      im["height"] = rec.image.dim(0);
      im["split"] = split;
      images.push_back(im);
      for (const auto& ann : rec.annotations) {
        const int h = rec.image.dim(0), w = rec.image.dim(1);
        json a;
        a["id"] = ++ann_id;
        a["image_id"] = image_id;
        a["category_id"] = ann.category_id;
        const int x = (int)std::lround(ann.box.xmin * w);
        const int y = (int)std::lround(ann.box.ymin * h);
        const int bw = (int)std::lround(ann.box.xmax * w) - x;
        const int bh = (int)std::lround(ann.box.ymax * h) - y;
        a["bbox"] = {x, y, bw, bh};
        a["has_mask"] = ann.has_mask;
        if (ann.has_mask) {
          json seg;
          seg["size"] = {ann.mask.h, ann.mask.w};
          seg["counts"] = rle_encode(ann.mask);
          a["segmentation"] = seg;
        }
        annotations.push_back(a);
      }
    }
  };
  emit_split(dataset.train, "train");
  emit_split(dataset.val, "val");
  root["images"] = images;
  root["annotations"] = annotations;

  std::ofstream f(fs::path(dir) / "annotations.json");
  if (!f) throw std::runtime_error("cannot write annotations.json");
  f << root.dump(1) << "\n";
}

Dataset load_annotations(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path file = fs::path(dir) / "annotations.json";
  std::ifstream f(file);
  if (!f) throw std::runtime_error("cannot open " + file.string());
  json root;
  try {
    root = json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("annotations.json: parse error at byte " +
                             std::to_string(e.byte) + ": " + e.what());
  }

  Dataset out;
  try {
    out.config = meta_to_config(root.at("meta"));

    std::map<int, std::pair<bool, size_t>> by_image;  // id -> (train?, index)
    for (const auto& im : root.at("images")) {
      const int id = im.at("id").get<int>();
      const std::string split = im.at("split").get<std::string>();
      DatasetRecord rec;
      rec.split = split;
      rec.image = image8_to_tensor(
          read_png((fs::path(dir) / im.at("file_name").get<std::string>())
                       .string()));
      auto& bucket = split == "train" ? out.train : out.val;
      by_image[id] = {split == "train", bucket.size()};
      bucket.push_back(std::move(rec));
    }
    for (const auto& a : root.at("annotations")) {
      const int image_id = a.at("image_id").get<int>();
      const auto [is_train, index] = by_image.at(image_id);
      DatasetRecord* rec = is_train ? &out.train[index] : &out.val[index];
      const int h = rec->image.dim(0), w = rec->image.dim(1);
      InstanceAnnotation ann;
      ann.category_id = a.at("category_id").get<int>();
      const auto& bb = a.at("bbox");
      const int x = bb.at(0).get<int>(), y = bb.at(1).get<int>();
      const int bw = bb.at(2).get<int>(), bh = bb.at(3).get<int>();
      ann.box.ymin = (double)y / h;
      ann.box.xmin = (double)x / w;
      ann.box.ymax = (double)(y + bh) / h;
      ann.box.xmax = (double)(x + bw) / w;
      ann.has_mask = a.at("has_mask").get<bool>();
      if (ann.has_mask) {
        const auto& seg = a.at("segmentation");
        const int mh = seg.at("size").at(0).get<int>();
        const int mw = seg.at("size").at(1).get<int>();
        ann.mask = rle_decode(seg.at("counts").get<std::vector<int64_t>>(), mh, mw);
      }
      rec->annotations.push_back(std::move(ann));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("annotations.json: missing or malformed field: ") +
                             e.what());
  }
  return out;
}

Dataset export_pseudo_labels(Model& model, const Dataset& dataset) {
  Dataset out;
  out.config = dataset.config;
  out.val = dataset.val;
  out.train.reserve(dataset.train.size());
  for (const auto& rec : dataset.train) {
    DatasetRecord copy;
    copy.split = rec.split;
    copy.image = rec.image;
    for (const auto& ann : rec.annotations) {
      InstanceAnnotation a = ann;
      if (!a.has_mask) {
        a.mask = model.predict_mask(rec.image, a.box);
        a.has_mask = true;
      }
      copy.annotations.push_back(std::move(a));
    }
    out.train.push_back(std::move(copy));
  }
  return out;
}

}  // namespace ctseg
