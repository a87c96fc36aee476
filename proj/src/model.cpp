#include "ctseg/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ctseg/checkpoint.hpp"

namespace ctseg {

void ModelConfig::validate() const {
  if (crop_size != 16 && crop_size != 32)
    throw std::invalid_argument("crop_size must be 16 or 32");
  if (mask_loss_weight <= 0.0)
    throw std::invalid_argument("mask_loss_weight must be positive");
  if (pixel_channels != 16)
    throw std::invalid_argument("pixel embedding carries 16 channels");
  if (instance_channels != 32)
    throw std::invalid_argument("instance embedding carries 32 channels");
  if (samples_per_cell != 1 && samples_per_cell != 4)
    throw std::invalid_argument("samples_per_cell must be 1 or 4");
  if (paste_threshold <= 0.0 || paste_threshold >= 1.0)
    throw std::invalid_argument("paste_threshold must lie in (0,1)");
  if (backbone.channels.size() != 3)
    throw std::invalid_argument("backbone takes three stage widths");
  head.validate();
  if (head.input_size() != crop_size)
    throw std::invalid_argument(
        "head spec size " + std::to_string(head.input_size()) +
        " does not match crop_size " + std::to_string(crop_size));
}

Tensor coordinate_embedding(int size) {
  if (size < 2) throw std::invalid_argument("coordinate_embedding: size >= 2");
  Tensor out = Tensor::zeros({size, size, 2});
  double* p = out.data();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      p[(y * size + x) * 2 + 0] = (double)x / (size - 1);
      p[(y * size + x) * 2 + 1] = (double)y / (size - 1);
    }
  return out;
}

Tensor mask_loss(const Tensor& logits, const Tensor& targets,
                 const std::vector<uint8_t>& has_mask, double weight) {
  if (logits.rank() != 3 || targets.rank() != 3 ||
      logits.shape() != targets.shape())
    throw std::invalid_argument("mask_loss: logits/targets must agree [K,S,S]");
  const int k = logits.dim(0), s = logits.dim(1);
  if ((int)has_mask.size() != k)
    throw std::invalid_argument("mask_loss: has_mask length mismatch");
  if (weight <= 0.0) throw std::invalid_argument("mask_loss: weight > 0");
  const double* t = targets.data();
  for (int64_t i = 0; i < targets.numel(); ++i)
    if (t[i] < 0.0 || t[i] > 1.0)
      throw std::invalid_argument("mask_loss: target outside [0,1]");

  int64_t annotated = 0;
  for (uint8_t m : has_mask) annotated += m ? 1 : 0;
  const int64_t px = (int64_t)s * s;
  const double norm = annotated > 0 ? weight / (double)(annotated * px) : 0.0;

  std::vector<double> tvals(targets.data(), targets.data() + targets.numel());
  Tensor out = make_op_node({1}, {logits},
                            [has_mask, tvals, norm, px](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad || norm == 0.0) return;
    const double g = self.grad[0] * norm;
    for (size_t ki = 0; ki < has_mask.size(); ++ki) {
      if (!has_mask[ki]) continue;  // exactly zero gradient
      for (int64_t i = (int64_t)ki * px; i < (int64_t)(ki + 1) * px; ++i) {
        const double x = p.value[i];
        const double sig =
            x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                     : std::exp(x) / (1.0 + std::exp(x));
        p.grad[i] += g * (sig - tvals[i]);
      }
    }
  });

  double acc = 0.0;
  const double* x = logits.data();
  for (int ki = 0; ki < k; ++ki) {
    if (!has_mask[ki]) continue;
    for (int64_t i = (int64_t)ki * px; i < (int64_t)(ki + 1) * px; ++i) {
      const double v = x[i];
      acc += std::max(v, 0.0) - v * t[i] + std::log1p(std::exp(-std::fabs(v)));
    }
  }
  out.data()[0] = norm * acc;
  check_finite(out.data(), 1, "mask_loss");
  return out;
}

Tensor crop_target_mask(const BinaryMask& mask, const Box& box, int size) {
  if (!box.valid()) throw std::invalid_argument("crop_target_mask: bad box");
  Tensor out = Tensor::zeros({size, size});
  const double y0 = std::clamp(box.ymin, 0.0, 1.0) * mask.h;
  const double y1 = std::clamp(box.ymax, 0.0, 1.0) * mask.h;
  const double x0 = std::clamp(box.xmin, 0.0, 1.0) * mask.w;
  const double x1 = std::clamp(box.xmax, 0.0, 1.0) * mask.w;
  const double bh = (y1 - y0) / size, bw = (x1 - x0) / size;
  if (bh <= 0.0 || bw <= 0.0) return out;
  for (int i = 0; i < size; ++i) {
    const double cy0 = y0 + i * bh, cy1 = cy0 + bh;
    const int py0 = std::max(0, (int)std::floor(cy0));
    const int py1 = std::min(mask.h, (int)std::ceil(cy1));
    for (int j = 0; j < size; ++j) {
      const double cx0 = x0 + j * bw, cx1 = cx0 + bw;
      const int px0 = std::max(0, (int)std::floor(cx0));
      const int px1 = std::min(mask.w, (int)std::ceil(cx1));
      double covered = 0.0;
      for (int py = py0; py < py1; ++py) {
        const double oy = std::min<double>(py + 1, cy1) - std::max<double>(py, cy0);
        if (oy <= 0.0) continue;
        for (int qx = px0; qx < px1; ++qx) {
          if (!mask.at(py, qx)) continue;
          const double ox = std::min<double>(qx + 1, cx1) - std::max<double>(qx, cx0);
          if (ox > 0.0) covered += oy * ox;
        }
      }
      out.data()[i * size + j] = covered / (bh * bw) >= 0.5 ? 1.0 : 0.0;
    }
  }
  return out;
}

std::vector<std::pair<Box, int>> make_training_boxes(
    const std::vector<InstanceAnnotation>& gt, BoxMode mode,
    const JitterConfig& jitter, Rng& rng) {
  std::vector<std::pair<Box, int>> out;
  out.reserve(gt.size() * (mode == BoxMode::proposals_plus_gt ? 2 : 1));
  for (size_t i = 0; i < gt.size(); ++i) out.emplace_back(gt[i].box, (int)i);
  if (mode == BoxMode::gt_only) return out;

  for (size_t i = 0; i < gt.size(); ++i) {
    const Box& g = gt[i].box;
    Box pick = g;
    for (int attempt = 0; attempt < jitter.max_tries; ++attempt) {
      const double h = g.height(), w = g.width();
      const double cy = g.center_y() + rng.uniform(-jitter.center_frac,
                                                   jitter.center_frac) * h;
      const double cx = g.center_x() + rng.uniform(-jitter.center_frac,
                                                   jitter.center_frac) * w;
      const double nh = h * std::exp(rng.uniform(-jitter.scale_frac,
                                                 jitter.scale_frac));
      const double nw = w * std::exp(rng.uniform(-jitter.scale_frac,
                                                 jitter.scale_frac));
      Box b;
      b.ymin = std::clamp(cy - nh / 2.0, 0.0, 1.0);
      b.ymax = std::clamp(cy + nh / 2.0, 0.0, 1.0);
      b.xmin = std::clamp(cx - nw / 2.0, 0.0, 1.0);
      b.xmax = std::clamp(cx + nw / 2.0, 0.0, 1.0);
      if (b.valid() && box_iou(b, g) >= jitter.min_iou) {
        pick = b;
        break;
      }
    }
    out.emplace_back(pick, (int)i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& ch = config_.backbone.channels;

  auto stage = [&](int cin, int cout, int stride) {
    ConvBnRelu s;
    s.conv = make_conv(3, 3, cin, cout, stride, 1, Padding::same, false,
                       Init::he_normal, rng.fork(backbone_.size()).seed());
    s.norm = make_batch_norm(cout);
    backbone_.push_back(std::move(s));
  };
  stage(3, ch[0], 2);
  stage(ch[0], ch[1], 2);
  stage(ch[1], ch[2], 1);
  if (config_.backbone.kind == BackboneKind::mini_hourglass) {
    stage(ch[2], ch[2], 1);  // bottom refinement (runs at half resolution)
    stage(ch[2], ch[2], 1);  // post-join smoothing
  }

  pixel_head_ = make_conv(3, 3, ch[2], config_.pixel_channels, 1, 1,
                          Padding::same, true, Init::he_normal,
                          rng.fork(100).seed());
  if (config_.use_instance_embedding)
    instance_head_ = make_conv(3, 3, ch[2], config_.instance_channels, 1, 1,
                               Padding::same, true, Init::he_normal,
                               rng.fork(101).seed());
  head_ = build_mask_head(config_.head, config_.head_input_channels(),
                          rng.fork(102).seed());
}

Model::Features Model::backbone_forward(const Tensor& images, Phase phase) {
  if (images.rank() != 4 || images.dim(3) != 3)
    throw std::invalid_argument("backbone expects [N,H,W,3] images");
  Tensor x = images;
  for (int i = 0; i < 3; ++i) {
    x = relu(backbone_[i].norm.forward(backbone_[i].conv.forward(x), phase));
  }
  if (config_.backbone.kind == BackboneKind::mini_hourglass) {
    Tensor tap = x;
    Tensor inner = down2(x);
    inner = relu(backbone_[3].norm.forward(backbone_[3].conv.forward(inner), phase));
    Tensor joined = add(up2(inner), tap);
    x = relu(backbone_[4].norm.forward(backbone_[4].conv.forward(joined), phase));
  }
  Features f;
  f.pixel = pixel_head_.forward(x);
  if (config_.use_instance_embedding) f.instance = instance_head_.forward(x);
  return f;
}

Tensor Model::head_input(const Features& f, int image_index, const Box& box) {
  const int s = config_.crop_size;
  Tensor pixel_map = slice_batch(f.pixel, image_index);
  std::vector<Tensor> parts;
  parts.push_back(roi_align(pixel_map, box, s, config_.samples_per_cell));
  if (config_.use_instance_embedding) {
    Tensor inst_map = slice_batch(f.instance, image_index);
    Tensor vec = bilinear_read(inst_map, box.center_y(), box.center_x());
    parts.push_back(tile_hw(vec, s, s));
  }
  if (config_.use_coordinate_embedding)
    parts.push_back(coordinate_embedding(s));
  return parts.size() == 1 ? parts[0] : concat_last(parts);
}

Tensor Model::forward_masks_batch(const Tensor& images,
                                  const std::vector<std::vector<Box>>& boxes,
                                  Phase phase) {
  if (images.rank() != 4)
    throw std::invalid_argument("forward_masks_batch expects [N,H,W,3]");
  if ((int)boxes.size() != images.dim(0))
    throw std::invalid_argument("one box list per image required");
  const int s = config_.crop_size;
  size_t total = 0;
  for (const auto& b : boxes) total += b.size();
  if (total == 0) return Tensor::zeros({0, s, s});

  Features f = backbone_forward(images, phase);
  std::vector<Tensor> crops;
  crops.reserve(total);
  for (size_t i = 0; i < boxes.size(); ++i)
    for (const Box& b : boxes[i]) crops.push_back(head_input(f, (int)i, b));
  Tensor stacked = stack_batch(crops);             // [K,S,S,C]
  Tensor logits = head_.forward(stacked, phase);   // [K,S,S,1]
  return reshape(logits, {(int)total, s, s});
}

Tensor Model::forward_masks(const Tensor& image, const std::vector<Box>& boxes,
                            Phase phase) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw std::invalid_argument("forward_masks expects one [H,W,3] image");
  Tensor batch = reshape(image, {1, image.dim(0), image.dim(1), 3});
  return forward_masks_batch(batch, {boxes}, phase);
}

BinaryMask Model::predict_mask(const Tensor& image, const Box& box) {
  NoGradGuard ng;
  Tensor logits = forward_masks(image, {box}, Phase::eval);
  Tensor probs = sigmoid(reshape(logits, {config_.crop_size, config_.crop_size}));
  return paste_mask(probs, box, image.dim(0), image.dim(1),
                    config_.paste_threshold);
}

std::vector<std::pair<std::string, Tensor>> Model::parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < backbone_.size(); ++i) {
    const std::string p = "backbone.stage" + std::to_string(i);
    out.emplace_back(p + ".kernel", backbone_[i].conv.kernel);
    out.emplace_back(p + ".gamma", backbone_[i].norm.gamma);
    out.emplace_back(p + ".beta", backbone_[i].norm.beta);
  }
  out.emplace_back("pixel.kernel", pixel_head_.kernel);
  out.emplace_back("pixel.bias", pixel_head_.bias);
  if (config_.use_instance_embedding) {
    out.emplace_back("instance.kernel", instance_head_.kernel);
    out.emplace_back("instance.bias", instance_head_.bias);
  }
  for (auto& [name, t] : head_.parameters())
    out.emplace_back("head." + name, t);
  return out;
}

std::vector<std::pair<std::string, BatchNormState*>> Model::norm_states() {
  std::vector<std::pair<std::string, BatchNormState*>> out;
  for (size_t i = 0; i < backbone_.size(); ++i)
    out.emplace_back("backbone.stage" + std::to_string(i),
                     &backbone_[i].norm.state);
  for (auto& [name, st] : head_.norm_states())
    out.emplace_back("head." + name, st);
  return out;
}

// ---------------------------------------------------------------------------
// config + checkpoint io

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string box_mode_name(BoxMode m) {
  return m == BoxMode::gt_only ? "gt_only" : "proposals_plus_gt";
}

BoxMode box_mode_from_name(const std::string& s) {
  if (s == "gt_only") return BoxMode::gt_only;
  if (s == "proposals_plus_gt") return BoxMode::proposals_plus_gt;
  throw std::runtime_error("unknown box mode '" + s + "'");
}

}  // namespace

std::string write_model_config(const ModelConfig& cfg,
                               const std::string& head_file) {
  std::ostringstream os;
  os << "crop_size " << cfg.crop_size << "\n";
  os << "use_instance_embedding " << (cfg.use_instance_embedding ? 1 : 0) << "\n";
  os << "use_coordinate_embedding " << (cfg.use_coordinate_embedding ? 1 : 0)
     << "\n";
  os << "mask_loss_weight " << fmt_double(cfg.mask_loss_weight) << "\n";
  os << "training_box_mode " << box_mode_name(cfg.training_box_mode) << "\n";
  os << "jitter.min_iou " << fmt_double(cfg.jitter.min_iou) << "\n";
  os << "jitter.center_frac " << fmt_double(cfg.jitter.center_frac) << "\n";
  os << "jitter.scale_frac " << fmt_double(cfg.jitter.scale_frac) << "\n";
  os << "jitter.max_tries " << cfg.jitter.max_tries << "\n";
  os << "backbone.kind "
     << (cfg.backbone.kind == BackboneKind::conv_stack ? "conv_stack"
                                                       : "mini_hourglass")
     << "\n";
  os << "backbone.channels " << cfg.backbone.channels[0] << ","
     << cfg.backbone.channels[1] << "," << cfg.backbone.channels[2] << "\n";
  os << "samples_per_cell " << cfg.samples_per_cell << "\n";
  os << "paste_threshold " << fmt_double(cfg.paste_threshold) << "\n";
  os << "head.file " << head_file << "\n";
  return os.str();
}

ModelConfig parse_model_config(const std::string& text,
                               const std::string& base_dir) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::string head_file;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key;
    std::getline(ls, value);
    // trim one leading space
    if (!value.empty() && value[0] == ' ') value.erase(0, 1);
    if (key == "crop_size") cfg.crop_size = std::stoi(value);
    else if (key == "use_instance_embedding") cfg.use_instance_embedding = std::stoi(value) != 0;
    else if (key == "use_coordinate_embedding") cfg.use_coordinate_embedding = std::stoi(value) != 0;
    else if (key == "mask_loss_weight") cfg.mask_loss_weight = std::stod(value);
    else if (key == "training_box_mode") cfg.training_box_mode = box_mode_from_name(value);
    else if (key == "jitter.min_iou") cfg.jitter.min_iou = std::stod(value);
    else if (key == "jitter.center_frac") cfg.jitter.center_frac = std::stod(value);
    else if (key == "jitter.scale_frac") cfg.jitter.scale_frac = std::stod(value);
    else if (key == "jitter.max_tries") cfg.jitter.max_tries = std::stoi(value);
    else if (key == "backbone.kind")
      cfg.backbone.kind = value == "mini_hourglass" ? BackboneKind::mini_hourglass
                                                    : BackboneKind::conv_stack;
    else if (key == "backbone.channels") {
      cfg.backbone.channels.clear();
      std::istringstream cs(value);
      std::string item;
      while (std::getline(cs, item, ',')) cfg.backbone.channels.push_back(std::stoi(item));
    } else if (key == "samples_per_cell") cfg.samples_per_cell = std::stoi(value);
    else if (key == "paste_threshold") cfg.paste_threshold = std::stod(value);
    else if (key == "head.file") head_file = value;
    else throw std::runtime_error("model config: unknown key '" + key + "'");
  }
  if (head_file.empty())
    throw std::runtime_error("model config: missing head.file");
  const std::filesystem::path p =
      std::filesystem::path(head_file).is_absolute()
          ? std::filesystem::path(head_file)
          : std::filesystem::path(base_dir) / head_file;
  cfg.head = load_mask_head_spec(p.string());
  cfg.validate();
  return cfg;
}

void Model::save(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_mask_head_spec(config_.head, (fs::path(dir) / (name + ".headspec")).string());
  {
    std::ofstream f(fs::path(dir) / (name + ".model"));
    if (!f) throw std::runtime_error("cannot write model config");
    f << write_model_config(config_, name + ".headspec");
  }
  std::vector<CheckpointEntry> entries;
  for (auto& [pname, t] : parameters()) {
    entries.push_back({pname, t.shape(),
                       std::vector<double>(t.data(), t.data() + t.numel())});
  }
  for (auto& [sname, st] : norm_states()) {
    const int c = (int)st->running_mean.size();
    if (c == 0) continue;  // never updated
    entries.push_back({sname + ".running_mean", {c}, st->running_mean});
    entries.push_back({sname + ".running_var", {c}, st->running_var});
    entries.push_back({sname + ".updates", {1}, {(double)st->updates}});
  }
  write_checkpoint((fs::path(dir) / (name + ".ckpt")).string(), entries);
}

Model Model::load(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / (name + ".model"));
  if (!f) throw std::runtime_error("cannot open model config");
  std::ostringstream os;
  os << f.rdbuf();
  ModelConfig cfg = parse_model_config(os.str(), dir);
  Model model(cfg, 0);

  const auto entries =
      read_checkpoint((fs::path(dir) / (name + ".ckpt")).string());
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  for (auto& [pname, t] : model.parameters()) {
    auto it = by_name.find(pname);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint missing parameter '" + pname + "'");
    const CheckpointEntry& e = *it->second;
    if (e.shape != t.shape())
      throw std::runtime_error("checkpoint shape mismatch for '" + pname + "'");
    std::copy(e.data.begin(), e.data.end(), t.data());
    by_name.erase(it);
  }
  for (auto& [sname, st] : model.norm_states()) {
    auto mean = by_name.find(sname + ".running_mean");
    if (mean == by_name.end()) continue;
    st->running_mean = mean->second->data;
    st->running_var = by_name.at(sname + ".running_var")->data;
    st->updates = (int64_t)by_name.at(sname + ".updates")->data[0];
    by_name.erase(sname + ".running_mean");
    by_name.erase(sname + ".running_var");
    by_name.erase(sname + ".updates");
  }
  if (!by_name.empty())
    throw std::runtime_error("checkpoint has unknown tensor '" +
                             by_name.begin()->first + "'");
  return model;
}

}  // namespace ctseg
