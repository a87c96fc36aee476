#include "ctseg/recipes.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ctseg/config.hpp"
#include "ctseg/rng.hpp"

namespace ctseg {

namespace fs = std::filesystem;

int default_thread_count() {
  if (const char* env = std::getenv("CTSEG_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : (int)hw;
}

namespace {

std::vector<ShapeKind> parse_shapes(const std::vector<std::string>& names) {
  std::vector<ShapeKind> out;
  for (const auto& n : names) out.push_back(shape_from_name(n));
  return out;
}

DatasetConfig dataset_from_kv(const KvFile& kv) {
  DatasetConfig d;
  d.image_size = (int)kv.get_int("dataset.image_size", d.image_size);
  if (kv.has("dataset.categories"))
    d.categories = parse_shapes(kv.get_list("dataset.categories"));
  if (kv.has("dataset.seen"))
    d.seen_categories = parse_shapes(kv.get_list("dataset.seen"));
  d.min_instances = (int)kv.get_int("dataset.min_instances", d.min_instances);
  d.max_instances = (int)kv.get_int("dataset.max_instances", d.max_instances);
  d.max_box_overlap = kv.get_double("dataset.max_box_overlap", d.max_box_overlap);
  d.train_images = (int)kv.get_int("dataset.train_images", d.train_images);
  d.val_images = (int)kv.get_int("dataset.val_images", d.val_images);
  d.noise = kv.get_double("dataset.noise", d.noise);
  d.min_radius_frac = kv.get_double("dataset.min_radius_frac", d.min_radius_frac);
  d.max_radius_frac = kv.get_double("dataset.max_radius_frac", d.max_radius_frac);
  d.seed = (uint64_t)kv.get_int("dataset.seed", (int64_t)d.seed);
  return d;
}

ModelConfig model_from_kv(const KvFile& kv) {
  ModelConfig m;
  m.crop_size = (int)kv.get_int("model.crop_size", m.crop_size);
  m.use_instance_embedding =
      kv.get_bool("model.use_instance_embedding", m.use_instance_embedding);
  m.use_coordinate_embedding =
      kv.get_bool("model.use_coordinate_embedding", m.use_coordinate_embedding);
  m.mask_loss_weight = kv.get_double("model.mask_loss_weight", m.mask_loss_weight);
  if (kv.has("model.training_box_mode")) {
    const std::string v = kv.get("model.training_box_mode");
    if (v == "gt_only") m.training_box_mode = BoxMode::gt_only;
    else if (v == "proposals_plus_gt") m.training_box_mode = BoxMode::proposals_plus_gt;
    else throw std::runtime_error("bad model.training_box_mode: " + v);
  }
  m.jitter.min_iou = kv.get_double("model.jitter.min_iou", m.jitter.min_iou);
  m.jitter.center_frac = kv.get_double("model.jitter.center_frac", m.jitter.center_frac);
  m.jitter.scale_frac = kv.get_double("model.jitter.scale_frac", m.jitter.scale_frac);
  if (kv.has("model.backbone.kind"))
    m.backbone.kind = kv.get("model.backbone.kind") == "mini_hourglass"
                          ? BackboneKind::mini_hourglass
                          : BackboneKind::conv_stack;
  if (kv.has("model.backbone.channels")) {
    m.backbone.channels.clear();
    for (const auto& c : kv.get_list("model.backbone.channels"))
      m.backbone.channels.push_back(std::stoi(c));
  }
  m.samples_per_cell = (int)kv.get_int("model.samples_per_cell", m.samples_per_cell);
  m.paste_threshold = kv.get_double("model.paste_threshold", m.paste_threshold);
  return m;
}

TrainConfig train_from_kv(const KvFile& kv) {
  TrainConfig t;
  const std::string opt = kv.get("train.optimizer", "adam");
  if (opt == "adam") t.optimizer = OptimizerKind::adam;
  else if (opt == "sgd_momentum") t.optimizer = OptimizerKind::sgd_momentum;
  else throw std::runtime_error("bad train.optimizer: " + opt);
  t.lr = kv.get_double("train.lr", t.lr);
  t.beta1 = kv.get_double("train.beta1", t.beta1);
  t.beta2 = kv.get_double("train.beta2", t.beta2);
  t.momentum = kv.get_double("train.momentum", t.momentum);
  t.batch_size = (int)kv.get_int("train.batch", t.batch_size);
  t.steps = (int)kv.get_int("train.steps", t.steps);
  t.eval_every = (int)kv.get_int("train.eval_every", t.eval_every);
  const std::string prec = kv.get("train.precision", "float64");
  if (prec == "float32") t.precision = ComputePrecision::f32;
  else if (prec == "float64") t.precision = ComputePrecision::f64;
  else throw std::runtime_error("bad train.precision: " + prec);
  return t;
}

RecipeCellSpec cell_from_line(const std::string& line) {
  RecipeCellSpec cell;
  std::istringstream is(line);
  if (!(is >> cell.name)) throw std::runtime_error("empty cell line");
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("bad cell token '" + tok + "'");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "head") cell.head_file = val;
    else if (key == "box_mode")
      cell.box_mode = val == "proposals_plus_gt" ? BoxMode::proposals_plus_gt
                                                 : BoxMode::gt_only;
    else if (key == "no_lrs") cell.no_long_range_skips = std::stoi(val) != 0;
    else if (key == "no_ed") cell.no_encoder_decoder = std::stoi(val) != 0;
    else if (key == "dilated") cell.dilated_layers = std::stoi(val);
    else if (key == "instance_embedding") cell.use_instance_embedding = std::stoi(val) != 0;
    else if (key == "coordinate_embedding") cell.use_coordinate_embedding = std::stoi(val) != 0;
    else throw std::runtime_error("unknown cell option '" + key + "'");
  }
  if (cell.head_file.empty())
    throw std::runtime_error("cell '" + cell.name + "' needs head=<spec file>");
  return cell;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

Recipe load_recipe(const std::string& path) {
  const KvFile kv = KvFile::load(path);
  Recipe r;
  r.name = kv.get("name");
  r.dataset = dataset_from_kv(kv);
  r.base_model = model_from_kv(kv);
  r.train = train_from_kv(kv);
  for (const auto& s : kv.get_list("seeds"))
    r.seeds.push_back((uint64_t)std::stoull(s));
  if (r.seeds.empty()) throw std::runtime_error("recipe needs seeds");
  for (const auto& line : kv.all("cell")) r.cells.push_back(cell_from_line(line));
  if (r.cells.empty()) throw std::runtime_error("recipe needs at least one cell");
  r.base_dir = fs::path(path).parent_path().string();
  return r;
}

ModelConfig cell_model_config(const Recipe& recipe, const RecipeCellSpec& cell) {
  ModelConfig mc = recipe.base_model;
  const fs::path head_path = fs::path(cell.head_file).is_absolute()
                                 ? fs::path(cell.head_file)
                                 : fs::path(recipe.base_dir) / cell.head_file;
  mc.head = load_mask_head_spec(head_path.string());
  mc.head.ablations.no_long_range_skips = cell.no_long_range_skips;
  mc.head.ablations.no_encoder_decoder = cell.no_encoder_decoder;
  if (cell.dilated_layers > 0)
    mc.head = dilate_layers(mc.head, cell.dilated_layers);
  if (cell.box_mode) mc.training_box_mode = *cell.box_mode;
  if (cell.use_instance_embedding)
    mc.use_instance_embedding = *cell.use_instance_embedding;
  if (cell.use_coordinate_embedding)
    mc.use_coordinate_embedding = *cell.use_coordinate_embedding;
  mc.validate();
  return mc;
}

const CellResult& RecipeRun::at(const std::string& cell, uint64_t seed) const {
  for (const auto& r : results)
    if (r.cell == cell && r.seed == seed) return r;
  throw std::out_of_range("no result for cell '" + cell + "' seed " +
                          std::to_string(seed));
}

std::string RecipeRun::to_csv() const {
  std::ostringstream os;
  os << "recipe,cell,seed,split,metric,value\n";
  for (const auto& r : results) {
    auto row = [&](const char* split, const char* metric, double v) {
      os << recipe_name << "," << r.cell << "," << r.seed << "," << split
         << "," << metric << "," << fmt17(v) << "\n";
    };
    row("all", "mIOU", r.report.all.miou);
    row("seen", "mIOU", r.report.seen.miou);
    row("unseen", "mIOU", r.report.unseen.miou);
    os << recipe_name << "," << r.cell << "," << r.seed
       << ",all,instances," << r.report.all.instances << "\n";
    if (!r.loss_trace.empty())
      row("train", "final_loss", r.loss_trace.back());
  }
  return os.str();
}

std::string RecipeRun::summary() const {
  std::ostringstream os;
  os << "recipe " << recipe_name << "\n";
  os << std::fixed << std::setprecision(4);
  std::map<std::string, std::pair<double, double>> unseen_seen_mean;
  for (const auto& cell : cell_names) {
    double su = 0, ss = 0;
    for (uint64_t seed : seeds) {
      const CellResult& r = at(cell, seed);
      su += r.report.unseen.miou;
      ss += r.report.seen.miou;
    }
    su /= (double)seeds.size();
    ss /= (double)seeds.size();
    unseen_seen_mean[cell] = {su, ss};
    os << "  " << std::left << std::setw(18) << cell << std::right
       << " seen mIOU " << ss << "  unseen mIOU " << su << "\n";
  }
  if (cell_names.size() > 1) {
    const auto& base = unseen_seen_mean.at(cell_names.front());
    for (size_t i = 1; i < cell_names.size(); ++i) {
      const auto& other = unseen_seen_mean.at(cell_names[i]);
      os << "  gap vs " << cell_names.front() << " [" << cell_names[i]
         << "]: unseen " << (other.first - base.first) << "  seen "
         << (other.second - base.second) << "\n";
    }
  }
  return os.str();
}

namespace {

struct Job {
  size_t cell_index;
  size_t seed_index;
};

// seeds derived so every cell of one paired seed shares its dataset and
// model initialization
uint64_t dataset_seed(const Recipe& r, uint64_t seed) {
  return splitmix64(r.dataset.seed ^ splitmix64(seed));
}
uint64_t model_seed(uint64_t seed) { return splitmix64(seed ^ 0x11aa22bb33cc44ddULL); }
uint64_t train_seed(uint64_t seed) { return splitmix64(seed ^ 0x55ee66ff77881199ULL); }

CellResult run_cell(const Recipe& recipe, const RecipeCellSpec& cell,
                    uint64_t seed, const Dataset& data,
                    const std::string& out_dir) {
  ModelConfig mc = cell_model_config(recipe, cell);
  Model model(mc, model_seed(seed));
  TrainConfig tc = recipe.train;
  tc.set_seed(train_seed(seed));
  TrainResult tr = train_model(model, data, tc);

  CellResult result;
  result.cell = cell.name;
  result.seed = seed;
  result.loss_trace = std::move(tr.loss_trace);
  PrecisionGuard precision(tc.precision);
  result.report = miou_given_gt_boxes(model, data);

  if (!out_dir.empty()) {
    const std::string tag = cell.name + "_seed" + std::to_string(seed);
    model.save(out_dir, tag);
    std::ofstream trace(fs::path(out_dir) / (tag + "_loss.csv"));
    TrainResult tmp;
    tmp.loss_trace = result.loss_trace;
    trace << loss_trace_csv(tmp);
    std::ofstream evalcsv(fs::path(out_dir) / (tag + "_eval.csv"));
    evalcsv << result.report.to_csv(
        [](int c) { return shape_name((ShapeKind)c); },
        [&](int c) { return data.config.is_seen(c); });
  }
  return result;
}

void run_jobs_for_seed(const Recipe& recipe, uint64_t seed,
                       const Dataset& data, const std::string& out_dir,
                       int threads, std::vector<CellResult>& results,
                       size_t seed_index) {
  std::atomic<size_t> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(recipe.cells.size());
  const int n_workers = std::max(1, std::min<int>(threads, (int)recipe.cells.size()));
  auto work = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= recipe.cells.size()) return;
      try {
        CellResult r = run_cell(recipe, recipe.cells[i], seed, data, out_dir);
        results[i * recipe.seeds.size() + seed_index] = std::move(r);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (n_workers == 1) {
    work();
  } else {
    for (int t = 0; t < n_workers; ++t) workers.emplace_back(work);
    for (auto& th : workers) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

RecipeRun run_recipe(const Recipe& recipe, const std::string& out_dir,
                     int threads) {
  if (!out_dir.empty()) fs::create_directories(out_dir);
  RecipeRun run;
  run.recipe_name = recipe.name;
  for (const auto& c : recipe.cells) run.cell_names.push_back(c.name);
  run.seeds = recipe.seeds;
  run.results.resize(recipe.cells.size() * recipe.seeds.size());

  for (size_t si = 0; si < recipe.seeds.size(); ++si) {
    const uint64_t seed = recipe.seeds[si];
    DatasetConfig dc = recipe.dataset;
    dc.seed = dataset_seed(recipe, seed);
    const Dataset data = generate_dataset(dc);
    run_jobs_for_seed(recipe, seed, data, out_dir, threads, run.results, si);
  }

  if (!out_dir.empty()) {
    std::ofstream csv(fs::path(out_dir) / "results.csv");
    csv << run.to_csv();
    std::ofstream sum(fs::path(out_dir) / "summary.txt");
    sum << run.summary();
  }
  return run;
}

SingleSourceRun run_single_source(const Recipe& recipe,
                                  const std::string& out_dir, int threads) {
  (void)threads;
  if (recipe.cells.size() != 1)
    throw std::runtime_error("single-source recipes take exactly one cell");
  if (!out_dir.empty()) fs::create_directories(out_dir);

  SingleSourceRun out;
  for (ShapeKind k : recipe.dataset.seen_categories)
    out.sources.push_back(category_id(k));
  for (ShapeKind k : recipe.dataset.categories)
    out.targets.push_back(category_id(k));

  const uint64_t seed = recipe.seeds.front();
  DatasetConfig dc = recipe.dataset;
  dc.seed = dataset_seed(recipe, seed);
  const Dataset full = generate_dataset(dc);

  auto strip_to_source = [&](int source) {
    Dataset d = full;
    for (auto& rec : d.train)
      for (auto& ann : rec.annotations)
        if (ann.has_mask && ann.category_id != source) {
          ann.has_mask = false;
          ann.mask = BinaryMask();
        }
    return d;
  };

  auto train_and_eval = [&](const Dataset& data) {
    ModelConfig mc = cell_model_config(recipe, recipe.cells.front());
    Model model(mc, model_seed(seed));
    TrainConfig tc = recipe.train;
    tc.set_seed(train_seed(seed));
    train_model(model, data, tc);
    PrecisionGuard precision(tc.precision);
    return miou_given_gt_boxes(model, data);
  };

  // guard against empty sources
  std::map<int, int64_t> train_counts;
  for (const auto& rec : full.train)
    for (const auto& ann : rec.annotations) train_counts[ann.category_id]++;
  for (int s : out.sources)
    if (train_counts[s] == 0)
      throw std::runtime_error("source category '" +
                               shape_name((ShapeKind)s) + "' has no instances");

  const EvalReport full_report = train_and_eval(full);
  out.ratio.assign(out.sources.size(),
                   std::vector<double>(out.targets.size(), 0.0));
  for (size_t si = 0; si < out.sources.size(); ++si) {
    const Dataset d = strip_to_source(out.sources[si]);
    const EvalReport r = train_and_eval(d);
    for (size_t ti = 0; ti < out.targets.size(); ++ti) {
      const int t = out.targets[ti];
      const double denom = full_report.per_category.count(t)
                               ? full_report.per_category.at(t).miou
                               : 0.0;
      const double num =
          r.per_category.count(t) ? r.per_category.at(t).miou : 0.0;
      out.ratio[si][ti] = denom > 0.0 ? std::min(1.0, num / denom) : 0.0;
    }
  }
  if (!out_dir.empty()) {
    std::ofstream csv(fs::path(out_dir) / "single_source.csv");
    csv << out.to_csv();
  }
  return out;
}

std::string SingleSourceRun::to_csv() const {
  std::ostringstream os;
  os << "source,target,ratio\n";
  for (size_t s = 0; s < sources.size(); ++s)
    for (size_t t = 0; t < targets.size(); ++t)
      os << shape_name((ShapeKind)sources[s]) << ","
         << shape_name((ShapeKind)targets[t]) << "," << fmt17(ratio[s][t])
         << "\n";
  return os.str();
}

TwoStageRun run_two_stage(const Recipe& recipe, const std::string& out_dir,
                          int threads) {
  (void)threads;
  if (recipe.cells.size() != 2)
    throw std::runtime_error(
        "two-stage recipes take exactly two cells (teacher, student)");
  if (!out_dir.empty()) fs::create_directories(out_dir);

  TwoStageRun out;
  out.runs.recipe_name = recipe.name;
  out.runs.cell_names = {"teacher", "student_pseudo", "student_direct"};
  out.runs.seeds = recipe.seeds;
  out.runs.results.resize(3 * recipe.seeds.size());

  for (size_t si = 0; si < recipe.seeds.size(); ++si) {
    const uint64_t seed = recipe.seeds[si];
    DatasetConfig dc = recipe.dataset;
    dc.seed = dataset_seed(recipe, seed);
    const Dataset data = generate_dataset(dc);

    auto fit = [&](const RecipeCellSpec& cell, const Dataset& d,
                   const std::string& label) {
      ModelConfig mc = cell_model_config(recipe, cell);
      Model model(mc, model_seed(seed));
      TrainConfig tc = recipe.train;
      tc.set_seed(train_seed(seed));
      TrainResult tr = train_model(model, d, tc);
      CellResult result;
      result.cell = label;
      result.seed = seed;
      result.loss_trace = std::move(tr.loss_trace);
      PrecisionGuard precision(tc.precision);
      result.report = miou_given_gt_boxes(model, d);
      return std::make_pair(std::move(model), std::move(result));
    };

    auto [teacher, teacher_result] = fit(recipe.cells[0], data, "teacher");
    const Dataset pseudo = export_pseudo_labels(teacher, data);
    if (!out_dir.empty())
      save_annotations(pseudo, (fs::path(out_dir) /
                                ("pseudo_seed" + std::to_string(seed)))
                                   .string());
    auto [student, student_result] =
        fit(recipe.cells[1], pseudo, "student_pseudo");
    auto [direct, direct_result] = fit(recipe.cells[1], data, "student_direct");

    out.runs.results[0 * recipe.seeds.size() + si] = std::move(teacher_result);
    out.runs.results[1 * recipe.seeds.size() + si] = std::move(student_result);
    out.runs.results[2 * recipe.seeds.size() + si] = std::move(direct_result);
  }

  if (!out_dir.empty()) {
    std::ofstream csv(fs::path(out_dir) / "results.csv");
    csv << out.runs.to_csv();
    std::ofstream sum(fs::path(out_dir) / "summary.txt");
    sum << out.runs.summary();
  }
  return out;
}

}  // namespace ctseg
