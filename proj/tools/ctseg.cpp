#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "ctseg/config.hpp"
#include "ctseg/data.hpp"
#include "ctseg/eval.hpp"
#include "ctseg/recipes.hpp"
#include "ctseg/train.hpp"

namespace fs = std::filesystem;
using namespace ctseg;

namespace {

DatasetConfig dataset_config_from_file(const std::string& path, uint64_t seed,
                                       bool seed_given) {
  const KvFile kv = KvFile::load(path);
  DatasetConfig d;
  {
    // minimal inline parse: the recipe loader requires cells; here only the
    // dataset keys matter
    d.image_size = (int)kv.get_int("dataset.image_size", d.image_size);
    if (kv.has("dataset.categories")) {
      d.categories.clear();
      for (const auto& n : kv.get_list("dataset.categories"))
        d.categories.push_back(shape_from_name(n));
    }
    if (kv.has("dataset.seen")) {
      d.seen_categories.clear();
      for (const auto& n : kv.get_list("dataset.seen"))
        d.seen_categories.push_back(shape_from_name(n));
    }
    d.min_instances = (int)kv.get_int("dataset.min_instances", d.min_instances);
    d.max_instances = (int)kv.get_int("dataset.max_instances", d.max_instances);
    d.max_box_overlap =
        kv.get_double("dataset.max_box_overlap", d.max_box_overlap);
    d.train_images = (int)kv.get_int("dataset.train_images", d.train_images);
    d.val_images = (int)kv.get_int("dataset.val_images", d.val_images);
    d.noise = kv.get_double("dataset.noise", d.noise);
    d.min_radius_frac =
        kv.get_double("dataset.min_radius_frac", d.min_radius_frac);
    d.max_radius_frac =
        kv.get_double("dataset.max_radius_frac", d.max_radius_frac);
    d.seed = (uint64_t)kv.get_int("dataset.seed", (int64_t)d.seed);
  }
  if (seed_given) d.seed = seed;
  return d;
}

std::string category_name_of(int c) { return shape_name((ShapeKind)c); }

int run_named_recipe(const std::string& config, const std::string& out,
                     int threads, uint64_t seed_override, bool seed_given) {
  Recipe recipe = load_recipe(config);
  if (seed_given) recipe.seeds = {seed_override};
  const RecipeRun run = run_recipe(recipe, out, threads);
  std::cout << run.summary();
  std::cout << "results written to " << out << "/results.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crop-then-segment laboratory"};
  app.require_subcommand(1);

  std::string config, out = "out", recipe_path, model_dir, model_name = "model";
  std::string data_dir;
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = default_thread_count();

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    if (needs_config)
      cmd->add_option("--config", config, "config file")->required();
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--seed", seed, "seed override")
        ->each([&](const std::string&) { seed_given = true; });
    cmd->add_option("--threads", threads, "worker threads (CTSEG_THREADS)");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, true);
  gen->callback([&] {
    DatasetConfig dc = dataset_config_from_file(config, seed, seed_given);
    const Dataset d = generate_dataset(dc);
    save_annotations(d, out);
    std::cout << "wrote " << d.train.size() << " train / " << d.val.size()
              << " val images to " << out << "\n";
  });

  // train
  auto* tr = app.add_subcommand("train", "train one model from a recipe-style config");
  add_common(tr, true);
  tr->add_option("--data", data_dir, "pre-generated dataset directory");
  tr->callback([&] {
    Recipe recipe = load_recipe(config);
    if (recipe.cells.size() != 1)
      throw CLI::ValidationError("train", "config must define exactly one cell");
    const uint64_t s = seed_given ? seed : recipe.seeds.front();
    Dataset data;
    if (!data_dir.empty()) {
      data = load_annotations(data_dir);
    } else {
      DatasetConfig dc = recipe.dataset;
      dc.seed = splitmix64(dc.seed ^ splitmix64(s));
      data = generate_dataset(dc);
    }
    ModelConfig mc = cell_model_config(recipe, recipe.cells.front());
    Model model(mc, splitmix64(s ^ 0x11aa22bb33cc44ddULL));
    TrainConfig tc = recipe.train;
    tc.set_seed(splitmix64(s ^ 0x55ee66ff77881199ULL));
    fs::create_directories(out);
    TrainResult result = train_model(model, data, tc, [&](int step, Model& m) {
      EvalReport r = miou_given_gt_boxes(m, data);
      std::cout << "step " << step << " unseen mIOU " << r.unseen.miou << "\n";
    });
    model.save(out, model_name);
    std::ofstream trace(fs::path(out) / "loss.csv");
    trace << loss_trace_csv(result);
    EvalReport r = miou_given_gt_boxes(model, data);
    std::ofstream evalcsv(fs::path(out) / "eval.csv");
    evalcsv << r.to_csv(category_name_of,
                        [&](int c) { return data.config.is_seen(c); });
    std::cout << r.summary(category_name_of,
                           [&](int c) { return data.config.is_seen(c); });
    std::cout << "final loss " << result.loss_trace.back() << "; model in "
              << out << "\n";
  });

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--model-dir", model_dir, "directory holding <name>.model/.ckpt")
      ->required();
  ev->add_option("--name", model_name, "checkpoint name (default 'model')");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--out", out, "output directory");
  ev->callback([&] {
    Model model = Model::load(model_dir, model_name);
    const Dataset data = load_annotations(data_dir);
    EvalReport r = evaluate_model(model, data);
    fs::create_directories(out);
    std::ofstream evalcsv(fs::path(out) / "eval.csv");
    evalcsv << r.to_csv(category_name_of,
                        [&](int c) { return data.config.is_seen(c); });
    std::cout << r.summary(category_name_of,
                           [&](int c) { return data.config.is_seen(c); });
  });

  // sweep / ablate
  auto* sw = app.add_subcommand("sweep", "run a multi-cell recipe grid");
  add_common(sw, true);
  sw->callback([&] { run_named_recipe(config, out, threads, seed, seed_given); });

  auto* ab = app.add_subcommand("ablate", "run an ablation recipe grid");
  add_common(ab, true);
  ab->callback([&] { run_named_recipe(config, out, threads, seed, seed_given); });

  // single-source
  auto* ss = app.add_subcommand("single-source",
                                "per-source-category transfer matrix");
  add_common(ss, true);
  ss->callback([&] {
    Recipe recipe = load_recipe(config);
    if (seed_given) recipe.seeds = {seed};
    const SingleSourceRun run = run_single_source(recipe, out, threads);
    std::cout << run.to_csv();
  });

  // two-stage
  auto* ts = app.add_subcommand("two-stage",
                                "teacher/student pseudo-label training");
  add_common(ts, true);
  ts->callback([&] {
    Recipe recipe = load_recipe(config);
    if (seed_given) recipe.seeds = {seed};
    const TwoStageRun run = run_two_stage(recipe, out, threads);
    std::cout << run.runs.summary();
  });

  // report
  auto* rp = app.add_subcommand("report", "merge recipe CSVs into one file");
  std::vector<std::string> inputs;
  rp->add_option("--in", inputs, "results.csv files")->required();
  rp->add_option("--out", out, "output directory");
  rp->callback([&] {
    fs::create_directories(out);
    std::ofstream merged(fs::path(out) / "report.csv");
    bool first = true;
    for (const auto& path : inputs) {
      std::ifstream f(path);
      if (!f) throw CLI::ValidationError("report", "cannot open " + path);
      std::string line;
      bool header = true;
      while (std::getline(f, line)) {
        if (header) {
          if (first) merged << line << "\n";
          header = false;
          first = false;
          continue;
        }
        merged << line << "\n";
      }
    }
    std::cout << "merged " << inputs.size() << " files into " << out
              << "/report.csv\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}
