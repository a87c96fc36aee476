#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctseg/data.hpp"
#include "ctseg/eval.hpp"
#include "ctseg/model.hpp"
#include "ctseg/train.hpp"

namespace ctseg {

// One grid cell: a head (spec file) plus optional overrides of the base
// model configuration.
struct RecipeCellSpec {
  std::string name;
  std::string head_file;
  std::optional<BoxMode> box_mode;
  bool no_long_range_skips = false;
  bool no_encoder_decoder = false;
  int dilated_layers = 0;
  std::optional<bool> use_instance_embedding;
  std::optional<bool> use_coordinate_embedding;
};

struct Recipe {
  std::string name;
  DatasetConfig dataset;
  ModelConfig base_model;  // head filled per cell
  TrainConfig train;
  std::vector<RecipeCellSpec> cells;
  std::vector<uint64_t> seeds;
  std::string base_dir;  // head files resolve against this
};

Recipe load_recipe(const std::string& path);
ModelConfig cell_model_config(const Recipe& recipe, const RecipeCellSpec& cell);

struct CellResult {
  std::string cell;
  uint64_t seed;
  EvalReport report;
  std::vector<double> loss_trace;
};

struct RecipeRun {
  std::string recipe_name;
  std::vector<std::string> cell_names;
  std::vector<uint64_t> seeds;
  std::vector<CellResult> results;  // cell-major, then seed

  const CellResult& at(const std::string& cell, uint64_t seed) const;
  std::string to_csv() const;
  std::string summary() const;
};

// Paired protocol: per seed one dataset shared by every cell, one model-init
// seed shared by every cell, cells evaluated on the same val split. Cells
// run in parallel up to `threads`; outputs do not depend on the schedule.
RecipeRun run_recipe(const Recipe& recipe, const std::string& out_dir,
                     int threads);

// Source-transfer protocol: one training run per source category (masks kept
// only for that source) plus the all-sources run; entries are per-target
// mIOU ratios against full supervision, truncated at 1.0.
struct SingleSourceRun {
  std::vector<int> sources;                  // category ids
  std::vector<int> targets;                  // category ids
  std::vector<std::vector<double>> ratio;    // [source][target]
  std::string to_csv() const;
};
SingleSourceRun run_single_source(const Recipe& recipe,
                                  const std::string& out_dir, int threads);

// Teacher/student protocol: stage one trains the first cell on partial
// supervision; stage two trains the second cell on the teacher's pseudo
// labels; the second cell is also trained directly on partial supervision
// as the paired baseline.
struct TwoStageRun {
  RecipeRun runs;  // cells: teacher, student_pseudo, student_direct
};
TwoStageRun run_two_stage(const Recipe& recipe, const std::string& out_dir,
                          int threads);

int default_thread_count();

}  // namespace ctseg
