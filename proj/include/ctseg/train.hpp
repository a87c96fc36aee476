#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctseg/data.hpp"
#include "ctseg/model.hpp"

namespace ctseg {

enum class OptimizerKind { adam, sgd_momentum };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double momentum = 0.9;
  int batch_size = 8;
  int steps = 600;
  int eval_every = 0;  // 0: no mid-run callbacks
  ComputePrecision precision = ComputePrecision::f64;
  uint64_t seed = 0;
  bool seed_set = false;  // runs refuse to start unseeded

  void set_seed(uint64_t s) {
    seed = s;
    seed_set = true;
  }
  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per step
  int steps_run = 0;
};

// Deterministic optimization of the mask pipeline on the train split:
// fixed shuffling, fixed batch assembly, fixed reduction orders. A
// non-finite value anywhere in the step aborts with step/lr context.
TrainResult train_model(
    Model& model, const Dataset& dataset, const TrainConfig& cfg,
    const std::function<void(int step, Model& model)>& on_eval = nullptr);

std::string loss_trace_csv(const TrainResult& result);

}  // namespace ctseg
