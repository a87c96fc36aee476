#include "ctseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ctseg/rng.hpp"

namespace ctseg {

void TrainConfig::validate() const {
  if (!seed_set)
    throw std::invalid_argument("training requires an explicit seed");
  if (lr < 0.0) throw std::invalid_argument("negative learning rate");
  if (batch_size < 1 || steps < 1)
    throw std::invalid_argument("batch_size and steps must be positive");
}

namespace {

struct AdamState {
  std::vector<double> m, v;
};

class ParamUpdater {
 public:
  ParamUpdater(std::vector<std::pair<std::string, Tensor>> params,
               const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.optimizer == OptimizerKind::adam) {
      adam_.resize(params_.size());
      for (size_t i = 0; i < params_.size(); ++i) {
        adam_[i].m.assign(params_[i].second.numel(), 0.0);
        adam_[i].v.assign(params_[i].second.numel(), 0.0);
      }
    } else {
      velocity_.resize(params_.size());
      for (size_t i = 0; i < params_.size(); ++i)
        velocity_[i].assign(params_[i].second.numel(), 0.0);
    }
  }

  // applies one update from the accumulated gradients; returns the step norm
  double apply() {
    ++t_;
    double norm_sq = 0.0;
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].second;
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      double* w = p.data();
      if (cfg_.optimizer == OptimizerKind::adam) {
        AdamState& st = adam_[i];
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double corr1 = 1.0 - std::pow(b1, (double)t_);
        const double corr2 = 1.0 - std::pow(b2, (double)t_);
        for (int64_t j = 0; j < p.numel(); ++j) {
          st.m[j] = b1 * st.m[j] + (1.0 - b1) * g[j];
          st.v[j] = b2 * st.v[j] + (1.0 - b2) * g[j] * g[j];
          const double mhat = st.m[j] / corr1;
          const double vhat = st.v[j] / corr2;
          const double delta =
              cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
          w[j] -= delta;
          norm_sq += delta * delta;
        }
      } else {
        auto& vel = velocity_[i];
        for (int64_t j = 0; j < p.numel(); ++j) {
          vel[j] = cfg_.momentum * vel[j] + g[j];
          const double delta = cfg_.lr * vel[j];
          w[j] -= delta;
          norm_sq += delta * delta;
        }
      }
      p.zero_grad();
    }
    return std::sqrt(norm_sq);
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  TrainConfig cfg_;
  std::vector<AdamState> adam_;
  std::vector<std::vector<double>> velocity_;
  int64_t t_ = 0;
};

}  // namespace

TrainResult train_model(Model& model, const Dataset& dataset,
                        const TrainConfig& cfg,
                        const std::function<void(int, Model&)>& on_eval) {
  cfg.validate();
  if (dataset.train.empty())
    throw std::invalid_argument("train split is empty");
  PrecisionGuard precision(cfg.precision);
  const ModelConfig& mc = model.config();
  const int s = mc.crop_size;

  ParamUpdater updater(model.parameters(), cfg);
  Rng shuffle_rng(splitmix64(cfg.seed ^ 0x9ce1a5d0c2f3b470ULL));
  Rng jitter_rng(splitmix64(cfg.seed ^ 0x51a2b3c4d5e6f708ULL));

  std::vector<int> order(dataset.train.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle on first use

  TrainResult result;
  result.loss_trace.reserve(cfg.steps);

  const int h = dataset.train[0].image.dim(0);
  const int w = dataset.train[0].image.dim(1);

  for (int step = 0; step < cfg.steps; ++step) {
    // assemble the batch
    std::vector<int> batch;
    batch.reserve(cfg.batch_size);
    while ((int)batch.size() < cfg.batch_size) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, (int)i - 1)]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    Tensor images = Tensor::zeros({(int)batch.size(), h, w, 3});
    std::vector<std::vector<Box>> boxes(batch.size());
    std::vector<Tensor> targets;
    std::vector<uint8_t> has_mask;
    for (size_t bi = 0; bi < batch.size(); ++bi) {
      const DatasetRecord& rec = dataset.train[batch[bi]];
      std::copy(rec.image.data(), rec.image.data() + rec.image.numel(),
                images.data() + bi * rec.image.numel());
      const auto pairs = make_training_boxes(
          rec.annotations, mc.training_box_mode, mc.jitter, jitter_rng);
      for (const auto& [box, src] : pairs) {
        boxes[bi].push_back(box);
        const InstanceAnnotation& ann = rec.annotations[src];
        if (ann.has_mask) {
          targets.push_back(crop_target_mask(ann.mask, box, s));
          has_mask.push_back(1);
        } else {
          targets.push_back(Tensor::zeros({s, s}));
          has_mask.push_back(0);
        }
      }
    }

    try {
      const int k = (int)targets.size();
      double loss_value = 0.0;
      if (k > 0) {
        Tensor logits = model.forward_masks_batch(images, boxes, Phase::train);
        Tensor target_stack = Tensor::zeros({k, s, s});
        for (int i = 0; i < k; ++i)
          std::copy(targets[i].data(), targets[i].data() + s * s,
                    target_stack.data() + (int64_t)i * s * s);
        Tensor loss =
            mask_loss(logits, target_stack, has_mask, mc.mask_loss_weight);
        loss_value = loss.item();
        if (loss.requires_grad()) {
          backward(loss);
          updater.apply();
        }
      }
      result.loss_trace.push_back(loss_value);
    } catch (const std::runtime_error& e) {
      std::ostringstream os;
      os << "training aborted at step " << step << " (lr "
         << std::setprecision(6) << cfg.lr << "): " << e.what();
      throw std::runtime_error(os.str());
    }
    ++result.steps_run;
    if (cfg.eval_every > 0 && on_eval && (step + 1) % cfg.eval_every == 0)
      on_eval(step + 1, model);
  }
  return result;
}

std::string loss_trace_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "step,loss\n" << std::setprecision(17);
  for (size_t i = 0; i < result.loss_trace.size(); ++i)
    os << i << "," << result.loss_trace[i] << "\n";
  return os.str();
}

}  // namespace ctseg
