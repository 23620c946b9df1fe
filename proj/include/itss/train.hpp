#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "itss/data.hpp"
#include "itss/nn.hpp"

namespace itss::train {

enum class OptimizerKind { sgd_momentum, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view s);

struct TrainConfig {
  std::size_t epochs = 32;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::adam;
  double base_lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1;

  void validate() const;
};

// Per-epoch checkpoints of the hidden (re-parameterizable) layers, anchored
// at the initialization they started from.
struct Trajectory {
  std::vector<nn::LayerLayout> layouts;
  std::vector<std::vector<double>> origin;                    // per layer
  std::vector<std::vector<std::vector<double>>> checkpoints;  // [step][layer]
  std::string task_id;
  TrainConfig config;

  std::size_t length() const { return checkpoints.size(); }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

EvalResult evaluate(const nn::Model& model, const data::Dataset& dataset);

// Single-block first-order optimizer (Adam or SGD with momentum 0.9).
class BlockOptimizer {
 public:
  BlockOptimizer(OptimizerKind kind, double lr, std::size_t size);
  void step(std::span<double> params, std::span<const double> grads);

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;  // adam moments / momentum velocity in m_
  std::size_t t_ = 0;
};

struct FullTrainResult {
  std::vector<EpochMetrics> history;
  nn::Model model;
  Trajectory trajectory;
};

// Full-parameter fine-tuning; records one hidden-layer checkpoint every
// checkpoint_every epochs. Aborts with DivergenceError when the loss goes
// non-finite or above 1e6.
FullTrainResult train_full(nn::Model model, const data::Dataset& train_set,
                           const data::Dataset& val_set, const TrainConfig& cfg,
                           std::string task_id);

struct FrozenTrainResult {
  std::vector<EpochMetrics> history;
  nn::Model model;
};

// Embedding and readout train; hidden layers stay at their initialization.
FrozenTrainResult train_frozen(nn::Model model, const data::Dataset& train_set,
                               const data::Dataset& val_set, const TrainConfig& cfg);

}  // namespace itss::train
