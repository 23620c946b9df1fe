#include "itss/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "itss/errors.hpp"
#include "itss/rng.hpp"

namespace itss::train {

namespace {

constexpr double kDivergenceBound = 1e6;
constexpr double kMomentum = 0.9;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void check_divergence(double loss, std::size_t epoch) {
  if (!std::isfinite(loss) || loss > kDivergenceBound)
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                          " (loss=" + std::to_string(loss) + ")");
}

void zero_masked(nn::Model& model) {
  if (model.mask.hidden.empty()) return;
  for (std::size_t l = 0; l < model.hidden.size(); ++l)
    for (std::size_t i = 0; i < model.hidden[l].size(); ++i)
      if (model.mask.hidden[l][i]) model.hidden[l][i] = 0.0;
}

void zero_masked_grads(const nn::Model& model, nn::Gradients& grads) {
  if (model.mask.hidden.empty()) return;
  for (std::size_t l = 0; l < grads.hidden.size(); ++l)
    for (std::size_t i = 0; i < grads.hidden[l].size(); ++i)
      if (model.mask.hidden[l][i]) grads.hidden[l][i] = 0.0;
}

}  // namespace

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  throw InvalidInputError("unknown optimizer '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidInputError("train config: epochs must be >= 1");
  if (batch_size < 1) throw InvalidInputError("train config: batch_size must be >= 1");
  if (base_lr < 0.0) throw InvalidInputError("train config: base_lr must be >= 0");
  if (checkpoint_every < 1)
    throw InvalidInputError("train config: checkpoint_every must be >= 1");
}

EvalResult evaluate(const nn::Model& model, const data::Dataset& dataset) {
  if (dataset.size() == 0) throw InvalidInputError("evaluate: empty dataset");
  const std::size_t chunk = 512;
  const std::size_t dim = dataset.features.cols;
  std::size_t hits = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    const std::size_t count = std::min(chunk, dataset.size() - start);
    nn::Batch b;
    b.n = count;
    b.dim = dim;
    b.x.assign(dataset.features.data.begin() + start * dim,
               dataset.features.data.begin() + (start + count) * dim);
    b.y.assign(dataset.labels.begin() + start, dataset.labels.begin() + start + count);
    auto fwd = nn::forward_loss(model, b);
    loss_sum += fwd.loss * static_cast<double>(count);
    for (std::size_t e = 0; e < count; ++e) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < model.spec.num_classes; ++c)
        if (fwd.logits.at(e, c) > fwd.logits.at(e, best)) best = c;
      if (static_cast<int>(best) == b.y[e]) ++hits;
    }
  }
  return {static_cast<double>(hits) / static_cast<double>(dataset.size()),
          loss_sum / static_cast<double>(dataset.size())};
}

BlockOptimizer::BlockOptimizer(OptimizerKind kind, double lr, std::size_t size)
    : kind_(kind), lr_(lr), m_(size, 0.0) {
  if (kind_ == OptimizerKind::adam) v_.assign(size, 0.0);
}

void BlockOptimizer::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ShapeError("optimizer step: size mismatch");
  ++t_;
  if (kind_ == OptimizerKind::adam) {
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kAdamBeta1 * m_[i] + (1.0 - kAdamBeta1) * grads[i];
      v_[i] = kAdamBeta2 * v_[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= lr_ * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kMomentum * m_[i] + grads[i];
      params[i] -= lr_ * m_[i];
    }
  }
}

namespace {

// Shared epoch loop for the full and frozen trainers.
template <typename StepFn>
std::vector<EpochMetrics> run_epochs(nn::Model& model, const data::Dataset& train_set,
                                     const data::Dataset& val_set,
                                     const TrainConfig& cfg, StepFn&& apply_step,
                                     const std::function<void(std::size_t)>& on_epoch_end) {
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    for (const auto& batch :
         data::batches(train_set, cfg.batch_size, rng::derive(cfg.seed, epoch))) {
      auto back = nn::backward(model, batch);
      check_divergence(back.loss, epoch);
      zero_masked_grads(model, back.grads);
      apply_step(back.grads);
      zero_masked(model);
      loss_sum += back.loss;
      ++batch_count;
    }
    auto val = evaluate(model, val_set);
    history.push_back({epoch, loss_sum / static_cast<double>(batch_count),
                       val.mean_loss, val.accuracy});
    if (on_epoch_end) on_epoch_end(epoch);
  }
  return history;
}

}  // namespace

FullTrainResult train_full(nn::Model model, const data::Dataset& train_set,
                           const data::Dataset& val_set, const TrainConfig& cfg,
                           std::string task_id) {
  cfg.validate();
  FullTrainResult res;
  res.trajectory.layouts = model.hidden_layouts;
  res.trajectory.origin = model.hidden;
  res.trajectory.task_id = std::move(task_id);
  res.trajectory.config = cfg;

  BlockOptimizer embed_opt(cfg.optimizer, cfg.base_lr, model.embed.size());
  BlockOptimizer readout_opt(cfg.optimizer, cfg.base_lr, model.readout.size());
  std::vector<BlockOptimizer> hidden_opt;
  for (const auto& layer : model.hidden)
    hidden_opt.emplace_back(cfg.optimizer, cfg.base_lr, layer.size());

  res.history = run_epochs(
      model, train_set, val_set, cfg,
      [&](const nn::Gradients& g) {
        embed_opt.step(model.embed, g.embed);
        readout_opt.step(model.readout, g.readout);
        for (std::size_t l = 0; l < model.hidden.size(); ++l)
          hidden_opt[l].step(model.hidden[l], g.hidden[l]);
      },
      [&](std::size_t epoch) {
        if (epoch % cfg.checkpoint_every == 0)
          res.trajectory.checkpoints.push_back(model.hidden);
      });
  res.model = std::move(model);
  return res;
}

FrozenTrainResult train_frozen(nn::Model model, const data::Dataset& train_set,
                               const data::Dataset& val_set, const TrainConfig& cfg) {
  cfg.validate();
  FrozenTrainResult res;
  BlockOptimizer embed_opt(cfg.optimizer, cfg.base_lr, model.embed.size());
  BlockOptimizer readout_opt(cfg.optimizer, cfg.base_lr, model.readout.size());
  res.history = run_epochs(
      model, train_set, val_set, cfg,
      [&](const nn::Gradients& g) {
        embed_opt.step(model.embed, g.embed);
        readout_opt.step(model.readout, g.readout);
      },
      nullptr);
  res.model = std::move(model);
  return res;
}

}  // namespace itss::train
