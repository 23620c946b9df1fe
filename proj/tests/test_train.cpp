#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "itss/data.hpp"
#include "itss/errors.hpp"
#include "itss/nn.hpp"
#include "itss/train.hpp"

using namespace itss;

namespace {

nn::ModelSpec reference_spec(const data::Task& task, std::uint64_t seed) {
  nn::ModelSpec spec;
  spec.kind = nn::ModelKind::mlp;
  spec.input_dim = task.spec.input_dim;
  spec.hidden_dim = 32;
  spec.depth = 2;
  spec.num_classes = task.spec.num_classes;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("trajectory length equals epochs with per-epoch checkpoints") {
  auto suite = data::generate_suite(2, 16, 0);
  auto model = nn::init_model(reference_spec(suite[0], 1));
  train::TrainConfig cfg;
  cfg.epochs = 32;
  cfg.seed = 1;
  auto res = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  CHECK(res.trajectory.length() == 32);
  CHECK(res.trajectory.origin == model.hidden);
  CHECK(res.history.size() == 32);

  cfg.checkpoint_every = 4;
  auto sparse = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  CHECK(sparse.trajectory.length() == 8);
}

TEST_CASE("reference run reaches 0.92 validation accuracy on task 1") {
  auto suite = data::generate_suite(8, 16, 0);
  auto model = nn::init_model(reference_spec(suite[0], 1));
  train::TrainConfig cfg;
  cfg.epochs = 32;
  cfg.seed = 1;
  auto res = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  CHECK(res.history.back().val_accuracy >= 0.92);
}

TEST_CASE("zero learning rate is a no-op") {
  auto suite = data::generate_suite(2, 16, 3);
  auto model = nn::init_model(reference_spec(suite[0], 2));
  train::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.base_lr = 0.0;
  auto res = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  for (const auto& cp : res.trajectory.checkpoints) CHECK(cp == model.hidden);
}

TEST_CASE("training is deterministic bit-for-bit") {
  auto suite = data::generate_suite(2, 16, 5);
  auto model = nn::init_model(reference_spec(suite[0], 3));
  train::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 9;
  auto a = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  auto b = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  CHECK(a.model.hidden == b.model.hidden);
  CHECK(a.model.embed == b.model.embed);
  CHECK(a.trajectory.checkpoints == b.trajectory.checkpoints);
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val_accuracy == b.history[e].val_accuracy);
  }
}

TEST_CASE("first sgd step is exactly theta minus lr times gradient") {
  train::BlockOptimizer opt(train::OptimizerKind::sgd_momentum, 0.5, 2);
  std::vector<double> params{1.0, -2.0};
  std::vector<double> grads{0.25, 4.0};
  opt.step(params, grads);
  CHECK(params[0] == 1.0 - 0.5 * 0.25);
  CHECK(params[1] == -2.0 - 0.5 * 4.0);
}

TEST_CASE("frozen training never touches hidden layers") {
  auto suite = data::generate_suite(2, 16, 0);
  auto model = nn::init_model(reference_spec(suite[0], 4));
  train::TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 2;
  auto res = train::train_frozen(model, suite[0].train, suite[0].val, cfg);
  CHECK(res.model.hidden == model.hidden);  // exactly theta_0
  CHECK(res.model.embed != model.embed);

  // Frozen features still beat chance, averaged over the first two tasks.
  auto model2 = nn::init_model(reference_spec(suite[1], 4));
  auto res2 = train::train_frozen(model2, suite[1].train, suite[1].val, cfg);
  const double chance = 0.5 * (1.0 / suite[0].spec.num_classes +
                               1.0 / suite[1].spec.num_classes);
  const double frozen_mean =
      0.5 * (res.history.back().val_accuracy + res2.history.back().val_accuracy);
  CHECK(frozen_mean > chance + 0.05);

  auto full = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  CHECK(res.history.back().val_accuracy <= full.history.back().val_accuracy);
}

TEST_CASE("masked parameters stay exactly zero through training") {
  auto suite = data::generate_suite(2, 16, 1);
  auto model = nn::init_model(reference_spec(suite[0], 5));
  nn::Mask mask;
  mask.hidden.resize(model.hidden.size());
  for (std::size_t l = 0; l < model.hidden.size(); ++l)
    mask.hidden[l].assign(model.hidden[l].size(), 0);
  mask.hidden[0][7] = 1;
  mask.hidden[1][13] = 1;
  nn::apply_mask(model, mask);

  train::TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 6;
  auto res = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  CHECK(res.model.hidden[0][7] == 0.0);
  CHECK(res.model.hidden[1][13] == 0.0);
  // Neighbouring parameters did move.
  CHECK(res.model.hidden[0][8] != model.hidden[0][8]);
}

TEST_CASE("divergent training aborts with a diagnostic") {
  auto suite = data::generate_suite(2, 16, 2);
  auto model = nn::init_model(reference_spec(suite[0], 6));
  train::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.optimizer = train::OptimizerKind::sgd_momentum;
  cfg.base_lr = 1e8;
  CHECK_THROWS_AS(train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1"),
                  itss::DivergenceError);
}

TEST_CASE("evaluate measures chance for untrained models and rewards training") {
  auto suite = data::generate_suite(2, 16, 7);
  // Chance level, averaged over model seeds.
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto model = nn::init_model(reference_spec(suite[0], 100 + s));
    mean += train::evaluate(model, suite[0].val).accuracy;
  }
  mean /= 5.0;
  CHECK(std::fabs(mean - 0.5) <= 0.1);

  // Train accuracy at memorization scale is at least val accuracy.
  auto model = nn::init_model(reference_spec(suite[0], 8));
  train::TrainConfig cfg;
  cfg.epochs = 48;
  cfg.seed = 3;
  auto res = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  auto on_train = train::evaluate(res.model, suite[0].train);
  auto on_val = train::evaluate(res.model, suite[0].val);
  CHECK(on_train.accuracy >= on_val.accuracy);

  data::Dataset empty;
  CHECK_THROWS_AS(train::evaluate(model, empty), itss::InvalidInputError);
}
