#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "itss/data.hpp"
#include "itss/errors.hpp"
#include "itss/nn.hpp"
#include "itss/rng.hpp"
#include "itss/subspace.hpp"
#include "itss/train.hpp"

using namespace itss;

namespace {

nn::ModelSpec reference_spec(std::size_t classes, std::uint64_t seed) {
  nn::ModelSpec spec;
  spec.kind = nn::ModelKind::mlp;
  spec.input_dim = 16;
  spec.hidden_dim = 32;
  spec.depth = 2;
  spec.num_classes = classes;
  spec.seed = seed;
  return spec;
}

// Trajectory with hand-crafted checkpoint deltas, no training involved.
train::Trajectory fake_trajectory(const nn::Model& model, std::string task_id,
                                  const std::vector<std::vector<std::vector<double>>>& deltas) {
  train::Trajectory traj;
  traj.layouts = model.hidden_layouts;
  traj.origin = model.hidden;
  traj.task_id = std::move(task_id);
  for (const auto& step : deltas) {
    auto cp = model.hidden;
    for (std::size_t l = 0; l < cp.size(); ++l)
      for (std::size_t i = 0; i < cp[l].size(); ++i) cp[l][i] += step[l][i];
    traj.checkpoints.push_back(std::move(cp));
  }
  return traj;
}

std::vector<std::vector<double>> random_delta(const nn::Model& model, std::uint64_t seed,
                                              double scale = 1.0) {
  std::vector<std::vector<double>> delta(model.hidden.size());
  rng::Engine eng(seed);
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    delta[l].resize(model.hidden[l].size());
    for (double& v : delta[l]) v = scale * eng.next_gaussian();
  }
  return delta;
}

double relative_residual(const linalg::Matrix& v, std::span<const double> delta) {
  std::vector<double> coeff(v.cols, 0.0);
  linalg::matvec_transposed(v, delta, coeff);
  std::vector<double> recon(v.rows, 0.0);
  linalg::matvec(v, coeff, recon);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    num += (delta[i] - recon[i]) * (delta[i] - recon[i]);
    den += delta[i] * delta[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("rank-1 trajectory yields one direction and rejects higher dims") {
  auto model = nn::init_model(reference_spec(2, 0));
  auto u = random_delta(model, 42);
  std::vector<std::vector<std::vector<double>>> deltas;
  for (double c : {1.0, 2.0, 3.0}) {
    auto step = u;
    for (auto& layer : step)
      for (double& v : layer) v *= c;
    deltas.push_back(step);
  }
  auto traj = fake_trajectory(model, "toy", deltas);

  auto basis = subspace::extract_basis(traj, 1);
  for (std::size_t l = 0; l < basis.directions.size(); ++l) {
    REQUIRE(basis.directions[l].cols == 1);
    const double n = linalg::norm(u[l]);
    double dot = 0.0;
    for (std::size_t i = 0; i < u[l].size(); ++i)
      dot += basis.directions[l].at(i, 0) * u[l][i] / n;
    CHECK(std::fabs(std::fabs(dot) - 1.0) < 1e-10);
  }

  try {
    subspace::extract_basis(traj, 2);
    FAIL("expected RankDeficientError");
  } catch (const itss::RankDeficientError& e) {
    CHECK(e.achievable_rank == 1);
  }
}

TEST_CASE("full-rank intrinsic basis reconstructs every training delta") {
  auto suite = data::generate_suite(2, 16, 0);
  auto model = nn::init_model(reference_spec(suite[0].spec.num_classes, 1));
  train::TrainConfig cfg;
  cfg.epochs = 32;
  cfg.seed = 1;
  auto run = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  auto basis = subspace::extract_basis(run.trajectory, 32);

  auto rnd = subspace::random_basis(model.hidden_layouts, model.hidden, 32, 7);

  double worst_intrinsic = 0.0, mean_random = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < run.trajectory.length(); ++i) {
    for (std::size_t l = 0; l < model.hidden.size(); ++l) {
      std::vector<double> delta(model.hidden[l].size());
      for (std::size_t j = 0; j < delta.size(); ++j)
        delta[j] = run.trajectory.checkpoints[i][l][j] - run.trajectory.origin[l][j];
      worst_intrinsic = std::max(worst_intrinsic,
                                 relative_residual(basis.directions[l], delta));
      mean_random += relative_residual(rnd.directions[l], delta);
      ++count;
    }
  }
  mean_random /= static_cast<double>(count);
  CHECK(worst_intrinsic <= 1e-8);
  CHECK(mean_random >= 0.5);
}

TEST_CASE("zero-lr trajectory has rank zero") {
  auto suite = data::generate_suite(2, 16, 2);
  auto model = nn::init_model(reference_spec(suite[0].spec.num_classes, 2));
  train::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.base_lr = 0.0;
  auto run = train::train_full(model, suite[0].train, suite[0].val, cfg, "task-1");
  try {
    subspace::extract_basis(run.trajectory, 1);
    FAIL("expected RankDeficientError");
  } catch (const itss::RankDeficientError& e) {
    CHECK(e.achievable_rank == 0);
  }
}

TEST_CASE("unified basis dims follow the included task count") {
  auto model = nn::init_model(reference_spec(2, 3));
  std::vector<train::Trajectory> trajs;
  for (std::uint64_t k = 0; k < 8; ++k)
    trajs.push_back(fake_trajectory(model, "task-" + std::to_string(k + 1),
                                    {random_delta(model, 100 + k)}));
  std::vector<const train::Trajectory*> ptrs;
  for (const auto& t : trajs) ptrs.push_back(&t);

  auto unified = subspace::unified_basis(ptrs);
  CHECK(unified.dim == 8);
  CHECK(unified.source.kind == subspace::BasisKind::unified);

  auto zero_shot = subspace::unified_basis(ptrs, 0, std::string("task-3"));
  CHECK(zero_shot.dim == 7);
  CHECK(zero_shot.source.kind == subspace::BasisKind::zero_shot);
  CHECK(zero_shot.source.tasks.size() == 7);

  // Duplicate final checkpoints collapse the rank.
  std::vector<train::Trajectory> dup;
  dup.push_back(fake_trajectory(model, "a", {random_delta(model, 5)}));
  dup.push_back(fake_trajectory(model, "b", {random_delta(model, 5)}));
  auto collapsed = subspace::unified_basis({&dup[0], &dup[1]});
  CHECK(collapsed.dim == 1);
}

TEST_CASE("unified basis rejects mismatched origins") {
  auto a = nn::init_model(reference_spec(2, 1));
  auto b = nn::init_model(reference_spec(2, 2));  // different seed, different origin
  auto ta = fake_trajectory(a, "a", {random_delta(a, 1)});
  auto tb = fake_trajectory(b, "b", {random_delta(b, 2)});
  CHECK_THROWS_AS(subspace::unified_basis({&ta, &tb}), itss::InvalidInputError);
}

TEST_CASE("reparameterize identities") {
  auto model = nn::init_model(reference_spec(2, 4));
  auto traj = fake_trajectory(model, "toy",
                              {random_delta(model, 1), random_delta(model, 2),
                               random_delta(model, 3)});
  auto basis = subspace::extract_basis(traj, 3);

  // Zero state reproduces the origin exactly.
  subspace::LowDimState zero;
  zero.ensemble = 4;
  zero.coords.resize(basis.directions.size());
  for (std::size_t l = 0; l < basis.directions.size(); ++l)
    zero.coords[l].assign(4, std::vector<double>(basis.directions[l].cols, 0.0));
  CHECK(subspace::reparameterize(basis, zero) == model.hidden);

  // Opposite members cancel.
  subspace::LowDimState pair = zero;
  pair.ensemble = 2;
  for (std::size_t l = 0; l < basis.directions.size(); ++l) {
    pair.coords[l].resize(2);
    rng::Engine eng(50 + l);
    for (double& v : pair.coords[l][0]) v = eng.next_gaussian();
    pair.coords[l][1] = pair.coords[l][0];
    for (double& v : pair.coords[l][1]) v = -v;
  }
  CHECK(subspace::reparameterize(basis, pair) == model.hidden);

  // Projection of an in-span delta reconstructs the final checkpoint.
  subspace::LowDimState proj;
  proj.ensemble = 1;
  proj.coords.resize(basis.directions.size());
  for (std::size_t l = 0; l < basis.directions.size(); ++l) {
    std::vector<double> delta(model.hidden[l].size());
    for (std::size_t i = 0; i < delta.size(); ++i)
      delta[i] = traj.checkpoints.back()[l][i] - traj.origin[l][i];
    std::vector<double> coeff(basis.directions[l].cols, 0.0);
    linalg::matvec_transposed(basis.directions[l], delta, coeff);
    proj.coords[l].push_back(std::move(coeff));
  }
  auto mat = subspace::reparameterize(basis, proj);
  for (std::size_t l = 0; l < mat.size(); ++l) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < mat[l].size(); ++i) {
      num += std::pow(mat[l][i] - traj.checkpoints.back()[l][i], 2);
      den += std::pow(traj.checkpoints.back()[l][i], 2);
    }
    CHECK(std::sqrt(num) <= 1e-8 * std::sqrt(den));
  }
}

TEST_CASE("lowdim_gradient is the scaled projection") {
  linalg::Matrix v(4, 2);  // columns e1, e3
  v.at(0, 0) = 1.0;
  v.at(2, 1) = 1.0;
  std::vector<double> g{0.5, -1.0, 2.0, 7.0};
  auto low = subspace::lowdim_gradient(v, g, 4);
  REQUIRE(low.size() == 2);
  CHECK(low[0] == doctest::Approx(0.5 / 4.0));
  CHECK(low[1] == doctest::Approx(2.0 / 4.0));

  // Orthogonal gradients project to zero.
  std::vector<double> ortho{0.0, 3.0, 0.0, -2.0};
  auto zero = subspace::lowdim_gradient(v, ortho, 2);
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);
}

TEST_CASE("lowdim gradient matches finite differences through the reparameterization") {
  auto suite = data::generate_suite(2, 16, 4);
  auto model = nn::init_model(reference_spec(suite[0].spec.num_classes, 5));
  auto traj = fake_trajectory(model, "toy",
                              {random_delta(model, 11, 0.1), random_delta(model, 12, 0.1),
                               random_delta(model, 13, 0.1), random_delta(model, 14, 0.1)});
  auto basis = subspace::extract_basis(traj, 4);
  auto state = subspace::init_state(basis, 3, 9);

  auto batch = data::batches(suite[0].train, 16, 21)[0];
  auto materialized = model;
  materialized.hidden = subspace::reparameterize(basis, state);
  auto back = nn::backward(materialized, batch);

  for (std::size_t l = 0; l < basis.directions.size(); ++l) {
    auto analytic = subspace::lowdim_gradient(basis.directions[l], back.grads.hidden[l],
                                              state.ensemble);
    for (std::size_t member = 0; member < state.ensemble; ++member) {
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double step = 1e-5;
        auto probe = state;
        probe.coords[l][member][i] += step;
        materialized.hidden = subspace::reparameterize(basis, probe);
        const double up = nn::forward_loss(materialized, batch).loss;
        probe.coords[l][member][i] -= 2.0 * step;
        materialized.hidden = subspace::reparameterize(basis, probe);
        const double down = nn::forward_loss(materialized, batch).loss;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max(1e-8, std::fabs(analytic[i]) + std::fabs(numeric));
        CHECK(std::fabs(analytic[i] - numeric) / denom < 1e-5);
      }
    }
  }
}

TEST_CASE("subspace training materializes the ensemble mean at every step") {
  auto suite = data::generate_suite(2, 16, 6);
  auto model = nn::init_model(reference_spec(suite[0].spec.num_classes, 6));
  train::TrainConfig base;
  base.epochs = 3;
  base.seed = 4;
  auto run = train::train_full(model, suite[0].train, suite[0].val, base, "task-1");
  auto basis = subspace::extract_basis(run.trajectory, 3);

  subspace::SubspaceTrainConfig cfg;
  cfg.base.epochs = 2;
  cfg.base.seed = 8;
  cfg.ensemble = 4;
  auto res = subspace::train_in_subspace(model, basis, suite[0].train, suite[0].val, cfg);
  CHECK(res.model.hidden == subspace::reparameterize(basis, res.state));
  CHECK(res.history.size() == 2);
}

TEST_CASE("ensemble-mean trajectory equals single-vector training from the mean") {
  auto suite = data::generate_suite(2, 16, 7);
  // 160 examples -> exactly 5 batches of 32 per epoch.
  data::Dataset small = suite[0].train;
  small.features = linalg::Matrix(160, 16);
  small.labels.assign(suite[0].train.labels.begin(), suite[0].train.labels.begin() + 160);
  std::copy(suite[0].train.features.data.begin(),
            suite[0].train.features.data.begin() + 160 * 16,
            small.features.data.begin());

  auto model = nn::init_model(reference_spec(suite[0].spec.num_classes, 7));
  train::TrainConfig base;
  base.epochs = 4;
  base.seed = 5;
  auto run = train::train_full(model, small, suite[0].val, base, "task-1");
  auto basis = subspace::extract_basis(run.trajectory, 4);

  for (std::size_t h : {1u, 2u, 16u}) {
    subspace::SubspaceTrainConfig cfg;
    cfg.base.epochs = 1;  // 5 SGD steps
    cfg.base.seed = 31;
    cfg.lowdim_optimizer = subspace::LowDimOptimizer::sgd;
    cfg.ensemble = h;
    auto ensemble_run =
        subspace::train_in_subspace(model, basis, small, suite[0].val, cfg);

    // Single vector starting at the member mean, stepped with the same
    // per-member rule (gradient carries the 1/h factor).
    auto init = subspace::init_state(basis, h, cfg.base.seed);
    subspace::LowDimState mean_state;
    mean_state.ensemble = 1;
    mean_state.coords.resize(basis.directions.size());
    for (std::size_t l = 0; l < basis.directions.size(); ++l) {
      std::vector<double> mean(basis.directions[l].cols, 0.0);
      for (const auto& member : init.coords[l])
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += member[i];
      for (double& v : mean) v /= static_cast<double>(h);
      mean_state.coords[l].push_back(std::move(mean));
    }
    subspace::SubspaceTrainConfig single = cfg;
    single.ensemble = 1;
    single.lowdim_lr = cfg.lowdim_lr / static_cast<double>(h);
    auto single_run = subspace::train_in_subspace(model, basis, small, suite[0].val,
                                                  single, mean_state);

    for (std::size_t l = 0; l < basis.directions.size(); ++l) {
      std::vector<double> mean(basis.directions[l].cols, 0.0);
      for (const auto& member : ensemble_run.state.coords[l])
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += member[i];
      for (double& v : mean) v /= static_cast<double>(h);
      for (std::size_t i = 0; i < mean.size(); ++i)
        CHECK(std::fabs(mean[i] - single_run.state.coords[l][0][i]) < 1e-10);
    }
  }
}

TEST_CASE("zero-dimensional basis reproduces frozen training exactly") {
  auto suite = data::generate_suite(2, 16, 8);
  auto model = nn::init_model(reference_spec(suite[0].spec.num_classes, 8));
  auto basis = subspace::random_basis(model.hidden_layouts, model.hidden, 0, 1);

  subspace::SubspaceTrainConfig cfg;
  cfg.base.epochs = 6;
  cfg.base.seed = 12;
  auto sub = subspace::train_in_subspace(model, basis, suite[0].train, suite[0].val, cfg);

  train::TrainConfig frozen_cfg = cfg.base;
  auto frozen = train::train_frozen(model, suite[0].train, suite[0].val, frozen_cfg);

  CHECK(sub.model.hidden == model.hidden);
  CHECK(sub.model.embed == frozen.model.embed);
  CHECK(sub.model.readout == frozen.model.readout);
  REQUIRE(sub.history.size() == frozen.history.size());
  for (std::size_t e = 0; e < sub.history.size(); ++e) {
    CHECK(sub.history[e].train_loss == frozen.history[e].train_loss);
    CHECK(sub.history[e].val_accuracy == frozen.history[e].val_accuracy);
  }
}

TEST_CASE("subspace training rejects a foreign origin") {
  auto suite = data::generate_suite(2, 16, 9);
  auto a = nn::init_model(reference_spec(suite[0].spec.num_classes, 9));
  auto b = nn::init_model(reference_spec(suite[0].spec.num_classes, 10));
  auto basis = subspace::random_basis(a.hidden_layouts, a.hidden, 4, 2);
  subspace::SubspaceTrainConfig cfg;
  cfg.base.epochs = 1;
  CHECK_THROWS_AS(
      subspace::train_in_subspace(b, basis, suite[0].train, suite[0].val, cfg),
      itss::InvalidInputError);
}

TEST_CASE("state initialization is deterministic per seed") {
  auto model = nn::init_model(reference_spec(2, 11));
  auto basis = subspace::random_basis(model.hidden_layouts, model.hidden, 8, 3);
  auto a = subspace::init_state(basis, 16, 42);
  auto b = subspace::init_state(basis, 16, 42);
  CHECK(a.coords == b.coords);
  auto c = subspace::init_state(basis, 16, 43);
  CHECK(a.coords != c.coords);
}
