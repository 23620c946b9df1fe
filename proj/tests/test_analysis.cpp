#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "itss/analysis.hpp"
#include "itss/data.hpp"
#include "itss/errors.hpp"
#include "itss/nn.hpp"
#include "itss/rng.hpp"
#include "itss/subspace.hpp"
#include "itss/train.hpp"
#include "support/outlier_oracle.hpp"

using namespace itss;

namespace {

analysis::UpdateVector make_update(std::vector<double> values, std::size_t layer = 0) {
  return {layer, std::move(values)};
}

}  // namespace

TEST_CASE("update_vector materializes V times the ensemble mean") {
  nn::ModelSpec spec{nn::ModelKind::mlp, 8, 8, 2, 2, 1};
  auto model = nn::init_model(spec);
  auto basis = subspace::random_basis(model.hidden_layouts, model.hidden, 4, 5);
  auto state = subspace::init_state(basis, 3, 7);

  auto updates = analysis::update_vector(basis, state);
  auto params = subspace::reparameterize(basis, state);
  REQUIRE(updates.size() == params.size());
  // Machine-precision identity: u = theta^D - theta_0 (the round trip
  // through theta_0 costs one ulp of the origin).
  for (std::size_t l = 0; l < params.size(); ++l)
    for (std::size_t i = 0; i < params[l].size(); ++i)
      CHECK(std::fabs(updates[l].values[i] - (params[l][i] - model.hidden[l][i])) <=
            1e-12);

  // Zero state gives the zero vector.
  subspace::LowDimState zero = state;
  for (auto& layer : zero.coords)
    for (auto& member : layer) std::fill(member.begin(), member.end(), 0.0);
  for (const auto& u : analysis::update_vector(basis, zero))
    for (double v : u.values) CHECK(v == 0.0);
}

TEST_CASE("update_vector coordinate case") {
  nn::LayerLayout layout;
  layout.tensors.push_back({"w", {5}, 0});
  subspace::SubspaceBasis basis;
  basis.layouts = {layout};
  linalg::Matrix v(5, 1);
  v.at(3, 0) = 1.0;  // column e4
  basis.directions = {v};
  basis.singular_values = {{1.0}};
  basis.origin = {std::vector<double>(5, 0.0)};
  basis.dim = 1;
  subspace::LowDimState state;
  state.ensemble = 1;
  state.coords = {{{2.0}}};
  auto u = analysis::update_vector(basis, state);
  CHECK(u[0].values == std::vector<double>{0.0, 0.0, 0.0, 2.0, 0.0});
}

TEST_CASE("detect_outliers flags a single spike") {
  std::vector<double> values(1000, 0.0);
  values[999] = 10.0;
  auto report = analysis::detect_outliers(make_update(values));
  CHECK(report.mean == doctest::Approx(0.01));
  CHECK(report.stddev == doctest::Approx(0.31606961).epsilon(1e-6));
  REQUIRE(report.flagged.size() == 1);
  CHECK(report.flagged[0] == 999);
  CHECK(report.scores[0] == doctest::Approx(31.6).epsilon(1e-2));
  CHECK(report.top_index == 999);
}

TEST_CASE("constant vectors have no outliers") {
  auto report = analysis::detect_outliers(make_update(std::vector<double>(64, 3.5)));
  CHECK(report.flagged.empty());
  CHECK(report.stddev == 0.0);
}

TEST_CASE("detect_outliers equals the brute-force oracle on random vectors") {
  rng::Engine eng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + eng.next_index(200);
    std::vector<double> values(n);
    for (double& v : values) v = eng.next_gaussian();
    if (trial % 7 == 0) values.assign(n, 1.25);          // sigma = 0 case
    if (trial % 11 == 0) values[eng.next_index(n)] = 40.0;  // spike
    auto report = analysis::detect_outliers(make_update(values));
    CHECK(report.flagged == oracle::outlier_scan(values, 3.0));
  }
}

TEST_CASE("outlier flags are scale covariant") {
  rng::Engine eng(5);
  std::vector<double> values(500);
  for (double& v : values) v = eng.next_gaussian();
  values[100] = 12.0;
  auto base = analysis::detect_outliers(make_update(values));
  for (double& v : values) v *= 37.5;
  auto scaled = analysis::detect_outliers(make_update(values));
  CHECK(base.flagged == scaled.flagged);
}

TEST_CASE("configurable rule: absolute-value statistic and threshold") {
  std::vector<double> values{1.0, 1.0, 1.0, 1.0, -5.0};
  analysis::OutlierRule rule;
  rule.stat = analysis::OutlierRule::Stat::absolute_value;
  rule.k_sigma = 1.5;
  auto report = analysis::detect_outliers(make_update(values), rule);
  REQUIRE(report.flagged.size() == 1);
  CHECK(report.flagged[0] == 4);
}

TEST_CASE("top_outlier_positions resolves tensors and measures overlap") {
  nn::ModelSpec spec{nn::ModelKind::mlp, 4, 4, 2, 2, 0};
  auto model = nn::init_model(spec);

  analysis::LayerOutlierReport a;
  a.layer_id = 0;
  a.flagged = {6, 17};
  a.scores = {5.0, 4.0};
  analysis::LayerOutlierReport b = a;
  b.layer_id = 1;

  auto top = analysis::top_outlier_positions({a, b}, model.hidden_layouts, 10);
  REQUIRE(top.per_layer.size() == 2);
  CHECK(top.per_layer[0][0].tensor == "dense.weight");
  CHECK(top.per_layer[0][0].indices == std::vector<std::size_t>{1, 2});
  CHECK(top.per_layer[0][1].tensor == "dense.bias");
  CHECK(top.per_layer[0][1].indices == std::vector<std::size_t>{1});
  CHECK(top.cross_layer_overlap == 1.0);  // identical reports

  analysis::LayerOutlierReport c;
  c.layer_id = 1;
  c.flagged = {0, 1};
  c.scores = {9.0, 8.0};
  auto disjoint = analysis::top_outlier_positions({a, c}, model.hidden_layouts, 10);
  CHECK(disjoint.cross_layer_overlap == 0.0);
}

TEST_CASE("similarity matrix is symmetric with unit diagonal") {
  subspace::LowDimState s1, s2, s3;
  for (auto* s : {&s1, &s2, &s3}) {
    s->ensemble = 2;
    s->coords.resize(1);
  }
  s1.coords[0] = {{1.0, 0.0}, {0.5, 0.5}};
  s2.coords[0] = {{0.0, 1.0}, {0.5, 0.5}};
  s3.coords[0] = {{-1.0, 0.0}, {-0.5, -0.5}};
  auto sim = analysis::similarity_matrix({s1, s2, s3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(sim.at(i, i) == 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(sim.at(i, j) == sim.at(j, i));
  CHECK(sim.at(0, 2) == doctest::Approx(-1.0));
  CHECK(sim.at(0, 1) == doctest::Approx(0.5));  // mean of 0 and 1
}

TEST_CASE("similarity matrix skips zero vectors") {
  subspace::LowDimState s1, s2;
  s1.ensemble = 2;
  s1.coords = {{{1.0, 0.0}, {0.0, 0.0}}};
  s2.ensemble = 2;
  s2.coords = {{{1.0, 0.0}, {3.0, 0.0}}};
  auto sim = analysis::similarity_matrix({s1, s2});
  CHECK(sim.at(0, 1) == doctest::Approx(1.0));  // only the first pair counts
}

TEST_CASE("disable_and_finetune masks the flagged fraction and reports three runs") {
  auto suite = data::generate_suite(2, 16, 0);
  const auto& task = suite[0];

  analysis::RunPlan plan;
  plan.train.epochs = 6;
  plan.threads = 1;

  // Hand-made reports: flag a handful of indices per layer.
  std::vector<analysis::LayerOutlierReport> reports(plan.depth);
  for (std::size_t l = 0; l < plan.depth; ++l) {
    reports[l].layer_id = l;
    reports[l].flagged = {1, 50, 200};
    reports[l].scores = {5.0, 4.0, 3.5};
  }
  auto res = analysis::disable_and_finetune(task, reports, plan, 1);
  CHECK(res.masked_count == 6);
  const double hidden_total =
      2.0 * (static_cast<double>(plan.hidden_dim) * plan.hidden_dim + plan.hidden_dim);
  CHECK(res.masked_fraction == doctest::Approx(6.0 / hidden_total));
  CHECK(!res.empty_mask);
  CHECK(res.accuracy_full > 0.5);
  CHECK(res.accuracy_outlier_masked > 0.0);
  CHECK(res.accuracy_random_masked > 0.0);

  // No outliers: masked runs degenerate to the full run with a warning flag.
  std::vector<analysis::LayerOutlierReport> empty(plan.depth);
  for (std::size_t l = 0; l < plan.depth; ++l) empty[l].layer_id = l;
  auto noop = analysis::disable_and_finetune(task, empty, plan, 1);
  CHECK(noop.empty_mask);
  CHECK(noop.accuracy_outlier_masked == noop.accuracy_full);
}

TEST_CASE("transfer matrix has a zero diagonal and is deterministic") {
  auto suite = data::generate_suite(3, 16, 11);
  std::vector<std::uint64_t> seeds{1};

  analysis::RunPlan plan;
  plan.train.epochs = 6;
  plan.subspace.base.epochs = 6;
  plan.threads = 2;

  std::vector<std::vector<subspace::SubspaceBasis>> bases(suite.size());
  for (std::size_t k = 0; k < suite.size(); ++k) {
    for (std::uint64_t s : seeds) {
      auto model = nn::init_model(plan.model_spec(suite[k], s));
      train::TrainConfig cfg = plan.train;
      cfg.seed = s;
      auto run = train::train_full(model, suite[k].train, suite[k].val, cfg,
                                   suite[k].spec.task_id);
      bases[k].push_back(subspace::extract_basis(run.trajectory, 6));
    }
  }

  auto a = analysis::transfer_matrix(suite, bases, plan, seeds);
  auto b = analysis::transfer_matrix(suite, bases, plan, seeds);
  CHECK(a.drops.data == b.drops.data);
  for (std::size_t i = 0; i < suite.size(); ++i) CHECK(a.drops.at(i, i) == 0.0);
  CHECK(a.tasks.size() == 3);
  CHECK(a.random_drop.size() == 3);
}

TEST_CASE("dim ablation trains per requested dimension") {
  auto suite = data::generate_suite(2, 16, 13);
  std::vector<std::uint64_t> seeds{1};

  analysis::RunPlan plan;
  plan.train.epochs = 8;
  plan.subspace.base.epochs = 8;
  plan.threads = 2;

  std::vector<std::vector<train::Trajectory>> trajs(suite.size());
  for (std::size_t k = 0; k < suite.size(); ++k) {
    auto model = nn::init_model(plan.model_spec(suite[k], 1));
    train::TrainConfig cfg = plan.train;
    cfg.seed = 1;
    trajs[k].push_back(
        train::train_full(model, suite[k].train, suite[k].val, cfg,
                          suite[k].spec.task_id)
            .trajectory);
  }
  auto table = analysis::dim_ablation(suite, trajs, {2, 4, 8}, plan, seeds);
  CHECK(table.accuracy.rows == 2);
  CHECK(table.accuracy.cols == 3);
  for (double v : table.accuracy.data) CHECK(v > 0.2);
}
