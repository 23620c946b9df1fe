#include "itss/subspace.hpp"

#include <algorithm>
#include <cmath>

#include "itss/errors.hpp"
#include "itss/rng.hpp"

namespace itss::subspace {

namespace {

constexpr double kStateInitStd = 1e-3;
constexpr std::uint64_t kStateStream = 0x74A0;  // keeps clear of epoch streams

void check_state_shapes(const SubspaceBasis& basis, const LowDimState& state) {
  if (state.coords.size() != basis.directions.size())
    throw ShapeError("low-dim state layer count does not match basis");
  for (std::size_t l = 0; l < state.coords.size(); ++l) {
    if (state.coords[l].size() != state.ensemble)
      throw ShapeError("low-dim state ensemble count mismatch at layer " +
                       std::to_string(l));
    for (const auto& member : state.coords[l])
      if (member.size() != basis.directions[l].cols)
        throw ShapeError("low-dim coordinate length mismatch at layer " +
                         std::to_string(l));
  }
}

std::vector<double> mean_coords(const LowDimState& state, std::size_t layer) {
  const auto& members = state.coords[layer];
  std::vector<double> mean(members.empty() ? 0 : members[0].size(), 0.0);
  for (const auto& member : members)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += member[i];
  const double inv_h = 1.0 / static_cast<double>(members.size());
  for (double& v : mean) v *= inv_h;
  return mean;
}

}  // namespace

std::string to_string(LowDimOptimizer opt) {
  return opt == LowDimOptimizer::adam ? "adam" : "sgd";
}

LowDimOptimizer lowdim_optimizer_from_string(std::string_view s) {
  if (s == "adam") return LowDimOptimizer::adam;
  if (s == "sgd") return LowDimOptimizer::sgd;
  throw InvalidInputError("unknown low-dim optimizer '" + std::string(s) + "'");
}

std::string to_string(BasisKind kind) {
  switch (kind) {
    case BasisKind::intrinsic: return "intrinsic";
    case BasisKind::random: return "random";
    case BasisKind::unified: return "unified";
    case BasisKind::zero_shot: return "zero_shot";
  }
  return "intrinsic";
}

BasisKind basis_kind_from_string(std::string_view s) {
  if (s == "intrinsic") return BasisKind::intrinsic;
  if (s == "random") return BasisKind::random;
  if (s == "unified") return BasisKind::unified;
  if (s == "zero_shot") return BasisKind::zero_shot;
  throw InvalidInputError("unknown basis kind '" + std::string(s) + "'");
}

SubspaceBasis extract_basis(const train::Trajectory& traj, std::size_t dim) {
  if (traj.length() == 0) throw InvalidInputError("extract_basis: empty trajectory");
  if (dim < 1) throw InvalidInputError("extract_basis: dim must be >= 1");
  if (dim > traj.length())
    throw RankDeficientError("extract_basis: dim " + std::to_string(dim) +
                                 " exceeds trajectory length " +
                                 std::to_string(traj.length()),
                             traj.length());

  SubspaceBasis basis;
  basis.layouts = traj.layouts;
  basis.origin = traj.origin;
  basis.source = {BasisKind::intrinsic, traj.task_id, 0, {}};
  basis.dim = dim;

  const std::size_t t = traj.length();
  for (std::size_t l = 0; l < traj.origin.size(); ++l) {
    const std::size_t d_layer = traj.origin[l].size();
    linalg::Matrix w(t, d_layer);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d_layer; ++j)
        w.at(i, j) = traj.checkpoints[i][l][j] - traj.origin[l][j];

    auto svd = linalg::compact_svd(w);
    if (svd.rank() < dim)
      throw RankDeficientError(
          "extract_basis: layer " + std::to_string(l) + " of task '" + traj.task_id +
              "' has numerical rank " + std::to_string(svd.rank()) +
              ", cannot provide dim " + std::to_string(dim),
          svd.rank());

    linalg::Matrix v(d_layer, dim);
    for (std::size_t i = 0; i < d_layer; ++i)
      for (std::size_t j = 0; j < dim; ++j) v.at(i, j) = svd.right.at(i, j);
    basis.directions.push_back(std::move(v));
    basis.singular_values.emplace_back(svd.singular_values.begin(),
                                       svd.singular_values.begin() + dim);
  }
  return basis;
}

SubspaceBasis random_basis(const std::vector<nn::LayerLayout>& layouts,
                           const std::vector<std::vector<double>>& origin,
                           std::size_t dim, std::uint64_t seed) {
  if (layouts.size() != origin.size())
    throw ShapeError("random_basis: layouts and origin disagree");
  SubspaceBasis basis;
  basis.layouts = layouts;
  basis.origin = origin;
  basis.source = {BasisKind::random, "", seed, {}};
  basis.dim = dim;
  for (std::size_t l = 0; l < layouts.size(); ++l) {
    const std::size_t d_layer = origin[l].size();
    if (d_layer != layouts[l].total_len())
      throw ShapeError("random_basis: origin length mismatch at layer " +
                       std::to_string(l));
    basis.directions.push_back(
        linalg::orthonormal_random(d_layer, dim, rng::derive(seed, l)));
    basis.singular_values.emplace_back(dim, 0.0);
  }
  return basis;
}

SubspaceBasis unified_basis(const std::vector<const train::Trajectory*>& trajectories,
                            std::size_t dim_cap,
                            const std::optional<std::string>& exclude) {
  std::vector<const train::Trajectory*> included;
  for (const auto* traj : trajectories) {
    if (traj == nullptr) throw InvalidInputError("unified_basis: null trajectory");
    if (exclude && traj->task_id == *exclude) continue;
    included.push_back(traj);
  }
  if (included.size() < 2)
    throw InvalidInputError("unified_basis: need at least 2 included trajectories");

  const train::Trajectory& first = *included.front();
  for (const auto* traj : included) {
    if (traj->layouts != first.layouts)
      throw ShapeError("unified_basis: trajectory layouts differ across tasks");
    if (traj->origin != first.origin)
      throw InvalidInputError("unified_basis: trajectories do not share the origin");
    if (traj->length() == 0)
      throw InvalidInputError("unified_basis: empty trajectory for task '" +
                              traj->task_id + "'");
  }

  SubspaceBasis basis;
  basis.layouts = first.layouts;
  basis.origin = first.origin;
  basis.source.kind = exclude ? BasisKind::zero_shot : BasisKind::unified;
  basis.source.task_id = exclude.value_or("");
  for (const auto* traj : included) basis.source.tasks.push_back(traj->task_id);

  std::size_t dim = 0;
  for (std::size_t l = 0; l < first.origin.size(); ++l) {
    const std::size_t d_layer = first.origin[l].size();
    linalg::Matrix w(included.size(), d_layer);
    for (std::size_t i = 0; i < included.size(); ++i) {
      const auto& final_cp = included[i]->checkpoints.back()[l];
      for (std::size_t j = 0; j < d_layer; ++j)
        w.at(i, j) = final_cp[j] - first.origin[l][j];
    }
    auto svd = linalg::compact_svd(w);
    std::size_t keep = svd.rank();
    if (dim_cap > 0) keep = std::min(keep, dim_cap);
    linalg::Matrix v(d_layer, keep);
    for (std::size_t i = 0; i < d_layer; ++i)
      for (std::size_t j = 0; j < keep; ++j) v.at(i, j) = svd.right.at(i, j);
    basis.directions.push_back(std::move(v));
    basis.singular_values.emplace_back(svd.singular_values.begin(),
                                       svd.singular_values.begin() + keep);
    dim = std::max(dim, keep);
  }
  basis.dim = dim;
  return basis;
}

LowDimState init_state(const SubspaceBasis& basis, std::size_t ensemble,
                       std::uint64_t seed) {
  if (ensemble < 1) throw InvalidInputError("init_state: ensemble must be >= 1");
  LowDimState state;
  state.ensemble = ensemble;
  state.coords.resize(basis.directions.size());
  for (std::size_t l = 0; l < basis.directions.size(); ++l) {
    state.coords[l].resize(ensemble);
    for (std::size_t i = 0; i < ensemble; ++i) {
      rng::Engine eng(rng::derive(seed, kStateStream + l, i));
      auto& member = state.coords[l][i];
      member.resize(basis.directions[l].cols);
      for (double& v : member) v = kStateInitStd * eng.next_gaussian();
    }
  }
  return state;
}

std::vector<std::vector<double>> reparameterize(const SubspaceBasis& basis,
                                                const LowDimState& state) {
  check_state_shapes(basis, state);
  std::vector<std::vector<double>> params(basis.origin.size());
  for (std::size_t l = 0; l < basis.origin.size(); ++l) {
    params[l] = basis.origin[l];
    if (basis.directions[l].cols == 0) continue;
    const auto mean = mean_coords(state, l);
    std::vector<double> update(params[l].size(), 0.0);
    linalg::matvec(basis.directions[l], mean, update);
    for (std::size_t i = 0; i < params[l].size(); ++i) params[l][i] += update[i];
  }
  return params;
}

std::vector<double> lowdim_gradient(const linalg::Matrix& directions,
                                    std::span<const double> full_gradient,
                                    std::size_t ensemble) {
  if (ensemble < 1) throw InvalidInputError("lowdim_gradient: ensemble must be >= 1");
  if (full_gradient.size() != directions.rows)
    throw ShapeError("lowdim_gradient: gradient length mismatch");
  std::vector<double> g(directions.cols, 0.0);
  linalg::matvec_transposed(directions, full_gradient, g);
  const double inv_h = 1.0 / static_cast<double>(ensemble);
  for (double& v : g) v *= inv_h;
  return g;
}

SubspaceTrainResult train_in_subspace(nn::Model model, const SubspaceBasis& basis,
                                      const data::Dataset& train_set,
                                      const data::Dataset& val_set,
                                      const SubspaceTrainConfig& cfg,
                                      std::optional<LowDimState> initial_state) {
  cfg.base.validate();
  if (cfg.lowdim_lr < 0.0)
    throw InvalidInputError("train_in_subspace: lowdim_lr must be >= 0");
  if (basis.layouts != model.hidden_layouts)
    throw ShapeError("train_in_subspace: basis layouts do not match the model");
  if (basis.origin != model.hidden)
    throw InvalidInputError(
        "train_in_subspace: basis origin differs from the model's hidden-layer "
        "initialization");

  SubspaceTrainResult res;
  res.state = initial_state ? std::move(*initial_state)
                            : init_state(basis, cfg.ensemble, cfg.base.seed);
  check_state_shapes(basis, res.state);

  train::BlockOptimizer embed_opt(cfg.base.optimizer, cfg.base.base_lr,
                                  model.embed.size());
  train::BlockOptimizer readout_opt(cfg.base.optimizer, cfg.base.base_lr,
                                    model.readout.size());
  // One coordinate optimizer per layer, shared across members: the members
  // all receive the identical gradient (1/h) V^T g every step. Plain SGD
  // needs no state and is applied directly below.
  std::vector<train::BlockOptimizer> coord_opt;
  if (cfg.lowdim_optimizer == LowDimOptimizer::adam)
    for (const auto& v : basis.directions)
      coord_opt.emplace_back(train::OptimizerKind::adam, cfg.lowdim_lr, v.cols);

  model.hidden = reparameterize(basis, res.state);
  std::vector<double> shared_update;
  for (std::size_t epoch = 1; epoch <= cfg.base.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    for (const auto& batch : data::batches(train_set, cfg.base.batch_size,
                                           rng::derive(cfg.base.seed, epoch))) {
      auto back = nn::backward(model, batch);
      if (!std::isfinite(back.loss) || back.loss > 1e6)
        throw DivergenceError("subspace training diverged at epoch " +
                              std::to_string(epoch));
      embed_opt.step(model.embed, back.grads.embed);
      readout_opt.step(model.readout, back.grads.readout);
      for (std::size_t l = 0; l < model.hidden.size(); ++l) {
        if (basis.directions[l].cols == 0) continue;
        const auto g =
            lowdim_gradient(basis.directions[l], back.grads.hidden[l], res.state.ensemble);
        if (cfg.lowdim_optimizer == LowDimOptimizer::sgd) {
          for (auto& member : res.state.coords[l])
            for (std::size_t i = 0; i < g.size(); ++i)
              member[i] -= cfg.lowdim_lr * g[i];
        } else {
          shared_update.assign(g.size(), 0.0);
          coord_opt[l].step(shared_update, g);  // update relative to zero
          for (auto& member : res.state.coords[l])
            for (std::size_t i = 0; i < g.size(); ++i)
              member[i] += shared_update[i];
        }
      }
      model.hidden = reparameterize(basis, res.state);
      loss_sum += back.loss;
      ++batch_count;
    }
    auto val = train::evaluate(model, val_set);
    res.history.push_back({epoch, loss_sum / static_cast<double>(batch_count),
                           val.mean_loss, val.accuracy});
  }
  res.model = std::move(model);
  return res;
}

}  // namespace itss::subspace
