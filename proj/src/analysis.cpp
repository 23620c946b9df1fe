#include "itss/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "itss/errors.hpp"
#include "itss/parallel.hpp"
#include "itss/rng.hpp"

namespace itss::analysis {

namespace {

constexpr std::uint64_t kMaskStream = 0x3A5C;

std::vector<double> layer_mean_coords(const subspace::LowDimState& state,
                                      std::size_t layer) {
  const auto& members = state.coords[layer];
  std::vector<double> mean(members.empty() ? 0 : members[0].size(), 0.0);
  for (const auto& member : members)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += member[i];
  for (double& v : mean) v /= static_cast<double>(members.size());
  return mean;
}

nn::Mask outlier_mask(const nn::Model& model,
                      const std::vector<LayerOutlierReport>& reports) {
  if (reports.size() != model.hidden.size())
    throw ShapeError("outlier mask: report count does not match model layers");
  nn::Mask mask;
  mask.hidden.resize(model.hidden.size());
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    mask.hidden[l].assign(model.hidden[l].size(), 0);
    for (std::size_t idx : reports[l].flagged) {
      if (idx >= mask.hidden[l].size())
        throw ShapeError("outlier mask: flagged index out of range");
      mask.hidden[l][idx] = 1;
    }
  }
  return mask;
}

nn::Mask random_mask_like(const nn::Mask& reference, std::uint64_t seed) {
  nn::Mask mask;
  mask.hidden.resize(reference.hidden.size());
  for (std::size_t l = 0; l < reference.hidden.size(); ++l) {
    const std::size_t len = reference.hidden[l].size();
    std::size_t want = 0;
    for (std::uint8_t b : reference.hidden[l]) want += b ? 1 : 0;
    mask.hidden[l].assign(len, 0);
    rng::Engine eng(rng::derive(seed, kMaskStream, l));
    // Partial Fisher-Yates over the index range: exactly `want` draws.
    std::vector<std::size_t> pool(len);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(eng.next_index(len - i));
      std::swap(pool[i], pool[j]);
      mask.hidden[l][pool[i]] = 1;
    }
  }
  return mask;
}

}  // namespace

std::vector<UpdateVector> update_vector(const subspace::SubspaceBasis& basis,
                                        const subspace::LowDimState& state) {
  if (state.coords.size() != basis.directions.size())
    throw ShapeError("update_vector: state does not match basis");
  std::vector<UpdateVector> out(basis.directions.size());
  for (std::size_t l = 0; l < basis.directions.size(); ++l) {
    out[l].layer_id = basis.layouts[l].layer_id;
    out[l].values.assign(basis.directions[l].rows, 0.0);
    if (basis.directions[l].cols == 0) continue;
    const auto mean = layer_mean_coords(state, l);
    if (mean.size() != basis.directions[l].cols)
      throw ShapeError("update_vector: coordinate length mismatch");
    linalg::matvec(basis.directions[l], mean, out[l].values);
  }
  return out;
}

LayerOutlierReport detect_outliers(const UpdateVector& u, const OutlierRule& rule) {
  if (u.values.size() < 2)
    throw InvalidInputError("detect_outliers: need at least 2 entries");
  LayerOutlierReport report;
  report.layer_id = u.layer_id;

  const double n = static_cast<double>(u.values.size());
  double mu = 0.0;
  if (rule.stat == OutlierRule::Stat::deviation_from_mean) {
    for (double v : u.values) mu += v;
    mu /= n;
  }
  double var = 0.0;
  for (double v : u.values) var += (v - mu) * (v - mu);
  var /= n;  // population
  const double sigma = std::sqrt(var);
  report.mean = mu;
  report.stddev = sigma;
  if (sigma == 0.0) return report;  // constant vector: nothing to flag

  double best_score = -1.0;
  std::size_t best_index = 0;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    const double score = std::fabs(u.values[i] - mu) / sigma;
    if (score > best_score) {
      best_score = score;
      best_index = i;
    }
    if (score >= rule.k_sigma) {
      report.flagged.push_back(i);
      report.scores.push_back(score);
    }
  }
  report.top_index = best_index;
  return report;
}

TopPositions top_outlier_positions(const std::vector<LayerOutlierReport>& reports,
                                   const std::vector<nn::LayerLayout>& layouts,
                                   std::size_t top_k) {
  if (reports.size() != layouts.size())
    throw ShapeError("top_outlier_positions: reports and layouts disagree");

  TopPositions out;
  out.per_layer.resize(reports.size());
  std::vector<std::set<std::size_t>> kept(reports.size());
  for (std::size_t l = 0; l < reports.size(); ++l) {
    std::vector<std::size_t> order(reports[l].flagged.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return reports[l].scores[a] > reports[l].scores[b];
    });
    const std::size_t take = std::min(top_k, order.size());
    for (std::size_t r = 0; r < take; ++r) {
      const std::size_t flat = reports[l].flagged[order[r]];
      auto resolved = layouts[l].resolve(flat);
      OutlierPosition pos;
      pos.layer_id = reports[l].layer_id;
      pos.flat_index = flat;
      pos.tensor = layouts[l].tensors[resolved.tensor].name;
      pos.indices = std::move(resolved.indices);
      pos.score = reports[l].scores[order[r]];
      out.per_layer[l].push_back(std::move(pos));
      kept[l].insert(flat);
    }
  }

  // Mean pairwise Jaccard of the kept flat-index sets.
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < kept.size(); ++a) {
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      std::size_t inter = 0;
      for (std::size_t idx : kept[a]) inter += kept[b].count(idx);
      const std::size_t uni = kept[a].size() + kept[b].size() - inter;
      total += uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      ++pairs;
    }
  }
  out.cross_layer_overlap = pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
  return out;
}

nn::ModelSpec RunPlan::model_spec(const data::Task& task, std::uint64_t seed) const {
  nn::ModelSpec spec;
  spec.kind = kind;
  spec.input_dim = task.spec.input_dim;
  spec.hidden_dim = hidden_dim;
  spec.depth = depth;
  spec.num_classes = task.spec.num_classes;
  spec.seed = seed;
  return spec;
}

std::size_t RunPlan::epochs_for(const std::string& task_id, std::size_t fallback) const {
  auto it = task_epochs.find(task_id);
  return it == task_epochs.end() ? fallback : it->second;
}

DisableResult disable_and_finetune(const data::Task& task,
                                   const std::vector<LayerOutlierReport>& reports,
                                   const RunPlan& plan, std::uint64_t seed) {
  auto model = nn::init_model(plan.model_spec(task, seed));
  train::TrainConfig cfg = plan.train;
  cfg.epochs = plan.epochs_for(task.spec.task_id, cfg.epochs);
  cfg.seed = seed;

  DisableResult res;
  const auto mask = outlier_mask(model, reports);
  res.masked_count = mask.count();
  std::size_t total = 0;
  for (const auto& layer : model.hidden) total += layer.size();
  res.masked_fraction = static_cast<double>(res.masked_count) / static_cast<double>(total);

  auto full = train::train_full(model, task.train, task.val, cfg, task.spec.task_id);
  res.accuracy_full = full.history.back().val_accuracy;

  if (res.masked_count == 0) {
    res.empty_mask = true;
    res.accuracy_outlier_masked = res.accuracy_full;
    res.accuracy_random_masked = res.accuracy_full;
    return res;
  }

  auto masked_model = model;
  nn::apply_mask(masked_model, mask);
  auto masked_run =
      train::train_full(masked_model, task.train, task.val, cfg, task.spec.task_id);
  res.accuracy_outlier_masked = masked_run.history.back().val_accuracy;

  auto random_model = model;
  nn::apply_mask(random_model, random_mask_like(mask, seed));
  auto random_run =
      train::train_full(random_model, task.train, task.val, cfg, task.spec.task_id);
  res.accuracy_random_masked = random_run.history.back().val_accuracy;
  return res;
}

TransferMatrix transfer_matrix(
    const std::vector<data::Task>& suite,
    const std::vector<std::vector<subspace::SubspaceBasis>>& bases_by_source,
    const RunPlan& plan, const std::vector<std::uint64_t>& seeds) {
  const std::size_t t = suite.size();
  if (bases_by_source.size() != t)
    throw ShapeError("transfer_matrix: bases do not cover the suite");
  for (const auto& per_seed : bases_by_source)
    if (per_seed.size() != seeds.size())
      throw ShapeError("transfer_matrix: bases do not cover all seeds");

  TransferMatrix out;
  out.tasks.reserve(t);
  for (const auto& task : suite) out.tasks.push_back(task.spec.task_id);
  out.drops = linalg::Matrix(t, t);
  out.random_drop.assign(t, 0.0);
  out.row_average.assign(t, 0.0);

  auto subspace_accuracy = [&](const data::Task& task,
                               const subspace::SubspaceBasis& basis,
                               std::uint64_t seed) {
    auto model = nn::init_model(plan.model_spec(task, seed));
    subspace::SubspaceTrainConfig cfg = plan.subspace;
    cfg.base.seed = seed;
    auto run = subspace::train_in_subspace(model, basis, task.train, task.val, cfg);
    return run.history.back().val_accuracy;
  };

  // One work item per (target, seed): the reference run plus a run per
  // foreign source and the random baseline.
  struct Cell {
    std::vector<double> transferred;  // accuracy per source (self = reference)
    double reference = 0.0;
    double random_accuracy = 0.0;
  };
  std::vector<Cell> cells(t * seeds.size());
  parallel_for(cells.size(), plan.threads, [&](std::size_t item) {
    const std::size_t target = item / seeds.size();
    const std::size_t si = item % seeds.size();
    const std::uint64_t seed = seeds[si];
    const auto& task = suite[target];

    const auto& own_basis = bases_by_source[target][si];
    Cell cell;
    cell.reference = subspace_accuracy(task, own_basis, seed);
    cell.transferred.assign(t, 0.0);
    cell.transferred[target] = cell.reference;
    for (std::size_t source = 0; source < t; ++source) {
      if (source == target) continue;
      cell.transferred[source] =
          subspace_accuracy(task, bases_by_source[source][si], seed);
    }
    auto model = nn::init_model(plan.model_spec(task, seed));
    const auto random = subspace::random_basis(
        model.hidden_layouts, model.hidden, own_basis.dim, rng::derive(seed, 0xBA5E, target));
    cell.random_accuracy = subspace_accuracy(task, random, seed);
    cells[item] = std::move(cell);
  });

  const double inv_seeds = 1.0 / static_cast<double>(seeds.size());
  double transferred_sum = 0.0, random_sum = 0.0;
  std::size_t off_diagonal = 0, random_cells = 0;
  for (std::size_t target = 0; target < t; ++target) {
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const auto& cell = cells[target * seeds.size() + si];
      for (std::size_t source = 0; source < t; ++source) {
        if (source == target) continue;  // diagonal stays exactly zero
        out.drops.at(source, target) +=
            (cell.reference - cell.transferred[source]) * inv_seeds;
        transferred_sum += cell.transferred[source];
        ++off_diagonal;
      }
      out.random_drop[target] += (cell.reference - cell.random_accuracy) * inv_seeds;
      random_sum += cell.random_accuracy;
      ++random_cells;
    }
  }
  out.mean_transferred_accuracy = transferred_sum / static_cast<double>(off_diagonal);
  out.mean_random_accuracy = random_sum / static_cast<double>(random_cells);
  for (std::size_t source = 0; source < t; ++source) {
    double sum = 0.0;
    for (std::size_t target = 0; target < t; ++target)
      if (target != source) sum += out.drops.at(source, target);
    out.row_average[source] = sum / static_cast<double>(t - 1);
  }
  return out;
}

linalg::Matrix similarity_matrix(const std::vector<subspace::LowDimState>& states) {
  const std::size_t t = states.size();
  if (t == 0) throw InvalidInputError("similarity_matrix: no states");
  for (const auto& s : states)
    if (s.coords.size() != states[0].coords.size())
      throw ShapeError("similarity_matrix: states have different layer counts");

  linalg::Matrix sim(t, t);
  for (std::size_t a = 0; a < t; ++a) sim.at(a, a) = 1.0;
  for (std::size_t a = 0; a < t; ++a) {
    for (std::size_t b = a + 1; b < t; ++b) {
      double total = 0.0;
      std::size_t counted = 0;
      for (std::size_t l = 0; l < states[a].coords.size(); ++l) {
        const std::size_t members =
            std::min(states[a].coords[l].size(), states[b].coords[l].size());
        for (std::size_t i = 0; i < members; ++i) {
          const auto& va = states[a].coords[l][i];
          const auto& vb = states[b].coords[l][i];
          if (va.size() != vb.size())
            throw ShapeError("similarity_matrix: coordinate lengths differ");
          if (linalg::norm(va) == 0.0 || linalg::norm(vb) == 0.0) continue;  // skip
          total += linalg::cosine(va, vb);
          ++counted;
        }
      }
      const double value = counted == 0 ? 0.0 : total / static_cast<double>(counted);
      sim.at(a, b) = value;
      sim.at(b, a) = value;
    }
  }
  return sim;
}

AblationTable dim_ablation(
    const std::vector<data::Task>& suite,
    const std::vector<std::vector<train::Trajectory>>& trajectories,
    const std::vector<std::size_t>& dims, const RunPlan& plan,
    const std::vector<std::uint64_t>& seeds) {
  if (trajectories.size() != suite.size())
    throw ShapeError("dim_ablation: trajectories do not cover the suite");

  AblationTable table;
  table.dims = dims;
  for (const auto& task : suite) table.tasks.push_back(task.spec.task_id);
  table.accuracy = linalg::Matrix(suite.size(), dims.size());

  struct Item {
    std::size_t task, dim_idx, seed_idx;
  };
  std::vector<Item> items;
  for (std::size_t k = 0; k < suite.size(); ++k)
    for (std::size_t d = 0; d < dims.size(); ++d)
      for (std::size_t s = 0; s < seeds.size(); ++s) items.push_back({k, d, s});

  std::vector<double> acc(items.size(), 0.0);
  parallel_for(items.size(), plan.threads, [&](std::size_t i) {
    const auto [k, d, s] = items[i];
    const auto& task = suite[k];
    auto basis = subspace::extract_basis(trajectories[k][s], dims[d]);
    auto model = nn::init_model(plan.model_spec(task, seeds[s]));
    subspace::SubspaceTrainConfig cfg = plan.subspace;
    cfg.base.seed = seeds[s];
    auto run = subspace::train_in_subspace(model, basis, task.train, task.val, cfg);
    acc[i] = run.history.back().val_accuracy;
  });

  const double inv_seeds = 1.0 / static_cast<double>(seeds.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    table.accuracy.at(items[i].task, items[i].dim_idx) += acc[i] * inv_seeds;
  return table;
}

}  // namespace itss::analysis
