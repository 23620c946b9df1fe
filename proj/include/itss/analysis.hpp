#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "itss/data.hpp"
#include "itss/linalg.hpp"
#include "itss/nn.hpp"
#include "itss/subspace.hpp"
#include "itss/train.hpp"

namespace itss::analysis {

// The materialized full-space update V * mean(theta^t) of one layer.
struct UpdateVector {
  std::size_t layer_id = 0;
  std::vector<double> values;
};

std::vector<UpdateVector> update_vector(const subspace::SubspaceBasis& basis,
                                        const subspace::LowDimState& state);

struct OutlierRule {
  double k_sigma = 3.0;
  enum class Stat { deviation_from_mean, absolute_value } stat =
      Stat::deviation_from_mean;
};

struct LayerOutlierReport {
  std::size_t layer_id = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::vector<std::size_t> flagged;  // ascending indices
  std::vector<double> scores;        // |u_i - mu| / sigma, aligned with flagged
  std::optional<std::size_t> top_index;
};

// Flags indices deviating at least k_sigma standard deviations from the
// layer mean; a constant layer (sigma = 0) flags nothing.
LayerOutlierReport detect_outliers(const UpdateVector& u, const OutlierRule& rule = {});

struct OutlierPosition {
  std::size_t layer_id = 0;
  std::size_t flat_index = 0;
  std::string tensor;
  std::vector<std::size_t> indices;
  double score = 0.0;
};

struct TopPositions {
  std::vector<std::vector<OutlierPosition>> per_layer;
  double cross_layer_overlap = 0.0;  // mean pairwise Jaccard of flat index sets
};

TopPositions top_outlier_positions(const std::vector<LayerOutlierReport>& reports,
                                   const std::vector<nn::LayerLayout>& layouts,
                                   std::size_t top_k = 10);

// Model/training recipe shared by the experiment-style analyses. num_classes
// is taken from each task; the model seed doubles as the run seed.
struct RunPlan {
  nn::ModelKind kind = nn::ModelKind::mlp;
  std::size_t hidden_dim = 24;
  std::size_t depth = 2;
  train::TrainConfig train;
  subspace::SubspaceTrainConfig subspace;
  std::map<std::string, std::size_t> task_epochs;  // per-task override
  std::size_t threads = 0;  // 0: hardware concurrency

  nn::ModelSpec model_spec(const data::Task& task, std::uint64_t seed) const;
  std::size_t epochs_for(const std::string& task_id, std::size_t fallback) const;
};

// Three full-space fine-tuning runs from theta_0: untouched, with the
// outlier mask applied, and with an equal-count random mask. Masks stay
// frozen at zero throughout.
struct DisableResult {
  double accuracy_full = 0.0;
  double accuracy_outlier_masked = 0.0;
  double accuracy_random_masked = 0.0;
  std::size_t masked_count = 0;
  double masked_fraction = 0.0;  // of hidden parameters
  bool empty_mask = false;       // no outliers found; masked runs are no-ops
};

DisableResult disable_and_finetune(const data::Task& task,
                                   const std::vector<LayerOutlierReport>& reports,
                                   const RunPlan& plan, std::uint64_t seed);

// Performance-drop matrix of transferred subspaces: entry (source, target)
// is the transductive accuracy of the target minus its accuracy when trained
// in the source's basis; the diagonal is zero by definition. A random-basis
// drop per target is included as the baseline column.
struct TransferMatrix {
  std::vector<std::string> tasks;
  linalg::Matrix drops;                  // T x T, seed-averaged
  std::vector<double> random_drop;       // per target
  std::vector<double> row_average;       // per source, off-diagonal mean
  double mean_transferred_accuracy = 0.0;  // off-diagonal cells
  double mean_random_accuracy = 0.0;       // random baseline, same targets
};

TransferMatrix transfer_matrix(
    const std::vector<data::Task>& suite,
    const std::vector<std::vector<subspace::SubspaceBasis>>& bases_by_source,  // [task][seed]
    const RunPlan& plan, const std::vector<std::uint64_t>& seeds);

// Mean cosine similarity between the coordinate vectors of two tasks in a
// shared basis, averaged over layers and matched ensemble members. Zero
// vectors are skipped; the diagonal is 1 by definition.
linalg::Matrix similarity_matrix(const std::vector<subspace::LowDimState>& states);

struct AblationTable {
  std::vector<std::size_t> dims;
  std::vector<std::string> tasks;
  linalg::Matrix accuracy;  // tasks x dims, seed-averaged
};

AblationTable dim_ablation(
    const std::vector<data::Task>& suite,
    const std::vector<std::vector<train::Trajectory>>& trajectories,  // [task][seed]
    const std::vector<std::size_t>& dims, const RunPlan& plan,
    const std::vector<std::uint64_t>& seeds);

}  // namespace itss::analysis
