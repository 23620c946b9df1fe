#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "itss/data.hpp"
#include "itss/linalg.hpp"
#include "itss/nn.hpp"
#include "itss/train.hpp"

namespace itss::subspace {

enum class BasisKind { intrinsic, random, unified, zero_shot };

std::string to_string(BasisKind kind);
BasisKind basis_kind_from_string(std::string_view s);

struct BasisSource {
  BasisKind kind = BasisKind::intrinsic;
  std::string task_id;             // intrinsic: source task; zero_shot: excluded task
  std::uint64_t seed = 0;          // random bases
  std::vector<std::string> tasks;  // unified / zero_shot: included tasks
};

// Per-layer orthonormal direction matrices anchored at the shared origin.
struct SubspaceBasis {
  std::vector<nn::LayerLayout> layouts;
  std::vector<linalg::Matrix> directions;          // D_layer x d_layer
  std::vector<std::vector<double>> singular_values;  // per layer
  std::vector<std::vector<double>> origin;           // theta_0 per layer
  BasisSource source;
  std::size_t dim = 0;  // nominal subspace dimension
};

// Ensemble of low-dimensional coordinate vectors, one list per layer.
struct LowDimState {
  std::size_t ensemble = 16;  // h
  std::vector<std::vector<std::vector<double>>> coords;  // [layer][member][d]
};

// Principal directions of the fine-tuning trajectory: per layer, stack the
// checkpoint deltas theta_i - theta_0 into a t x D matrix, take the compact
// SVD and keep the top-dim right singular vectors. Throws RankDeficientError
// (carrying the achievable rank) when dim exceeds the numerical rank.
SubspaceBasis extract_basis(const train::Trajectory& traj, std::size_t dim);

// Random orthonormal basis per layer (per-layer derived seed), same origin.
SubspaceBasis random_basis(const std::vector<nn::LayerLayout>& layouts,
                           const std::vector<std::vector<double>>& origin,
                           std::size_t dim, std::uint64_t seed);

// One delta per task (final checkpoint minus the shared origin), all rank
// directions kept. Excluding a task gives its zero-shot variant. dim_cap
// of 0 keeps everything.
SubspaceBasis unified_basis(const std::vector<const train::Trajectory*>& trajectories,
                            std::size_t dim_cap = 0,
                            const std::optional<std::string>& exclude = std::nullopt);

// Gaussian(0, 1e-3) coordinates, one substream per (layer, member).
LowDimState init_state(const SubspaceBasis& basis, std::size_t ensemble,
                       std::uint64_t seed);

// theta_0 + V * mean_i theta^{t(i)}, per layer.
std::vector<std::vector<double>> reparameterize(const SubspaceBasis& basis,
                                                const LowDimState& state);

// (1/h) V^T g: the exact loss gradient of each ensemble member.
std::vector<double> lowdim_gradient(const linalg::Matrix& directions,
                                    std::span<const double> full_gradient,
                                    std::size_t ensemble);

// Optimizer for the low-dimensional coordinates. Every ensemble member sees
// the same gradient, so updates are shared. Plain SGD makes the ensemble
// mean mathematically identical to single-vector training; Adam (the
// default) is scale-free and trains the coordinates at a useful pace.
enum class LowDimOptimizer { sgd, adam };

std::string to_string(LowDimOptimizer opt);
LowDimOptimizer lowdim_optimizer_from_string(std::string_view s);

struct SubspaceTrainConfig {
  train::TrainConfig base;    // epochs, batching, embed/readout optimizer
  double lowdim_lr = 0.01;
  LowDimOptimizer lowdim_optimizer = LowDimOptimizer::adam;
  std::size_t ensemble = 16;  // h
};

struct SubspaceTrainResult {
  std::vector<train::EpochMetrics> history;
  nn::Model model;  // final, hidden layers materialized
  LowDimState state;
};

// Re-parameterized training: hidden layers follow theta_0 + V mean(theta^t)
// exactly at every step; embedding and readout keep their full-space
// optimizer. initial_state overrides the seeded Gaussian initialization.
SubspaceTrainResult train_in_subspace(nn::Model model, const SubspaceBasis& basis,
                                      const data::Dataset& train_set,
                                      const data::Dataset& val_set,
                                      const SubspaceTrainConfig& cfg,
                                      std::optional<LowDimState> initial_state = {});

}  // namespace itss::subspace
