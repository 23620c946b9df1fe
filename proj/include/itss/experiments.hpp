#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "itss/analysis.hpp"
#include "itss/config.hpp"
#include "itss/data.hpp"
#include "itss/subspace.hpp"
#include "itss/train.hpp"

namespace itss::harness {

struct TransductiveResult {
  std::vector<std::string> tasks;
  // per task, per seed
  std::vector<std::vector<double>> full, freeze, random, intrinsic;
};

struct UnifiedResult {
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> full, random, zeroshot, unified;  // [task][seed]
  std::size_t unified_dim = 0;
  std::vector<std::size_t> zeroshot_dims;  // per task
  linalg::Matrix similarity;               // seed-averaged, matched members
};

struct OutliersResult {
  std::vector<std::string> tasks;
  std::vector<std::vector<analysis::DisableResult>> runs;  // [task][seed]
  double mean_masked_fraction = 0.0;
  std::vector<analysis::TopPositions> top_positions;  // per task, first seed
};

// Orchestrates the comparative experiments on top of the generated suite.
// Trajectories are persisted under <out>/trajectories and reused when the
// stored trajectory hash matches; reports land under <out>/reports.
class Workspace {
 public:
  explicit Workspace(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const std::vector<data::Task>& suite() const { return suite_; }
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path reports_dir() const { return root_ / "reports"; }

  // Trains (or loads) every (task, seed) trajectory.
  void ensure_trajectories();

  const train::Trajectory& trajectory(std::size_t task, std::size_t seed_idx) const;
  double full_accuracy(std::size_t task, std::size_t seed_idx) const;

  TransductiveResult run_transductive();
  analysis::TransferMatrix run_transfer();
  UnifiedResult run_unified();
  OutliersResult run_outliers();
  analysis::AblationTable run_ablation();

  // Dispatch by name; returns the report files written.
  std::vector<std::filesystem::path> run(const std::string& experiment);

  // Human-readable aggregation of everything recorded in the manifest.
  std::string report() const;

  void save_manifest() const;

 private:
  nn::ModelSpec model_spec(std::size_t task, std::uint64_t seed) const;
  std::filesystem::path trajectory_path(std::size_t task, std::uint64_t seed) const;
  void record_experiment(const std::string& name, const nlohmann::json& summary,
                         const std::vector<std::filesystem::path>& files);

  ExperimentConfig cfg_;
  std::filesystem::path root_;
  std::vector<data::Task> suite_;
  nlohmann::json manifest_;

  struct TrajectorySlot {
    train::Trajectory trajectory;
    double full_accuracy = 0.0;
    bool ready = false;
  };
  std::vector<std::vector<TrajectorySlot>> trajectories_;  // [task][seed]
};

// Fixed-point formatting used by every report file (4 decimals, LF endings).
std::string fmt4(double v);
void write_csv(const std::filesystem::path& path,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace itss::harness
