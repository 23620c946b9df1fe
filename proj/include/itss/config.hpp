#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "itss/analysis.hpp"
#include "itss/nn.hpp"
#include "itss/subspace.hpp"
#include "itss/train.hpp"

namespace itss::harness {

// Experiment configuration with every default pre-filled; a JSON config file
// overrides individual fields. The canonical JSON dump (sorted keys) feeds
// the config hash, so field order in the file never matters.
struct ExperimentConfig {
  struct Suite {
    std::size_t num_tasks = 8;
    std::size_t input_dim = 16;
    std::uint64_t master_seed = 0;
  } suite;

  struct Model {
    nn::ModelKind kind = nn::ModelKind::mlp;
    std::size_t hidden_dim = 24;
    std::size_t depth = 2;
  } model;

  train::TrainConfig train;  // epochs=32, batch=32, adam, 1e-3
  // Epoch budget for the re-parameterized / frozen fine-tuning arms; the
  // full-space trajectory runs keep train.epochs (and per-task overrides).
  std::size_t finetune_epochs = 22;

  struct Subspace {
    std::size_t dim = 32;
    std::map<std::string, std::size_t> dim_overrides;  // optional per-task dims
    std::size_t ensemble = 16;
    double lowdim_lr = 0.01;
    subspace::LowDimOptimizer lowdim_optimizer = subspace::LowDimOptimizer::adam;
  } subspace;

  struct Outliers {
    double k_sigma = 3.0;
    analysis::OutlierRule::Stat stat =
        analysis::OutlierRule::Stat::deviation_from_mean;
  } outliers;

  std::vector<std::size_t> ablation_dims = {8, 16, 32};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "runs";
  std::size_t threads = 0;  // 0: hardware concurrency

  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // FNV-1a over the canonical dump; stable under key reordering.
  std::uint64_t config_hash() const;
  // Hash of only the fields that determine trajectories (suite/model/train),
  // used for artifact reuse.
  std::uint64_t trajectory_hash() const;

  std::size_t dim_for(const std::string& task_id) const;
  // Trajectory length must cover the requested dim.
  std::size_t epochs_for(const std::string& task_id) const;

  analysis::RunPlan plan() const;
  analysis::OutlierRule outlier_rule() const;
};

std::uint64_t fnv1a(const std::string& s);

}  // namespace itss::harness
