#include "itss/config.hpp"

#include <fstream>

#include "itss/errors.hpp"

namespace itss::harness {

namespace {

std::string stat_to_string(analysis::OutlierRule::Stat stat) {
  return stat == analysis::OutlierRule::Stat::deviation_from_mean
             ? "deviation_from_mean"
             : "absolute_value";
}

analysis::OutlierRule::Stat stat_from_string(const std::string& s) {
  if (s == "deviation_from_mean") return analysis::OutlierRule::Stat::deviation_from_mean;
  if (s == "absolute_value") return analysis::OutlierRule::Stat::absolute_value;
  throw ConfigError("unknown outlier statistic '" + s + "'");
}

}  // namespace

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  try {
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("suite")) {
    const auto& s = j.at("suite");
    cfg.suite.num_tasks = s.value("num_tasks", cfg.suite.num_tasks);
    cfg.suite.input_dim = s.value("input_dim", cfg.suite.input_dim);
    cfg.suite.master_seed = s.value("master_seed", cfg.suite.master_seed);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    cfg.model.kind = nn::model_kind_from_string(m.value("kind", nn::to_string(cfg.model.kind)));
    cfg.model.hidden_dim = m.value("hidden_dim", cfg.model.hidden_dim);
    cfg.model.depth = m.value("depth", cfg.model.depth);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.optimizer =
        train::optimizer_from_string(t.value("optimizer", train::to_string(cfg.train.optimizer)));
    cfg.train.base_lr = t.value("base_lr", cfg.train.base_lr);
    cfg.train.checkpoint_every = t.value("checkpoint_every", cfg.train.checkpoint_every);
    cfg.finetune_epochs = t.value("finetune_epochs", cfg.finetune_epochs);
  }
  if (j.contains("subspace")) {
    const auto& s = j.at("subspace");
    cfg.subspace.dim = s.value("dim", cfg.subspace.dim);
    if (s.contains("dim_overrides")) {
      cfg.subspace.dim_overrides.clear();
      for (const auto& [task, dim] : s.at("dim_overrides").items())
        cfg.subspace.dim_overrides[task] = dim.get<std::size_t>();
    }
    cfg.subspace.ensemble = s.value("ensemble", cfg.subspace.ensemble);
    cfg.subspace.lowdim_lr = s.value("lowdim_lr", cfg.subspace.lowdim_lr);
    cfg.subspace.lowdim_optimizer = subspace::lowdim_optimizer_from_string(
        s.value("lowdim_optimizer", subspace::to_string(cfg.subspace.lowdim_optimizer)));
  }
  if (j.contains("outliers")) {
    const auto& o = j.at("outliers");
    cfg.outliers.k_sigma = o.value("k_sigma", cfg.outliers.k_sigma);
    cfg.outliers.stat = stat_from_string(o.value("stat", stat_to_string(cfg.outliers.stat)));
  }
  if (j.contains("ablation_dims"))
    cfg.ablation_dims = j.at("ablation_dims").get<std::vector<std::size_t>>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.threads = j.value("threads", cfg.threads);

  if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
  for (const auto& [task, dim] : cfg.subspace.dim_overrides) (void)task, (void)dim;
  return cfg;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json dims = nlohmann::json::object();
  for (const auto& [task, dim] : subspace.dim_overrides) dims[task] = dim;
  return {
      {"suite",
       {{"num_tasks", suite.num_tasks},
        {"input_dim", suite.input_dim},
        {"master_seed", suite.master_seed}}},
      {"model",
       {{"kind", nn::to_string(model.kind)},
        {"hidden_dim", model.hidden_dim},
        {"depth", model.depth}}},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"optimizer", train::to_string(train.optimizer)},
        {"base_lr", train.base_lr},
        {"checkpoint_every", train.checkpoint_every},
        {"finetune_epochs", finetune_epochs}}},
      {"subspace",
       {{"dim", subspace.dim},
        {"dim_overrides", dims},
        {"ensemble", subspace.ensemble},
        {"lowdim_lr", subspace.lowdim_lr},
        {"lowdim_optimizer", subspace::to_string(subspace.lowdim_optimizer)}}},
      {"outliers", {{"k_sigma", outliers.k_sigma}, {"stat", stat_to_string(outliers.stat)}}},
      {"ablation_dims", ablation_dims},
      {"seeds", seeds},
      {"out_dir", out_dir},
      {"threads", threads},
  };
}

std::uint64_t ExperimentConfig::config_hash() const {
  auto j = to_json();
  // Execution details that do not change results stay out of the hash.
  j.erase("threads");
  j.erase("out_dir");
  return fnv1a(j.dump());
}

std::uint64_t ExperimentConfig::trajectory_hash() const {
  const auto j = to_json();
  nlohmann::json subset = {{"suite", j.at("suite")},
                           {"model", j.at("model")},
                           {"train", j.at("train")},
                           {"dim_overrides", j.at("subspace").at("dim_overrides")},
                           {"dim", j.at("subspace").at("dim")},
                           {"seeds", j.at("seeds")}};
  return fnv1a(subset.dump());
}

std::size_t ExperimentConfig::dim_for(const std::string& task_id) const {
  auto it = subspace.dim_overrides.find(task_id);
  return it == subspace.dim_overrides.end() ? subspace.dim : it->second;
}

std::size_t ExperimentConfig::epochs_for(const std::string& task_id) const {
  return std::max(train.epochs, dim_for(task_id));
}

analysis::RunPlan ExperimentConfig::plan() const {
  analysis::RunPlan plan;
  plan.kind = model.kind;
  plan.hidden_dim = model.hidden_dim;
  plan.depth = model.depth;
  plan.train = train;
  plan.subspace.base = train;
  plan.subspace.base.epochs = finetune_epochs;
  plan.subspace.lowdim_lr = subspace.lowdim_lr;
  plan.subspace.lowdim_optimizer = subspace.lowdim_optimizer;
  plan.subspace.ensemble = subspace.ensemble;
  for (const auto& [task, dim] : subspace.dim_overrides)
    plan.task_epochs[task] = std::max(train.epochs, dim);
  plan.threads = threads;
  return plan;
}

analysis::OutlierRule ExperimentConfig::outlier_rule() const {
  return {outliers.k_sigma, outliers.stat};
}

}  // namespace itss::harness
