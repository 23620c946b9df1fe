// Command-line front end: trajectory production, basis extraction, subspace
// training, the experiment battery, and report aggregation.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "itss/config.hpp"
#include "itss/data.hpp"
#include "itss/errors.hpp"
#include "itss/experiments.hpp"
#include "itss/io.hpp"
#include "itss/rng.hpp"
#include "itss/subspace.hpp"
#include "itss/train.hpp"

namespace {

using namespace itss;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t parallel = 0;
};

harness::ExperimentConfig load_config(const CommonOpts& opts) {
  auto cfg = opts.config_path.empty()
                 ? harness::ExperimentConfig{}
                 : harness::ExperimentConfig::load(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.parallel > 0) cfg.threads = opts.parallel;
  if (opts.seed) cfg.seeds = {*opts.seed};
  return cfg;
}

std::size_t task_index(const harness::Workspace& ws, const std::string& task_id) {
  const auto& suite = ws.suite();
  for (std::size_t k = 0; k < suite.size(); ++k)
    if (suite[k].spec.task_id == task_id) return k;
  throw ConfigError("unknown task '" + task_id + "' (suite has " +
                    std::to_string(suite.size()) + " tasks: task-1..task-" +
                    std::to_string(suite.size()) + ")");
}

int cmd_train_full(const CommonOpts& opts, const std::string& task_id) {
  harness::Workspace ws(load_config(opts));
  const std::size_t k = task_index(ws, task_id);
  ws.ensure_trajectories();
  for (std::size_t si = 0; si < ws.config().seeds.size(); ++si) {
    std::printf("%s seed=%llu: full val accuracy %.4f, trajectory length %zu\n",
                task_id.c_str(),
                static_cast<unsigned long long>(ws.config().seeds[si]),
                ws.full_accuracy(k, si), ws.trajectory(k, si).length());
  }
  return 0;
}

int cmd_extract_basis(const CommonOpts& opts, const std::string& task_id,
                      std::size_t dim_flag, const std::string& out_path) {
  harness::Workspace ws(load_config(opts));
  const std::size_t k = task_index(ws, task_id);
  ws.ensure_trajectories();
  const std::size_t dim = dim_flag > 0 ? dim_flag : ws.config().dim_for(task_id);
  for (std::size_t si = 0; si < ws.config().seeds.size(); ++si) {
    const std::uint64_t seed = ws.config().seeds[si];
    auto basis = subspace::extract_basis(ws.trajectory(k, si), dim);
    const auto path =
        out_path.empty()
            ? ws.root() / (task_id + "-seed-" + std::to_string(seed) + "-dim-" +
                           std::to_string(dim) + ".basis.itss")
            : std::filesystem::path(out_path);
    io::save_basis(basis, path);
    std::printf("%s seed=%llu: basis dim %zu -> %s\n", task_id.c_str(),
                static_cast<unsigned long long>(seed), basis.dim,
                path.string().c_str());
  }
  return 0;
}

int cmd_train_subspace(const CommonOpts& opts, const std::string& task_id,
                       const std::string& basis_path, bool use_random,
                       std::size_t dim_flag) {
  harness::Workspace ws(load_config(opts));
  const auto& cfg = ws.config();
  const std::size_t k = task_index(ws, task_id);
  const auto& task = ws.suite()[k];

  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    nn::ModelSpec spec;
    spec.kind = cfg.model.kind;
    spec.input_dim = task.spec.input_dim;
    spec.hidden_dim = cfg.model.hidden_dim;
    spec.depth = cfg.model.depth;
    spec.num_classes = task.spec.num_classes;
    spec.seed = seed;
    auto model = nn::init_model(spec);

    subspace::SubspaceBasis basis;
    if (!basis_path.empty()) {
      basis = io::load_basis(basis_path);
    } else if (use_random) {
      const std::size_t dim = dim_flag > 0 ? dim_flag : cfg.dim_for(task_id);
      basis = subspace::random_basis(model.hidden_layouts, model.hidden, dim,
                                     rng::derive(seed, 0xBA5E, k));
    } else {
      ws.ensure_trajectories();
      const std::size_t dim = dim_flag > 0 ? dim_flag : cfg.dim_for(task_id);
      basis = subspace::extract_basis(ws.trajectory(k, si), dim);
    }

    subspace::SubspaceTrainConfig scfg;
    scfg.base = cfg.train;
    scfg.base.epochs = cfg.finetune_epochs;
    scfg.base.seed = seed;
    scfg.lowdim_lr = cfg.subspace.lowdim_lr;
    scfg.lowdim_optimizer = cfg.subspace.lowdim_optimizer;
    scfg.ensemble = cfg.subspace.ensemble;

    auto run = subspace::train_in_subspace(model, basis, task.train, task.val, scfg);
    const auto state_path = ws.root() / (task_id + "-seed-" + std::to_string(seed) +
                                         "-" + subspace::to_string(basis.source.kind) +
                                         ".state.itss");
    io::save_state(run.state, basis.layouts, state_path);
    std::printf("%s seed=%llu: %s subspace (dim %zu) val accuracy %.4f -> %s\n",
                task_id.c_str(), static_cast<unsigned long long>(seed),
                subspace::to_string(basis.source.kind).c_str(), basis.dim,
                run.history.back().val_accuracy, state_path.string().c_str());
  }
  return 0;
}

int cmd_experiment(const CommonOpts& opts, const std::string& name) {
  harness::Workspace ws(load_config(opts));
  const auto files = ws.run(name);
  for (const auto& f : files) std::printf("wrote %s\n", f.string().c_str());
  return 0;
}

int cmd_report(const CommonOpts& opts, const std::string& run_dir) {
  CommonOpts resolved = opts;
  if (!run_dir.empty()) resolved.out_dir = run_dir;
  harness::Workspace ws(load_config(resolved));
  std::fputs(ws.report().c_str(), stdout);
  return 0;
}

int cmd_export_data(const CommonOpts& opts, const std::string& dir) {
  auto cfg = load_config(opts);
  const std::filesystem::path out = dir.empty() ? "datasets" : dir;
  std::filesystem::create_directories(out);
  auto suite = data::generate_suite(cfg.suite.num_tasks, cfg.suite.input_dim,
                                    cfg.suite.master_seed);
  for (const auto& task : suite) {
    data::export_csv(task.train, out / (task.spec.task_id + "-train.csv"));
    data::export_csv(task.val, out / (task.spec.task_id + "-val.csv"));
    std::printf("%s: %zu train / %zu val examples, %zu classes\n",
                task.spec.task_id.c_str(), task.train.size(), task.val.size(),
                task.spec.num_classes);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"intrinsic task subspace suite"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "JSON config file (defaults built in)");
  app.add_option("--out", opts.out_dir, "output root (ITSS_OUT env overrides)");
  std::uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "restrict to a single seed");
  app.add_option("--parallel", opts.parallel, "worker threads (0 = hardware)");

  std::string task_id = "task-1";
  std::string basis_path, out_path, run_dir, data_dir;
  std::size_t dim_flag = 0;
  bool use_random = false;

  auto* train_full = app.add_subcommand("train-full", "full fine-tuning, records the trajectory");
  train_full->add_option("--task", task_id, "task id, e.g. task-1");

  auto* extract = app.add_subcommand("extract-basis", "trajectory SVD -> basis artifact");
  extract->add_option("--task", task_id, "task id");
  extract->add_option("--dim", dim_flag, "subspace dimension (default from config)");
  extract->add_option("--basis-out", out_path, "output path for the basis artifact");

  auto* train_sub = app.add_subcommand("train-subspace", "re-parameterized training");
  train_sub->add_option("--task", task_id, "task id");
  train_sub->add_option("--basis", basis_path, "basis artifact to train in");
  train_sub->add_flag("--random", use_random, "use a random basis instead");
  train_sub->add_option("--dim", dim_flag, "dimension for derived bases");

  auto* experiment = app.add_subcommand("experiment", "run a comparative experiment");
  std::string experiment_name;
  experiment->add_option("name", experiment_name,
                         "transductive|transfer|unified|outliers|ablation")
      ->required();

  auto* report = app.add_subcommand("report", "aggregate recorded experiment metrics");
  report->add_option("--run", run_dir, "run directory (defaults to the config out dir)");

  auto* export_data = app.add_subcommand("export-data", "write the suite datasets as CSV");
  export_data->add_option("--dir", data_dir, "target directory");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) opts.seed = seed_flag;

  try {
    if (*train_full) return cmd_train_full(opts, task_id);
    if (*extract) return cmd_extract_basis(opts, task_id, dim_flag, out_path);
    if (*train_sub) return cmd_train_subspace(opts, task_id, basis_path, use_random, dim_flag);
    if (*experiment) return cmd_experiment(opts, experiment_name);
    if (*report) return cmd_report(opts, run_dir);
    if (*export_data) return cmd_export_data(opts, data_dir);
  } catch (const itss::RankDeficientError& e) {
    std::fprintf(stderr, "error: %s (achievable rank %zu)\n", e.what(), e.achievable_rank);
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
