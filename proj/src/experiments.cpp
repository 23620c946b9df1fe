#include "itss/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "itss/errors.hpp"
#include "itss/io.hpp"
#include "itss/parallel.hpp"
#include "itss/rng.hpp"

namespace itss::harness {

namespace {

constexpr std::uint64_t kRandomBasisStream = 0xBA5E;

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_csv(const std::filesystem::path& path,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open " + path.string() + " for writing");
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
}

Workspace::Workspace(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  const char* env_root = std::getenv("ITSS_OUT");
  root_ = env_root && *env_root ? std::filesystem::path(env_root)
                                : std::filesystem::path(cfg_.out_dir);
  std::filesystem::create_directories(root_ / "trajectories");
  std::filesystem::create_directories(root_ / "reports");

  suite_ = data::generate_suite(cfg_.suite.num_tasks, cfg_.suite.input_dim,
                                cfg_.suite.master_seed);
  trajectories_.assign(suite_.size(), std::vector<TrajectorySlot>(cfg_.seeds.size()));

  const auto manifest_path = root_ / "manifest.json";
  manifest_ = nlohmann::json::object();
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    manifest_ = nlohmann::json::parse(in, nullptr, false);
    if (manifest_.is_discarded()) manifest_ = nlohmann::json::object();
  }
  if (manifest_.value("trajectory_hash", "") != hex64(cfg_.trajectory_hash()))
    manifest_.erase("artifacts");  // stale artifacts cannot be reused
  manifest_["config_hash"] = hex64(cfg_.config_hash());
  manifest_["trajectory_hash"] = hex64(cfg_.trajectory_hash());
  if (!manifest_.contains("artifacts")) manifest_["artifacts"] = nlohmann::json::object();
  if (!manifest_.contains("experiments"))
    manifest_["experiments"] = nlohmann::json::object();
}

nn::ModelSpec Workspace::model_spec(std::size_t task, std::uint64_t seed) const {
  nn::ModelSpec spec;
  spec.kind = cfg_.model.kind;
  spec.input_dim = suite_[task].spec.input_dim;
  spec.hidden_dim = cfg_.model.hidden_dim;
  spec.depth = cfg_.model.depth;
  spec.num_classes = suite_[task].spec.num_classes;
  spec.seed = seed;
  return spec;
}

std::filesystem::path Workspace::trajectory_path(std::size_t task,
                                                 std::uint64_t seed) const {
  return root_ / "trajectories" /
         (suite_[task].spec.task_id + "-seed-" + std::to_string(seed) + ".itss");
}

void Workspace::ensure_trajectories() {
  struct Item {
    std::size_t task, seed_idx;
  };
  std::vector<Item> items;
  for (std::size_t k = 0; k < suite_.size(); ++k)
    for (std::size_t s = 0; s < cfg_.seeds.size(); ++s)
      if (!trajectories_[k][s].ready) items.push_back({k, s});
  if (items.empty()) return;

  // Reuse decisions come from the manifest before the parallel section.
  std::vector<bool> reusable(items.size(), false);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto key = suite_[items[i].task].spec.task_id + "/seed-" +
                     std::to_string(cfg_.seeds[items[i].seed_idx]);
    reusable[i] = manifest_["artifacts"].contains(key) &&
                  std::filesystem::exists(trajectory_path(
                      items[i].task, cfg_.seeds[items[i].seed_idx]));
  }

  parallel_for(items.size(), cfg_.threads, [&](std::size_t i) {
    const auto [k, s] = items[i];
    const std::uint64_t seed = cfg_.seeds[s];
    auto& slot = trajectories_[k][s];
    const auto path = trajectory_path(k, seed);
    const auto key =
        suite_[k].spec.task_id + "/seed-" + std::to_string(seed);
    if (reusable[i]) {
      slot.trajectory = io::load_trajectory(path);
      slot.full_accuracy = manifest_["artifacts"][key].value("full_accuracy", 0.0);
      slot.ready = true;
      return;
    }
    auto model = nn::init_model(model_spec(k, seed));
    train::TrainConfig cfg = cfg_.train;
    cfg.epochs = cfg_.epochs_for(suite_[k].spec.task_id);
    cfg.seed = seed;
    auto run = train::train_full(model, suite_[k].train, suite_[k].val, cfg,
                                 suite_[k].spec.task_id);
    io::save_trajectory(run.trajectory, path);
    slot.trajectory = std::move(run.trajectory);
    slot.full_accuracy = run.history.back().val_accuracy;
    slot.ready = true;
  });

  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto [k, s] = items[i];
    const std::uint64_t seed = cfg_.seeds[s];
    const auto key = suite_[k].spec.task_id + "/seed-" + std::to_string(seed);
    manifest_["artifacts"][key] = {
        {"path", trajectory_path(k, seed).string()},
        {"full_accuracy", trajectories_[k][s].full_accuracy}};
  }
  save_manifest();
}

const train::Trajectory& Workspace::trajectory(std::size_t task,
                                               std::size_t seed_idx) const {
  const auto& slot = trajectories_[task][seed_idx];
  if (!slot.ready)
    throw ConfigError("trajectory for " + suite_[task].spec.task_id +
                      " not prepared; run `itss train-full` or an experiment first");
  return slot.trajectory;
}

double Workspace::full_accuracy(std::size_t task, std::size_t seed_idx) const {
  return trajectories_[task][seed_idx].full_accuracy;
}

TransductiveResult Workspace::run_transductive() {
  ensure_trajectories();
  const std::size_t t = suite_.size(), s = cfg_.seeds.size();
  TransductiveResult res;
  for (const auto& task : suite_) res.tasks.push_back(task.spec.task_id);
  res.full.assign(t, std::vector<double>(s, 0.0));
  res.freeze = res.full;
  res.random = res.full;
  res.intrinsic = res.full;

  parallel_for(t * s, cfg_.threads, [&](std::size_t item) {
    const std::size_t k = item / s, si = item % s;
    const std::uint64_t seed = cfg_.seeds[si];
    const auto& task = suite_[k];
    auto model = nn::init_model(model_spec(k, seed));

    train::TrainConfig tcfg = cfg_.train;
    tcfg.epochs = cfg_.finetune_epochs;
    tcfg.seed = seed;

    res.full[k][si] = full_accuracy(k, si);

    auto frozen = train::train_frozen(model, task.train, task.val, tcfg);
    res.freeze[k][si] = frozen.history.back().val_accuracy;

    subspace::SubspaceTrainConfig scfg;
    scfg.base = tcfg;
    scfg.lowdim_lr = cfg_.subspace.lowdim_lr;
    scfg.lowdim_optimizer = cfg_.subspace.lowdim_optimizer;
    scfg.ensemble = cfg_.subspace.ensemble;

    const std::size_t dim = cfg_.dim_for(task.spec.task_id);
    auto rnd_basis = subspace::random_basis(model.hidden_layouts, model.hidden, dim,
                                            rng::derive(seed, kRandomBasisStream, k));
    auto rnd = subspace::train_in_subspace(model, rnd_basis, task.train, task.val, scfg);
    res.random[k][si] = rnd.history.back().val_accuracy;

    auto basis = subspace::extract_basis(trajectory(k, si), dim);
    auto intr = subspace::train_in_subspace(model, basis, task.train, task.val, scfg);
    res.intrinsic[k][si] = intr.history.back().val_accuracy;
  });

  std::vector<std::vector<std::string>> rows;
  rows.push_back({"task", "full_mean", "full_std", "freeze_mean", "freeze_std",
                  "random_mean", "random_std", "intrinsic_mean", "intrinsic_std"});
  std::vector<double> suite_means(8, 0.0);
  for (std::size_t k = 0; k < t; ++k) {
    const std::vector<double> cells = {
        mean_of(res.full[k]),   std_of(res.full[k]),   mean_of(res.freeze[k]),
        std_of(res.freeze[k]),  mean_of(res.random[k]), std_of(res.random[k]),
        mean_of(res.intrinsic[k]), std_of(res.intrinsic[k])};
    std::vector<std::string> row{res.tasks[k]};
    for (std::size_t c = 0; c < cells.size(); ++c) {
      row.push_back(fmt4(cells[c]));
      suite_means[c] += cells[c] / static_cast<double>(t);
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> mean_row{"suite-mean"};
  for (double v : suite_means) mean_row.push_back(fmt4(v));
  rows.push_back(std::move(mean_row));
  const auto csv = reports_dir() / "transductive.csv";
  write_csv(csv, rows);

  record_experiment("transductive",
                    {{"full", suite_means[0]},
                     {"freeze", suite_means[2]},
                     {"random", suite_means[4]},
                     {"intrinsic", suite_means[6]}},
                    {csv});
  return res;
}

analysis::TransferMatrix Workspace::run_transfer() {
  ensure_trajectories();
  const std::size_t t = suite_.size(), s = cfg_.seeds.size();

  std::vector<std::vector<subspace::SubspaceBasis>> bases(
      t, std::vector<subspace::SubspaceBasis>(s));
  parallel_for(t * s, cfg_.threads, [&](std::size_t item) {
    const std::size_t k = item / s, si = item % s;
    bases[k][si] = subspace::extract_basis(trajectory(k, si),
                                           cfg_.dim_for(suite_[k].spec.task_id));
  });

  auto matrix = analysis::transfer_matrix(suite_, bases, cfg_.plan(), cfg_.seeds);

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"source"};
  for (const auto& task : matrix.tasks) header.push_back(task);
  header.push_back("row_average");
  rows.push_back(std::move(header));
  for (std::size_t src = 0; src < t; ++src) {
    std::vector<std::string> row{matrix.tasks[src]};
    for (std::size_t dst = 0; dst < t; ++dst) row.push_back(fmt4(matrix.drops.at(src, dst)));
    row.push_back(fmt4(matrix.row_average[src]));
    rows.push_back(std::move(row));
  }
  std::vector<std::string> random_row{"random"};
  double random_avg = 0.0;
  for (std::size_t dst = 0; dst < t; ++dst) {
    random_row.push_back(fmt4(matrix.random_drop[dst]));
    random_avg += matrix.random_drop[dst] / static_cast<double>(t);
  }
  random_row.push_back(fmt4(random_avg));
  rows.push_back(std::move(random_row));
  const auto csv = reports_dir() / "transfer_matrix.csv";
  write_csv(csv, rows);

  record_experiment("transfer",
                    {{"mean_transferred_accuracy", matrix.mean_transferred_accuracy},
                     {"mean_random_accuracy", matrix.mean_random_accuracy}},
                    {csv});
  return matrix;
}

UnifiedResult Workspace::run_unified() {
  ensure_trajectories();
  const std::size_t t = suite_.size(), s = cfg_.seeds.size();
  UnifiedResult res;
  for (const auto& task : suite_) res.tasks.push_back(task.spec.task_id);
  res.full.assign(t, std::vector<double>(s, 0.0));
  res.random = res.full;
  res.zeroshot = res.full;
  res.unified = res.full;
  res.zeroshot_dims.assign(t, 0);

  // Shared bases per seed; zero-shot variants per (task, seed).
  std::vector<subspace::SubspaceBasis> unified_bases(s);
  std::vector<std::vector<subspace::SubspaceBasis>> zeroshot_bases(
      t, std::vector<subspace::SubspaceBasis>(s));
  parallel_for(s, cfg_.threads, [&](std::size_t si) {
    std::vector<const train::Trajectory*> ptrs;
    for (std::size_t k = 0; k < t; ++k) ptrs.push_back(&trajectory(k, si));
    unified_bases[si] = subspace::unified_basis(ptrs);
    for (std::size_t k = 0; k < t; ++k)
      zeroshot_bases[k][si] =
          subspace::unified_basis(ptrs, 0, suite_[k].spec.task_id);
  });
  res.unified_dim = unified_bases[0].dim;
  for (std::size_t k = 0; k < t; ++k) res.zeroshot_dims[k] = zeroshot_bases[k][0].dim;

  std::vector<std::vector<subspace::LowDimState>> unified_states(
      t, std::vector<subspace::LowDimState>(s));
  parallel_for(t * s, cfg_.threads, [&](std::size_t item) {
    const std::size_t k = item / s, si = item % s;
    const std::uint64_t seed = cfg_.seeds[si];
    const auto& task = suite_[k];
    auto model = nn::init_model(model_spec(k, seed));

    subspace::SubspaceTrainConfig scfg;
    scfg.base = cfg_.train;
    scfg.base.epochs = cfg_.finetune_epochs;
    scfg.base.seed = seed;
    scfg.lowdim_lr = cfg_.subspace.lowdim_lr;
    scfg.lowdim_optimizer = cfg_.subspace.lowdim_optimizer;
    scfg.ensemble = cfg_.subspace.ensemble;

    res.full[k][si] = full_accuracy(k, si);

    auto rnd_basis =
        subspace::random_basis(model.hidden_layouts, model.hidden, t,
                               rng::derive(seed, kRandomBasisStream + 1, k));
    res.random[k][si] =
        subspace::train_in_subspace(model, rnd_basis, task.train, task.val, scfg)
            .history.back()
            .val_accuracy;

    res.zeroshot[k][si] = subspace::train_in_subspace(model, zeroshot_bases[k][si],
                                                      task.train, task.val, scfg)
                              .history.back()
                              .val_accuracy;

    auto uni = subspace::train_in_subspace(model, unified_bases[si], task.train,
                                           task.val, scfg);
    res.unified[k][si] = uni.history.back().val_accuracy;
    unified_states[k][si] = std::move(uni.state);
  });

  // Similarity of the learned coordinates in the shared basis, averaged
  // over seeds.
  res.similarity = linalg::Matrix(t, t);
  for (std::size_t si = 0; si < s; ++si) {
    std::vector<subspace::LowDimState> states;
    for (std::size_t k = 0; k < t; ++k) states.push_back(unified_states[k][si]);
    auto sim = analysis::similarity_matrix(states);
    for (std::size_t i = 0; i < t * t; ++i)
      res.similarity.data[i] += sim.data[i] / static_cast<double>(s);
  }

  std::vector<std::vector<std::string>> rows;
  rows.push_back({"task", "full_mean", "full_std", "random_mean", "random_std",
                  "zeroshot_mean", "zeroshot_std", "unified_mean", "unified_std"});
  std::vector<double> suite_means(8, 0.0);
  for (std::size_t k = 0; k < t; ++k) {
    const std::vector<double> cells = {
        mean_of(res.full[k]),     std_of(res.full[k]),     mean_of(res.random[k]),
        std_of(res.random[k]),    mean_of(res.zeroshot[k]), std_of(res.zeroshot[k]),
        mean_of(res.unified[k]),  std_of(res.unified[k])};
    std::vector<std::string> row{res.tasks[k]};
    for (std::size_t c = 0; c < cells.size(); ++c) {
      row.push_back(fmt4(cells[c]));
      suite_means[c] += cells[c] / static_cast<double>(t);
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> mean_row{"suite-mean"};
  for (double v : suite_means) mean_row.push_back(fmt4(v));
  rows.push_back(std::move(mean_row));
  const auto csv = reports_dir() / "unified.csv";
  write_csv(csv, rows);

  std::vector<std::vector<std::string>> sim_rows;
  std::vector<std::string> sim_header{"task"};
  for (const auto& task : res.tasks) sim_header.push_back(task);
  sim_rows.push_back(std::move(sim_header));
  for (std::size_t a = 0; a < t; ++a) {
    std::vector<std::string> row{res.tasks[a]};
    for (std::size_t b = 0; b < t; ++b) row.push_back(fmt4(res.similarity.at(a, b)));
    sim_rows.push_back(std::move(row));
  }
  const auto sim_csv = reports_dir() / "similarity.csv";
  write_csv(sim_csv, sim_rows);

  record_experiment("unified",
                    {{"unified_dim", res.unified_dim},
                     {"full", suite_means[0]},
                     {"random", suite_means[2]},
                     {"zeroshot", suite_means[4]},
                     {"unified", suite_means[6]}},
                    {csv, sim_csv});
  return res;
}

OutliersResult Workspace::run_outliers() {
  ensure_trajectories();
  const std::size_t t = suite_.size(), s = cfg_.seeds.size();
  OutliersResult res;
  for (const auto& task : suite_) res.tasks.push_back(task.spec.task_id);
  res.runs.assign(t, std::vector<analysis::DisableResult>(s));
  res.top_positions.resize(t);

  const auto rule = cfg_.outlier_rule();
  auto plan = cfg_.plan();

  // Update vectors for the plotting export (first task, first seed).
  std::vector<analysis::UpdateVector> export_intrinsic, export_random;

  std::vector<std::vector<std::vector<analysis::LayerOutlierReport>>> reports(
      t, std::vector<std::vector<analysis::LayerOutlierReport>>(s));
  parallel_for(t * s, cfg_.threads, [&](std::size_t item) {
    const std::size_t k = item / s, si = item % s;
    const std::uint64_t seed = cfg_.seeds[si];
    const auto& task = suite_[k];
    auto model = nn::init_model(model_spec(k, seed));

    subspace::SubspaceTrainConfig scfg;
    scfg.base = cfg_.train;
    scfg.base.epochs = cfg_.finetune_epochs;
    scfg.base.seed = seed;
    scfg.lowdim_lr = cfg_.subspace.lowdim_lr;
    scfg.lowdim_optimizer = cfg_.subspace.lowdim_optimizer;
    scfg.ensemble = cfg_.subspace.ensemble;

    const std::size_t dim = cfg_.dim_for(task.spec.task_id);
    auto basis = subspace::extract_basis(trajectory(k, si), dim);
    auto run = subspace::train_in_subspace(model, basis, task.train, task.val, scfg);
    auto updates = analysis::update_vector(basis, run.state);
    auto& layer_reports = reports[k][si];
    for (const auto& u : updates) layer_reports.push_back(analysis::detect_outliers(u, rule));

    if (k == 0 && si == 0) {
      export_intrinsic = updates;
      auto rnd_basis = subspace::random_basis(model.hidden_layouts, model.hidden, dim,
                                              rng::derive(seed, kRandomBasisStream, k));
      auto rnd = subspace::train_in_subspace(model, rnd_basis, task.train, task.val, scfg);
      export_random = analysis::update_vector(rnd_basis, rnd.state);
    }

    res.runs[k][si] = analysis::disable_and_finetune(task, layer_reports, plan, seed);
  });

  double fraction_sum = 0.0;
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t si = 0; si < s; ++si)
      fraction_sum += res.runs[k][si].masked_fraction;
  res.mean_masked_fraction = fraction_sum / static_cast<double>(t * s);

  auto model0 = nn::init_model(model_spec(0, cfg_.seeds[0]));
  for (std::size_t k = 0; k < t; ++k)
    res.top_positions[k] =
        analysis::top_outlier_positions(reports[k][0], model0.hidden_layouts, 10);

  // Fig.4-style export: per-layer update vectors, intrinsic vs random.
  std::vector<std::filesystem::path> files;
  for (std::size_t l = 0; l < export_intrinsic.size(); ++l) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"index", "intrinsic", "random"});
    for (std::size_t i = 0; i < export_intrinsic[l].values.size(); ++i)
      rows.push_back({std::to_string(i), fmt4(export_intrinsic[l].values[i]),
                      fmt4(export_random[l].values[i])});
    const auto path =
        reports_dir() / ("update_vector_layer" + std::to_string(l) + ".csv");
    write_csv(path, rows);
    files.push_back(path);
  }

  nlohmann::json report = nlohmann::json::object();
  report["k_sigma"] = rule.k_sigma;
  report["mean_masked_fraction"] = res.mean_masked_fraction;
  report["tasks"] = nlohmann::json::array();
  for (std::size_t k = 0; k < t; ++k) {
    std::vector<double> full, outlier, random, fraction;
    for (std::size_t si = 0; si < s; ++si) {
      full.push_back(res.runs[k][si].accuracy_full);
      outlier.push_back(res.runs[k][si].accuracy_outlier_masked);
      random.push_back(res.runs[k][si].accuracy_random_masked);
      fraction.push_back(res.runs[k][si].masked_fraction);
    }
    nlohmann::json top = nlohmann::json::array();
    for (std::size_t l = 0; l < res.top_positions[k].per_layer.size(); ++l)
      for (const auto& pos : res.top_positions[k].per_layer[l])
        top.push_back({{"layer", pos.layer_id},
                       {"tensor", pos.tensor},
                       {"indices", pos.indices},
                       {"flat_index", pos.flat_index},
                       {"score", pos.score}});
    report["tasks"].push_back(
        {{"task", res.tasks[k]},
         {"full_mean", mean_of(full)},
         {"outlier_masked_mean", mean_of(outlier)},
         {"random_masked_mean", mean_of(random)},
         {"masked_fraction_mean", mean_of(fraction)},
         {"cross_layer_overlap", res.top_positions[k].cross_layer_overlap},
         {"top_outliers", top}});
  }
  const auto json_path = reports_dir() / "outliers.json";
  {
    std::ofstream out(json_path, std::ios::binary | std::ios::trunc);
    out << report.dump(2) << '\n';
  }
  files.push_back(json_path);

  record_experiment("outliers",
                    {{"mean_masked_fraction", res.mean_masked_fraction}}, files);
  return res;
}

analysis::AblationTable Workspace::run_ablation() {
  ensure_trajectories();
  const std::size_t t = suite_.size(), s = cfg_.seeds.size();
  std::vector<std::vector<train::Trajectory>> trajs(t);
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t si = 0; si < s; ++si) trajs[k].push_back(trajectory(k, si));

  auto table =
      analysis::dim_ablation(suite_, trajs, cfg_.ablation_dims, cfg_.plan(), cfg_.seeds);

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"task"};
  for (std::size_t dim : table.dims) header.push_back("dim=" + std::to_string(dim));
  rows.push_back(std::move(header));
  std::vector<double> means(table.dims.size(), 0.0);
  for (std::size_t k = 0; k < t; ++k) {
    std::vector<std::string> row{table.tasks[k]};
    for (std::size_t d = 0; d < table.dims.size(); ++d) {
      row.push_back(fmt4(table.accuracy.at(k, d)));
      means[d] += table.accuracy.at(k, d) / static_cast<double>(t);
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> mean_row{"suite-mean"};
  for (double v : means) mean_row.push_back(fmt4(v));
  rows.push_back(std::move(mean_row));
  const auto csv = reports_dir() / "ablation.csv";
  write_csv(csv, rows);

  nlohmann::json summary = nlohmann::json::object();
  for (std::size_t d = 0; d < table.dims.size(); ++d)
    summary["dim_" + std::to_string(table.dims[d])] = means[d];
  record_experiment("ablation", summary, {csv});
  return table;
}

std::vector<std::filesystem::path> Workspace::run(const std::string& experiment) {
  if (experiment == "transductive") {
    run_transductive();
    return {reports_dir() / "transductive.csv"};
  }
  if (experiment == "transfer") {
    run_transfer();
    return {reports_dir() / "transfer_matrix.csv"};
  }
  if (experiment == "unified") {
    run_unified();
    return {reports_dir() / "unified.csv", reports_dir() / "similarity.csv"};
  }
  if (experiment == "outliers") {
    run_outliers();
    return {reports_dir() / "outliers.json"};
  }
  if (experiment == "ablation") {
    run_ablation();
    return {reports_dir() / "ablation.csv"};
  }
  throw ConfigError("unknown experiment '" + experiment +
                    "' (expected transductive|transfer|unified|outliers|ablation)");
}

void Workspace::record_experiment(const std::string& name,
                                  const nlohmann::json& summary,
                                  const std::vector<std::filesystem::path>& files) {
  nlohmann::json entry;
  entry["completed_at"] = now_iso8601();
  entry["summary"] = summary;
  entry["files"] = nlohmann::json::array();
  for (const auto& f : files) entry["files"].push_back(f.string());
  manifest_["experiments"][name] = std::move(entry);
  save_manifest();
}

void Workspace::save_manifest() const {
  std::ofstream out(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
  out << manifest_.dump(2) << '\n';
}

std::string Workspace::report() const {
  std::ostringstream out;
  out << "config hash: " << manifest_.value("config_hash", "?") << "\n";
  out << "seeds: " << cfg_.seeds.size() << "\n";
  const auto& experiments = manifest_.value("experiments", nlohmann::json::object());
  if (experiments.empty()) {
    out << "no experiments recorded yet\n";
    return out.str();
  }
  for (const auto& [name, entry] : experiments.items()) {
    out << "\n[" << name << "] completed " << entry.value("completed_at", "?") << "\n";
    const nlohmann::json summary = entry.value("summary", nlohmann::json::object());
    for (const auto& [key, value] : summary.items()) {
      out << "  " << key << ": ";
      if (value.is_number()) out << fmt4(value.get<double>());
      else out << value.dump();
      out << "\n";
    }
    const nlohmann::json files = entry.value("files", nlohmann::json::array());
    for (const auto& f : files) {
      const std::string path = f.get<std::string>();
      out << "  -> " << path << "\n";
      // Inline the per-task tables (seed means and standard deviations).
      if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        std::ifstream csv(path);
        std::string line;
        while (std::getline(csv, line)) out << "     " << line << "\n";
      }
    }
  }
  return out.str();
}

}  // namespace itss::harness
