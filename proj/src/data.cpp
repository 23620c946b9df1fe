#include "itss/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "itss/errors.hpp"
#include "itss/rng.hpp"

namespace itss::data {

namespace {

// Substream ids under the master seed.
enum Stream : std::uint64_t { kFrame = 1, kRotation, kTranslation, kTrainDraw, kValDraw };

constexpr double kClusterRadius = 1.0;
constexpr double kFrameJitter = 0.03;
constexpr double kTranslationScale = 0.03;
constexpr std::size_t kMaxDirections = 6;

std::size_t directions_of(const TaskSpec& spec) {
  std::size_t dirs = 0;
  while ((1u << dirs) < spec.cluster_count) ++dirs;
  return dirs;
}

std::vector<std::vector<double>> task_directions(std::size_t input_dim,
                                                 std::size_t count,
                                                 std::size_t offset,
                                                 const linalg::Matrix& base_frame,
                                                 std::uint64_t rotation_seed) {
  // Perturb the shared frame and re-orthonormalize: a deterministic
  // task-specific rotation of moderate angle, so tasks stay related.
  rng::Engine eng(rotation_seed);
  linalg::Matrix perturbed(input_dim, count);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < input_dim; ++i)
      perturbed.at(i, j) = base_frame.at(i, j + offset) + kFrameJitter * eng.next_gaussian();

  for (std::size_t j = 0; j < count; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < input_dim; ++i)
          proj += perturbed.at(i, k) * perturbed.at(i, j);
        for (std::size_t i = 0; i < input_dim; ++i)
          perturbed.at(i, j) -= proj * perturbed.at(i, k);
      }
    double n = 0.0;
    for (std::size_t i = 0; i < input_dim; ++i)
      n += perturbed.at(i, j) * perturbed.at(i, j);
    n = std::sqrt(n);
    for (std::size_t i = 0; i < input_dim; ++i) perturbed.at(i, j) /= n;
  }
  std::vector<std::vector<double>> dirs(count, std::vector<double>(input_dim));
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < input_dim; ++i) dirs[j][i] = perturbed.at(i, j);
  return dirs;
}

int label_of(const TaskSpec& spec, std::size_t pattern) {
  const std::size_t masked = pattern & spec.label_subset;
  const std::size_t bits = static_cast<std::size_t>(__builtin_popcountll(masked));
  if (spec.label_rule == LabelRule::parity) return static_cast<int>(bits % 2);
  if (spec.label_rule == LabelRule::popcount_mod3) return static_cast<int>(bits % 3);

  // xor variants: read the three lowest selected directions (i, j, k) and
  // classify by two sign agreements; the fourth combination folds back into
  // class 0, keeping every class centered.
  std::size_t dirs[3] = {0, 0, 0};
  std::size_t found = 0;
  for (std::size_t bit = 0; bit < 8 * sizeof(std::size_t) && found < 3; ++bit)
    if ((spec.label_subset >> bit) & 1u) dirs[found++] = bit;
  const bool si = (pattern >> dirs[0]) & 1u;
  const bool sj = (pattern >> dirs[1]) & 1u;
  const bool sk = (pattern >> dirs[2]) & 1u;
  bool a = false, b = false;
  switch (spec.label_rule) {
    case LabelRule::xor_pairs:   a = si ^ sj; b = sj ^ sk; break;
    case LabelRule::xor_pairs_b: a = sj ^ sk; b = sk ^ si; break;
    case LabelRule::xor_pairs_c: a = sk ^ si; b = si ^ sj; break;
    default: break;
  }
  if (a == b) return 0;
  return a ? 1 : 2;
}

// Clusters sit at the sign-pattern corners sum_j s_j * r * d_j of a frame
// shared by the whole suite (tasks see it through a small task-specific
// rotation). Labels follow each task's own rule over its own direction
// subset, so tasks share geometry but ask for different decisions; parity
// labelings keep class means at the translation point, out of reach for
// linear decision rules.
ClusterGeometry build_geometry(const TaskSpec& spec, const linalg::Matrix& base_frame,
                               const std::vector<double>& translation) {
  const std::size_t dirs_n = directions_of(spec);
  auto dirs = task_directions(spec.input_dim, dirs_n, spec.frame_offset, base_frame,
                              spec.rotation_seed);

  ClusterGeometry geo;
  for (std::size_t pattern = 0; pattern < spec.cluster_count; ++pattern) {
    std::vector<double> center = translation;
    for (std::size_t j = 0; j < dirs_n; ++j) {
      const double sign = ((pattern >> j) & 1u) ? 1.0 : -1.0;
      for (std::size_t i = 0; i < spec.input_dim; ++i)
        center[i] += sign * kClusterRadius * dirs[j][i];
    }
    geo.centers.push_back(std::move(center));
    geo.classes.push_back(label_of(spec, pattern));
  }
  return geo;
}

Dataset draw(const TaskSpec& spec, const ClusterGeometry& geo, std::size_t n,
             std::uint64_t seed, std::string split) {
  std::vector<std::vector<std::size_t>> by_class(spec.num_classes);
  for (std::size_t j = 0; j < geo.classes.size(); ++j)
    by_class[static_cast<std::size_t>(geo.classes[j])].push_back(j);

  Dataset ds;
  ds.split = std::move(split);
  ds.features = linalg::Matrix(n, spec.input_dim);
  ds.labels.resize(n);
  rng::Engine eng(seed);
  for (std::size_t e = 0; e < n; ++e) {
    const std::size_t cls = e % spec.num_classes;  // balanced
    const auto& candidates = by_class[cls];
    const std::size_t pick = candidates[eng.next_index(candidates.size())];
    for (std::size_t i = 0; i < spec.input_dim; ++i)
      ds.features.at(e, i) =
          geo.centers[pick][i] + spec.noise_sigma * eng.next_gaussian();
    ds.labels[e] = static_cast<int>(cls);
  }
  return ds;
}

}  // namespace

std::vector<Task> generate_suite(std::size_t num_tasks, std::size_t input_dim,
                                 std::uint64_t master_seed) {
  if (num_tasks < 2) throw InvalidInputError("generate_suite: need at least 2 tasks");
  if (input_dim < kMaxDirections)
    throw InvalidInputError("generate_suite: input_dim too small");

  // Shared orthonormal frame rotated per task.
  const linalg::Matrix base_frame = linalg::orthonormal_random(
      input_dim, kMaxDirections, rng::derive(master_seed, kFrame));

  // Labeling schedule: distinct rules and direction subsets keep the tasks
  // genuinely different even though they share the corner geometry.
  const LabelRule rules[8] = {LabelRule::parity,      LabelRule::xor_pairs,
                              LabelRule::parity,      LabelRule::xor_pairs_b,
                              LabelRule::parity,      LabelRule::xor_pairs,
                              LabelRule::parity,      LabelRule::xor_pairs_b};
  const std::size_t offsets[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  const std::size_t subsets[8] = {0b011, 0b111, 0b111, 0b111,
                                  0b1110, 0b1110, 0b1101, 0b1110};

  std::vector<Task> suite;
  suite.reserve(num_tasks);
  for (std::size_t k = 0; k < num_tasks; ++k) {
    Task task;
    task.spec.task_id = "task-" + std::to_string(k + 1);
    task.spec.input_dim = input_dim;
    task.spec.num_classes = (k % 2 == 0) ? 2 : 3;
    task.spec.rotation_seed = rng::derive(master_seed, kRotation, k);
    const bool small = k < num_tasks / 2;
    const double sigmas[8] = {0.38, 0.33, 0.38, 0.35, 0.34, 0.34, 0.36, 0.34};
    task.spec.noise_sigma = sigmas[k % 8];
    task.spec.n_train = small ? 256 : 320;
    task.spec.n_val = 4096;
    // Large tasks get two more directions: more clusters to fit, harder for
    // width-limited random features.
    task.spec.cluster_count = small ? 8 : 16;
    task.spec.label_rule = rules[k % 8];
    task.spec.label_subset = subsets[k % 8];
    task.spec.frame_offset = offsets[k % 8];

    std::vector<double> translation(input_dim);
    rng::Engine teng(rng::derive(master_seed, kTranslation, k));
    for (double& v : translation) v = kTranslationScale * teng.next_gaussian();

    task.geometry = build_geometry(task.spec, base_frame, translation);
    task.train = draw(task.spec, task.geometry, task.spec.n_train,
                      rng::derive(master_seed, kTrainDraw, k), "train");
    task.val = draw(task.spec, task.geometry, task.spec.n_val,
                    rng::derive(master_seed, kValDraw, k), "val");
    suite.push_back(std::move(task));
  }
  return suite;
}

std::vector<nn::Batch> batches(const Dataset& dataset, std::size_t batch_size,
                               std::uint64_t epoch_seed) {
  if (dataset.size() == 0) throw InvalidInputError("batches: empty dataset");
  if (batch_size < 1) throw InvalidInputError("batches: batch_size must be >= 1");

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  rng::Engine eng(epoch_seed);
  rng::shuffle(order, eng);

  const std::size_t dim = dataset.features.cols;
  std::vector<nn::Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    nn::Batch b;
    b.n = count;
    b.dim = dim;
    b.x.resize(count * dim);
    b.y.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = order[start + i];
      std::copy(dataset.features.row(src).begin(), dataset.features.row(src).end(),
                b.x.begin() + i * dim);
      b.y[i] = dataset.labels[src];
    }
    out.push_back(std::move(b));
  }
  return out;
}

void export_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("export_csv: cannot open " + path.string());
  for (std::size_t i = 0; i < dataset.features.cols; ++i)
    out << "feature_" << i << ",";
  out << "label\n";
  char buf[40];
  for (std::size_t e = 0; e < dataset.size(); ++e) {
    for (std::size_t i = 0; i < dataset.features.cols; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", dataset.features.at(e, i));
      out << buf << ",";
    }
    out << dataset.labels[e] << "\n";
  }
}

}  // namespace itss::data
