#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "itss/linalg.hpp"
#include "itss/nn.hpp"

namespace itss::data {

// How a task labels the sign-pattern corners of its direction frame. The
// xor variants differ in which adjacent sign agreements they read, giving
// three distinct centered 3-class partitions of the same corners.
enum class LabelRule { parity, popcount_mod3, xor_pairs, xor_pairs_b, xor_pairs_c };

struct TaskSpec {
  std::string task_id;
  std::size_t input_dim = 16;
  std::size_t num_classes = 2;
  std::size_t cluster_count = 8;  // sign-pattern corners, a power of two
  std::uint64_t rotation_seed = 0;
  double noise_sigma = 0.22;
  LabelRule label_rule = LabelRule::parity;
  std::size_t label_subset = ~std::size_t{0};  // direction bitmask the rule reads
  std::size_t frame_offset = 0;  // first shared-frame column this task uses
  std::size_t n_train = 256;
  std::size_t n_val = 512;
};

struct Dataset {
  linalg::Matrix features;  // n x input_dim
  std::vector<int> labels;
  std::string split;

  std::size_t size() const { return labels.size(); }
};

// Generating parameters of a task's Gaussian mixture, kept around so that
// oracle classifiers (nearest true centroid) can be built in tests.
struct ClusterGeometry {
  std::vector<std::vector<double>> centers;
  std::vector<int> classes;  // class of each center
};

struct Task {
  TaskSpec spec;
  Dataset train;
  Dataset val;
  ClusterGeometry geometry;
};

// Deterministic multi-task classification suite. Tasks share the input
// dimension and a common direction frame (per-task rotated and translated),
// alternate between 2 and 3 classes, and label the sign-pattern corners of
// the frame by parity (2-class) or popcount mod 3 (3-class), keeping every
// class mean at the same point so purely linear models cannot solve them.
// The first half of the suite is small (n_train=256), the second half large
// (n_train=2048) with one extra direction.
std::vector<Task> generate_suite(std::size_t num_tasks, std::size_t input_dim,
                                 std::uint64_t master_seed);

// Shuffled batch sequence covering every example exactly once; deterministic
// per epoch_seed. The last batch may be short.
std::vector<nn::Batch> batches(const Dataset& dataset, std::size_t batch_size,
                               std::uint64_t epoch_seed);

// feature_0,...,feature_{d-1},label with full-precision values.
void export_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace itss::data
