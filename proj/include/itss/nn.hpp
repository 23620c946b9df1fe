#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itss/linalg.hpp"

namespace itss::nn {

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // into the flattened layer vector

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }

  bool operator==(const TensorInfo&) const = default;
};

// Flattening order of one re-parameterizable layer: tensors in declaration
// order, weights before their biases. The order is part of the artifact
// file format and must stay fixed.
struct LayerLayout {
  std::size_t layer_id = 0;
  std::vector<TensorInfo> tensors;

  std::size_t total_len() const;
  const TensorInfo& tensor(std::string_view name) const;

  struct Resolved {
    std::size_t tensor = 0;                // index into tensors
    std::vector<std::size_t> indices;      // within-tensor multi-index
  };
  Resolved resolve(std::size_t flat_index) const;

  bool operator==(const LayerLayout&) const = default;
};

// One layer's parameters as a flat vector tied to its layout.
struct ParamVector {
  std::size_t layer_id = 0;
  std::vector<double> values;
};

// Structured (named tensor) view used by flatten/unflatten.
struct TensorValues {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

std::vector<double> flatten(const LayerLayout& layout,
                            const std::vector<TensorValues>& tensors);
std::vector<TensorValues> unflatten(const LayerLayout& layout,
                                    std::span<const double> values);

enum class ModelKind { mlp, tiny_transformer };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  std::size_t input_dim = 16;
  std::size_t hidden_dim = 24;
  std::size_t depth = 2;  // number of re-parameterizable hidden layers
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

// true = parameter disabled (held at exactly zero). Covers hidden layers.
struct Mask {
  std::vector<std::vector<std::uint8_t>> hidden;

  bool empty() const;
  std::size_t count() const;
};

struct Batch {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> x;  // n x dim, row-major
  std::vector<int> y;     // n labels
};

// Hidden layers are stored flattened (the layout order *is* the storage
// order); embedding and readout live in their own full-space blocks.
struct Model {
  ModelSpec spec;

  LayerLayout embed_layout;
  std::vector<double> embed;
  LayerLayout readout_layout;
  std::vector<double> readout;

  std::vector<LayerLayout> hidden_layouts;
  std::vector<std::vector<double>> hidden;

  Mask mask;  // empty when nothing is disabled

  // Derived dimensions for the tiny-transformer kind.
  std::size_t seq_len = 1;
  std::size_t chunk = 0;
  std::size_t ffn_dim = 0;
};

Model init_model(const ModelSpec& spec);

struct ForwardResult {
  double loss = 0.0;
  linalg::Matrix logits;  // n x num_classes
};

ForwardResult forward_loss(const Model& model, const Batch& batch);

struct Gradients {
  std::vector<double> embed;
  std::vector<double> readout;
  std::vector<std::vector<double>> hidden;
};

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
};

// Exact analytic gradients of forward_loss with respect to every parameter.
BackwardResult backward(const Model& model, const Batch& batch);

// Zeroes the masked entries; training keeps them at zero afterwards.
void apply_mask(Model& model, const Mask& mask);

}  // namespace itss::nn
