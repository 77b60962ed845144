// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tlora/adapter.hpp"
#include "tlora/grad.hpp"

namespace tlora {

enum class Activation { Tanh, Identity };
enum class HeadInit { Lecun, Zero };
enum class AdapterKind { Lora, Tri };

std::string_view to_string(Activation act) noexcept;
Activation parse_activation(std::string_view s);
std::string_view to_string(HeadInit init) noexcept;
HeadInit parse_head_init(std::string_view s);
std::string_view to_string(AdapterKind kind) noexcept;
AdapterKind parse_adapter_kind(std::string_view s);

/// Each block is: square (n x n) -> act -> tall (f n x n) -> act ->
/// wide (n x f n) -> act. A trainable linear head maps the final features
/// to class logits.
struct ToyModelSpec {
  std::int64_t width = 32;
  std::int64_t depth = 1;
  std::int64_t mlp_factor = 4;
  std::int64_t num_classes = 2;
  Activation activation = Activation::Tanh;
  HeadInit head_init = HeadInit::Lecun;
  std::uint64_t seed = 0;

  void validate() const;
};

using LayerAdapter = std::variant<std::monostate, TriAdapter<double>, LoraAdapter<double>>;

struct LayerSlot {
  std::string name;
  FrozenLinear<double> base;
  LayerAdapter adapter;

  bool has_adapter() const noexcept { return !std::holds_alternative<std::monostate>(adapter); }
};

/// Template applied to every adapter-eligible layer. For LoRA only r1 is used.
struct AdapterTemplate {
  AdapterKind kind = AdapterKind::Tri;
  std::int64_t r1 = 8;
  std::int64_t r2 = 8;
  TrainMode mode = TrainMode::ABC;
  InitScheme init = InitScheme::OutputPreserving;
  std::uint64_t seed = 0;
  double scale = 1.0;
};

class ToyModel {
 public:
  ToyModel(ToyModelSpec spec, std::vector<LayerSlot> layers, MatrixXd head_weight,
           VectorXd head_bias);

  const ToyModelSpec& spec() const noexcept { return spec_; }
  const std::vector<LayerSlot>& layers() const noexcept { return layers_; }
  std::vector<LayerSlot>& layers() noexcept { return layers_; }
  const MatrixXd& head_weight() const noexcept { return head_weight_; }
  const VectorXd& head_bias() const noexcept { return head_bias_; }
  MatrixXd& head_weight() noexcept { return head_weight_; }
  VectorXd& head_bias() noexcept { return head_bias_; }

  std::int64_t input_dim() const noexcept { return spec_.width; }
  std::int64_t num_classes() const noexcept { return spec_.num_classes; }

  /// Adapter entries that receive updates (excludes the head).
  std::int64_t adapter_trainable_count() const;
  /// Frozen base entries over all linear layers (excludes the head).
  std::int64_t base_param_count() const;

 private:
  ToyModelSpec spec_;
  std::vector<LayerSlot> layers_;
  MatrixXd head_weight_;
  VectorXd head_bias_;
};

/// Frozen weights are Gaussian with variance 1/fan-in, drawn block by block
/// (square, tall, wide) and then the head, from one generator seeded by spec.seed.
ToyModel build_model(const ToyModelSpec& spec);

/// Attaches one adapter to every linear layer (head excluded). Adapter i is
/// seeded with derive_seed(tmpl.seed, "adapter", i).
ToyModel inject_adapters(ToyModel model, const AdapterTemplate& tmpl);

struct ForwardCache {
  std::vector<MatrixXd> inputs;   // input to each linear layer
  std::vector<MatrixXd> outputs;  // activation output of each layer
  MatrixXd logits;
};

/// Inputs are n x b, one example per column. Returns K x b logits.
MatrixXd forward(const ToyModel& model, const MatrixXd& x);
ForwardCache forward_cached(const ToyModel& model, const MatrixXd& x);

/// Mean softmax cross-entropy over the batch columns.
double cross_entropy(const MatrixXd& logits, std::span<const int> labels);

using LayerGrads = std::variant<std::monostate, GradTriple<double>, LoraGrads<double>>;

struct ModelGrads {
  double loss = 0.0;
  std::vector<LayerGrads> layers;
  MatrixXd head_weight;
  VectorXd head_bias;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gradients of the mean cross-entropy with respect to every adapter factor
/// and the head. Frozen base weights get none.
ModelGrads backward(const ToyModel& model, const MatrixXd& x, std::span<const int> labels);

/// Flat view of one trainable tensor.
struct ParamView {
  std::string name;
  double* data;
  Eigen::Index size;
};

struct GradView {
  std::string name;
  const double* data;
  Eigen::Index size;
};

/// Trainable tensors in a fixed order: adapter factors layer by layer
/// (A, B, C for tri-matrix layers, skipping frozen ones; A, B for LoRA),
/// then head weight and head bias.
std::vector<ParamView> trainable_params(ToyModel& model);
/// Gradients matching trainable_params() entry for entry.
std::vector<GradView> trainable_grads(const ToyModel& model, const ModelGrads& grads);

}  // namespace tlora
