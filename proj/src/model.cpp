// SPDX-License-Identifier: Apache-2.0
#include "tlora/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tlora {

std::string_view to_string(Activation act) noexcept {
  return act == Activation::Tanh ? "tanh" : "identity";
}

Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(HeadInit init) noexcept {
  return init == HeadInit::Lecun ? "lecun" : "zero";
}

HeadInit parse_head_init(std::string_view s) {
  if (s == "lecun") return HeadInit::Lecun;
  if (s == "zero") return HeadInit::Zero;
  throw std::invalid_argument("unknown head init '" + std::string(s) + "'");
}

std::string_view to_string(AdapterKind kind) noexcept {
  return kind == AdapterKind::Lora ? "lora" : "tri";
}

AdapterKind parse_adapter_kind(std::string_view s) {
  if (s == "lora") return AdapterKind::Lora;
  if (s == "tri") return AdapterKind::Tri;
  throw std::invalid_argument("unknown adapter kind '" + std::string(s) + "'");
}

void ToyModelSpec::validate() const {
  if (width < 1) throw std::invalid_argument("model: width must be >= 1");
  if (depth < 1) throw std::invalid_argument("model: depth must be >= 1");
  if (mlp_factor < 1) throw std::invalid_argument("model: mlp_factor must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
}

ToyModel::ToyModel(ToyModelSpec spec, std::vector<LayerSlot> layers, MatrixXd head_weight,
                   VectorXd head_bias)
    : spec_(spec),
      layers_(std::move(layers)),
      head_weight_(std::move(head_weight)),
      head_bias_(std::move(head_bias)) {
  spec_.validate();
  if (head_weight_.rows() != spec_.num_classes || head_weight_.cols() != spec_.width ||
      head_bias_.size() != spec_.num_classes) {
    throw ShapeError("model: head is " + shape_str(head_weight_) + ", expected " +
                     shape_str(spec_.num_classes, spec_.width));
  }
}

std::int64_t ToyModel::adapter_trainable_count() const {
  std::int64_t total = 0;
  for (const auto& slot : layers_) {
    if (const auto* tri = std::get_if<TriAdapter<double>>(&slot.adapter)) {
      total += count_trainable_entries(*tri);
    } else if (const auto* lora = std::get_if<LoraAdapter<double>>(&slot.adapter)) {
      total += count_trainable_entries(*lora);
    }
  }
  return total;
}

std::int64_t ToyModel::base_param_count() const {
  std::int64_t total = 0;
  for (const auto& slot : layers_) total += slot.base.weight().size();
  return total;
}

ToyModel build_model(const ToyModelSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  const auto n = spec.width;
  const auto wide = spec.mlp_factor * n;
  std::vector<LayerSlot> layers;
  layers.reserve(static_cast<std::size_t>(3 * spec.depth));
  for (std::int64_t blk = 0; blk < spec.depth; ++blk) {
    const std::string prefix = "block" + std::to_string(blk) + ".";
    layers.push_back({prefix + "attn",
                      FrozenLinear<double>(gaussian_matrix(n, n, 1.0 / double(n), rng)), {}});
    layers.push_back({prefix + "up",
                      FrozenLinear<double>(gaussian_matrix(wide, n, 1.0 / double(n), rng)), {}});
    layers.push_back({prefix + "down",
                      FrozenLinear<double>(gaussian_matrix(n, wide, 1.0 / double(wide), rng)),
                      {}});
  }
  MatrixXd head = spec.head_init == HeadInit::Lecun
                      ? gaussian_matrix(spec.num_classes, n, 1.0 / double(n), rng)
                      : MatrixXd::Zero(spec.num_classes, n);
  return ToyModel(spec, std::move(layers), std::move(head), VectorXd::Zero(spec.num_classes));
}

ToyModel inject_adapters(ToyModel model, const AdapterTemplate& tmpl) {
  auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& slot = layers[i];
    const auto m = slot.base.m();
    const auto n = slot.base.n();
    const auto seed = derive_seed(tmpl.seed, "adapter", i);
    try {
      if (tmpl.kind == AdapterKind::Lora) {
        slot.adapter = init_lora<double>(m, n, tmpl.r1, seed);
      } else {
        AdapterSpec spec{m, n, tmpl.r1, tmpl.r2, tmpl.mode, tmpl.init, seed, tmpl.scale};
        slot.adapter = init_adapter<double>(spec);
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("inject_adapters: layer '" + slot.name + "' (" +
                                  shape_str(m, n) + "): " + e.what());
    }
  }
  return model;
}

namespace {

MatrixXd linear_forward(const LayerSlot& slot, const MatrixXd& x) {
  MatrixXd y = slot.base.weight() * x;
  std::visit(
      [&](const auto& ad) {
        using T = std::decay_t<decltype(ad)>;
        if constexpr (!std::is_same_v<T, std::monostate>) y += adapter_output(ad, x);
      },
      slot.adapter);
  return y;
}

void activate(Activation act, MatrixXd& z) {
  if (act == Activation::Tanh) z = z.array().tanh().matrix();
}

// Derivative of the activation expressed through its output.
MatrixXd activation_grad(Activation act, const MatrixXd& out, const MatrixXd& upstream) {
  if (act == Activation::Identity) return upstream;
  return (upstream.array() * (1.0 - out.array().square())).matrix();
}

MatrixXd head_logits(const ToyModel& model, const MatrixXd& features) {
  MatrixXd logits = model.head_weight() * features;
  logits.colwise() += model.head_bias();
  return logits;
}

}  // namespace

ForwardCache forward_cached(const ToyModel& model, const MatrixXd& x) {
  if (x.rows() != model.input_dim()) {
    throw ShapeError("forward: input is " + shape_str(x) + ", expected " +
                     std::to_string(model.input_dim()) + " rows");
  }
  ForwardCache cache;
  cache.inputs.reserve(model.layers().size());
  cache.outputs.reserve(model.layers().size());
  const MatrixXd* h = &x;
  for (const auto& slot : model.layers()) {
    cache.inputs.push_back(*h);
    MatrixXd z = linear_forward(slot, *h);
    activate(model.spec().activation, z);
    cache.outputs.push_back(std::move(z));
    h = &cache.outputs.back();
  }
  cache.logits = head_logits(model, *h);
  return cache;
}

MatrixXd forward(const ToyModel& model, const MatrixXd& x) {
  if (x.rows() != model.input_dim()) {
    throw ShapeError("forward: input is " + shape_str(x) + ", expected " +
                     std::to_string(model.input_dim()) + " rows");
  }
  MatrixXd h = x;
  for (const auto& slot : model.layers()) {
    MatrixXd z = linear_forward(slot, h);
    activate(model.spec().activation, z);
    h = std::move(z);
  }
  return head_logits(model, h);
}

namespace {

// Column-wise softmax probabilities with max subtraction.
MatrixXd softmax_columns(const MatrixXd& logits) {
  MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - mx).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

void check_labels(const MatrixXd& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.cols()) + " columns");
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.rows()) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
    }
  }
}

}  // namespace

double cross_entropy(const MatrixXd& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    const double lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
    total += lse - logits(labels[static_cast<std::size_t>(j)], j);
  }
  return total / static_cast<double>(logits.cols());
}

ModelGrads backward(const ToyModel& model, const MatrixXd& x, std::span<const int> labels) {
  ForwardCache cache = forward_cached(model, x);
  ModelGrads grads;
  grads.loss = cross_entropy(cache.logits, labels);
  if (!std::isfinite(grads.loss)) throw NonFiniteLoss("backward: non-finite loss");

  const double inv_b = 1.0 / static_cast<double>(x.cols());
  MatrixXd dlogits = softmax_columns(cache.logits);
  for (Eigen::Index j = 0; j < dlogits.cols(); ++j) {
    dlogits(labels[static_cast<std::size_t>(j)], j) -= 1.0;
  }
  dlogits *= inv_b;

  const MatrixXd& features = cache.outputs.empty() ? x : cache.outputs.back();
  grads.head_weight = dlogits * features.transpose();
  grads.head_bias = dlogits.rowwise().sum();
  MatrixXd dh = model.head_weight().transpose() * dlogits;

  const auto& layers = model.layers();
  grads.layers.resize(layers.size());
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& slot = layers[k];
    const MatrixXd upstream = activation_grad(model.spec().activation, cache.outputs[k], dh);
    const MatrixXd& input = cache.inputs[k];
    std::visit(
        [&](const auto& ad) {
          using T = std::decay_t<decltype(ad)>;
          if constexpr (std::is_same_v<T, TriAdapter<double>>) {
            grads.layers[k] = adapter_grads(ad, input, upstream);
            if (k > 0) dh = input_grad(ad, slot.base, upstream);
          } else if constexpr (std::is_same_v<T, LoraAdapter<double>>) {
            grads.layers[k] = lora_grads(ad, input, upstream);
            if (k > 0) dh = input_grad(ad, slot.base, upstream);
          } else {
            if (k > 0) dh = slot.base.weight().transpose() * upstream;
          }
        },
        slot.adapter);
  }
  return grads;
}

std::vector<ParamView> trainable_params(ToyModel& model) {
  std::vector<ParamView> out;
  for (auto& slot : model.layers()) {
    if (auto* tri = std::get_if<TriAdapter<double>>(&slot.adapter)) {
      tri->for_each_trainable([&](Factor f, MatrixXd& p) {
        out.push_back({slot.name + "." + std::string(to_string(f)), p.data(), p.size()});
      });
    } else if (auto* lora = std::get_if<LoraAdapter<double>>(&slot.adapter)) {
      out.push_back({slot.name + ".A", lora->a.data(), lora->a.size()});
      out.push_back({slot.name + ".B", lora->b.data(), lora->b.size()});
    }
  }
  out.push_back({"head.weight", model.head_weight().data(), model.head_weight().size()});
  out.push_back({"head.bias", model.head_bias().data(), model.head_bias().size()});
  return out;
}

std::vector<GradView> trainable_grads(const ToyModel& model, const ModelGrads& grads) {
  std::vector<GradView> out;
  const auto& layers = model.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& slot = layers[k];
    if (const auto* tri = std::get_if<TriAdapter<double>>(&slot.adapter)) {
      const auto& g = std::get<GradTriple<double>>(grads.layers[k]);
      for (Factor f : kFactors) {
        if (!tri->trainable(f)) continue;
        out.push_back({slot.name + "." + std::string(to_string(f)), g.get(f).data(), g.get(f).size()});
      }
    } else if (std::holds_alternative<LoraAdapter<double>>(slot.adapter)) {
      const auto& g = std::get<LoraGrads<double>>(grads.layers[k]);
      out.push_back({slot.name + ".A", g.a.data(), g.a.size()});
      out.push_back({slot.name + ".B", g.b.data(), g.b.size()});
    }
  }
  out.push_back({"head.weight", grads.head_weight.data(), grads.head_weight.size()});
  out.push_back({"head.bias", grads.head_bias.data(), grads.head_bias.size()});
  return out;
}

}  // namespace tlora
