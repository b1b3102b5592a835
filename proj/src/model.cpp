#include "softattr/model.hpp"

#include "softattr/rng.hpp"

#include <algorithm>
#include <cmath>

namespace softattr {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Error layer_error(const Layer& layer, const std::string& what) {
  return Error("layer '" + layer.name + "': " + what);
}

Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const DenseLayer& d) -> Shape {
            if (d.weight.rank() != 2 || d.bias.rank() != 1 || d.bias.dim(0) != d.weight.dim(0)) {
              throw layer_error(layer, "malformed dense parameters");
            }
            if (in.size() != 1 || in[0] != d.weight.dim(1)) {
              throw layer_error(layer, "expects input [" + std::to_string(d.weight.dim(1)) +
                                           "], got " + shape_string(in));
            }
            return {d.weight.dim(0)};
          },
          [&](const Conv3x3Layer& c) -> Shape {
            if (c.kernel.rank() != 4 || c.kernel.dim(1) != 3 || c.kernel.dim(2) != 3 ||
                c.bias.rank() != 1 || c.bias.dim(0) != c.kernel.dim(0)) {
              throw layer_error(layer, "malformed conv parameters");
            }
            if (in.size() != 3 || in[2] != c.kernel.dim(3)) {
              throw layer_error(layer, "expects H x W x " + std::to_string(c.kernel.dim(3)) +
                                           " input, got " + shape_string(in));
            }
            return {in[0], in[1], c.kernel.dim(0)};
          },
          [&](const ReluLayer&) -> Shape { return in; },
          [&](const MaxPoolLayer&) -> Shape {
            if (in.size() != 3 || in[0] % 2 != 0 || in[1] % 2 != 0) {
              throw layer_error(layer, "maxpool needs H x W x C with even H, W; got " +
                                           shape_string(in));
            }
            return {in[0] / 2, in[1] / 2, in[2]};
          },
          [&](const FlattenLayer&) -> Shape { return {shape_size(in)}; },
      },
      layer.op);
}

}  // namespace

std::map<std::string, TensorD> ForwardPass::tapped_values() const {
  std::map<std::string, TensorD> out;
  for (const auto& [name, slot] : taps) out.emplace(name, tape.value(slot));
  return out;
}

Model::Model(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  infer_shapes();
}

void Model::infer_shapes() {
  output_shapes_.clear();
  Shape current = input_shape_;
  for (const Layer& layer : layers_) {
    if (layer.name == "input") throw layer_error(layer, "name is reserved");
    current = layer_output_shape(layer, current);
    output_shapes_.push_back(current);
  }
}

Eigen::Index Model::class_count() const {
  const Shape& out = output_shapes_.empty() ? input_shape_ : output_shapes_.back();
  return shape_size(out);
}

bool Model::has_layer(const std::string& name) const {
  return name == "input" || std::any_of(layers_.begin(), layers_.end(),
                                        [&](const Layer& l) { return l.name == name; });
}

std::size_t Model::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw Error("unknown layer '" + name + "'");
}

const Shape& Model::output_shape(const std::string& name) const {
  if (name == "input") return input_shape_;
  return output_shapes_[layer_index(name)];
}

bool Model::is_spatial(const std::string& name) const {
  return output_shape(name).size() == 3;
}

ForwardPass Model::forward(const TensorD& input, std::span<const std::string> taps) const {
  if (input.shape() != input_shape_) {
    throw Error("layer 'input': expected shape " + shape_string(input_shape_) + ", got " +
                shape_string(input.shape()));
  }
  for (const std::string& t : taps) {
    if (!has_layer(t)) throw Error("unknown tap layer '" + t + "'");
  }

  ForwardPass pass;
  pass.input = pass.tape.leaf(input);
  Tape::Slot current = pass.input;
  Tape& tape = pass.tape;
  for (const Layer& layer : layers_) {
    std::optional<std::pair<Tape::Slot, Tape::Slot>> params;
    current = std::visit(
        overloaded{
            [&](const DenseLayer& d) {
              params.emplace(tape.leaf(d.weight), tape.leaf(d.bias));
              return tape.dense(current, params->first, params->second);
            },
            [&](const Conv3x3Layer& c) {
              params.emplace(tape.leaf(c.kernel), tape.leaf(c.bias));
              return tape.conv3x3(current, params->first, params->second);
            },
            [&](const ReluLayer&) { return tape.relu(current); },
            [&](const MaxPoolLayer&) { return tape.maxpool2(current); },
            [&](const FlattenLayer&) { return tape.flatten(current); },
        },
        layer.op);
    pass.layer_outputs.push_back(current);
    pass.params.push_back(params);
  }
  pass.logits = current;
  for (const std::string& t : taps) {
    pass.taps[t] = t == "input" ? pass.input : pass.layer_outputs[layer_index(t)];
  }
  if (tape.value(pass.logits).rank() != 1) {
    throw Error("model output must be a vector, got " + shape_string(tape.value(pass.logits).shape()));
  }
  return pass;
}

TensorD Model::logits(const TensorD& input) const { return forward(input).logits_value(); }

bool operator==(const DenseLayer& a, const DenseLayer& b) {
  return a.weight == b.weight && a.bias == b.bias;
}

bool operator==(const Conv3x3Layer& a, const Conv3x3Layer& b) {
  return a.kernel == b.kernel && a.bias == b.bias;
}

bool operator==(const Model& a, const Model& b) {
  if (a.input_shape_ != b.input_shape_ || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].name != b.layers_[i].name || !(a.layers_[i].op == b.layers_[i].op)) {
      return false;
    }
  }
  return true;
}

namespace toy {

namespace {

TensorD glorot(Shape shape, double fan_in, double fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  TensorD t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
  return t;
}

}  // namespace

Model make_cnn(std::uint64_t seed) {
  Rng rng(seed);
  TensorD k1 = glorot({8, 3, 3, 1}, 9.0 * 1, 9.0 * 8, rng);
  TensorD k2 = glorot({16, 3, 3, 8}, 9.0 * 8, 9.0 * 16, rng);
  TensorD w = glorot({kClasses, 256}, 256, kClasses, rng);

  std::vector<Layer> layers;
  layers.push_back({"conv1", Conv3x3Layer{std::move(k1), TensorD({8})}});
  layers.push_back({"conv1-relu", ReluLayer{}});
  layers.push_back({"pool1", MaxPoolLayer{}});
  layers.push_back({"conv2", Conv3x3Layer{std::move(k2), TensorD({16})}});
  layers.push_back({"conv2-relu", ReluLayer{}});
  layers.push_back({"pool2", MaxPoolLayer{}});
  layers.push_back({"flatten", FlattenLayer{}});
  layers.push_back({"dense", DenseLayer{std::move(w), TensorD({kClasses})}});
  return Model({kImageSize, kImageSize, 1}, std::move(layers));
}

}  // namespace toy

}  // namespace softattr
