#pragma once

#include "softattr/tape.hpp"
#include "softattr/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace softattr {

struct DenseLayer {
  TensorD weight;  // [out, in]
  TensorD bias;    // [out]
};

struct Conv3x3Layer {
  TensorD kernel;  // [out, 3, 3, in]
  TensorD bias;    // [out]
};

struct ReluLayer {};
struct MaxPoolLayer {};
struct FlattenLayer {};

using LayerOp = std::variant<DenseLayer, Conv3x3Layer, ReluLayer, MaxPoolLayer, FlattenLayer>;

struct Layer {
  std::string name;
  LayerOp op;
};

/// Result of one recorded forward pass.
struct ForwardPass {
  Tape tape;
  Tape::Slot input = 0;
  Tape::Slot logits = 0;
  std::map<std::string, Tape::Slot> taps;
  std::vector<Tape::Slot> layer_outputs;
  /// Per layer: (weight slot, bias slot) for parametric layers.
  std::vector<std::optional<std::pair<Tape::Slot, Tape::Slot>>> params;

  const TensorD& logits_value() const { return tape.value(logits); }
  const TensorD& tapped(const std::string& name) const { return tape.value(taps.at(name)); }
  std::map<std::string, TensorD> tapped_values() const;
};

class Model {
 public:
  Model() = default;
  Model(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  Eigen::Index class_count() const;
  bool has_layer(const std::string& name) const;
  std::size_t layer_index(const std::string& name) const;
  /// Output shape of the named layer; "input" names the model input.
  const Shape& output_shape(const std::string& name) const;
  /// True when the named layer yields an H x W x K activation.
  bool is_spatial(const std::string& name) const;

  ForwardPass forward(const TensorD& input, std::span<const std::string> taps = {}) const;
  TensorD logits(const TensorD& input) const;

  friend bool operator==(const Model& a, const Model& b);

 private:
  void infer_shapes();

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> output_shapes_;
};

bool operator==(const DenseLayer& a, const DenseLayer& b);
bool operator==(const Conv3x3Layer& a, const Conv3x3Layer& b);
inline bool operator==(const ReluLayer&, const ReluLayer&) { return true; }
inline bool operator==(const MaxPoolLayer&, const MaxPoolLayer&) { return true; }
inline bool operator==(const FlattenLayer&, const FlattenLayer&) { return true; }

namespace toy {

inline constexpr Eigen::Index kImageSize = 16;
inline constexpr Eigen::Index kClasses = 4;
inline constexpr const char* kCamLayer = "pool2";

/**
 * The reference classifier:
 *   conv1 (3x3, 1->8) -> conv1-relu -> pool1 -> conv2 (3x3, 8->16) ->
 *   conv2-relu -> pool2 -> flatten -> dense (256->4).
 * Weights are uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)), drawn in
 * the order conv1.kernel, conv2.kernel, dense.weight from Rng(seed). Biases
 * start at zero.
 */
Model make_cnn(std::uint64_t seed);

}  // namespace toy

}  // namespace softattr
