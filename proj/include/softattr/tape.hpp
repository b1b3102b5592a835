#pragma once

#include "softattr/tensor.hpp"

#include <array>
#include <cstddef>
#include <vector>

namespace softattr {

/**
 * Reverse-mode tape over a fixed primitive set. Every call appends one node
 * whose inputs are earlier slots, so the record is topologically ordered by
 * construction. Values are computed eagerly when a node is appended.
 */
class Tape {
 public:
  using Slot = std::size_t;

  enum class Op {
    Leaf,
    Dense,      // x[in], weight[out,in], bias[out]
    Conv3x3,    // x[H,W,Cin], kernel[Cout,3,3,Cin], bias[Cout]; zero padded
    Relu,
    MaxPool2,   // 2x2 window, stride 2
    Flatten,
    Softmax,
    LogSoftmax,
    Index,
    Log,
    Exp,
    Sum,
    Mean,
    Add,
    Scale,
    WeightedSum,  // sum_i w_i x_i with constant w
  };

  Slot leaf(TensorD value);
  Slot dense(Slot x, Slot weight, Slot bias);
  Slot conv3x3(Slot x, Slot kernel, Slot bias);
  Slot relu(Slot x);
  Slot maxpool2(Slot x);
  Slot flatten(Slot x);
  Slot softmax(Slot z);
  Slot log_softmax(Slot z);
  Slot index(Slot x, Eigen::Index i);
  Slot log(Slot x);
  Slot exp(Slot x);
  Slot sum(Slot x);
  Slot mean(Slot x);
  Slot add(Slot a, Slot b);
  Slot scale(Slot x, double factor);
  Slot weighted_sum(Slot x, Eigen::VectorXd weights);

  const TensorD& value(Slot s) const { return nodes_.at(s).value; }
  Op op(Slot s) const { return nodes_.at(s).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the scalar at `seed` with respect to every slot. Slots the
  /// seed does not depend on receive zeros.
  std::vector<TensorD> backward(Slot seed) const;

  /// Re-executes every non-leaf node from the recorded leaves.
  std::vector<TensorD> replay() const;

 private:
  struct Node {
    Op op = Op::Leaf;
    std::array<Slot, 3> inputs{};
    int arity = 0;
    Eigen::Index index = 0;
    double factor = 1.0;
    Eigen::VectorXd weights;
    TensorD value;
    std::vector<Eigen::Index> argmax;  // MaxPool2 routing
  };

  Slot push(Node node);
  void check_slot(Slot s) const;
  static TensorD evaluate(const Node& node, const std::vector<const TensorD*>& in,
                          std::vector<Eigen::Index>* argmax);

  std::vector<Node> nodes_;
};

}  // namespace softattr
