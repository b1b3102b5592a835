#pragma once

#include "softattr/dataset.hpp"
#include "softattr/model.hpp"

#include <cstdint>
#include <vector>

namespace softattr {

struct TrainOptions {
  std::uint64_t seed = 42;
  int epochs = 20;
  double lr = 0.05;
  int batch_size = 1;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Model model;
  double val_accuracy = 0.0;
  std::vector<EpochStats> history;
};

/// Thrown when the training loss stops being finite.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(int epoch)
      : Error("training diverged (non-finite loss) in epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Tape-recorded cross-entropy loss of one sample; returns the loss slot.
Tape::Slot append_cross_entropy(Tape& tape, Tape::Slot logits, const Eigen::VectorXd& target);

/// Fraction of samples whose argmax prediction (lowest index on ties) equals the label.
double accuracy(const Model& model, const std::vector<SyntheticSample>& samples);

/**
 * Minibatch SGD on mean cross-entropy, starting from toy::make_cnn(seed).
 * The visiting order is reshuffled each epoch with a stream derived from the
 * seed; accumulation order is fixed, so identical inputs give identical weights.
 */
TrainResult train(const TrainOptions& options, const std::vector<SyntheticSample>& train_set,
                  const std::vector<SyntheticSample>& val_set);

}  // namespace softattr
