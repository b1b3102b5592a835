#include "softattr/train.hpp"

#include "softattr/rng.hpp"
#include "softattr/score.hpp"

#include <cmath>
#include <numeric>

namespace softattr {

Tape::Slot append_cross_entropy(Tape& tape, Tape::Slot logits, const Eigen::VectorXd& target) {
  validate_target(target);
  return tape.weighted_sum(tape.log_softmax(logits), -target);
}

double accuracy(const Model& model, const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const SyntheticSample& s : samples) {
    if (argmax(model.logits(s.image).data()) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainResult train(const TrainOptions& options, const std::vector<SyntheticSample>& train_set,
                  const std::vector<SyntheticSample>& val_set) {
  if (!(options.lr > 0)) throw Error("train: learning rate must be positive");
  if (options.epochs < 0) throw Error("train: epochs must be non-negative");
  if (options.batch_size < 1) throw Error("train: batch size must be at least 1");
  if (train_set.empty() || val_set.empty()) throw Error("train: datasets must be non-empty");

  TrainResult result;
  result.model = toy::make_cnn(options.seed);
  Model& model = result.model;
  const Eigen::Index classes = model.class_count();

  Rng order_rng(options.seed ^ 0x5EEDF00DULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t n_layers = model.layers().size();
  std::vector<std::pair<TensorD, TensorD>> accum(n_layers);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[order_rng.below(i)]);
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      for (std::size_t b = start; b < end; ++b) {
        const SyntheticSample& s = train_set[order[b]];
        ForwardPass pass = model.forward(s.image);
        const Tape::Slot loss = append_cross_entropy(pass.tape, pass.logits, one_hot(classes, s.label));
        const double value = pass.tape.value(loss)[0];
        if (!std::isfinite(value)) throw DivergenceError(epoch);
        loss_sum += value;
        const std::vector<TensorD> grads = pass.tape.backward(loss);
        for (std::size_t l = 0; l < n_layers; ++l) {
          if (!pass.params[l]) continue;
          const auto [ws, bs] = *pass.params[l];
          if (b == start) {
            accum[l] = {grads[ws], grads[bs]};
          } else {
            accum[l].first.data() += grads[ws].data();
            accum[l].second.data() += grads[bs].data();
          }
        }
      }
      const double step = options.lr / static_cast<double>(end - start);
      for (std::size_t l = 0; l < n_layers; ++l) {
        LayerOp& op = model.mutable_layers()[l].op;
        if (auto* d = std::get_if<DenseLayer>(&op)) {
          d->weight.data() -= step * accum[l].first.data();
          d->bias.data() -= step * accum[l].second.data();
        } else if (auto* c = std::get_if<Conv3x3Layer>(&op)) {
          c->kernel.data() -= step * accum[l].first.data();
          c->bias.data() -= step * accum[l].second.data();
        }
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(train_set.size());
    if (!std::isfinite(mean_loss)) throw DivergenceError(epoch);
    result.history.push_back({epoch, mean_loss, accuracy(model, val_set)});
  }
  result.val_accuracy = accuracy(model, val_set);
  return result;
}

}  // namespace softattr
