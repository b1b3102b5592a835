#pragma once

#include "softattr/model.hpp"
#include "softattr/score.hpp"

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace softattr {

inline constexpr double kDefaultFiniteDiffStep = 1e-4;

/// Appends the tape ops computing S^c from the logits slot.
inline Tape::Slot append_score(Tape& tape, Tape::Slot logits, ScoreKind kind, Eigen::Index c) {
  const Eigen::Index n = tape.value(logits).size();
  if (c < 0 || c >= n) {
    throw Error("class index " + std::to_string(c) + " out of range for " + std::to_string(n) +
                " classes");
  }
  switch (kind) {
    case ScoreKind::PreSoftmax: return tape.index(logits, c);
    case ScoreKind::PostSoftmax: return tape.index(tape.softmax(logits), c);
    case ScoreKind::LogSoftmax: return tape.index(tape.log_softmax(logits), c);
  }
  throw Error("unknown score kind");
}

/// Score value plus its gradient at the input and at each requested layer.
struct ScoreGradients {
  double score = 0.0;
  TensorD logits;
  TensorD input_grad;
  std::map<std::string, TensorD> activations;
  std::map<std::string, TensorD> layer_grads;
};

inline ScoreGradients score_gradients(const Model& model, const TensorD& input, ScoreKind kind,
                                      Eigen::Index c, std::span<const std::string> taps = {}) {
  ForwardPass pass = model.forward(input, taps);
  const Tape::Slot s = append_score(pass.tape, pass.logits, kind, c);
  const std::vector<TensorD> grads = pass.tape.backward(s);
  ScoreGradients out;
  out.score = pass.tape.value(s)[0];
  out.logits = pass.logits_value();
  out.input_grad = grads[pass.input];
  for (const auto& [name, slot] : pass.taps) {
    out.activations.emplace(name, pass.tape.value(slot));
    out.layer_grads.emplace(name, grads[slot]);
  }
  return out;
}

/// Input gradients of every logit z_i and every probability y_i, from one
/// recorded forward pass.
struct ClassGradients {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  std::vector<TensorD> logit_grads;  // [i] = dz_i/dx
  std::vector<TensorD> prob_grads;   // [i] = dy_i/dx
};

inline ClassGradients class_gradients(const Model& model, const TensorD& input,
                                      const std::string& wrt = "input") {
  const std::string taps[] = {wrt};
  ForwardPass pass = model.forward(input, taps);
  const Tape::Slot x = pass.taps.at(wrt);
  const Tape::Slot y = pass.tape.softmax(pass.logits);
  ClassGradients out;
  out.logits = pass.logits_value().data();
  out.probs = pass.tape.value(y).data();
  for (Eigen::Index i = 0; i < out.logits.size(); ++i) {
    const Tape::Slot zi = pass.tape.index(pass.logits, i);
    const Tape::Slot yi = pass.tape.index(y, i);
    out.logit_grads.push_back(pass.tape.backward(zi)[x]);
    out.prob_grads.push_back(pass.tape.backward(yi)[x]);
  }
  return out;
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
inline TensorD finite_diff(const std::function<double(const TensorD&)>& f, const TensorD& x,
                           double h = kDefaultFiniteDiffStep) {
  if (!(h > 0)) throw Error("finite_diff: step must be positive");
  TensorD grad(x.shape());
  TensorD probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2 * h);
  }
  return grad;
}

using LogitSelector = std::function<double(const Eigen::VectorXd& logits)>;

inline TensorD finite_diff(const Model& model, const TensorD& input, const LogitSelector& select,
                           double h = kDefaultFiniteDiffStep) {
  return finite_diff([&](const TensorD& x) { return select(model.logits(x).data()); }, input, h);
}

}  // namespace softattr
