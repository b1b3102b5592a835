#pragma once

#include "softattr/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace softattr {

/// Which scalar an attribution method differentiates for class c.
enum class ScoreKind { PreSoftmax, PostSoftmax, LogSoftmax };

inline std::string_view to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::PreSoftmax: return "pre";
    case ScoreKind::PostSoftmax: return "post";
    case ScoreKind::LogSoftmax: return "log";
  }
  return "?";
}

inline std::optional<ScoreKind> parse_score_kind(std::string_view s) {
  if (s == "pre") return ScoreKind::PreSoftmax;
  if (s == "post") return ScoreKind::PostSoftmax;
  if (s == "log") return ScoreKind::LogSoftmax;
  return std::nullopt;
}

template <typename Derived>
using VectorOf = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>;

template <typename Derived>
using MatrixOf = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& z) {
  using std::exp;
  using std::log;
  const auto m = z.maxCoeff();
  return m + log((z.array() - m).exp().sum());
}

/// Softmax evaluated after subtracting max(z); adding a constant to every
/// logit leaves the result unchanged, so the shift is exact.
template <typename Derived>
VectorOf<Derived> softmax(const Eigen::MatrixBase<Derived>& z) {
  VectorOf<Derived> e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// log y = z - logsumexp(z); never log(softmax(z)), which underflows when
/// the distribution saturates.
template <typename Derived>
VectorOf<Derived> log_softmax(const Eigen::MatrixBase<Derived>& z) {
  return (z.array() - logsumexp(z)).matrix();
}

/// J(c, i) = dy_c / dz_i = y_c (delta_ic - y_i).
template <typename Derived>
MatrixOf<Derived> softmax_jacobian(const Eigen::MatrixBase<Derived>& y) {
  MatrixOf<Derived> j = -(y * y.transpose());
  j.diagonal() += y;
  return j;
}

template <typename Derived>
typename Derived::Scalar score_scalar(ScoreKind kind, const Eigen::MatrixBase<Derived>& z,
                                      Eigen::Index c) {
  if (c < 0 || c >= z.size()) {
    throw Error("class index " + std::to_string(c) + " out of range for " +
                std::to_string(z.size()) + " logits");
  }
  switch (kind) {
    case ScoreKind::PreSoftmax: return z[c];
    case ScoreKind::PostSoftmax: return softmax(z)[c];
    case ScoreKind::LogSoftmax: return z[c] - logsumexp(z);
  }
  throw Error("unknown score kind");
}

/// Throws unless t is a non-negative vector summing to 1 (within 1e-12).
template <typename Derived>
void validate_target(const Eigen::MatrixBase<Derived>& t) {
  if ((t.array() < 0).any()) throw Error("target vector has negative components");
  if (std::abs(t.sum() - 1.0) > 1e-12) {
    throw Error("target vector must sum to 1, sums to " + std::to_string(t.sum()));
  }
}

template <typename Derived>
VectorOf<Derived> one_hot(Eigen::Index n, Eigen::Index c) {
  VectorOf<Derived> t = VectorOf<Derived>::Zero(n);
  t[c] = 1;
  return t;
}

inline Eigen::VectorXd one_hot(Eigen::Index n, Eigen::Index c) {
  return one_hot<Eigen::VectorXd>(n, c);
}

/// Cross-entropy -sum_c t_c log y_c evaluated from logits.
template <typename DerivedZ, typename DerivedT>
typename DerivedZ::Scalar cross_entropy(const Eigen::MatrixBase<DerivedZ>& z,
                                        const Eigen::MatrixBase<DerivedT>& t) {
  validate_target(t);
  return -t.dot(log_softmax(z));
}

/// dL/dz = y - t.
template <typename DerivedY, typename DerivedT>
VectorOf<DerivedY> loss_grad_logits(const Eigen::MatrixBase<DerivedY>& y,
                                    const Eigen::MatrixBase<DerivedT>& t) {
  validate_target(t);
  if (y.size() != t.size()) throw Error("loss_grad_logits: length mismatch");
  return y - t;
}

/// dL/dy = -t / y; rejects y_c = 0 where t_c > 0.
template <typename DerivedY, typename DerivedT>
VectorOf<DerivedY> loss_grad_wrt_y(const Eigen::MatrixBase<DerivedY>& y,
                                   const Eigen::MatrixBase<DerivedT>& t) {
  validate_target(t);
  if (y.size() != t.size()) throw Error("loss_grad_wrt_y: length mismatch");
  VectorOf<DerivedY> g(y.size());
  for (Eigen::Index c = 0; c < y.size(); ++c) {
    if (t[c] == 0) {
      g[c] = 0;
    } else if (y[c] <= 0) {
      throw Error("loss_grad_wrt_y: y_" + std::to_string(c) +
                  " is zero with positive target; gradient is infinite");
    } else {
      g[c] = -t[c] / y[c];
    }
  }
  return g;
}

/// Index of the largest component; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace softattr
