#include "softattr/tape.hpp"

#include <cmath>
#include <string>

namespace softattr {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

// Patch matrix for a 3x3 zero-padded convolution: row (i*W + j) holds the
// neighbourhood of pixel (i, j) ordered (di, dj, channel).
RowMatrix im2col(const TensorD& x) {
  const Eigen::Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  RowMatrix col = RowMatrix::Zero(h * w, 9 * c);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      double* row = col.row(i * w + j).data();
      for (Eigen::Index di = 0; di < 3; ++di) {
        const Eigen::Index si = i + di - 1;
        if (si < 0 || si >= h) continue;
        for (Eigen::Index dj = 0; dj < 3; ++dj) {
          const Eigen::Index sj = j + dj - 1;
          if (sj < 0 || sj >= w) continue;
          const double* src = x.data().data() + (si * w + sj) * c;
          std::copy(src, src + c, row + (di * 3 + dj) * c);
        }
      }
    }
  }
  return col;
}

void col2im_add(const RowMatrix& col, TensorD& dx) {
  const Eigen::Index h = dx.dim(0), w = dx.dim(1), c = dx.dim(2);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      const double* row = col.row(i * w + j).data();
      for (Eigen::Index di = 0; di < 3; ++di) {
        const Eigen::Index si = i + di - 1;
        if (si < 0 || si >= h) continue;
        for (Eigen::Index dj = 0; dj < 3; ++dj) {
          const Eigen::Index sj = j + dj - 1;
          if (sj < 0 || sj >= w) continue;
          double* dst = dx.data().data() + (si * w + sj) * c;
          const double* src = row + (di * 3 + dj) * c;
          for (Eigen::Index k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

Eigen::Map<const RowMatrix> kernel_matrix(const TensorD& kernel) {
  return {kernel.data().data(), kernel.dim(0), kernel.size() / kernel.dim(0)};
}

Eigen::VectorXd softmax_of(const Eigen::VectorXd& z) {
  Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

void Tape::check_slot(Slot s) const {
  require(s < nodes_.size(), "tape slot " + std::to_string(s) + " out of range");
}

Tape::Slot Tape::push(Node node) {
  std::vector<const TensorD*> in;
  for (int a = 0; a < node.arity; ++a) {
    check_slot(node.inputs[a]);
    in.push_back(&nodes_[node.inputs[a]].value);
  }
  node.value = evaluate(node, in, &node.argmax);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape::Slot Tape::leaf(TensorD value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

#define SOFTATTR_UNARY(fn, opcode)  \
  Tape::Slot Tape::fn(Slot x) {     \
    Node n;                         \
    n.op = Op::opcode;              \
    n.inputs = {x, 0, 0};           \
    n.arity = 1;                    \
    return push(std::move(n));      \
  }

SOFTATTR_UNARY(relu, Relu)
SOFTATTR_UNARY(maxpool2, MaxPool2)
SOFTATTR_UNARY(flatten, Flatten)
SOFTATTR_UNARY(softmax, Softmax)
SOFTATTR_UNARY(log_softmax, LogSoftmax)
SOFTATTR_UNARY(log, Log)
SOFTATTR_UNARY(exp, Exp)
SOFTATTR_UNARY(sum, Sum)
SOFTATTR_UNARY(mean, Mean)

#undef SOFTATTR_UNARY

Tape::Slot Tape::dense(Slot x, Slot weight, Slot bias) {
  Node n;
  n.op = Op::Dense;
  n.inputs = {x, weight, bias};
  n.arity = 3;
  return push(std::move(n));
}

Tape::Slot Tape::conv3x3(Slot x, Slot kernel, Slot bias) {
  Node n;
  n.op = Op::Conv3x3;
  n.inputs = {x, kernel, bias};
  n.arity = 3;
  return push(std::move(n));
}

Tape::Slot Tape::index(Slot x, Eigen::Index i) {
  Node n;
  n.op = Op::Index;
  n.inputs = {x, 0, 0};
  n.arity = 1;
  n.index = i;
  return push(std::move(n));
}

Tape::Slot Tape::add(Slot a, Slot b) {
  Node n;
  n.op = Op::Add;
  n.inputs = {a, b, 0};
  n.arity = 2;
  return push(std::move(n));
}

Tape::Slot Tape::scale(Slot x, double factor) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {x, 0, 0};
  n.arity = 1;
  n.factor = factor;
  return push(std::move(n));
}

Tape::Slot Tape::weighted_sum(Slot x, Eigen::VectorXd weights) {
  Node n;
  n.op = Op::WeightedSum;
  n.inputs = {x, 0, 0};
  n.arity = 1;
  n.weights = std::move(weights);
  return push(std::move(n));
}

TensorD Tape::evaluate(const Node& node, const std::vector<const TensorD*>& in,
                       std::vector<Eigen::Index>* argmax) {
  switch (node.op) {
    case Op::Leaf:
      return node.value;
    case Op::Dense: {
      const TensorD& x = *in[0];
      const TensorD& w = *in[1];
      const TensorD& b = *in[2];
      require(w.rank() == 2 && b.rank() == 1 && w.dim(0) == b.dim(0),
              "dense: weight/bias shapes " + shape_string(w.shape()) + ", " +
                  shape_string(b.shape()));
      require(x.rank() == 1 && x.dim(0) == w.dim(1),
              "dense: input " + shape_string(x.shape()) + " incompatible with weight " +
                  shape_string(w.shape()));
      Eigen::Map<const RowMatrix> wm(w.data().data(), w.dim(0), w.dim(1));
      Eigen::VectorXd out = wm * x.data() + b.data();
      return TensorD::from_vector(out);
    }
    case Op::Conv3x3: {
      const TensorD& x = *in[0];
      const TensorD& k = *in[1];
      const TensorD& b = *in[2];
      require(k.rank() == 4 && k.dim(1) == 3 && k.dim(2) == 3 && b.rank() == 1 &&
                  b.dim(0) == k.dim(0),
              "conv3x3: kernel/bias shapes " + shape_string(k.shape()) + ", " +
                  shape_string(b.shape()));
      require(x.rank() == 3 && x.dim(2) == k.dim(3),
              "conv3x3: input " + shape_string(x.shape()) + " incompatible with kernel " +
                  shape_string(k.shape()));
      TensorD out({x.dim(0), x.dim(1), k.dim(0)});
      out.pixels().noalias() = im2col(x) * kernel_matrix(k).transpose();
      out.pixels().rowwise() += b.data().transpose();
      return out;
    }
    case Op::Relu: {
      TensorD out = *in[0];
      out.data() = out.data().cwiseMax(0.0);
      return out;
    }
    case Op::MaxPool2: {
      const TensorD& x = *in[0];
      require(x.rank() == 3 && x.dim(0) % 2 == 0 && x.dim(1) % 2 == 0,
              "maxpool2: input " + shape_string(x.shape()) + " needs even H and W");
      const Eigen::Index h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
      TensorD out({h, w, c});
      argmax->assign(static_cast<std::size_t>(out.size()), 0);
      for (Eigen::Index i = 0; i < h; ++i) {
        for (Eigen::Index j = 0; j < w; ++j) {
          for (Eigen::Index k = 0; k < c; ++k) {
            // Candidates visited in ascending flat index; strict '>' keeps the
            // lowest index on ties.
            Eigen::Index best = ((2 * i) * x.dim(1) + 2 * j) * c + k;
            for (Eigen::Index di = 0; di < 2; ++di) {
              for (Eigen::Index dj = 0; dj < 2; ++dj) {
                const Eigen::Index idx = ((2 * i + di) * x.dim(1) + 2 * j + dj) * c + k;
                if (x[idx] > x[best]) best = idx;
              }
            }
            const Eigen::Index o = (i * w + j) * c + k;
            out[o] = x[best];
            (*argmax)[static_cast<std::size_t>(o)] = best;
          }
        }
      }
      return out;
    }
    case Op::Flatten:
      return in[0]->reshaped({in[0]->size()});
    case Op::Softmax: {
      require(in[0]->rank() == 1, "softmax: expects a vector");
      return TensorD::from_vector(softmax_of(in[0]->data()));
    }
    case Op::LogSoftmax: {
      require(in[0]->rank() == 1, "log_softmax: expects a vector");
      const Eigen::VectorXd& z = in[0]->data();
      const double m = z.maxCoeff();
      const double lse = m + std::log((z.array() - m).exp().sum());
      return TensorD::from_vector((z.array() - lse).matrix());
    }
    case Op::Index: {
      require(node.index >= 0 && node.index < in[0]->size(),
              "index " + std::to_string(node.index) + " out of range for " +
                  shape_string(in[0]->shape()));
      return TensorD::vector({(*in[0])[node.index]});
    }
    case Op::Log: {
      TensorD out = *in[0];
      out.data() = out.data().array().log().matrix();
      return out;
    }
    case Op::Exp: {
      TensorD out = *in[0];
      out.data() = out.data().array().exp().matrix();
      return out;
    }
    case Op::Sum:
      return TensorD::vector({in[0]->data().sum()});
    case Op::Mean:
      return TensorD::vector({in[0]->data().mean()});
    case Op::Add: {
      require(in[0]->shape() == in[1]->shape(),
              "add: shape mismatch " + shape_string(in[0]->shape()) + " vs " +
                  shape_string(in[1]->shape()));
      TensorD out = *in[0];
      out.data() += in[1]->data();
      return out;
    }
    case Op::Scale: {
      TensorD out = *in[0];
      out.data() *= node.factor;
      return out;
    }
    case Op::WeightedSum: {
      require(node.weights.size() == in[0]->size(), "weighted_sum: length mismatch");
      return TensorD::vector({node.weights.dot(in[0]->data())});
    }
  }
  throw Error("unknown tape op");
}

std::vector<TensorD> Tape::backward(Slot seed) const {
  check_slot(seed);
  require(nodes_[seed].value.size() == 1,
          "backward seed must be a scalar, got shape " +
              shape_string(nodes_[seed].value.shape()));

  std::vector<TensorD> grad;
  grad.reserve(nodes_.size());
  for (const Node& n : nodes_) grad.emplace_back(n.value.shape());
  grad[seed][0] = 1.0;

  for (Slot s = seed + 1; s-- > 0;) {
    const Node& n = nodes_[s];
    if (n.op == Op::Leaf) continue;
    const TensorD& g = grad[s];
    if (g.data().isZero(0.0)) continue;
    const TensorD& x = nodes_[n.inputs[0]].value;
    TensorD& gx = grad[n.inputs[0]];

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Dense: {
        const TensorD& w = nodes_[n.inputs[1]].value;
        Eigen::Map<const RowMatrix> wm(w.data().data(), w.dim(0), w.dim(1));
        gx.data().noalias() += wm.transpose() * g.data();
        TensorD& gw = grad[n.inputs[1]];
        Eigen::Map<RowMatrix> gwm(gw.data().data(), w.dim(0), w.dim(1));
        gwm.noalias() += g.data() * x.data().transpose();
        grad[n.inputs[2]].data() += g.data();
        break;
      }
      case Op::Conv3x3: {
        const TensorD& k = nodes_[n.inputs[1]].value;
        const RowMatrix col = im2col(x);
        TensorD& gk = grad[n.inputs[1]];
        Eigen::Map<RowMatrix> gkm(gk.data().data(), k.dim(0), k.size() / k.dim(0));
        gkm.noalias() += g.pixels().transpose() * col;
        grad[n.inputs[2]].data() += g.pixels().colwise().sum().transpose();
        const RowMatrix dcol = g.pixels() * kernel_matrix(k);
        col2im_add(dcol, gx);
        break;
      }
      case Op::Relu:
        gx.data().array() += (x.data().array() > 0.0).select(g.data().array(), 0.0);
        break;
      case Op::MaxPool2:
        for (Eigen::Index o = 0; o < g.size(); ++o) {
          gx[n.argmax[static_cast<std::size_t>(o)]] += g[o];
        }
        break;
      case Op::Flatten:
        gx.data() += g.data();
        break;
      case Op::Softmax: {
        // y_j (g_j - g.y) written as y_j sum_i y_i (g_j - g_i), which avoids
        // the cancellation in 1 - y_j when y saturates.
        const Eigen::VectorXd& y = n.value.data();
        for (Eigen::Index j = 0; j < y.size(); ++j) {
          double s = 0.0;
          for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (i != j) s += y[i] * (g[j] - g[i]);
          }
          gx[j] += y[j] * s;
        }
        break;
      }
      case Op::LogSoftmax: {
        // g_j - y_j sum(g) written as sum_i (g_j y_i - y_j g_i), as above.
        const Eigen::VectorXd y = n.value.data().array().exp().matrix();
        for (Eigen::Index j = 0; j < y.size(); ++j) {
          double s = 0.0;
          for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (i != j) s += g[j] * y[i] - y[j] * g[i];
          }
          gx[j] += s;
        }
        break;
      }
      case Op::Index:
        gx[n.index] += g[0];
        break;
      case Op::Log:
        gx.data().array() += g.data().array() / x.data().array();
        break;
      case Op::Exp:
        gx.data().array() += g.data().array() * n.value.data().array();
        break;
      case Op::Sum:
        gx.data().array() += g[0];
        break;
      case Op::Mean:
        gx.data().array() += g[0] / static_cast<double>(x.size());
        break;
      case Op::Add:
        gx.data() += g.data();
        grad[n.inputs[1]].data() += g.data();
        break;
      case Op::Scale:
        gx.data() += n.factor * g.data();
        break;
      case Op::WeightedSum:
        gx.data() += g[0] * n.weights;
        break;
    }
  }
  return grad;
}

std::vector<TensorD> Tape::replay() const {
  std::vector<TensorD> values;
  values.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if (n.op == Op::Leaf) {
      values.push_back(n.value);
      continue;
    }
    std::vector<const TensorD*> in;
    for (int a = 0; a < n.arity; ++a) in.push_back(&values[n.inputs[a]]);
    std::vector<Eigen::Index> argmax;
    values.push_back(evaluate(n, in, &argmax));
  }
  return values;
}

}  // namespace softattr
