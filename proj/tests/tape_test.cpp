#include "softattr/gradient.hpp"
#include "softattr/model.hpp"
#include "softattr/rng.hpp"
#include "softattr/tape.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace softattr;

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
  return v;
}

using Builder = std::function<Tape::Slot(Tape&, const std::vector<Tape::Slot>&)>;

// Reduces op(leaves) to a scalar with fixed random weights, then compares the
// tape gradient of every leaf with central differences.
double max_gradient_error(const Builder& op, const std::vector<TensorD>& leaves, Rng& rng) {
  Tape probe;
  std::vector<Tape::Slot> slots;
  for (const TensorD& l : leaves) slots.push_back(probe.leaf(l));
  const Eigen::VectorXd w = random_vector(probe.value(op(probe, slots)).size(), rng);

  Tape tape;
  std::vector<Tape::Slot> s;
  for (const TensorD& l : leaves) s.push_back(tape.leaf(l));
  const Tape::Slot out = tape.weighted_sum(op(tape, s), w);
  const std::vector<TensorD> grads = tape.backward(out);

  constexpr double h = 1e-5;
  double err = 0.0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    std::vector<TensorD> in = leaves;
    for (Eigen::Index i = 0; i < in[k].size(); ++i) {
      const double orig = in[k][i];
      in[k][i] = orig + h;
      Tape tp;
      std::vector<Tape::Slot> sp;
      for (const TensorD& l : in) sp.push_back(tp.leaf(l));
      const double fp = tp.value(tp.weighted_sum(op(tp, sp), w))[0];
      in[k][i] = orig - h;
      Tape tm;
      std::vector<Tape::Slot> sm;
      for (const TensorD& l : in) sm.push_back(tm.leaf(l));
      const double fm = tm.value(tm.weighted_sum(op(tm, sm), w))[0];
      in[k][i] = orig;
      err = std::max(err, std::abs((fp - fm) / (2 * h) - grads[s[k]][i]));
    }
  }
  return err;
}

Eigen::Index small(Rng& rng, Eigen::Index lo, Eigen::Index hi) {
  return lo + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

struct OpCase {
  const char* name;
  std::function<std::pair<Builder, std::vector<TensorD>>(Rng&)> make;
};

class PrimitiveGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferencesOn100Instances) {
  Rng rng(GetParam().name[0] * 131 + GetParam().name[1]);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto [op, leaves] = GetParam().make(rng);
    worst = std::max(worst, max_gradient_error(op, leaves, rng));
  }
  EXPECT_LT(worst, 1e-6) << GetParam().name;
}

std::pair<Builder, std::vector<TensorD>> unary(Rng& rng, Tape::Slot (Tape::*fn)(Tape::Slot),
                                               double lo = -1.0, double hi = 1.0) {
  const Eigen::Index n = small(rng, 2, 8);
  return {[fn](Tape& t, const std::vector<Tape::Slot>& s) { return (t.*fn)(s[0]); },
          {random_tensor({n}, rng, lo, hi)}};
}

const OpCase kOps[] = {
    {"dense",
     [](Rng& rng) {
       const Eigen::Index in = small(rng, 1, 6), out = small(rng, 1, 5);
       return std::pair<Builder, std::vector<TensorD>>{
           [](Tape& t, const std::vector<Tape::Slot>& s) { return t.dense(s[0], s[1], s[2]); },
           {random_tensor({in}, rng), random_tensor({out, in}, rng), random_tensor({out}, rng)}};
     }},
    {"conv3x3",
     [](Rng& rng) {
       const Eigen::Index h = small(rng, 1, 5), w = small(rng, 1, 5);
       const Eigen::Index cin = small(rng, 1, 3), cout = small(rng, 1, 3);
       return std::pair<Builder, std::vector<TensorD>>{
           [](Tape& t, const std::vector<Tape::Slot>& s) { return t.conv3x3(s[0], s[1], s[2]); },
           {random_tensor({h, w, cin}, rng), random_tensor({cout, 3, 3, cin}, rng),
            random_tensor({cout}, rng)}};
     }},
    {"relu", [](Rng& rng) { return unary(rng, &Tape::relu); }},
    {"maxpool2",
     [](Rng& rng) {
       const Eigen::Index h = 2 * small(rng, 1, 3), w = 2 * small(rng, 1, 3), c = small(rng, 1, 3);
       return std::pair<Builder, std::vector<TensorD>>{
           [](Tape& t, const std::vector<Tape::Slot>& s) { return t.maxpool2(s[0]); },
           {random_tensor({h, w, c}, rng)}};
     }},
    {"flatten",
     [](Rng& rng) {
       return std::pair<Builder, std::vector<TensorD>>{
           [](Tape& t, const std::vector<Tape::Slot>& s) { return t.flatten(s[0]); },
           {random_tensor({small(rng, 1, 3), small(rng, 1, 3), small(rng, 1, 3)}, rng)}};
     }},
    {"softmax", [](Rng& rng) { return unary(rng, &Tape::softmax, -3.0, 3.0); }},
    {"log_softmax", [](Rng& rng) { return unary(rng, &Tape::log_softmax, -3.0, 3.0); }},
    {"log", [](Rng& rng) { return unary(rng, &Tape::log, 0.5, 2.0); }},
    {"exp", [](Rng& rng) { return unary(rng, &Tape::exp); }},
    {"sum", [](Rng& rng) { return unary(rng, &Tape::sum); }},
    {"mean", [](Rng& rng) { return unary(rng, &Tape::mean); }},
    {"index",
     [](Rng& rng) {
       const Eigen::Index n = small(rng, 2, 8);
       const Eigen::Index i = small(rng, 0, n - 1);
       return std::pair<Builder, std::vector<TensorD>>{
           [i](Tape& t, const std::vector<Tape::Slot>& s) { return t.index(s[0], i); },
           {random_tensor({n}, rng)}};
     }},
    {"add",
     [](Rng& rng) {
       const Eigen::Index n = small(rng, 1, 8);
       return std::pair<Builder, std::vector<TensorD>>{
           [](Tape& t, const std::vector<Tape::Slot>& s) { return t.add(s[0], s[1]); },
           {random_tensor({n}, rng), random_tensor({n}, rng)}};
     }},
    {"scale",
     [](Rng& rng) {
       const double f = rng.uniform(-3.0, 3.0);
       return std::pair<Builder, std::vector<TensorD>>{
           [f](Tape& t, const std::vector<Tape::Slot>& s) { return t.scale(s[0], f); },
           {random_tensor({small(rng, 1, 8)}, rng)}};
     }},
    {"composite",
     [](Rng& rng) {
       return std::pair<Builder, std::vector<TensorD>>{
           [](Tape& t, const std::vector<Tape::Slot>& s) {
             const Tape::Slot a = t.maxpool2(t.relu(t.conv3x3(s[0], s[1], s[2])));
             return t.log_softmax(t.dense(t.flatten(a), s[3], s[4]));
           },
           {random_tensor({4, 4, 2}, rng), random_tensor({3, 3, 3, 2}, rng),
            random_tensor({3}, rng), random_tensor({4, 12}, rng), random_tensor({4}, rng)}};
     }},
};

INSTANTIATE_TEST_SUITE_P(Ops, PrimitiveGradient, ::testing::ValuesIn(kOps),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Tape, ScaleGradientIsTheFactor) {
  Tape t;
  const Tape::Slot x = t.leaf(TensorD::vector({2.0}));
  const Tape::Slot y = t.sum(t.scale(x, 3.0));
  EXPECT_DOUBLE_EQ(t.backward(y)[x][0], 3.0);
}

TEST(Tape, DeadReluHasZeroGradient) {
  Tape t;
  const Tape::Slot x = t.leaf(TensorD::vector({-1.0}));
  const Tape::Slot y = t.sum(t.relu(x));
  EXPECT_EQ(t.backward(y)[x][0], 0.0);
}

TEST(Tape, ReluSubgradientAtZeroIsZero) {
  Tape t;
  const Tape::Slot x = t.leaf(TensorD::vector({0.0}));
  EXPECT_EQ(t.backward(t.sum(t.relu(x)))[x][0], 0.0);
}

TEST(Tape, MaxPoolTieGoesToFirstElement) {
  Tape t;
  const Tape::Slot x = t.leaf(TensorD::constant({2, 2, 1}, 1.0));
  const TensorD g = t.backward(t.sum(t.maxpool2(x)))[x];
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1] + g[2] + g[3], 0.0);
}

TEST(Tape, NonScalarSeedIsRejected) {
  Tape t;
  const Tape::Slot x = t.leaf(TensorD::vector({1.0, 2.0}));
  EXPECT_THROW(t.backward(x), Error);
}

TEST(Tape, UnreachableSlotsGetZeroGradients) {
  Tape t;
  const Tape::Slot a = t.leaf(TensorD::vector({1.0, 2.0}));
  const Tape::Slot b = t.leaf(TensorD::vector({3.0}));
  const auto g = t.backward(t.sum(a));
  EXPECT_EQ(g[b], TensorD({1}));
}

TEST(Tape, ShapeErrorsAreRejected) {
  Tape t;
  const Tape::Slot x = t.leaf(TensorD::vector({1.0, 2.0}));
  const Tape::Slot w = t.leaf(TensorD({3, 3}));
  const Tape::Slot b = t.leaf(TensorD({3}));
  EXPECT_THROW(t.dense(x, w, b), Error);
  EXPECT_THROW(t.maxpool2(x), Error);
  EXPECT_THROW(t.index(x, 2), Error);
  EXPECT_THROW(t.add(x, b), Error);
}

TEST(Tape, GradientIsLinearInTheSeed) {
  Rng rng(7);
  const Model m = toy::make_cnn(3);
  const TensorD x = random_tensor({16, 16, 1}, rng, 0.0, 1.0);
  ForwardPass pass = m.forward(x);
  Tape& t = pass.tape;
  const Tape::Slot f = t.index(t.softmax(pass.logits), 1);
  const Tape::Slot g = t.index(t.log_softmax(pass.logits), 2);
  const Tape::Slot combo = t.add(t.scale(f, 2.5), t.scale(g, -0.75));
  const TensorD gc = t.backward(combo)[pass.input];
  const TensorD gf = t.backward(f)[pass.input];
  const TensorD gg = t.backward(g)[pass.input];
  TensorD expect(gc.shape());
  expect.data() = 2.5 * gf.data() - 0.75 * gg.data();
  EXPECT_LT(max_abs_diff(gc, expect), 1e-12);
}

TEST(Tape, ReplayIsBitExact) {
  Rng rng(11);
  const Model m = toy::make_cnn(5);
  const ForwardPass pass = m.forward(random_tensor({16, 16, 1}, rng, 0.0, 1.0));
  const std::vector<TensorD> again = pass.tape.replay();
  ASSERT_EQ(again.size(), pass.tape.size());
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again[i], pass.tape.value(i)) << i;
}

TEST(Tape, ToyCnnInputGradientMatchesFiniteDifferences) {
  Rng rng(2024);
  const Model m = toy::make_cnn(9);
  constexpr double h = 1e-4;
  double worst = 0.0;
  for (int probe = 0; probe < 100; ++probe) {
    TensorD x = random_tensor({16, 16, 1}, rng, 0.0, 1.0);
    const auto c = static_cast<Eigen::Index>(rng.below(4));
    const auto p = static_cast<Eigen::Index>(rng.below(256));
    const ScoreGradients g = score_gradients(m, x, ScoreKind::PreSoftmax, c);
    const double orig = x[p];
    x[p] = orig + h;
    const double fp = m.logits(x)[c];
    x[p] = orig - h;
    const double fm = m.logits(x)[c];
    worst = std::max(worst, std::abs((fp - fm) / (2 * h) - g.input_grad[p]));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(FiniteDiff, QuadraticAtThree) {
  const TensorD g = finite_diff([](const TensorD& x) { return x[0] * x[0]; }, TensorD::vector({3.0}));
  EXPECT_NEAR(g[0], 6.0, 1e-7);
}

TEST(FiniteDiff, ConstantFunctionGivesZeros) {
  const TensorD g = finite_diff([](const TensorD&) { return 4.0; }, TensorD::vector({1.0, -2.0, 5.0}));
  EXPECT_EQ(g, TensorD({3}));
}

TEST(FiniteDiff, SoftmaxComponentMatchesClosedForm) {
  const Model identity({2}, {});
  const TensorD z = TensorD::vector({1.0, 0.0});
  const TensorD g = finite_diff(
      identity, z, [](const Eigen::VectorXd& l) { return softmax(l)[0]; }, 1e-5);
  const double y0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(g[0], y0 * (1 - y0), 1e-8);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff([](const TensorD&) { return 0.0; }, TensorD::vector({1.0}), 0.0), Error);
}

}  // namespace
