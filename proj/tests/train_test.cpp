#include "softattr/train.hpp"
#include "softattr/score.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace softattr;

namespace {

TEST(Train, ZeroEpochsReturnsInitialization) {
  TrainOptions opt;
  opt.epochs = 0;
  const TrainResult r = train(opt, gen_dataset(1, 8), gen_dataset(2, 8));
  EXPECT_EQ(r.model, toy::make_cnn(opt.seed));
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, IdenticalSettingsGiveIdenticalWeights) {
  TrainOptions opt;
  opt.epochs = 2;
  const auto tr = gen_dataset(5, 40);
  const auto va = gen_dataset(6, 20);
  EXPECT_EQ(train(opt, tr, va).model, train(opt, tr, va).model);
}

TEST(Train, LossDecreasesOnSmallSet) {
  TrainOptions opt;
  opt.epochs = 5;
  const TrainResult r = train(opt, gen_dataset(5, 200), gen_dataset(6, 100));
  ASSERT_EQ(r.history.size(), 5u);
  EXPECT_LT(r.history.back().mean_loss, r.history.front().mean_loss);
  EXPECT_DOUBLE_EQ(r.val_accuracy, r.history.back().val_accuracy);
}

TEST(Train, DivergenceReportsEpoch) {
  TrainOptions opt;
  opt.epochs = 3;
  opt.lr = 1e200;
  try {
    train(opt, gen_dataset(5, 16), gen_dataset(6, 4));
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 0);
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(Train, InvalidOptionsAreRejected) {
  TrainOptions opt;
  opt.lr = 0.0;
  EXPECT_THROW(train(opt, gen_dataset(5, 4), gen_dataset(6, 4)), Error);
  opt.lr = 0.1;
  EXPECT_THROW(train(opt, {}, gen_dataset(6, 4)), Error);
}

TEST(CrossEntropyOnTape, GradientIsProbabilitiesMinusTarget) {
  Tape t;
  const Tape::Slot z = t.leaf(TensorD::vector({0.4, -0.2, 1.1}));
  const Eigen::VectorXd target = TensorD::vector({0.0, 1.0, 0.0}).data();
  const Tape::Slot loss = append_cross_entropy(t, z, target);
  const Eigen::VectorXd expect = softmax(t.value(z).data()) - target;
  EXPECT_LT((t.backward(loss)[z].data() - expect).cwiseAbs().maxCoeff(), 1e-15);
}

}  // namespace
