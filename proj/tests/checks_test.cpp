#include "softattr/checks.hpp"
#include "softattr/gradient.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace softattr;

namespace {

// Every gradient identity the verifier is expected to cover.
const std::vector<std::string> kExpectedLabels = {
    "softmax-definition",         "softmax-jacobian",
    "jacobian-row-sum",           "logit-shift-invariance",
    "chain-rule-outputs",         "chain-rule-logits",
    "post-score-expansion",       "functional-equivalence",
    "constant-gradient-collapse", "cross-entropy",
    "loss-grad-probs",            "loss-grad-logits",
    "loss-grad-input-general",    "loss-grad-input-via-logits",
    "loss-grad-input-via-probs",  "log-score-gradient",
    "exp-loss-form",              "gradcam-log-equivalence",
    "rsi-log-difference",         "ig-completeness",
    "saturation",
};

TEST(Registry, IdsAreUnique) {
  std::set<std::string> ids;
  for (const CheckInfo& info : check_registry()) EXPECT_TRUE(ids.insert(info.id).second) << info.id;
  EXPECT_THROW(check_info("no-such-check"), Error);
}

TEST(Registry, EveryIdentityIsCovered) {
  std::set<std::string> covered;
  for (const CheckInfo& info : check_registry()) {
    EXPECT_FALSE(info.labels.empty()) << info.id;
    EXPECT_FALSE(info.formula.empty()) << info.id;
    covered.insert(info.labels.begin(), info.labels.end());
  }
  for (const std::string& label : kExpectedLabels) EXPECT_TRUE(covered.count(label)) << label;
}

TEST(Judge, ComparesAgainstRegistryTolerance) {
  EXPECT_EQ(judge("jacobian-row-sum", 1e-13).status, CheckStatus::Passed);
  EXPECT_EQ(judge("jacobian-row-sum", 1e-12).status, CheckStatus::Failed);
  EXPECT_EQ(judge("constant-gradient-ratio", 1e-6).status, CheckStatus::Passed);
  EXPECT_EQ(judge("shift-pre-divergence", 1e-3).status, CheckStatus::Failed);
  EXPECT_EQ(judge("shift-pre-divergence", 2e-3).status, CheckStatus::Passed);
  EXPECT_EQ(judge("jacobian-row-sum", std::nullopt).status, CheckStatus::Failed);
  EXPECT_EQ(judge("jacobian-row-sum", std::nan("")).status, CheckStatus::Failed);
  EXPECT_EQ(judge("exp-loss-form", 1.0).status, CheckStatus::Info);
}

std::vector<SyntheticSample> samples(std::size_t n) { return gen_dataset(split_seeds(42).test, n); }

TEST(ShiftInvariance, ZeroShiftIsBitIdenticalAndFailsDivergence) {
  const ShiftedModelPair pair = build_shifted_pair(toy::make_cnn(3), 0.0);
  EXPECT_TRUE(pair.base == pair.shifted);
  const auto data = samples(4);
  const auto records = check_shift_invariance(pair, data);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(*records[0].measured, 0.0);
  EXPECT_EQ(*records[1].measured, 0.0);
  EXPECT_EQ(records[2].id, "shift-pre-divergence");
  EXPECT_EQ(records[2].status, CheckStatus::Failed);
}

TEST(ShiftInvariance, NonzeroShiftKeepsOutputsAndPostGradients) {
  const ShiftedModelPair pair = build_shifted_pair(toy::make_cnn(3), 5.0);
  EXPECT_EQ(pair.source_layer, "flatten");
  const auto data = samples(6);
  for (const CheckRecord& r : check_shift_invariance(pair, data)) {
    EXPECT_EQ(r.status, CheckStatus::Passed) << r.id << " " << *r.measured;
  }
  // z'_c - z_c = w a_h for every class.
  for (const SyntheticSample& s : data) {
    const std::string taps[] = {pair.source_layer};
    const ForwardPass p = pair.base.forward(s.image, taps);
    const Eigen::VectorXd diff = pair.shifted.logits(s.image).data() - p.logits_value().data();
    const double t = 5.0 * p.tapped(pair.source_layer)[pair.source_unit];
    EXPECT_LT((diff.array() - t).abs().maxCoeff(), 1e-12);
  }
}

TEST(ShiftInvariance, NeedsHiddenLayer) {
  const Model direct({4}, {{"dense", DenseLayer{TensorD({2, 4}), TensorD({2})}}});
  EXPECT_THROW(build_shifted_pair(direct, 1.0), Error);
  EXPECT_THROW(build_shifted_pair(toy::make_cnn(1), 1.0, 256), Error);
}

TEST(ConstantGradient, LogitGradientsEqualKAndPostGradientsVanish) {
  const ConstantGradientHead head = build_constant_gradient_head(toy::make_cnn(5), 1.0);
  const auto data = samples(5);
  const auto records = check_constant_gradient_collapse(head, data);
  ASSERT_EQ(records.size(), 3u);
  for (const CheckRecord& r : records) EXPECT_EQ(r.status, CheckStatus::Passed) << r.id;
  const std::string taps[] = {head.source_layer};
  ForwardPass pass = head.model.forward(data[0].image, taps);
  const auto g = pass.tape.backward(pass.tape.index(pass.logits, 2));
  EXPECT_NEAR(g[pass.taps.at(head.source_layer)][0], 1.0, 1e-12);
}

TEST(ConstantGradient, ZeroKIsAllowedForTheHead) {
  const ConstantGradientHead head = build_constant_gradient_head(toy::make_cnn(5), 0.0);
  const auto& w = std::get<DenseLayer>(head.model.layers().back().op).weight;
  for (Eigen::Index i = 0; i < w.dim(0); ++i) EXPECT_EQ(w[i * w.dim(1)], 0.0);
  EXPECT_THROW(build_constant_gradient_head(toy::make_cnn(5), 1.0, 999), Error);
}

TEST(RunAllChecks, WithoutModelSkipsModelChecks) {
  const CheckReport report = run_all_checks(42);
  ASSERT_EQ(report.records.size(), check_registry().size());
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const CheckInfo& info = check_registry()[i];
    const CheckRecord& r = report.records[i];
    EXPECT_EQ(r.id, info.id);
    if (info.needs_model) {
      EXPECT_EQ(r.status, CheckStatus::Skipped) << r.id;
      EXPECT_FALSE(r.measured);
    } else {
      EXPECT_EQ(r.status, CheckStatus::Passed) << r.id;
    }
  }
  EXPECT_TRUE(report.all_passed());
}

TEST(RunAllChecks, IsDeterministicAndRoundTripsThroughJson) {
  const std::string a = run_all_checks(7).to_json();
  EXPECT_EQ(a, run_all_checks(7).to_json());
  EXPECT_EQ(CheckReport::from_json(a).to_json(), a);
  EXPECT_EQ(a.back(), '\n');
}

TEST(CheckReport, RejectsMalformedJson) {
  EXPECT_THROW(CheckReport::from_json("{}"), Error);
  EXPECT_THROW(CheckReport::from_json("[{\"id\": 3}]"), Error);
}

}  // namespace
