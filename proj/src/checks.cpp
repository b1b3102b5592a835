#include "softattr/checks.hpp"

#include "softattr/attribution.hpp"
#include "softattr/gradient.hpp"
#include "softattr/rng.hpp"
#include "softattr/score.hpp"
#include "softattr/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>

namespace softattr {

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kCalibrationSeed = 0xCA11B8A7E;
constexpr std::uint64_t kShiftProbeSeed = 0x5B1F7;
constexpr std::size_t kTestSamples = 200;
constexpr double kSaturation = 1.0 - 1e-6;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::vector<CheckInfo> make_registry() {
  using C = Comparison;
  return {
      {"softmax-jacobian", {"softmax-definition", "softmax-jacobian"},
       "dy_c/dz_i = y_c (delta_ic - y_i)", 1e-8, C::Below, false, false},
      {"jacobian-row-sum", {"jacobian-row-sum"}, "sum_i dy_c/dz_i = 0", 1e-12, C::Below, false,
       false},
      {"logit-shift-softmax", {"logit-shift-invariance"}, "softmax(z + t 1) = softmax(z)", 1e-12,
       C::Below, false, false},
      {"chain-rule-equivalence", {"chain-rule-outputs", "chain-rule-logits"},
       "sum_c df/dy_c grad y_c = sum_{c,i} df/dy_c y_c (delta_ic - y_i) grad z_i", 1e-8, C::Below,
       true, false},
      {"post-score-expansion", {"post-score-expansion"},
       "dy_c/dx = y_c sum_i (delta_ic - y_i) dz_i/dx", 1e-8, C::Below, true, false},
      {"shift-outputs", {"logit-shift-invariance"}, "y'(x) = y(x) when z'_i(x) = z_i(x) + t(x)",
       1e-9, C::Below, true, false},
      {"shift-post-gradients", {"logit-shift-invariance"}, "grad y'_c = grad y_c", 1e-7, C::Below,
       true, false},
      {"shift-pre-divergence", {"logit-shift-invariance", "functional-equivalence"},
       "min over samples of |grad z'_c - grad z_c|_inf", 1e-3, C::Above, true, false},
      {"constant-gradient-logits", {"constant-gradient-collapse"}, "dz_i/dx = K for all i", 1e-10,
       C::Below, false, false},
      {"constant-gradient-post", {"constant-gradient-collapse"}, "dy_c/dx = y_c (1 - 1) K = 0",
       1e-10, C::Below, false, false},
      {"constant-gradient-ratio", {"constant-gradient-collapse", "functional-equivalence"},
       "(dz_c/dx)_1 / (dz_c/dx)_2 = K_1 / K_2 = 10", 1e-6, C::AtMost, false, false},
      {"cross-entropy-one-hot", {"cross-entropy"},
       "-sum_c t_c log y_c = -log y_cbar for t = e_cbar", 1e-12, C::Below, false, false},
      {"loss-grad-probs", {"loss-grad-probs"}, "dL/dy_c = -t_c / y_c", 1e-10, C::Below, false,
       false},
      {"loss-grad-logits", {"loss-grad-logits"}, "dL/dz_c = y_c - t_c", 1e-10, C::Below, false,
       false},
      {"loss-grad-general", {"loss-grad-input-general"},
       "dL/dx = -sum_c (t_c - y_c) dz_c/dx = -sum_c (t_c / y_c) dy_c/dx", 1e-8, C::Below, true,
       false},
      {"loss-decomposition", {"loss-grad-input-via-logits", "loss-grad-input-via-probs"},
       "-sum_c' (delta_cc' - y_c') dz_c'/dx = -(1 / y_c) dy_c/dx = dL/dx", 1e-8, C::Below, true,
       false},
      {"log-score-loss-identity", {"log-score-gradient"},
       "d log y_c/dx = (1 / y_c) dy_c/dx = -dL/dx", 1e-8, C::Below, true, false},
      {"exp-loss-form", {"exp-loss-form"}, "dy_c/dx = -d exp(L)/dx", 1e-8, C::Below, true, true},
      {"gradcam-post-log", {"gradcam-log-equivalence"},
       "normalize(relu(M_post)) = normalize(relu(M_log))", 1e-9, C::AtMost, true, false},
      {"rsi-post-log-difference", {"rsi-log-difference"},
       "max over samples of |normalize(M_post) - normalize(M_log)|_inf", 1e-6, C::Above, true,
       false},
      {"ig-completeness", {"ig-completeness"},
       "|sum_j IG_j - (S(x) - S(x0))| / |S(x) - S(x0)|, m = 256", 5e-3, C::AtMost, true, false},
      {"ig-linear-exact", {"ig-completeness"}, "sum_j IG_j = S(x) - S(x0) for linear S", 1e-12,
       C::AtMost, false, false},
      {"saturation-post-weights", {"saturation"}, "|alpha_post|_inf at y_c >= 1 - 1e-6", 1e-4,
       C::Below, true, false},
      {"saturation-pre-weights", {"saturation"}, "|alpha_pre|_inf at y_c >= 1 - 1e-6", 1e-2,
       C::Above, true, false},
      {"saturation-rsi-map", {"saturation"}, "max raw RSI post map at y_c >= 1 - 1e-6", 1e-6,
       C::Above, true, false},
  };
}

bool satisfies(double v, double tol, Comparison cmp) {
  switch (cmp) {
    case Comparison::Below: return v < tol;
    case Comparison::AtMost: return v <= tol;
    case Comparison::Above: return v > tol;
  }
  return false;
}

std::optional<CheckStatus> parse_status(std::string_view s) {
  for (CheckStatus st : {CheckStatus::Passed, CheckStatus::Failed, CheckStatus::Skipped,
                         CheckStatus::Info}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::optional<Comparison> parse_comparison(std::string_view s) {
  for (Comparison c : {Comparison::Below, Comparison::AtMost, Comparison::Above}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Layer index of the final dense layer and of the layer feeding it.
std::pair<std::size_t, std::size_t> dense_head(const Model& model) {
  const auto& layers = model.layers();
  if (layers.empty() || !std::holds_alternative<DenseLayer>(layers.back().op)) {
    throw Error("model has no final dense layer");
  }
  const std::size_t last = layers.size() - 1;
  const bool hidden = std::any_of(layers.begin(), layers.end() - 1, [](const Layer& l) {
    return std::holds_alternative<DenseLayer>(l.op) || std::holds_alternative<Conv3x3Layer>(l.op);
  });
  if (last == 0 || !hidden) throw Error("model has no hidden layer before its final dense layer");
  return {last, last - 1};
}

DenseLayer& final_dense(Model& model) {
  return std::get<DenseLayer>(model.mutable_layers().back().op);
}

/// Rebuilds the model so shapes are re-inferred after editing parameters.
Model rebuilt(const Model& m) { return Model(m.input_shape(), m.layers()); }

TensorD random_image(const Shape& shape, Rng& rng) {
  TensorD x(shape);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  return x;
}

Eigen::VectorXd random_logits(Rng& rng, Eigen::Index n, double scale) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.uniform(-scale, scale);
  return z;
}

/// Strictly positive target summing to 1.
Eigen::VectorXd soft_target(Rng& rng, Eigen::Index n) { return softmax(random_logits(rng, n, 2.0)); }

// --- model-free checks ---------------------------------------------------

struct JacobianErrors {
  double fd = 0.0, row_sum = 0.0;
};

JacobianErrors jacobian_errors(std::uint64_t seed) {
  Rng rng = Rng::for_index(seed, 1);
  constexpr double h = 1e-5;
  JacobianErrors e;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(9));
    Eigen::VectorXd z = random_logits(rng, n, 5.0);
    const Eigen::MatrixXd j = softmax_jacobian(softmax(z));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const Eigen::VectorXd col = (softmax(zp) - softmax(zm)) / (2 * h);
      e.fd = std::max(e.fd, inf_norm(col - j.col(i)));
    }
    e.row_sum = std::max(e.row_sum, inf_norm(j.rowwise().sum()));
  }
  return e;
}

double logit_shift_error(std::uint64_t seed) {
  Rng rng = Rng::for_index(seed, 2);
  double err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(9));
    const Eigen::VectorXd z = random_logits(rng, n, 5.0);
    const double t = rng.uniform(-50.0, 50.0);
    err = std::max(err, inf_norm(softmax((z.array() + t).matrix()) - softmax(z)));
  }
  return err;
}

double cross_entropy_error(std::uint64_t seed) {
  Rng rng = Rng::for_index(seed, 3);
  double err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(9));
    const Eigen::VectorXd z = random_logits(rng, n, 5.0);
    const Eigen::Index c = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    const Eigen::VectorXd t = one_hot(n, c);
    const double direct = -std::log(softmax(z)[c]);
    Tape tape;
    const Tape::Slot loss = append_cross_entropy(tape, tape.leaf(TensorD::from_vector(z)), t);
    err = std::max({err, std::abs(cross_entropy(z, t) - direct),
                    std::abs(tape.value(loss)[0] - direct)});
  }
  return err;
}

struct LossGradErrors {
  double probs = 0.0, logits = 0.0;
};

LossGradErrors loss_grad_errors(std::uint64_t seed) {
  Rng rng = Rng::for_index(seed, 4);
  LossGradErrors e;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(9));
    const Eigen::VectorXd z = random_logits(rng, n, 3.0);
    const Eigen::VectorXd t =
        trial % 2 ? soft_target(rng, n)
                  : one_hot(n, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    const Eigen::VectorXd y = softmax(z);

    Tape ty;
    const Tape::Slot ys = ty.leaf(TensorD::from_vector(y));
    const Tape::Slot ly = ty.weighted_sum(ty.log(ys), -t);
    e.probs = std::max(e.probs, inf_norm(ty.backward(ly)[ys].data() - loss_grad_wrt_y(y, t)));

    Tape tz;
    const Tape::Slot zs = tz.leaf(TensorD::from_vector(z));
    const Tape::Slot via_softmax = tz.weighted_sum(tz.log(tz.softmax(zs)), -t);
    const Tape::Slot via_log_softmax = append_cross_entropy(tz, zs, t);
    const Eigen::VectorXd expect = loss_grad_logits(y, t);
    e.logits = std::max({e.logits, inf_norm(tz.backward(via_softmax)[zs].data() - expect),
                         inf_norm(tz.backward(via_log_softmax)[zs].data() - expect)});
  }
  return e;
}

double ig_linear_error(std::uint64_t seed) {
  Rng rng = Rng::for_index(seed, 5);
  const Eigen::Index n = toy::kImageSize * toy::kImageSize;
  TensorD w({toy::kClasses, n});
  TensorD b({toy::kClasses});
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.1, 0.1);
  for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-1.0, 1.0);
  const Model linear({toy::kImageSize, toy::kImageSize, 1},
                     {{"flatten", FlattenLayer{}}, {"dense", DenseLayer{w, b}}});
  double err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const TensorD x = random_image(linear.input_shape(), rng);
    AttributionConfig cfg;
    cfg.method = Method::IntegratedGradients;
    cfg.score = ScoreKind::PreSoftmax;
    cfg.target_class = trial % toy::kClasses;
    const SaliencyMap map = integrated_gradients(linear, x, cfg);
    const TensorD x0(x.shape());
    const double delta = linear.logits(x)[cfg.target_class] - linear.logits(x0)[cfg.target_class];
    err = std::max(err, std::abs(map.raw.data().sum() - delta));
  }
  return err;
}

// --- model-dependent checks ------------------------------------------------

struct Context {
  const Model& model;
  const std::vector<SyntheticSample>& samples;
  std::vector<std::size_t> correct;
  std::uint64_t seed;
};

TensorD weighted(const std::vector<TensorD>& grads, const Eigen::VectorXd& coeff) {
  TensorD out(grads.front().shape());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    out.data() += coeff[static_cast<Eigen::Index>(i)] * grads[i].data();
  }
  return out;
}

TensorD loss_input_grad(const Model& model, const TensorD& x, const Eigen::VectorXd& t) {
  ForwardPass pass = model.forward(x);
  const Tape::Slot loss = append_cross_entropy(pass.tape, pass.logits, t);
  return pass.tape.backward(loss)[pass.input];
}

void chain_rule_checks(const Context& ctx, std::map<std::string, CheckRecord>& out) {
  Rng rng = Rng::for_index(ctx.seed, 6);
  double chain = 0.0, expansion = 0.0;
  constexpr std::size_t kSamples = 20;
  for (std::size_t s = 0; s < kSamples; ++s) {
    const ClassGradients g = class_gradients(ctx.model, ctx.samples[s].image);
    const Eigen::Index n = g.probs.size();
    const Eigen::VectorXd& y = g.probs;
    // f(y) = sum_c w_c y_c + sum_c y_c^2 / 2
    const Eigen::VectorXd df = random_logits(rng, n, 1.0) + y;
    const TensorD via_outputs = weighted(g.prob_grads, df);
    const Eigen::VectorXd coeff = softmax_jacobian(y).transpose() * df;
    const TensorD via_logits = weighted(g.logit_grads, coeff);
    for (int p = 0; p < 20; ++p) {
      const auto px = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(via_outputs.size())));
      chain = std::max(chain, std::abs(via_outputs[px] - via_logits[px]));
    }
    for (Eigen::Index c = 0; c < n; ++c) {
      Eigen::VectorXd e = -y;
      e[c] += 1.0;
      const TensorD rhs = weighted(g.logit_grads, y[c] * e);
      expansion = std::max(expansion, max_abs_diff(g.prob_grads[static_cast<std::size_t>(c)], rhs));
    }
  }
  out.emplace("chain-rule-equivalence",
              judge("chain-rule-equivalence", chain,
                    "20 random pixels x 20 test samples; f(y) = w.y + |y|^2 / 2"));
  out.emplace("post-score-expansion",
              judge("post-score-expansion", expansion, "all pixels and classes, 20 test samples"));
}

void loss_checks(const Context& ctx, std::map<std::string, CheckRecord>& out) {
  Rng rng = Rng::for_index(ctx.seed, 7);
  double general = 0.0;
  for (std::size_t s = 0; s < 20; ++s) {
    const TensorD& x = ctx.samples[s].image;
    const ClassGradients g = class_gradients(ctx.model, x);
    const Eigen::VectorXd t = soft_target(rng, g.probs.size());
    const TensorD autodiff = loss_input_grad(ctx.model, x, t);
    const TensorD via_logits = weighted(g.logit_grads, -(t - g.probs));
    const TensorD via_probs = weighted(g.prob_grads, -t.cwiseQuotient(g.probs));
    general = std::max({general, max_abs_diff(autodiff, via_logits), max_abs_diff(autodiff, via_probs)});
  }
  out.emplace("loss-grad-general",
              judge("loss-grad-general", general, "soft targets, 20 test samples, all pixels"));

  const std::size_t n_correct = ctx.correct.size();
  const std::string count = std::to_string(n_correct) + " correctly classified test samples";
  double decomposition = 0.0, log_identity = 0.0, exp_form = 0.0, consistent = 0.0;
  for (std::size_t s : ctx.correct) {
    const TensorD& x = ctx.samples[s].image;
    const auto c = static_cast<Eigen::Index>(ctx.samples[s].label);
    const ClassGradients g = class_gradients(ctx.model, x);
    const double yc = g.probs[c];
    const Eigen::VectorXd t = one_hot(g.probs.size(), c);
    const TensorD dl = loss_input_grad(ctx.model, x, t);
    const TensorD& dyc = g.prob_grads[static_cast<std::size_t>(c)];

    const TensorD pre = weighted(g.logit_grads, -(t - g.probs));
    TensorD post(x.shape());
    post.data() = -dyc.data() / yc;
    decomposition = std::max({decomposition, max_abs_diff(pre, post), max_abs_diff(pre, dl)});

    const ScoreGradients lg = score_gradients(ctx.model, x, ScoreKind::LogSoftmax, c);
    TensorD scaled(x.shape());
    scaled.data() = dyc.data() / yc;
    TensorD neg_dl(x.shape());
    neg_dl.data() = -dl.data();
    log_identity = std::max({log_identity, max_abs_diff(lg.input_grad, scaled),
                             max_abs_diff(lg.input_grad, neg_dl)});

    // exp(L) = 1 / y_c, so d exp(L)/dx = exp(L) dL/dx.
    const double exp_l = std::exp(-log_softmax(g.logits)[c]);
    exp_form = std::max(exp_form, inf_norm(dyc.data() + exp_l * dl.data()));
    consistent = std::max(consistent, inf_norm(dyc.data() + yc * dl.data()));
  }
  if (n_correct < 100) {
    const std::string why = "needs >= 100 correctly classified samples, have " + std::to_string(n_correct);
    out.emplace("loss-decomposition", judge("loss-decomposition", std::nullopt, why));
    out.emplace("log-score-loss-identity", judge("log-score-loss-identity", std::nullopt, why));
  } else {
    out.emplace("loss-decomposition", judge("loss-decomposition", decomposition, count));
    out.emplace("log-score-loss-identity", judge("log-score-loss-identity", log_identity, count));
  }
  out.emplace("exp-loss-form",
              judge("exp-loss-form", exp_form,
                    "the exp(L) expansion does not hold; direct differentiation gives "
                    "d exp(L)/dx = -(1 / y_c^2) dy_c/dx; consistent form dy_c/dx = -y_c dL/dx holds to " +
                        fmt(consistent) + " over " + count));
}

void attribution_checks(const Context& ctx, std::map<std::string, CheckRecord>& out) {
  double cam = 0.0;
  std::size_t used = 0;
  for (const SyntheticSample& s : ctx.samples) {
    AttributionConfig cfg;
    cfg.target_class = s.label;
    cfg.score = ScoreKind::PostSoftmax;
    const SaliencyMap post = grad_cam(ctx.model, s.image, cfg);
    if (is_degenerate(post)) continue;
    cfg.score = ScoreKind::LogSoftmax;
    const SaliencyMap log = grad_cam(ctx.model, s.image, cfg);
    cam = std::max(cam, max_abs_diff(post.normalized, log.normalized));
    ++used;
  }
  out.emplace("gradcam-post-log",
              used ? judge("gradcam-post-log", cam,
                           std::to_string(used) + " of " + std::to_string(ctx.samples.size()) +
                               " test samples with non-degenerate post maps")
                   : judge("gradcam-post-log", std::nullopt, "no non-degenerate post maps"));

  double rsi = 0.0;
  constexpr std::size_t kRsiSamples = 8;
  for (std::size_t i = 0; i < kRsiSamples; ++i) {
    const SyntheticSample& s = ctx.samples[i];
    AttributionConfig cfg;
    cfg.method = Method::RSIGradCAM;
    cfg.target_class = s.label;
    cfg.score = ScoreKind::PostSoftmax;
    const SaliencyMap post = rsi_grad_cam(ctx.model, s.image, cfg);
    cfg.score = ScoreKind::LogSoftmax;
    const SaliencyMap log = rsi_grad_cam(ctx.model, s.image, cfg);
    rsi = std::max(rsi, max_abs_diff(post.normalized, log.normalized));
  }
  out.emplace("rsi-post-log-difference",
              judge("rsi-post-log-difference", rsi,
                    "RSI-style layer-level path integral, m = 50, first 8 test samples"));

  double ig = 0.0;
  std::size_t ig_used = 0;
  for (std::size_t s : ctx.correct) {
    if (ig_used == 10) break;
    const SyntheticSample& sample = ctx.samples[s];
    AttributionConfig cfg;
    cfg.method = Method::IntegratedGradients;
    cfg.score = ScoreKind::PostSoftmax;
    cfg.target_class = sample.label;
    cfg.steps = 256;
    const SaliencyMap map = integrated_gradients(ctx.model, sample.image, cfg);
    const TensorD x0(sample.image.shape());
    const double delta =
        score_scalar(ScoreKind::PostSoftmax, ctx.model.logits(sample.image).data(), sample.label) -
        score_scalar(ScoreKind::PostSoftmax, ctx.model.logits(x0).data(), sample.label);
    ig = std::max(ig, std::abs(map.raw.data().sum() - delta) / std::abs(delta));
    ++ig_used;
  }
  out.emplace("ig-completeness",
              ig_used ? judge("ig-completeness", ig,
                              "post-softmax score, zero baseline, " + std::to_string(ig_used) +
                                  " correctly classified test samples")
                      : judge("ig-completeness", std::nullopt, "no correctly classified samples"));
}

void saturation_checks(const Context& ctx, std::map<std::string, CheckRecord>& out) {
  const double scales[] = {1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0};
  for (std::size_t s : ctx.correct) {
    const SyntheticSample& sample = ctx.samples[s];
    for (double scale : scales) {
      TensorD x = sample.image;
      x.data() *= scale;
      const double yc = softmax(ctx.model.logits(x).data())[sample.label];
      if (yc < kSaturation) continue;

      const std::string where = "test sample " + std::to_string(s) + " scaled by " + fmt(scale) +
                                ", 1 - y_c = " + fmt(1.0 - yc);
      AttributionConfig cfg;
      cfg.target_class = sample.label;
      cfg.score = ScoreKind::PostSoftmax;
      const double post = inf_norm(grad_cam(ctx.model, x, cfg).channel_weights);
      cfg.score = ScoreKind::PreSoftmax;
      const double pre = inf_norm(grad_cam(ctx.model, x, cfg).channel_weights);
      cfg.method = Method::RSIGradCAM;
      cfg.score = ScoreKind::PostSoftmax;
      const double rsi = rsi_grad_cam(ctx.model, x, cfg).raw.data().maxCoeff();
      out.emplace("saturation-post-weights", judge("saturation-post-weights", post, where));
      out.emplace("saturation-pre-weights", judge("saturation-pre-weights", pre, where));
      out.emplace("saturation-rsi-map", judge("saturation-rsi-map", rsi, where + ", m = 50"));
      return;
    }
  }
  for (const char* id : {"saturation-post-weights", "saturation-pre-weights", "saturation-rsi-map"}) {
    out.emplace(id, judge(id, std::nullopt, "no sample reached y_c >= 1 - 1e-6"));
  }
}

}  // namespace

std::string_view to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::Passed: return "passed";
    case CheckStatus::Failed: return "failed";
    case CheckStatus::Skipped: return "skipped";
    case CheckStatus::Info: return "info";
  }
  return "?";
}

std::string_view to_string(Comparison cmp) {
  switch (cmp) {
    case Comparison::Below: return "<";
    case Comparison::AtMost: return "<=";
    case Comparison::Above: return ">";
  }
  return "?";
}

const std::vector<CheckInfo>& check_registry() {
  static const std::vector<CheckInfo> registry = make_registry();
  return registry;
}

const CheckInfo& check_info(std::string_view id) {
  for (const CheckInfo& info : check_registry()) {
    if (info.id == id) return info;
  }
  throw Error("unknown check id '" + std::string(id) + "'");
}

CheckRecord judge(std::string_view id, std::optional<double> measured, std::string notes) {
  const CheckInfo& info = check_info(id);
  CheckRecord r{info.id, info.labels, info.formula, measured, info.tolerance, info.comparison,
                CheckStatus::Failed, std::move(notes)};
  if (measured && !std::isfinite(*measured)) r.measured.reset();
  if (info.informational) {
    r.status = CheckStatus::Info;
  } else if (r.measured && satisfies(*r.measured, info.tolerance, info.comparison)) {
    r.status = CheckStatus::Passed;
  }
  return r;
}

CheckRecord skipped(std::string_view id, std::string notes) {
  CheckRecord r = judge(id, std::nullopt, std::move(notes));
  r.status = CheckStatus::Skipped;
  return r;
}

const CheckRecord& CheckReport::at(std::string_view id) const {
  for (const CheckRecord& r : records) {
    if (r.id == id) return r;
  }
  throw Error("report has no check '" + std::string(id) + "'");
}

bool CheckReport::all_passed() const {
  return std::none_of(records.begin(), records.end(),
                      [](const CheckRecord& r) { return r.status == CheckStatus::Failed; });
}

std::string CheckReport::to_json() const {
  json arr = json::array();
  for (const CheckRecord& r : records) {
    json e;
    e["id"] = r.id;
    e["equation"] = r.labels;
    e["quote"] = r.formula;
    e["measured_error"] = r.measured ? json(*r.measured) : json(nullptr);
    e["tolerance"] = r.tolerance;
    e["comparison"] = to_string(r.comparison);
    e["status"] = to_string(r.status);
    e["notes"] = r.notes;
    arr.push_back(std::move(e));
  }
  return arr.dump(2) + "\n";
}

CheckReport CheckReport::from_json(std::string_view text) {
  CheckReport report;
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw Error("check report must be a JSON array");
    for (const json& e : arr) {
      CheckRecord r;
      r.id = e.at("id").get<std::string>();
      r.labels = e.at("equation").get<std::vector<std::string>>();
      r.formula = e.at("quote").get<std::string>();
      if (!e.at("measured_error").is_null()) r.measured = e.at("measured_error").get<double>();
      r.tolerance = e.at("tolerance").get<double>();
      const auto cmp = parse_comparison(e.at("comparison").get<std::string>());
      const auto status = parse_status(e.at("status").get<std::string>());
      if (!cmp || !status) throw Error("bad comparison or status in check '" + r.id + "'");
      r.comparison = *cmp;
      r.status = *status;
      r.notes = e.at("notes").get<std::string>();
      report.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed check report: ") + e.what());
  }
  return report;
}

ShiftedModelPair build_shifted_pair(const Model& base, double shift_weight,
                                    std::optional<Eigen::Index> unit) {
  const auto [head, source] = dense_head(base);
  const std::string layer = base.layers()[source].name;
  const std::string taps[] = {layer};
  const Eigen::Index width = shape_size(base.output_shape(layer));

  Eigen::Index h = 0;
  if (unit) {
    if (*unit < 0 || *unit >= width) throw Error("shift unit out of range");
    h = *unit;
  } else {
    Eigen::VectorXd lowest = Eigen::VectorXd::Constant(width, std::numeric_limits<double>::infinity());
    for (const SyntheticSample& s : gen_dataset(kCalibrationSeed, 32)) {
      lowest = lowest.cwiseMin(base.forward(s.image, taps).tapped(layer).data());
    }
    for (Eigen::Index i = 1; i < width; ++i) {
      if (lowest[i] > lowest[h]) h = i;
    }
  }

  Model shifted = base;
  TensorD& w = final_dense(shifted).weight;
  for (Eigen::Index i = 0; i < w.dim(0); ++i) w[i * width + h] += shift_weight;
  shifted = rebuilt(shifted);

  Rng rng(kShiftProbeSeed);
  for (int trial = 0; trial < 100; ++trial) {
    const TensorD x = random_image(base.input_shape(), rng);
    const ForwardPass pass = base.forward(x, taps);
    const double t = shift_weight * pass.tapped(layer)[h];
    const Eigen::VectorXd expect = (pass.logits_value().data().array() + t).matrix();
    const double err = inf_norm(shifted.logits(x).data() - expect);
    if (!(err <= 1e-12)) throw Error("shifted logits deviate from z + t by " + fmt(err));
  }
  return {base, std::move(shifted), shift_weight,
          layer + "[" + std::to_string(h) + "]", layer, h};
}

std::vector<CheckRecord> check_shift_invariance(const ShiftedModelPair& pair,
                                                std::span<const SyntheticSample> samples) {
  if (samples.empty()) throw Error("check_shift_invariance needs samples");
  double outputs = 0.0, post = 0.0;
  double divergence = std::numeric_limits<double>::infinity();
  for (const SyntheticSample& s : samples) {
    const ClassGradients a = class_gradients(pair.base, s.image);
    const ClassGradients b = class_gradients(pair.shifted, s.image);
    outputs = std::max(outputs, inf_norm(a.probs - b.probs));
    for (std::size_t c = 0; c < a.prob_grads.size(); ++c) {
      post = std::max(post, max_abs_diff(a.prob_grads[c], b.prob_grads[c]));
    }
    const auto c = static_cast<std::size_t>(s.label);
    divergence = std::min(divergence, max_abs_diff(a.logit_grads[c], b.logit_grads[c]));
  }
  const std::string where = std::to_string(samples.size()) + " samples, shift weight " +
                            fmt(pair.shift_weight) + " on " + pair.shift_source;
  return {judge("shift-outputs", outputs, where), judge("shift-post-gradients", post, where),
          judge("shift-pre-divergence", divergence, where + ", class = label")};
}

ConstantGradientHead build_constant_gradient_head(const Model& base, double k, Eigen::Index unit) {
  const auto [head, source] = dense_head(base);
  Model m = base;
  TensorD& w = final_dense(m).weight;
  const Eigen::Index width = w.dim(1);
  if (unit < 0 || unit >= width) throw Error("constant-gradient unit out of range");
  Eigen::VectorXd row = w.data().head(width);
  row[unit] = k;
  for (Eigen::Index i = 0; i < w.dim(0); ++i) w.data().segment(i * width, width) = row;
  return {rebuilt(m), k, base.layers()[source].name, unit};
}

namespace {

struct HeadGradients {
  double logit_dev = 0.0;           // max |dz_i/da_h - K|
  double post = 0.0;                // max |dy_c/da_h| and |dy_c/dx|
  std::vector<double> pre;          // dz_c/da_h per (sample, class)
};

HeadGradients head_gradients(const ConstantGradientHead& head,
                             std::span<const SyntheticSample> samples) {
  HeadGradients out;
  const std::string taps[] = {head.source_layer};
  for (const SyntheticSample& s : samples) {
    ForwardPass pass = head.model.forward(s.image, taps);
    const Tape::Slot a = pass.taps.at(head.source_layer);
    const Tape::Slot y = pass.tape.softmax(pass.logits);
    const Eigen::Index n = pass.logits_value().size();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto gz = pass.tape.backward(pass.tape.index(pass.logits, i));
      const double dz = gz[a][head.source_unit];
      out.logit_dev = std::max(out.logit_dev, std::abs(dz - head.k));
      out.pre.push_back(dz);
      const auto gy = pass.tape.backward(pass.tape.index(y, i));
      out.post = std::max({out.post, std::abs(gy[a][head.source_unit]),
                           inf_norm(gy[pass.input].data())});
    }
  }
  return out;
}

}  // namespace

std::vector<CheckRecord> check_constant_gradient_collapse(const ConstantGradientHead& head,
                                                          std::span<const SyntheticSample> samples) {
  if (samples.empty()) throw Error("check_constant_gradient_collapse needs samples");
  const ConstantGradientHead second = build_constant_gradient_head(head.model, head.k / 10.0,
                                                                   head.source_unit);
  const HeadGradients g1 = head_gradients(head, samples);
  const HeadGradients g2 = head_gradients(second, samples);

  double ratio_dev = 0.0;
  for (std::size_t i = 0; i < g1.pre.size(); ++i) {
    ratio_dev = std::max(ratio_dev, std::abs(g1.pre[i] / g2.pre[i] - 10.0));
  }
  const std::string where = std::to_string(samples.size()) + " samples, x = " + head.source_layer +
                            "[" + std::to_string(head.source_unit) + "]";
  return {judge("constant-gradient-logits", std::max(g1.logit_dev, g2.logit_dev),
                where + ", K = " + fmt(head.k) + " and " + fmt(second.k)),
          judge("constant-gradient-post", std::max(g1.post, g2.post),
                where + "; also max over input pixels, both heads"),
          judge("constant-gradient-ratio", ratio_dev,
                where + ", K_1 = " + fmt(head.k) + ", K_2 = " + fmt(second.k))};
}

CheckReport run_all_checks(std::uint64_t seed, const Model* trained) {
  std::map<std::string, CheckRecord> out;

  const JacobianErrors jac = jacobian_errors(seed);
  out.emplace("softmax-jacobian",
              judge("softmax-jacobian", jac.fd, "100 random logit vectors, n in [2, 10], h = 1e-5"));
  out.emplace("jacobian-row-sum", judge("jacobian-row-sum", jac.row_sum, "same 100 vectors"));
  out.emplace("logit-shift-softmax",
              judge("logit-shift-softmax", logit_shift_error(seed), "100 vectors, t in [-50, 50]"));
  out.emplace("cross-entropy-one-hot",
              judge("cross-entropy-one-hot", cross_entropy_error(seed), "100 random one-hot cases"));
  const LossGradErrors lg = loss_grad_errors(seed);
  out.emplace("loss-grad-probs",
              judge("loss-grad-probs", lg.probs, "autodiff through log, 100 cases"));
  out.emplace("loss-grad-logits",
              judge("loss-grad-logits", lg.logits,
                    "autodiff through softmax + log and through log-softmax, 100 cases"));
  out.emplace("ig-linear-exact",
              judge("ig-linear-exact", ig_linear_error(seed), "flatten + dense model, 10 inputs"));

  const std::vector<SyntheticSample> samples = gen_dataset(split_seeds(seed).test, kTestSamples);
  const std::span<const SyntheticSample> first20(samples.data(), 20);
  const Model initialized = toy::make_cnn(seed);
  const ConstantGradientHead cg =
      build_constant_gradient_head(trained ? *trained : initialized, 1.0, 0);
  for (CheckRecord& r : check_constant_gradient_collapse(cg, first20)) {
    r.notes += trained ? ", trained model" : ", initialized model";
    out.emplace(r.id, std::move(r));
  }

  if (trained) {
    Context ctx{*trained, samples, {}, seed};
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (argmax(trained->logits(samples[i].image).data()) == static_cast<Eigen::Index>(samples[i].label)) {
        ctx.correct.push_back(i);
      }
    }
    chain_rule_checks(ctx, out);
    const ShiftedModelPair pair = build_shifted_pair(*trained, 5.0);
    for (CheckRecord& r :
         check_shift_invariance(pair, std::span<const SyntheticSample>(samples.data(), 50))) {
      out.emplace(r.id, std::move(r));
    }
    loss_checks(ctx, out);
    attribution_checks(ctx, out);
    saturation_checks(ctx, out);
  }

  CheckReport report;
  for (const CheckInfo& info : check_registry()) {
    auto it = out.find(info.id);
    if (it != out.end()) {
      report.records.push_back(std::move(it->second));
    } else if (info.needs_model && !trained) {
      report.records.push_back(skipped(info.id, "no trained model"));
    } else {
      throw std::logic_error("check '" + info.id + "' produced no record");
    }
  }
  return report;
}

}  // namespace softattr
