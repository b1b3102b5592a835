#include "softattr/attribution.hpp"

#include "softattr/gradient.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace softattr {

std::string_view to_string(Method method) {
  switch (method) {
    case Method::GradCAM: return "gradcam";
    case Method::GradCAMPlus: return "gradcam-plus";
    case Method::IntegratedGradients: return "ig";
    case Method::RSIGradCAM: return "rsi";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  if (s == "gradcam") return Method::GradCAM;
  if (s == "gradcam-plus") return Method::GradCAMPlus;
  if (s == "ig") return Method::IntegratedGradients;
  if (s == "rsi") return Method::RSIGradCAM;
  return std::nullopt;
}

ScoreKind default_score(Method method) {
  switch (method) {
    case Method::GradCAM:
    case Method::GradCAMPlus: return ScoreKind::PreSoftmax;
    case Method::IntegratedGradients:
    case Method::RSIGradCAM: return ScoreKind::PostSoftmax;
  }
  return ScoreKind::PostSoftmax;
}

namespace {

void check_class(const Model& model, Eigen::Index c) {
  if (c < 0 || c >= model.class_count()) {
    throw Error("class index " + std::to_string(c) + " out of range for " +
                std::to_string(model.class_count()) + " classes");
  }
}

void check_cam_layer(const Model& model, const std::string& layer) {
  if (layer == "input" || !model.has_layer(layer)) {
    throw Error("unknown CAM layer '" + layer + "'");
  }
  if (!model.is_spatial(layer)) {
    throw Error("layer '" + layer + "' is not convolutional (output " +
                shape_string(model.output_shape(layer)) + ")");
  }
}

TensorD resolve_baseline(const TensorD& input, const AttributionConfig& cfg) {
  if (cfg.steps < 1) throw Error("path methods need steps >= 1, got " + std::to_string(cfg.steps));
  if (!cfg.baseline) return TensorD(input.shape());
  if (cfg.baseline->shape() != input.shape()) {
    throw Error("baseline shape " + shape_string(cfg.baseline->shape()) +
                " does not match input " + shape_string(input.shape()));
  }
  return *cfg.baseline;
}

SaliencyMap finish(TensorD raw, const AttributionConfig& cfg, int steps) {
  SaliencyMap map;
  map.normalized = rectify_normalize(raw);
  map.raw = std::move(raw);
  map.method = cfg.method;
  map.score = cfg.score;
  map.target_class = cfg.target_class;
  map.steps = steps;
  return map;
}

SaliencyMap cam_common(const Model& model, const TensorD& input, const AttributionConfig& cfg,
                       bool positive_only) {
  check_class(model, cfg.target_class);
  check_cam_layer(model, cfg.layer);
  const std::string taps[] = {cfg.layer};
  const ScoreGradients g = score_gradients(model, input, cfg.score, cfg.target_class, taps);
  const TensorD& a = g.activations.at(cfg.layer);
  Eigen::VectorXd alpha = cam_channel_weights(g.layer_grads.at(cfg.layer), positive_only);
  SaliencyMap map = finish(weighted_channel_sum(a, alpha), cfg, 1);
  map.layer = cfg.layer;
  map.channel_weights = std::move(alpha);
  return map;
}

/// Point on the straight path from baseline to input at fraction s / m.
TensorD path_point(const TensorD& baseline, const TensorD& input, int s, int m) {
  TensorD x(input.shape());
  x.data() = baseline.data() + (static_cast<double>(s) / m) * (input.data() - baseline.data());
  return x;
}

/// Runs fn(s) for s = 1..m, spread over `workers` threads. Each call writes
/// only its own result slot, so the caller reduces in ascending step order.
template <typename Fn>
void for_each_step(int m, int workers, Fn&& fn) {
  workers = std::clamp(workers, 1, m);
  if (workers == 1) {
    for (int s = 1; s <= m; ++s) fn(s);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int s = 1 + w; s <= m; s += workers) fn(s);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

bool is_degenerate(const SaliencyMap& map) {
  if (map.raw.size() == 0) return true;
  const Eigen::VectorXd r = map.raw.data().cwiseMax(0.0);
  return !(r.maxCoeff() > r.minCoeff());
}

TensorD rectify_normalize(const TensorD& raw) {
  TensorD out(raw.shape());
  const Eigen::VectorXd r = raw.data().cwiseMax(0.0);
  const double lo = r.minCoeff();
  const double hi = r.maxCoeff();
  if (hi > lo) out.data() = ((r.array() - lo) / (hi - lo)).matrix();
  return out;
}

Eigen::VectorXd cam_channel_weights(const TensorD& layer_grad, bool positive_only) {
  if (layer_grad.rank() != 3) {
    throw Error("channel weights need an H x W x K gradient, got " + shape_string(layer_grad.shape()));
  }
  const auto px = layer_grad.pixels();
  if (positive_only) return px.cwiseMax(0.0).colwise().mean().transpose();
  return px.colwise().mean().transpose();
}

TensorD weighted_channel_sum(const TensorD& activations, const Eigen::VectorXd& weights) {
  if (activations.rank() != 3 || activations.dim(2) != weights.size()) {
    throw Error("weighted_channel_sum: shape mismatch");
  }
  TensorD out({activations.dim(0), activations.dim(1)});
  out.data().noalias() = activations.pixels() * weights;
  return out;
}

SaliencyMap grad_cam(const Model& model, const TensorD& input, const AttributionConfig& cfg) {
  if (cfg.method != Method::GradCAM) throw Error("grad_cam: config method must be gradcam");
  return cam_common(model, input, cfg, false);
}

SaliencyMap grad_cam_plus(const Model& model, const TensorD& input, const AttributionConfig& cfg) {
  if (cfg.method != Method::GradCAMPlus) {
    throw Error("grad_cam_plus: config method must be gradcam-plus");
  }
  return cam_common(model, input, cfg, true);
}

SaliencyMap integrated_gradients(const Model& model, const TensorD& input,
                                 const AttributionConfig& cfg) {
  if (cfg.method != Method::IntegratedGradients) {
    throw Error("integrated_gradients: config method must be ig");
  }
  check_class(model, cfg.target_class);
  if (input.rank() != 3) {
    throw Error("integrated_gradients expects an H x W x C input, got " + shape_string(input.shape()));
  }
  const TensorD baseline = resolve_baseline(input, cfg);
  const int m = cfg.steps;

  std::vector<TensorD> step_grads(static_cast<std::size_t>(m) + 1);
  for_each_step(m, cfg.workers, [&](int s) {
    const TensorD x = path_point(baseline, input, s, m);
    step_grads[static_cast<std::size_t>(s)] =
        score_gradients(model, x, cfg.score, cfg.target_class).input_grad;
  });
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(input.size());
  for (int s = 1; s <= m; ++s) sum += step_grads[static_cast<std::size_t>(s)].data();

  TensorD ig(input.shape());
  ig.data() = (input.data() - baseline.data()).cwiseProduct(sum) / static_cast<double>(m);
  TensorD raw({input.dim(0), input.dim(1)});
  raw.data() = ig.pixels().rowwise().sum();

  SaliencyMap map = finish(std::move(raw), cfg, m);
  map.layer = "input";
  map.nonstandard_score = cfg.score != ScoreKind::PostSoftmax;
  return map;
}

SaliencyMap rsi_grad_cam(const Model& model, const TensorD& input, const AttributionConfig& cfg) {
  if (cfg.method != Method::RSIGradCAM) throw Error("rsi_grad_cam: config method must be rsi");
  check_class(model, cfg.target_class);
  check_cam_layer(model, cfg.layer);
  const TensorD baseline = resolve_baseline(input, cfg);
  const int m = cfg.steps;
  const std::string taps[] = {cfg.layer};

  std::vector<TensorD> step_grads(static_cast<std::size_t>(m) + 1);
  TensorD a_end;
  for_each_step(m, cfg.workers, [&](int s) {
    ScoreGradients g =
        score_gradients(model, path_point(baseline, input, s, m), cfg.score, cfg.target_class, taps);
    step_grads[static_cast<std::size_t>(s)] = std::move(g.layer_grads.at(cfg.layer));
    if (s == m) a_end = std::move(g.activations.at(cfg.layer));
  });
  const TensorD a_start = model.forward(baseline, taps).tapped(cfg.layer);

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(a_end.size());
  for (int s = 1; s <= m; ++s) sum += step_grads[static_cast<std::size_t>(s)].data();

  TensorD g(a_end.shape());
  g.data() = (a_end.data() - a_start.data()).cwiseProduct(sum) / static_cast<double>(m);
  TensorD raw({g.dim(0), g.dim(1)});
  raw.data() = g.pixels().rowwise().sum();

  SaliencyMap map = finish(std::move(raw), cfg, m);
  map.layer = cfg.layer;
  return map;
}

SaliencyMap attribute(const Model& model, const TensorD& input, const AttributionConfig& cfg) {
  switch (cfg.method) {
    case Method::GradCAM: return grad_cam(model, input, cfg);
    case Method::GradCAMPlus: return grad_cam_plus(model, input, cfg);
    case Method::IntegratedGradients: return integrated_gradients(model, input, cfg);
    case Method::RSIGradCAM: return rsi_grad_cam(model, input, cfg);
  }
  throw Error("unknown attribution method");
}

namespace {

TensorD bilinear(const TensorD& src, Eigen::Index out_h, Eigen::Index out_w) {
  const Eigen::Index h = src.dim(0), w = src.dim(1);
  TensorD out({out_h, out_w});
  auto coord = [](Eigen::Index o, Eigen::Index n_out, Eigen::Index n_in) {
    return n_out == 1 || n_in == 1 ? 0.0
                                   : static_cast<double>(o) * static_cast<double>(n_in - 1) /
                                         static_cast<double>(n_out - 1);
  };
  for (Eigen::Index i = 0; i < out_h; ++i) {
    const double y = coord(i, out_h, h);
    const Eigen::Index y0 = std::min(static_cast<Eigen::Index>(y), h - 1);
    const Eigen::Index y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (Eigen::Index j = 0; j < out_w; ++j) {
      const double x = coord(j, out_w, w);
      const Eigen::Index x0 = std::min(static_cast<Eigen::Index>(x), w - 1);
      const Eigen::Index x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = (1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
      const double bottom = (1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
      out[i * out_w + j] = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

}  // namespace

SaliencyMap upsample(const SaliencyMap& map, Eigen::Index out_h, Eigen::Index out_w) {
  if (map.normalized.rank() != 2) throw Error("upsample: map must be H x W");
  if (out_h < map.normalized.dim(0) || out_w < map.normalized.dim(1)) {
    throw Error("upsample: output must be at least the map size");
  }
  SaliencyMap out = map;
  out.raw = bilinear(map.raw, out_h, out_w);
  out.normalized = bilinear(map.normalized, out_h, out_w);
  out.normalized.data() = out.normalized.data().cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

TensorD overlay(const TensorD& image, const SaliencyMap& map) {
  const SaliencyMap up = upsample(map, image.dim(0), image.dim(1));
  TensorD out({image.dim(0), image.dim(1)});
  for (Eigen::Index p = 0; p < out.size(); ++p) {
    out[p] = image[p * (image.rank() == 3 ? image.dim(2) : 1)] * up.normalized[p];
  }
  return out;
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::VectorXd ranks(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && v[idx[static_cast<std::size_t>(j + 1)]] == v[idx[static_cast<std::size_t>(i)]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks[idx[static_cast<std::size_t>(k)]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double sa = std::sqrt((da * da).sum());
  const double sb = std::sqrt((db * db).sum());
  if (sa == 0.0 || sb == 0.0) return std::nullopt;
  return std::clamp((da * db).sum() / (sa * sb), -1.0, 1.0);
}

}  // namespace

ComparisonMetrics compare_maps(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) {
    throw Error("compare_maps: dimension mismatch " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
  }
  ComparisonMetrics m;
  m.max_abs_diff = max_abs_diff(a, b);
  m.pearson = pearson(a.data(), b.data());
  if (m.pearson) m.spearman = pearson(average_ranks(a.data()), average_ranks(b.data()));
  return m;
}

ComparisonMetrics compare_maps(const SaliencyMap& a, const SaliencyMap& b) {
  return compare_maps(a.normalized, b.normalized);
}

}  // namespace softattr
