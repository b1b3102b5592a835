#pragma once

#include "softattr/model.hpp"
#include "softattr/score.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace softattr {

enum class Method { GradCAM, GradCAMPlus, IntegratedGradients, RSIGradCAM };

std::string_view to_string(Method method);
std::optional<Method> parse_method(std::string_view s);

/// Grad-CAM and its plus variant conventionally use logits; the path methods
/// use post-softmax scores.
ScoreKind default_score(Method method);

inline constexpr int kDefaultPathSteps = 50;

struct AttributionConfig {
  Method method = Method::GradCAM;
  ScoreKind score = ScoreKind::PreSoftmax;
  Eigen::Index target_class = 0;
  std::string layer = toy::kCamLayer;
  int steps = kDefaultPathSteps;
  /// Path-method baseline; all-zeros when empty.
  std::optional<TensorD> baseline;
  /// Threads used for the per-step gradients of path methods.
  int workers = 1;
};

struct SaliencyMap {
  TensorD raw;         // H x W
  TensorD normalized;  // H x W, in [0,1]
  Method method = Method::GradCAM;
  ScoreKind score = ScoreKind::PreSoftmax;
  Eigen::Index target_class = 0;
  std::string layer;
  int steps = 1;
  /// IG with a score other than post-softmax.
  bool nonstandard_score = false;
  /// Unrectified channel weights (CAM methods only).
  Eigen::VectorXd channel_weights;
};

/// True when the rectified raw map is constant, so the normalized map is all zeros.
bool is_degenerate(const SaliencyMap& map);

/// (relu(raw) - min) / (max - min); all zeros when relu(raw) is constant.
TensorD rectify_normalize(const TensorD& raw);

/// Spatial mean of gradients per channel of an H x W x K tensor; with
/// `positive_only` negative gradients are dropped first.
Eigen::VectorXd cam_channel_weights(const TensorD& layer_grad, bool positive_only);

/// M_ij = sum_k weights_k A_ij^k.
TensorD weighted_channel_sum(const TensorD& activations, const Eigen::VectorXd& weights);

SaliencyMap grad_cam(const Model& model, const TensorD& input, const AttributionConfig& cfg);
SaliencyMap grad_cam_plus(const Model& model, const TensorD& input, const AttributionConfig& cfg);
SaliencyMap integrated_gradients(const Model& model, const TensorD& input,
                                 const AttributionConfig& cfg);
SaliencyMap rsi_grad_cam(const Model& model, const TensorD& input, const AttributionConfig& cfg);

/// Dispatches on cfg.method.
SaliencyMap attribute(const Model& model, const TensorD& input, const AttributionConfig& cfg);

/// Bilinear resize with corners aligned; raw and normalized are both resized.
SaliencyMap upsample(const SaliencyMap& map, Eigen::Index out_h, Eigen::Index out_w);

/// Image pixels scaled by the map (upsampled to the image size first).
TensorD overlay(const TensorD& image, const SaliencyMap& map);

struct ComparisonMetrics {
  /// Empty when either map is constant.
  std::optional<double> pearson;
  std::optional<double> spearman;
  double max_abs_diff = 0.0;
};

ComparisonMetrics compare_maps(const SaliencyMap& a, const SaliencyMap& b);
ComparisonMetrics compare_maps(const TensorD& a, const TensorD& b);

/// Fractional ranks (1-based) with ties averaged.
Eigen::VectorXd average_ranks(const Eigen::VectorXd& v);

}  // namespace softattr
