#pragma once

#include "softattr/dataset.hpp"
#include "softattr/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace softattr {

enum class CheckStatus { Passed, Failed, Skipped, Info };
std::string_view to_string(CheckStatus status);

/// How the measured value is compared with the tolerance.
enum class Comparison { Below, AtMost, Above };
std::string_view to_string(Comparison cmp);

struct CheckInfo {
  std::string id;
  /// Names of the gradient identities this check exercises.
  std::vector<std::string> labels;
  /// The identity written as a formula.
  std::string formula;
  double tolerance = 0.0;
  Comparison comparison = Comparison::Below;
  bool needs_model = false;
  /// Informational entries are measured and reported but never gate.
  bool informational = false;
};

/// Every check in execution order. Ids are unique.
const std::vector<CheckInfo>& check_registry();
const CheckInfo& check_info(std::string_view id);

struct CheckRecord {
  std::string id;
  std::vector<std::string> labels;
  std::string formula;
  /// Empty for skipped checks.
  std::optional<double> measured;
  double tolerance = 0.0;
  Comparison comparison = Comparison::Below;
  CheckStatus status = CheckStatus::Skipped;
  std::string notes;
};

/// Record for `id` judged against its registry tolerance. A missing or NaN
/// measurement fails.
CheckRecord judge(std::string_view id, std::optional<double> measured, std::string notes = {});
CheckRecord skipped(std::string_view id, std::string notes);

struct CheckReport {
  std::vector<CheckRecord> records;

  const CheckRecord& at(std::string_view id) const;
  /// True when no record has status Failed.
  bool all_passed() const;
  /// JSON array, one object per record, 2-space indented with a trailing newline.
  std::string to_json() const;
  static CheckReport from_json(std::string_view text);
};

/// Base model plus a copy whose logits all receive w * a_h(x), where a_h is
/// one unit of the input to the final dense layer.
struct ShiftedModelPair {
  Model base;
  Model shifted;
  double shift_weight = 0.0;
  /// "<layer>[<unit>]".
  std::string shift_source;
  std::string source_layer;
  Eigen::Index source_unit = 0;
};

/// Picks the dense-input unit with the largest minimum activation over a
/// fixed calibration set unless `unit` is given. Throws when the final layer
/// is not dense or nothing parametric precedes it, or when z' = z + t fails
/// to hold within 1e-12 on 100 random inputs.
ShiftedModelPair build_shifted_pair(const Model& base, double shift_weight,
                                    std::optional<Eigen::Index> unit = std::nullopt);

/// Records "shift-outputs", "shift-post-gradients" and "shift-pre-divergence".
std::vector<CheckRecord> check_shift_invariance(const ShiftedModelPair& pair,
                                                std::span<const SyntheticSample> samples);

/// Copy of a model whose final dense layer has identical rows, each equal to
/// the base's first row with entry `unit` set to K, so dz_i/da_unit = K for
/// every class i.
struct ConstantGradientHead {
  Model model;
  double k = 0.0;
  std::string source_layer;
  Eigen::Index source_unit = 0;
};

ConstantGradientHead build_constant_gradient_head(const Model& base, double k,
                                                  Eigen::Index unit = 0);

/// Records "constant-gradient-logits", "constant-gradient-post" and
/// "constant-gradient-ratio"; the last compares `head` against a second head
/// with K / 10.
std::vector<CheckRecord> check_constant_gradient_collapse(const ConstantGradientHead& head,
                                                          std::span<const SyntheticSample> samples);

/// Runs the registry. Without a model the model-dependent checks are skipped.
CheckReport run_all_checks(std::uint64_t seed, const Model* trained = nullptr);

}  // namespace softattr
