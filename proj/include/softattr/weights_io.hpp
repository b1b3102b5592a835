#pragma once

#include "softattr/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace softattr {

/**
 * Weight file layout (all integers little-endian):
 *   "SGW1"
 *   repeated until EOF:
 *     u32 name length, name bytes, u32 rank, rank x u32 dims,
 *     product(dims) x f64 payload in row-major order
 * Parametric layers contribute "<layer>.kernel" or "<layer>.weight" followed
 * by "<layer>.bias", in layer order.
 */
inline constexpr char kWeightMagic[4] = {'S', 'G', 'W', '1'};

struct NamedTensor {
  std::string name;
  TensorD value;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::vector<NamedTensor> model_parameters(const Model& model);

std::string encode_weights(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> decode_weights(const std::string& bytes);

/// Copies records into a model with the same architecture as `skeleton`.
Model assign_parameters(Model skeleton, const std::vector<NamedTensor>& records);

void save(const Model& model, const std::filesystem::path& path);
/// Loads weights into the reference toy CNN architecture.
Model load(const std::filesystem::path& path);

}  // namespace softattr
