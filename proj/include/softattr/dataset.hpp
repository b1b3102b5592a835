#pragma once

#include "softattr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace softattr {

/// 16x16x1 image in [0,1] with a bright rectangle in the labelled quadrant
/// (0 = top-left, 1 = top-right, 2 = bottom-left, 3 = bottom-right).
struct SyntheticSample {
  TensorD image;
  int label = 0;
};

struct ShapeBox {
  Eigen::Index row = 0, col = 0, height = 0, width = 0;
};

inline constexpr double kNoiseAmplitude = 0.1;
inline constexpr double kMinIntensity = 0.8;

/// Sample `index` of the stream for `seed`; depends on nothing else.
SyntheticSample make_sample(std::uint64_t seed, std::uint64_t index, ShapeBox* box = nullptr);

/// Samples 0..count-1. Labels cycle 0,1,2,3 so classes are balanced.
std::vector<SyntheticSample> gen_dataset(std::uint64_t seed, std::size_t count);

/// Seeds of the standard splits derived from one experiment seed.
struct SplitSeeds {
  std::uint64_t train, val, test;
};
inline SplitSeeds split_seeds(std::uint64_t seed) { return {seed, seed + 1, seed + 2}; }

/// Writes sample_<index>.pgm files and a manifest.json listing labels.
void export_dataset(const std::vector<SyntheticSample>& samples, const std::filesystem::path& dir,
                    std::uint64_t seed);

}  // namespace softattr
