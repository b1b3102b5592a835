#include "softattr/dataset.hpp"

#include "softattr/image_io.hpp"
#include "softattr/model.hpp"
#include "softattr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>

namespace softattr {

SyntheticSample make_sample(std::uint64_t seed, std::uint64_t index, ShapeBox* box) {
  constexpr Eigen::Index n = toy::kImageSize;
  constexpr Eigen::Index q = n / 2;
  Rng rng = Rng::for_index(seed, index);

  SyntheticSample s;
  s.label = static_cast<int>(index % 4);
  s.image = TensorD({n, n, 1});

  ShapeBox b;
  b.height = 3 + static_cast<Eigen::Index>(rng.below(4));
  b.width = 3 + static_cast<Eigen::Index>(rng.below(4));
  b.row = (s.label / 2) * q + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(q - b.height + 1)));
  b.col = (s.label % 2) * q + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(q - b.width + 1)));
  const double intensity = rng.uniform(kMinIntensity, 1.0);

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool inside = i >= b.row && i < b.row + b.height && j >= b.col && j < b.col + b.width;
      const double noise = rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
      s.image.at(i, j, 0) = std::clamp((inside ? intensity : 0.0) + noise, 0.0, 1.0);
    }
  }
  if (box) *box = b;
  return s;
}

std::vector<SyntheticSample> gen_dataset(std::uint64_t seed, std::size_t count) {
  if (count == 0) throw Error("gen_dataset: count must be positive");
  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_sample(seed, i));
  return out;
}

void export_dataset(const std::vector<SyntheticSample>& samples, const std::filesystem::path& dir,
                    std::uint64_t seed) {
  nlohmann::ordered_json manifest;
  manifest["seed"] = seed;
  manifest["count"] = samples.size();
  manifest["format"] = "P5";
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.pgm", i);
    write_pgm(dir / name, samples[i].image);
    entries.push_back({{"index", i}, {"file", name}, {"label", samples[i].label}});
  }
  manifest["samples"] = std::move(entries);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace softattr
