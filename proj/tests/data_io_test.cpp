#include "softattr/dataset.hpp"
#include "softattr/image_io.hpp"
#include "softattr/weights_io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <array>
#include <filesystem>

using namespace softattr;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("softattr_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::array<int, 4> class_counts(const std::vector<SyntheticSample>& samples) {
  std::array<int, 4> counts{};
  for (const SyntheticSample& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

TEST(Dataset, FourSamplesCoverEveryClass) {
  EXPECT_EQ(class_counts(gen_dataset(42, 4)), (std::array<int, 4>{1, 1, 1, 1}));
}

TEST(Dataset, LargeDatasetIsBalanced) {
  EXPECT_EQ(class_counts(gen_dataset(42, 4000)), (std::array<int, 4>{1000, 1000, 1000, 1000}));
}

TEST(Dataset, BalancedWithinOneForAnyCount) {
  for (std::size_t n : {1u, 5u, 7u, 13u}) {
    const auto c = class_counts(gen_dataset(3, n));
    EXPECT_LE(*std::max_element(c.begin(), c.end()) - *std::min_element(c.begin(), c.end()), 1);
  }
}

TEST(Dataset, SameSeedGivesIdenticalSamples) {
  const auto a = gen_dataset(42, 50);
  const auto b = gen_dataset(42, 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  EXPECT_FALSE(gen_dataset(43, 1)[0].image == a[0].image);
}

TEST(Dataset, SampleDependsOnlyOnSeedAndIndex) {
  const auto all = gen_dataset(9, 20);
  EXPECT_EQ(make_sample(9, 17).image, all[17].image);
}

TEST(Dataset, RectangleSitsInsideItsQuadrant) {
  for (std::uint64_t i = 0; i < 200; ++i) {
    ShapeBox box;
    const SyntheticSample s = make_sample(42, i, &box);
    const Eigen::Index r0 = (s.label / 2) * 8, c0 = (s.label % 2) * 8;
    EXPECT_GE(box.row, r0);
    EXPECT_GE(box.col, c0);
    EXPECT_LE(box.row + box.height, r0 + 8);
    EXPECT_LE(box.col + box.width, c0 + 8);
    EXPECT_GE(s.image.data().minCoeff(), 0.0);
    EXPECT_LE(s.image.data().maxCoeff(), 1.0);
    EXPECT_GE(s.image.at(box.row, box.col, 0), kMinIntensity - kNoiseAmplitude);
  }
}

TEST(Dataset, ZeroCountIsRejected) { EXPECT_THROW(gen_dataset(1, 0), Error); }

TEST(Dataset, ExportWritesImagesAndManifest) {
  const fs::path dir = scratch_dir("export");
  const auto samples = gen_dataset(44, 6);
  export_dataset(samples, dir, 44);
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  ASSERT_EQ(manifest["samples"].size(), 6u);
  EXPECT_EQ(manifest["samples"][3]["label"].get<int>(), samples[3].label);
  const TensorD back = read_pgm(dir / manifest["samples"][3]["file"].get<std::string>());
  EXPECT_LE(max_abs_diff(back, samples[3].image), 0.5 / 255 + 1e-12);
}

TEST(Pgm, RoundTripQuantizesToByteLevels) {
  TensorD img({2, 3, 1});
  img.data() << 0.0, 1.0, 0.5, 0.25, -0.3, 1.7;
  const TensorD back = decode_pgm(encode_pgm(img));
  EXPECT_EQ(back.shape(), (Shape{2, 3, 1}));
  EXPECT_EQ(back[0], 0.0);
  EXPECT_EQ(back[1], 1.0);
  EXPECT_NEAR(back[2], 128.0 / 255, 1e-12);
  EXPECT_EQ(back[4], 0.0);
  EXPECT_EQ(back[5], 1.0);
}

TEST(Pgm, MalformedInputIsRejected) {
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\n0"), Error);
  EXPECT_THROW(decode_pgm("P5\n4 4\n255\nab"), Error);
}

TEST(Weights, SaveLoadIsBitExact) {
  const fs::path dir = scratch_dir("weights");
  Model m = toy::make_cnn(42);
  std::get<DenseLayer>(m.mutable_layers().back().op).bias = TensorD::vector({1e-300, -3.5, 0.1, 7});
  save(m, dir / "m.bin");
  EXPECT_EQ(load(dir / "m.bin"), m);
  EXPECT_FALSE(fs::exists(dir / "m.bin.tmp"));
}

TEST(Weights, RecordOrderAndNames) {
  const auto records = model_parameters(toy::make_cnn(1));
  std::vector<std::string> names;
  for (const auto& r : records) names.push_back(r.name);
  EXPECT_EQ(names, (std::vector<std::string>{"conv1.kernel", "conv1.bias", "conv2.kernel",
                                             "conv2.bias", "dense.weight", "dense.bias"}));
}

TEST(Weights, BadMagicIsRejected) {
  std::string bytes = encode_weights(model_parameters(toy::make_cnn(1)));
  bytes.replace(0, 4, "XXXX");
  try {
    decode_weights(bytes);
    FAIL() << "expected rejection";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Weights, UnsupportedVersionIsRejected) {
  std::string bytes = encode_weights(model_parameters(toy::make_cnn(1)));
  bytes[3] = '2';
  EXPECT_THROW(decode_weights(bytes), FormatError);
}

TEST(Weights, TruncatedFileReportsOffset) {
  const std::string bytes = encode_weights(model_parameters(toy::make_cnn(1)));
  const std::size_t cut = bytes.size() / 2;
  try {
    decode_weights(bytes.substr(0, cut));
    FAIL() << "expected rejection";
  } catch (const FormatError& e) {
    EXPECT_LE(e.offset(), cut);
    EXPECT_GT(e.offset(), 4u);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST(Weights, MissingRecordIsRejected) {
  auto records = model_parameters(toy::make_cnn(1));
  records.pop_back();
  EXPECT_THROW(assign_parameters(toy::make_cnn(0), records), Error);
}

TEST(Weights, ShapeMismatchIsRejected) {
  auto records = model_parameters(toy::make_cnn(1));
  records[1].value = TensorD({3});
  EXPECT_THROW(assign_parameters(toy::make_cnn(0), records), Error);
}

}  // namespace
