#include "softattr/attribution.hpp"
#include "softattr/checks.hpp"
#include "softattr/dataset.hpp"
#include "softattr/image_io.hpp"
#include "softattr/train.hpp"
#include "softattr/weights_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace softattr;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitGatingFailure = 2;

json vector_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const json& arr) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json metrics_json(const ComparisonMetrics& m) {
  return {{"pearson", optional_json(m.pearson)},
          {"spearman", optional_json(m.spearman)},
          {"max_abs_diff", m.max_abs_diff}};
}

json map_json(const SaliencyMap& map, const json& source) {
  json j;
  j["method"] = to_string(map.method);
  j["score"] = to_string(map.score);
  j["target_class"] = map.target_class;
  j["layer"] = map.layer;
  j["steps"] = map.steps;
  j["nonstandard_score"] = map.nonstandard_score;
  j["degenerate"] = is_degenerate(map);
  j["source"] = source;
  j["shape"] = {map.raw.dim(0), map.raw.dim(1)};
  j["raw"] = vector_json(map.raw.data());
  j["normalized"] = vector_json(map.normalized.data());
  j["channel_weights"] = vector_json(map.channel_weights);
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Normalized map from a file written by `attribute --format json|pgm`.
TensorD read_map_json(const fs::path& path) {
  try {
    const json j = json::parse(read_file(path));
    const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
    return TensorD(Shape(shape.begin(), shape.end()), vector_from_json(j.at("normalized")));
  } catch (const json::exception& e) {
    throw Error(path.string() + ": not a saliency map file (" + e.what() + ")");
  }
}

Model load_model(const std::string& path) {
  if (!fs::exists(path)) throw Error("model file not found: " + path);
  return load(path);
}

// --- subcommands ---------------------------------------------------------

struct GenDataArgs {
  std::uint64_t seed = 42;
  std::size_t count = 100;
  std::string split = "train";
  std::string out;
};

std::uint64_t split_seed(std::uint64_t seed, const std::string& split) {
  const SplitSeeds s = split_seeds(seed);
  if (split == "train") return s.train;
  if (split == "val") return s.val;
  return s.test;
}

int run_gen_data(const GenDataArgs& a) {
  const std::uint64_t stream = split_seed(a.seed, a.split);
  export_dataset(gen_dataset(stream, a.count), a.out, stream);
  std::cout << "wrote " << a.count << " samples to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  TrainOptions options;
  std::size_t train_count = 4000;
  std::size_t val_count = 1000;
  std::string out;
};

int run_train(const TrainArgs& a) {
  const SplitSeeds s = split_seeds(a.options.seed);
  const TrainResult r =
      train(a.options, gen_dataset(s.train, a.train_count), gen_dataset(s.val, a.val_count));
  save(r.model, a.out);
  json summary = {{"seed", a.options.seed},
                  {"epochs", a.options.epochs},
                  {"val_accuracy", r.val_accuracy},
                  {"final_loss", r.history.empty() ? 0.0 : r.history.back().mean_loss}};
  std::cout << summary.dump() << "\n";
  return 0;
}

struct AttributeArgs {
  std::string model;
  std::string method = "gradcam";
  std::string score;
  std::optional<Eigen::Index> target_class;
  std::string layer = toy::kCamLayer;
  int steps = kDefaultPathSteps;
  std::string baseline = "zeros";
  std::optional<std::uint64_t> sample;
  std::string input;
  std::uint64_t seed = 42;
  std::string out_dir = ".";
  std::string format = "pgm";
  int workers = 1;
};

int run_attribute(const AttributeArgs& a) {
  const Model model = load_model(a.model);
  const auto method = parse_method(a.method);
  if (!method) throw Error("unknown method '" + a.method + "'");
  AttributionConfig cfg;
  cfg.method = *method;
  cfg.score = default_score(*method);
  if (!a.score.empty()) {
    const auto score = parse_score_kind(a.score);
    if (!score) throw Error("unknown score '" + a.score + "'");
    cfg.score = *score;
  }
  cfg.layer = a.layer;
  cfg.steps = a.steps;
  cfg.workers = a.workers;

  TensorD image;
  json source;
  std::optional<Eigen::Index> label;
  if (a.sample) {
    const std::uint64_t stream = split_seeds(a.seed).test;
    SyntheticSample s = make_sample(stream, *a.sample);
    image = std::move(s.image);
    label = s.label;
    source = {{"split", "test"}, {"seed", stream}, {"index", *a.sample}, {"label", s.label}};
  } else {
    image = read_pgm(a.input);
    source = {{"input", a.input}};
  }
  if (a.baseline != "zeros") cfg.baseline = read_pgm(a.baseline);
  cfg.target_class = a.target_class  ? *a.target_class
                     : label         ? *label
                                     : argmax(model.logits(image).data());

  const SaliencyMap map = attribute(model, image, cfg);
  const std::string stem = std::string(to_string(cfg.method)) + "-" +
                           std::string(to_string(cfg.score)) + "-class" +
                           std::to_string(cfg.target_class);
  const fs::path dir(a.out_dir);
  write_file_atomic(dir / (stem + ".json"), dump(map_json(map, source)));
  std::cout << (dir / (stem + ".json")).string() << "\n";
  if (a.format == "pgm") {
    write_pgm(dir / (stem + ".pgm"), map.normalized);
    write_pgm(dir / (stem + "-overlay.pgm"), overlay(image, map));
    std::cout << (dir / (stem + ".pgm")).string() << "\n"
              << (dir / (stem + "-overlay.pgm")).string() << "\n";
  }
  return 0;
}

struct CompareArgs {
  std::string a, b, out;
};

int run_compare(const CompareArgs& a) {
  const std::string text = dump(metrics_json(compare_maps(read_map_json(a.a), read_map_json(a.b))));
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(a.out, text);
  }
  return 0;
}

struct VerifyArgs {
  std::string model;
  std::uint64_t seed = 42;
  std::string out;
};

int run_verify(const VerifyArgs& a) {
  std::optional<Model> model;
  if (!a.model.empty()) model = load_model(a.model);
  const CheckReport report = run_all_checks(a.seed, model ? &*model : nullptr);
  const std::string text = report.to_json();
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(a.out, text);
  }
  int failed = 0;
  for (const CheckRecord& r : report.records) {
    if (r.status == CheckStatus::Failed) {
      ++failed;
      std::cerr << "FAILED " << r.id << ": " << r.notes << "\n";
    }
  }
  std::cerr << report.records.size() << " checks, " << failed << " failed\n";
  return failed ? kExitGatingFailure : 0;
}

struct RenderArgs {
  std::string model;
  std::uint64_t seed = 42;
  std::vector<std::uint64_t> samples = {0};
  std::string out_dir;
  int steps = kDefaultPathSteps;
  int workers = 1;
};

int run_render(const RenderArgs& a) {
  const Model model = load_model(a.model);
  const Method methods[] = {Method::GradCAM, Method::GradCAMPlus, Method::RSIGradCAM};
  const ScoreKind scores[] = {ScoreKind::PreSoftmax, ScoreKind::PostSoftmax, ScoreKind::LogSoftmax};
  const std::uint64_t stream = split_seeds(a.seed).test;
  const fs::path dir(a.out_dir);

  json index = {{"seed", a.seed}, {"split", "test"}, {"steps", a.steps}, {"samples", json::array()}};
  for (std::uint64_t id : a.samples) {
    const SyntheticSample s = make_sample(stream, id);
    std::vector<SaliencyMap> maps;
    std::vector<std::string> names;
    json entry = {{"index", id},
                  {"label", s.label},
                  {"predicted", argmax(model.logits(s.image).data())},
                  {"maps", json::array()},
                  {"pairs", json::array()}};
    for (Method m : methods) {
      for (ScoreKind k : scores) {
        AttributionConfig cfg;
        cfg.method = m;
        cfg.score = k;
        cfg.target_class = s.label;
        cfg.steps = a.steps;
        cfg.workers = a.workers;
        maps.push_back(attribute(model, s.image, cfg));
        names.push_back(std::string(to_string(m)) + "/" + std::string(to_string(k)));
        const std::string file = "sample" + std::to_string(id) + "-" + std::string(to_string(m)) +
                                 "-" + std::string(to_string(k)) + ".pgm";
        write_pgm(dir / file, overlay(s.image, maps.back()));
        entry["maps"].push_back({{"method", to_string(m)},
                                 {"score", to_string(k)},
                                 {"file", file},
                                 {"degenerate", is_degenerate(maps.back())}});
      }
    }
    for (std::size_t i = 0; i < maps.size(); ++i) {
      for (std::size_t j = i + 1; j < maps.size(); ++j) {
        json pair = {{"a", names[i]}, {"b", names[j]}};
        pair.update(metrics_json(compare_maps(maps[i], maps[j])));
        entry["pairs"].push_back(std::move(pair));
      }
    }
    index["samples"].push_back(std::move(entry));
  }
  write_file_atomic(dir / "index.json", dump(index));
  std::cout << (dir / "index.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient attribution with pre-, post- and log-softmax scores on a toy CNN"};
  app.name("softattr");
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Export a synthetic dataset as PGM files");
  gen_cmd->add_option("--seed", gen.seed, "Experiment seed")->capture_default_str();
  gen_cmd->add_option("--count", gen.count, "Number of samples")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen_cmd->add_option("--split", gen.split, "Split stream to draw from")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the toy CNN and save its weights");
  train_cmd->add_option("--seed", tr.options.seed, "Experiment seed")->capture_default_str();
  train_cmd->add_option("--epochs", tr.options.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--lr", tr.options.lr)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.options.batch_size)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--train-count", tr.train_count)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--val-count", tr.val_count)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--out", tr.out, "Weight file to write")->required();

  AttributeArgs at;
  auto* attr_cmd = app.add_subcommand("attribute", "Compute one saliency map");
  attr_cmd->add_option("--model", at.model, "Weight file")->required();
  attr_cmd->add_option("--method", at.method)
      ->check(CLI::IsMember({"gradcam", "gradcam-plus", "ig", "rsi"}))
      ->capture_default_str();
  attr_cmd->add_option("--score", at.score, "pre|post|log (default depends on the method)")
      ->check(CLI::IsMember({"pre", "post", "log"}));
  attr_cmd->add_option("--class", at.target_class, "Target class (default: label or prediction)");
  attr_cmd->add_option("--layer", at.layer, "CAM layer")->capture_default_str();
  attr_cmd->add_option("--steps", at.steps, "Path steps")->check(CLI::PositiveNumber)->capture_default_str();
  attr_cmd->add_option("--baseline", at.baseline, "zeros or a PGM file")->capture_default_str();
  auto* sample_opt = attr_cmd->add_option("--sample", at.sample, "Test-split sample index");
  auto* input_opt = attr_cmd->add_option("--input", at.input, "Input PGM")->check(CLI::ExistingFile);
  sample_opt->excludes(input_opt);
  attr_cmd->add_option("--seed", at.seed, "Experiment seed for --sample")->capture_default_str();
  attr_cmd->add_option("--out-dir", at.out_dir)->capture_default_str();
  attr_cmd->add_option("--format", at.format)->check(CLI::IsMember({"pgm", "json"}))->capture_default_str();
  attr_cmd->add_option("--workers", at.workers)->check(CLI::PositiveNumber)->capture_default_str();

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare two saliency map files");
  cmp_cmd->add_option("--a", cmp.a)->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--b", cmp.b)->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--out", cmp.out, "Metrics file (default: stdout)");

  VerifyArgs ver;
  auto* verify_cmd = app.add_subcommand("verify", "Run the gradient identity checks");
  verify_cmd->add_option("--model", ver.model, "Trained weights; without it model checks are skipped");
  verify_cmd->add_option("--seed", ver.seed)->capture_default_str();
  verify_cmd->add_option("--out", ver.out, "Report file (default: stdout)");

  RenderArgs ren;
  auto* render_cmd = app.add_subcommand("render", "Method x score overlay grid for test samples");
  render_cmd->add_option("--model", ren.model)->required();
  render_cmd->add_option("--seed", ren.seed)->capture_default_str();
  render_cmd->add_option("--samples", ren.samples, "Test-split sample indices")->capture_default_str();
  render_cmd->add_option("--out-dir", ren.out_dir)->required();
  render_cmd->add_option("--steps", ren.steps)->check(CLI::PositiveNumber)->capture_default_str();
  render_cmd->add_option("--workers", ren.workers)->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (app.exit(e) == 0) return 0;
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (*attr_cmd && !at.sample && at.input.empty()) {
      throw Error("attribute needs --sample or --input");
    }
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*attr_cmd) return run_attribute(at);
    if (*cmp_cmd) return run_compare(cmp);
    if (*verify_cmd) return run_verify(ver);
    if (*render_cmd) return run_render(ren);
  } catch (const std::exception& e) {
    std::cerr << "softattr: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
