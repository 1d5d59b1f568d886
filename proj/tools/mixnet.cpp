// mixnet: command-line front end (generate, train, predict, fuse, evaluate, verify).
// Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 verification failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mixnet/config.hpp"
#include "mixnet/dataset.hpp"
#include "mixnet/error.hpp"
#include "mixnet/metrics.hpp"
#include "mixnet/pipeline.hpp"
#include "mixnet/verify.hpp"

using namespace mixnet;
namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1, kData = 2, kVerify = 3;

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  os << text;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create " + p.string() + ": " + ec.message());
}

// ---- generate ----

struct GenerateArgs {
  std::string out;
  std::size_t subjects = 9;
  std::vector<std::size_t> dims{96, 96, 96};
  std::size_t classes = 4;
  std::uint64_t seed = 1;
  double noise = 0.05;
  std::size_t test_subjects = 0;
};

int run_generate(const GenerateArgs& a) {
  SyntheticConfig sc;
  sc.dims = {a.dims[0], a.dims[1], a.dims[2]};
  sc.n_classes = a.classes;
  sc.noise_sigma = a.noise;
  DatasetManifest m = generate_dataset(a.out, a.subjects, sc, a.seed);
  if (a.test_subjects > 0) {
    if (a.test_subjects > a.subjects) throw UsageError("--test-subjects exceeds --subjects");
    for (std::size_t i = a.subjects - a.test_subjects; i < a.subjects; ++i) m.subjects[i].role = "test";
    write_manifest(m, fs::path(a.out) / "dataset.json");
  }
  const Json echo = {{"command", "generate"}, {"subjects", a.subjects},     {"dims", a.dims},
                     {"n_classes", a.classes}, {"seed", a.seed},          {"noise_sigma", a.noise},
                     {"test_subjects", a.test_subjects}};
  write_text(fs::path(a.out) / "generate_config.json", echo.dump(2) + "\n");
  std::cout << "wrote " << a.subjects << " subjects to " << (fs::path(a.out) / "dataset.json").string() << '\n';
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string data, out, config, variant, plane, holdout, reduction;
  std::optional<std::size_t> epochs, batch_size, max_samples;
  std::optional<double> lr0;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const DatasetManifest m = read_manifest(a.data);
  const fs::path out(a.out);
  RunConfig cfg;
  std::optional<Checkpoint> resume;
  if (a.resume) {
    const bool overrides = !a.config.empty() || !a.variant.empty() || !a.plane.empty() || !a.holdout.empty() ||
                           !a.reduction.empty() || a.epochs || a.batch_size || a.max_samples || a.lr0 || a.seed;
    if (overrides) throw UsageError("--resume continues the recorded run; configuration flags are not accepted");
    cfg = run_config_from_json(read_json_file((out / "config.json").string()), RunConfig{});
    resume = load_checkpoint(out / "checkpoint.bin");
  } else {
    // defaults < config file < flags
    cfg.net = NetConfig::defaults(cfg.net.variant, m.n_classes);
    Json j = a.config.empty() ? Json::object() : read_json_file(a.config);
    Json flags = Json::object();
    if (!a.variant.empty()) flags["net"]["variant"] = a.variant;
    if (!a.plane.empty()) flags["plane"] = a.plane;
    if (!a.holdout.empty()) flags["holdout"] = a.holdout;
    if (!a.reduction.empty()) flags["optim"]["loss_reduction"] = a.reduction;
    if (a.epochs) flags["optim"]["epochs"] = *a.epochs;
    if (a.batch_size) flags["optim"]["batch_size"] = *a.batch_size;
    if (a.max_samples) flags["optim"]["max_samples_per_epoch"] = *a.max_samples;
    if (a.lr0) flags["optim"]["lr0"] = *a.lr0;
    if (a.seed) flags["seed"] = *a.seed;
    j.merge_patch(flags);
    cfg = run_config_from_json(j, cfg);
  }
  const auto on_epoch = [&](const EpochLog& e) {
    if (a.quiet) return;
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " train_loss " << e.train_loss;
    if (e.val_loss) std::cout << " val_loss " << *e.val_loss;
    for (std::size_t k = 0; k < e.dice.size(); ++k) std::cout << " dice_" << k + 1 << ' ' << e.dice[k];
    std::cout << std::endl;
  };
  const TrainOutcome r = train_plane(m, cfg, out, resume, on_epoch);
  std::cout << "checkpoint " << (out / "checkpoint.bin").string() << " after epoch " << r.checkpoint.epoch << '\n';
  return 0;
}

// ---- predict ----

struct PredictArgs {
  std::string checkpoint, data, subject, plane, out;
  std::size_t batch_size = 8;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const DatasetManifest m = read_manifest(a.data);
  if (ck.net.n_classes != m.n_classes) throw DataError("checkpoint and dataset disagree on the class count");
  const std::string plane_name = a.plane.empty() ? ck.plane : a.plane;
  if (plane_name.empty()) throw UsageError("checkpoint records no plane; pass --plane");
  const Plane plane = parse_plane(plane_name);
  const Subject s = load_subject(m, m.index_of(a.subject));
  const MixNet net(ck.net);
  const ProbVolume p = predict_volume(net, ck.params, s, plane, a.batch_size);
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_volume(p, out);
  const Json echo = {{"command", "predict"}, {"checkpoint", a.checkpoint}, {"data", a.data},
                     {"subject", a.subject}, {"plane", plane_name},       {"batch_size", a.batch_size}};
  write_text(fs::path(a.out).replace_extension(".config.json"), echo.dump(2) + "\n");
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

// ---- fuse ----

struct FuseArgs {
  std::vector<std::string> inputs;
  std::vector<double> weights;
  std::string config, out;
};

int run_fuse(const FuseArgs& a) {
  FusionConfig cfg;
  if (!a.config.empty()) {
    const Json j = read_json_file(a.config);
    reject_unknown_keys(j, {"fusion"}, "config");
    if (j.contains("fusion")) cfg = fusion_config_from_json(j.at("fusion"), cfg);
  }
  if (!a.weights.empty()) cfg = fusion_config_from_json({{"weights", a.weights}}, cfg);
  std::vector<ProbVolume> vols(3);
  std::vector<bool> filled(3, false);
  for (const auto& path : a.inputs) {
    ProbVolume p = read_prob_volume(path);
    if (p.plane.empty()) throw DataError(path + " records no plane");
    const auto idx = static_cast<std::size_t>(parse_plane(p.plane));
    if (filled[idx]) throw DataError("two inputs for plane " + p.plane);
    filled[idx] = true;
    vols[idx] = std::move(p);
  }
  const LabelVolume fused = fuse_predictions(vols, cfg);
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_volume(fused, out);
  const Json echo = {{"command", "fuse"}, {"inputs", a.inputs}, {"fusion", to_json(cfg)}};
  write_text(fs::path(a.out).replace_extension(".config.json"), echo.dump(2) + "\n");
  std::cout << "wrote " << a.out << " (weights " << cfg.weights[0] << ':' << cfg.weights[1] << ':' << cfg.weights[2]
            << ")\n";
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string pred, truth, out, weights;
  std::size_t classes = 0;
  bool pooled = false;
};

ScoreWeights read_score_weights(const std::string& path) {
  const Json j = read_json_file(path);
  ScoreWeights w;
  for (const auto& [key, v] : j.items()) {
    reject_unknown_keys(v, {"dice", "hd95", "vs"}, "weights." + key);
    std::size_t label = 0;
    try {
      label = std::stoul(key);
    } catch (const std::exception&) {
      throw ConfigError("weights keys must be class ids, got '" + key + "'");
    }
    try {
      w[label] = {v.value("dice", 0.0), v.value("hd95", 0.0), v.value("vs", 0.0)};
    } catch (const Json::exception& e) {
      throw ConfigError("weights." + key + ": " + e.what());
    }
  }
  return w;
}

int run_evaluate(const EvaluateArgs& a) {
  const LabelVolume pred = read_label_volume(a.pred), truth = read_label_volume(a.truth);
  std::size_t k = a.classes;
  if (k == 0) {
    for (auto v : pred.data) k = std::max<std::size_t>(k, v + 1u);
    for (auto v : truth.data) k = std::max<std::size_t>(k, v + 1u);
    k = std::max<std::size_t>(k, 2);
  }
  std::optional<ScoreWeights> w;
  if (!a.weights.empty()) w = read_score_weights(a.weights);
  const EvalReport r = evaluate(pred, truth, k, w, a.pooled ? HdMode::kPooled : HdMode::kMaxOfDirected);
  std::cout << r.to_table();
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "report.json", r.to_json() + "\n");
    write_text(fs::path(a.out) / "report.txt", r.to_table());
    const Json echo = {{"command", "evaluate"}, {"pred", a.pred},      {"truth", a.truth},
                       {"n_classes", k},        {"pooled_hd", a.pooled}, {"weights", a.weights}};
    write_text(fs::path(a.out) / "evaluate_config.json", echo.dump(2) + "\n");
  }
  return 0;
}

// ---- verify ----

int run_verify(const std::vector<std::string>& suites, const std::string& json_out) {
  const auto& names = suites.empty() ? verify::suite_names() : suites;
  std::vector<verify::SuiteResult> results;
  for (const auto& n : names) {
    results.push_back(verify::run_suite(n));
    const auto& r = results.back();
    for (const auto& c : r.checks)
      std::printf("%-4s %-10s %-58s value=%.3g bound=%.3g%s%s\n", c.passed ? "ok" : "FAIL", r.suite.c_str(),
                  c.name.c_str(), c.value, c.tolerance, c.detail.empty() ? "" : "  ", c.detail.c_str());
    std::printf("%s suite %s (%.2f s)\n", r.passed() ? "PASS" : "FAIL", r.suite.c_str(), r.seconds);
  }
  const std::string summary = verify::summary_json(results);
  if (!json_out.empty()) write_text(json_out, summary + "\n");
  for (const auto& r : results)
    if (!r.passed()) return kVerify;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MixNet multi-modality 2D segmentation: data generation, training, prediction, fusion, evaluation"};
  app.require_subcommand(1);
  std::function<int()> action;

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Write a synthetic multi-modality dataset");
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--subjects", ga.subjects, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--dims", ga.dims, "Volume extents X Y Z")->expected(3)->capture_default_str();
  gen->add_option("--classes", ga.classes, "Class count K (background included)")->capture_default_str();
  gen->add_option("--seed", ga.seed, "Generator seed")->capture_default_str();
  gen->add_option("--noise", ga.noise, "Gaussian noise sigma")->capture_default_str();
  gen->add_option("--test-subjects", ga.test_subjects, "Mark the last N subjects as test role")->capture_default_str();
  gen->callback([&] { action = [&] { return run_generate(ga); }; });

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one plane; writes config.json, log.csv and checkpoint.bin");
  train->add_option("--data", ta.data, "Dataset manifest (dataset.json)")->required();
  train->add_option("--out", ta.out, "Run directory")->required();
  train->add_option("--config", ta.config, "JSON run config (keys: net, optim, plane, augment, seed, holdout)");
  train->add_option("--variant", ta.variant, "v1 | v2 | v3");
  train->add_option("--plane", ta.plane, "sagittal | coronal | transverse");
  train->add_option("--holdout", ta.holdout, "Subject id kept out for validation");
  train->add_option("--epochs", ta.epochs, "Epoch count");
  train->add_option("--lr0", ta.lr0, "Initial learning rate");
  train->add_option("--batch-size", ta.batch_size, "Slices per step");
  train->add_option("--max-samples", ta.max_samples, "Random samples drawn per epoch (0 = all)");
  train->add_option("--loss-reduction", ta.reduction, "mean | sum");
  train->add_option("--seed", ta.seed, "Run seed");
  train->add_flag("--resume", ta.resume, "Continue from <out>/checkpoint.bin with <out>/config.json");
  train->add_flag("--quiet", ta.quiet, "No per-epoch output");
  train->callback([&] { action = [&] { return run_train(ta); }; });

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Write a K-channel probability volume for one subject and plane");
  predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  predict->add_option("--data", pa.data, "Dataset manifest")->required();
  predict->add_option("--subject", pa.subject, "Subject id")->required();
  predict->add_option("--plane", pa.plane, "Slicing plane (default: the checkpoint's)");
  predict->add_option("--out", pa.out, "Output volume header (.json)")->required();
  predict->add_option("--batch-size", pa.batch_size, "Slices per forward pass")->capture_default_str();
  predict->callback([&] { action = [&] { return run_predict(pa); }; });

  FuseArgs fa;
  auto* fuse = app.add_subcommand("fuse", "Weighted fusion of sagittal, coronal and transverse probabilities");
  fuse->add_option("--inputs", fa.inputs, "Three probability volumes (planes read from their headers)")
      ->required()
      ->expected(3);
  fuse->add_option("--weights", fa.weights, "Sagittal coronal transverse weights (default 1 1 4)")->expected(3);
  fuse->add_option("--config", fa.config, "JSON with a \"fusion\" object");
  fuse->add_option("--out", fa.out, "Output label volume header")->required();
  fuse->callback([&] { action = [&] { return run_fuse(fa); }; });

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Dice, HD95 and VS per foreground class");
  eval->add_option("--pred", ea.pred, "Predicted label volume")->required();
  eval->add_option("--truth", ea.truth, "Reference label volume")->required();
  eval->add_option("--out", ea.out, "Directory for report.json and report.txt");
  eval->add_option("--classes", ea.classes, "Class count K (default: from the labels)");
  eval->add_option("--weights", ea.weights, "JSON score weights {\"1\": {\"dice\":..,\"hd95\":..,\"vs\":..}, ...}");
  eval->add_flag("--pooled-hd", ea.pooled, "P95 over both directed distance sets together");
  eval->callback([&] { action = [&] { return run_evaluate(ea); }; });

  std::vector<std::string> suites;
  std::string verify_json;
  auto* ver = app.add_subcommand("verify", "Run built-in numerical self-checks");
  ver->add_option("--suite", suites, "gradcheck | shapes | embedding | metrics | schedule | augment (repeatable)")
      ->check(CLI::IsMember(verify::suite_names()));
  ver->add_option("--json", verify_json, "Write a machine-readable summary here");
  ver->callback([&] { action = [&] { return run_verify(suites, verify_json); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }
  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const PolicyError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const BuildError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
