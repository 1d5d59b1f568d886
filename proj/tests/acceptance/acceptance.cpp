// Acceptance run: one PASS/FAIL line per criterion, with the measured value,
// the pinned bound and the wall time. Exit status is nonzero if any fails.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "mixnet/arch.hpp"
#include "mixnet/augment.hpp"
#include "mixnet/dataset.hpp"
#include "mixnet/metrics.hpp"
#include "mixnet/pipeline.hpp"
#include "mixnet/trainer.hpp"
#include "mixnet/verify.hpp"
#include "oracles.hpp"

using namespace mixnet;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudget = 120;
constexpr double kShapeBudget = 10;
constexpr double kEmbedTol = 1e-4;
constexpr double kEmbedBudget = 60;
constexpr double kOverfitDice = 0.95;
constexpr std::size_t kOverfitSteps = 200;
constexpr double kOverfitBudgetPerVariant = 600;
constexpr double kE2eBudget = 3600;
constexpr double kOverlapTol = 0.0;
constexpr double kHdTol = 0.0;
constexpr double kMetricsBudget = 60;
constexpr double kNesterovTol = 1e-12;
constexpr double kScheduleBudget = 1;
constexpr double kAugmentBudget = 10;

struct Outcome {
  bool passed = false;
  std::string summary;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

// 1. Finite-difference gradient checks of every op and the residual unit.
Outcome gradients() {
  const auto r = verify::run_suite("gradcheck");
  double worst = 0;
  std::string worst_name;
  for (const auto& c : r.checks)
    if (c.value >= worst) {
      worst = c.value;
      worst_name = c.name;
    }
  return {r.passed() && worst <= kGradTol && r.seconds < kGradBudget,
          fmt("%zu checks (ops + residual unit, 5 instances each), max rel err %.2e (%s) <= %.0e, %.1f s < %.0f s",
              r.checks.size(), worst, worst_name.c_str(), kGradTol, r.seconds, kGradBudget)};
}

// 2. Level layout of every variant against the published table.
Outcome level_table() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t compared = 0, mismatches = 0;
  for (const std::string name : {"v1", "v2", "v3"}) {
    const MixNet net(NetConfig::defaults(parse_variant(name), 4));
    Graph<float> g(false);
    ForwardTrace trace;
    net.forward(g, bind_params(g, net.init_params(1)), g.constant(Tensor(Shape{1, 240, 240, 3})), &trace);
    auto hwc = [](const Shape& s) {
      return std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" + std::to_string(s[3]);
    };
    for (const auto& row : oracle::level_table(name)) {
      std::size_t seen = 0;
      for (const auto& u : trace.units) {
        if (u.level != std::size_t(row.level)) continue;
        if (name == "v2" && row.level % 2 == 1 && u.stream != -1) continue;
        ++seen;
        compared += 2;
        mismatches += hwc(u.input) != row.input;
        mismatches += hwc(u.output) != row.output;
      }
      const std::size_t expected = name == "v1" || (name == "v2" && row.level % 2 == 1) ? 1 : 3;
      mismatches += seen != expected;
    }
    for (const auto& [prefix, cfg] : net.units()) {
      const auto& row = oracle::level_table(name)[std::stoul(prefix.substr(5, 1)) - 1];
      compared += 2;
      mismatches += cfg.f != row.filters;
      mismatches += cfg.d != row.dilation;
    }
  }
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < kShapeBudget,
          fmt("%zu entries compared across v1/v2/v3 at 240x240, %zu mismatches, %.1f s < %.0f s", compared, mismatches, s,
              kShapeBudget)};
}

// 3. v3 solution embedded in v1.
Outcome embedding() {
  const auto r = verify::run_suite("embedding");
  const double err = r.checks.at(0).value;
  return {r.passed() && err <= kEmbedTol && r.seconds < kEmbedBudget,
          fmt("5 random draws, max |logit diff| %.2e <= %.0e, %.1f s < %.0f s", err, kEmbedTol, r.seconds, kEmbedBudget)};
}

// 4. Each variant overfits one repeated 96x96 batch.
Outcome overfit() {
  SyntheticConfig sc;
  sc.dims = {96, 96, 96};
  const Subject subject = make_subject("overfit", generate_synthetic(17, sc));
  const auto all = slice_stack(subject.modalities, subject.labels, Plane::kTransverse);
  const std::vector<Sample> batch(all.begin() + 46, all.begin() + 50);
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);

  bool ok = true;
  std::ostringstream os;
  for (Variant v : {Variant::kV1, Variant::kV2, Variant::kV3}) {
    const auto t0 = std::chrono::steady_clock::now();
    const MixNet net(NetConfig::defaults(v, 4));
    OptimConfig c;  // lr0 2e-4, momentum 0.99, weight decay 1e-3
    c.batch_size = batch.size();
    c.boundary_fractions.clear();
    Trainer t(net, c, 5);
    double dice = 0.0;
    std::size_t steps = 0;
    while (steps < kOverfitSteps) {
      t.step(ptrs, c.lr0);
      ++steps;
      if (steps % 10 == 0) {
        dice = mean(slice_dice(predict_probabilities(net, t.params(), batch, batch.size()), batch, 4));
        if (dice >= kOverfitDice) break;
      }
    }
    const double s = seconds_since(t0);
    const bool pass = dice >= kOverfitDice && s < kOverfitBudgetPerVariant;
    ok = ok && pass;
    os << fmt("%s dice %.4f at step %zu (%.0f s)%s; ", to_string(v).c_str(), dice, steps, s, pass ? "" : " FAIL");
  }
  os << fmt("bound: dice >= %.2f within %zu steps, < %.0f s each", kOverfitDice, kOverfitSteps, kOverfitBudgetPerVariant);
  return {ok, os.str()};
}

// 5. Desk-scale pipeline: three planes, leave-one-out fold, 1:1:4 fusion.
struct E2eSettings {
  std::size_t epochs = 16;
  std::size_t samples_per_epoch = 128;
  fs::path workdir;
};

Outcome end_to_end(const E2eSettings& st) {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig sc;
  sc.dims = {96, 96, 96};
  sc.n_classes = 4;
  const DatasetManifest m = generate_dataset(st.workdir / "data", 9, sc, 2024);
  const std::string holdout = "subject8";
  const Subject truth = load_subject(m, m.index_of(holdout));

  std::vector<ProbVolume> probs;
  std::vector<double> plane_dice;
  for (Plane p : {Plane::kSagittal, Plane::kCoronal, Plane::kTransverse}) {
    RunConfig cfg;
    cfg.net = NetConfig::defaults(Variant::kV2, 4);
    cfg.optim.epochs = st.epochs;
    cfg.optim.batch_size = 8;
    cfg.optim.max_samples_per_epoch = st.samples_per_epoch;
    cfg = run_config_from_json({{"plane", to_string(p)}}, cfg);
    cfg.holdout = holdout;
    cfg.seed = 7;
    const auto tp = std::chrono::steady_clock::now();
    const TrainOutcome r = train_plane(m, cfg, st.workdir / ("run_" + to_string(p)), std::nullopt, [&](const EpochLog& e) {
      std::fprintf(stderr, "  [e2e %s] epoch %zu loss %.4f val %.1f (%.0f s)\n", to_string(p).c_str(), e.epoch,
                   e.train_loss, e.val_loss.value_or(0.0), seconds_since(tp));
    });
    const MixNet net(cfg.net);
    probs.push_back(predict_volume(net, r.checkpoint.params, truth, p, 8));
    const EvalReport er = evaluate(argmax_labels(probs.back()), truth.labels, 4);
    std::vector<double> d;
    for (const auto& c : er.classes) d.push_back(c.dice);
    plane_dice.push_back(mean(d));
  }
  const EvalReport fused = evaluate(fuse_predictions(probs, FusionConfig{}), truth.labels, 4);
  std::vector<double> d;
  for (const auto& c : fused.classes) d.push_back(c.dice);
  const double fused_dice = mean(d);
  const double best_off = std::max(plane_dice[0], plane_dice[1]);
  const double s = seconds_since(t0);
  return {fused_dice > best_off && s < kE2eBudget,
          fmt("mean fg Dice sagittal %.4f coronal %.4f transverse %.4f fused(1:1:4) %.4f > best off-plane %.4f; "
              "%zu epochs x %zu samples per plane, %.0f s < %.0f s",
              plane_dice[0], plane_dice[1], plane_dice[2], fused_dice, best_off, st.epochs, st.samples_per_epoch, s,
              kE2eBudget)};
}

// 6. Metrics against the brute-force references.
Outcome metrics() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(606);
  double overlap_err = 0, hd_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Dims3 d{1 + rng() % 12, 1 + rng() % 12, 1 + rng() % 12};
    std::bernoulli_distribution fill(0.05 + 0.1 * (trial % 6));
    std::vector<std::uint8_t> a(voxel_count(d)), b(voxel_count(d));
    for (auto& v : a) v = fill(rng);
    for (auto& v : b) v = fill(rng);
    a[rng() % a.size()] = 1;
    b[rng() % b.size()] = 1;
    std::uniform_real_distribution<double> us(0.5, 2.5);
    const std::array<double, 3> s{us(rng), us(rng), us(rng)};
    const oracle::Mask ma{{d[0], d[1], d[2]}, a}, mb{{d[0], d[1], d[2]}, b};
    overlap_err = std::max({overlap_err, std::abs(dice(a, b) - oracle::dice(ma, mb)),
                            std::abs(volumetric_similarity(a, b) - oracle::volumetric_similarity(ma, mb))});
    hd_err = std::max({hd_err, std::abs(hd95(a, b, d, s) - oracle::hd95(ma, mb, s)),
                       std::abs(hd95(a, b, d, s, HdMode::kPooled) - oracle::hd95_pooled(ma, mb, s))});
  }
  const double t = seconds_since(t0);
  return {overlap_err <= kOverlapTol && hd_err <= kHdTol && t < kMetricsBudget,
          fmt("100 random mask pairs <= 12^3, max |Dice/VS diff| %.1e <= %.0e, max |HD95 diff| (both modes) %.1e <= %.0e, "
              "%.1f s < %.0f s",
              overlap_err, kOverlapTol, hd_err, kHdTol, t, kMetricsBudget)};
}

// 7. Learning-rate table and a two-step Nesterov trace.
Outcome schedule() {
  const auto t0 = std::chrono::steady_clock::now();
  OptimConfig c;
  c.epochs = 100;
  const std::size_t boundaries[] = {20, 40, 60, 75, 80, 85, 90, 95};
  std::size_t wrong = 0;
  for (std::size_t e = 0; e < 100; ++e) {
    int k = 0;
    for (std::size_t b : boundaries) k += e >= b;
    wrong += lr_schedule(e, c) != 2e-4 * std::pow(2.0, -k);
  }
  OptimConfig n;
  n.momentum = 0.9;
  n.weight_decay = 1e-3;
  const double slope = 0.8, offset = -0.3, lr = 0.05;
  const auto ref = oracle::nesterov_scalar(1.5, slope, offset, lr, 0.9, 1e-3, 2);
  ParamStore<double> p, v;
  p.insert("p", DTensor(Shape{1}, {1.5}));
  v.insert("p", DTensor(Shape{1}, {0.0}));
  double err = 0;
  for (int s = 0; s < 2; ++s) {
    ParamStore<double> g;
    g.insert("p", DTensor(Shape{1}, {slope * p.at("p")[0] + offset}));
    nesterov_step(p, g, v, lr, n);
    err = std::max({err, std::abs(p.at("p")[0] - ref.params[s]), std::abs(v.at("p")[0] - ref.velocities[s])});
  }
  const double t = seconds_since(t0);
  return {wrong == 0 && err <= kNesterovTol && t < kScheduleBudget,
          fmt("lr table epochs=100: %zu/100 entries differ from 2e-4*2^-k; two-step trace err %.1e <= %.0e; %.3f s < %.0f s",
              wrong, err, kNesterovTol, t, kScheduleBudget)};
}

// 8. Augmentation counts and invariants.
Outcome augmentation() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig sc;
  sc.dims = {48, 48, 48};
  const Subject subject = make_subject("aug", generate_synthetic(3, sc));
  std::vector<Sample> slices = slice_stack(subject.modalities, subject.labels, Plane::kTransverse);
  const std::vector<Sample> originals(slices.begin() + 20, slices.begin() + 24);
  const std::size_t per_t = aug::expand_dataset({originals[0]}, aug::Policy::defaults(Plane::kTransverse), 1).size();
  const std::size_t per_s = aug::expand_dataset({originals[0]}, aug::Policy::defaults(Plane::kSagittal), 1).size();
  const std::size_t per_c = aug::expand_dataset({originals[0]}, aug::Policy::defaults(Plane::kCoronal), 1).size();

  bool identity = true;
  for (const auto& s : originals) {
    const Sample e = aug::elastic(s, 0.0, 4.0, 9);
    identity = identity && e.label.data == s.label.data &&
               std::equal(e.image.data().begin(), e.image.data().end(), s.image.data().begin());
  }
  std::size_t violations = 0, checked = 0;
  const auto policy = aug::Policy::defaults(Plane::kTransverse);
  const aug::ExpandedView view(originals, policy, 11);
  for (std::size_t i = 0; i < view.size(); ++i) {
    const Sample a = view.at(i);
    const Sample& o = view.original(i);
    std::set<int> in(o.label.data.begin(), o.label.data.end());
    in.insert(0);  // zero fill may expose background
    for (std::uint8_t l : a.label.data) violations += in.count(l) == 0;
    violations += !(a.image.shape() == o.image.shape());
    ++checked;
  }
  const double t = seconds_since(t0);
  return {per_t == 15 && per_s == 3 && per_c == 3 && identity && violations == 0 && t < kAugmentBudget,
          fmt("per original: transverse %zu (15), sagittal %zu (3), coronal %zu (3); alpha=0 elastic identity %s; "
              "%zu augmented samples, %zu label/shape violations; %.1f s < %.0f s",
              per_t, per_s, per_c, identity ? "yes" : "no", checked, violations, t, kAugmentBudget)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MixNet acceptance criteria"};
  std::vector<int> only;
  E2eSettings e2e;
  std::string workdir = (fs::temp_directory_path() / "mixnet_acceptance").string();
  app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "Scratch directory for the end-to-end run")->capture_default_str();
  app.add_option("--e2e-epochs", e2e.epochs, "Epochs per plane in the end-to-end run")->capture_default_str();
  app.add_option("--e2e-samples", e2e.samples_per_epoch, "Samples per epoch in the end-to-end run")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  e2e.workdir = workdir;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"level table conformance", level_table},
      {"v3 contained in v1", embedding},
      {"overfit fixture", overfit},
      {"end-to-end desk run", [&] { return end_to_end(e2e); }},
      {"metrics oracle equivalence", metrics},
      {"schedule and optimizer", schedule},
      {"augmentation counts and invariants", augmentation},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), int(i + 1)) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.passed;
    std::printf("%s %zu %s: %s [%.1f s]\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.summary.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
