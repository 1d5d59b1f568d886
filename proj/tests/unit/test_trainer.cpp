#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "mixnet/config.hpp"
#include "mixnet/error.hpp"
#include "mixnet/trainer.hpp"
#include "oracles.hpp"

using namespace mixnet;

namespace {

ParamStore<double> scalar_store(double v) {
  ParamStore<double> s;
  DTensor t(Shape{1});
  t[0] = v;
  s.insert("p", t);
  return s;
}

// A handful of transverse slices from a small synthetic subject.
std::vector<Sample> small_slices(std::size_t count, std::size_t n_classes = 2) {
  SyntheticConfig sc;
  sc.dims = {32, 32, 32};
  sc.n_classes = n_classes;
  const auto s = generate_synthetic(5, sc);
  std::vector<Volume> mods;
  for (const auto& m : s.modalities) mods.push_back(normalize(m));
  auto all = slice_stack(mods, s.labels, Plane::kTransverse);
  all.erase(all.begin(), all.begin() + 14);
  all.resize(count);
  return all;
}

NetConfig tiny_net(Variant v, std::size_t classes = 2) {
  NetConfig c = NetConfig::defaults(v, classes);
  for (auto& l : c.levels) l.filters = 4;
  return c;
}

bool bit_equal(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    if (!(t.shape() == u.shape()) || std::memcmp(t.data().data(), u.data().data(), t.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

aug::Policy no_ops() {
  aug::Policy p = aug::Policy::defaults(Plane::kTransverse);
  p.ops.clear();
  return p;
}

}  // namespace

TEST_CASE("learning rate table for 100 epochs") {
  OptimConfig c;
  c.epochs = 100;
  CHECK(lr_schedule(0, c) == 2e-4);
  CHECK(lr_schedule(50, c) == 5e-5);
  CHECK(lr_schedule(99, c) == 2e-4 / 256);
  const std::size_t boundaries[] = {20, 40, 60, 75, 80, 85, 90, 95};
  for (int k = 0; k < 8; ++k) {
    CAPTURE(k);
    CHECK(lr_schedule(boundaries[k] - 1, c) == std::ldexp(2e-4, -k));
    CHECK(lr_schedule(boundaries[k], c) == std::ldexp(2e-4, -(k + 1)));
  }
}

TEST_CASE("nine plateaus for any epoch count of at least 20") {
  for (std::size_t epochs : {20, 21, 37, 60, 100, 257}) {
    OptimConfig c;
    c.epochs = epochs;
    std::set<double> distinct;
    double prev = lr_schedule(0, c);
    for (std::size_t e = 0; e < epochs; ++e) {
      const double lr = lr_schedule(e, c);
      CHECK(lr <= prev);
      prev = lr;
      distinct.insert(lr);
    }
    CAPTURE(epochs);
    CHECK(distinct.size() == 9);
  }
}

TEST_CASE("optimizer config validation") {
  OptimConfig c;
  CHECK_NOTHROW(c.validate());
  c.boundary_fractions = {0.5, 0.4};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = OptimConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = OptimConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("nesterov step reduces to plain SGD without momentum") {
  OptimConfig c;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  auto p = scalar_store(1.0), v = scalar_store(0.0);
  nesterov_step(p, scalar_store(1.0), v, 0.1, c);
  CHECK(p.at("p")[0] == doctest::Approx(0.9).epsilon(1e-15));

  // Zero gradient, velocity and decay: a fixed point.
  OptimConfig z;
  z.weight_decay = 0.0;
  auto q = scalar_store(0.37), w = scalar_store(0.0);
  nesterov_step(q, scalar_store(0.0), w, 0.1, z);
  CHECK(q.at("p")[0] == 0.37);
}

TEST_CASE("two nesterov steps match the scalar reference") {
  OptimConfig c;
  c.momentum = 0.9;
  c.weight_decay = 1e-3;
  const double slope = 0.5, offset = -0.25, lr = 0.1;
  const auto ref = oracle::nesterov_scalar(1.0, slope, offset, lr, 0.9, 1e-3, 2);
  auto p = scalar_store(1.0), v = scalar_store(0.0);
  for (int s = 0; s < 2; ++s) {
    nesterov_step(p, scalar_store(slope * p.at("p")[0] + offset), v, lr, c);
    CHECK(std::abs(p.at("p")[0] - ref.params[s]) <= 1e-12);
    CHECK(std::abs(v.at("p")[0] - ref.velocities[s]) <= 1e-12);
  }
  // Hand computation of the same trace.
  const double g1 = 0.5 * 1.0 - 0.25 + 1e-3 * 1.0;
  const double v1 = -0.1 * g1, p1 = 1.0 + 0.9 * v1 - 0.1 * g1;
  const double g2 = 0.5 * p1 - 0.25 + 1e-3 * p1;
  const double v2 = 0.9 * v1 - 0.1 * g2, p2 = p1 + 0.9 * v2 - 0.1 * g2;
  CHECK(std::abs(ref.params[1] - p2) <= 1e-12);
  CHECK(std::abs(ref.velocities[1] - v2) <= 1e-12);
}

TEST_CASE("weight decay alone shrinks the parameter norm every step") {
  OptimConfig c;
  ParamStore<double> p, g, v;
  DTensor t(Shape{3});
  t[0] = 1.0;
  t[1] = -2.0;
  t[2] = 0.5;
  p.insert("w", t);
  g.insert("w", DTensor(Shape{3}));
  v.insert("w", DTensor(Shape{3}));
  auto norm = [&] {
    double s = 0;
    for (double x : p.at("w").data()) s += x * x;
    return s;
  };
  double prev = norm();
  for (int s = 0; s < 50; ++s) {
    nesterov_step(p, g, v, 0.1, c);
    const double n = norm();
    CHECK(n < prev);
    prev = n;
  }
}

TEST_CASE("non-finite gradients abort the step") {
  OptimConfig c;
  auto p = scalar_store(1.0), v = scalar_store(0.0);
  CHECK_THROWS_AS(nesterov_step(p, scalar_store(std::nan("")), v, 0.1, c), NumericError);
  CHECK(p.at("p")[0] == 1.0);
}

TEST_CASE("csv log layout") {
  CHECK(csv_header(4) == "epoch,lr,train_loss,val_loss,dice_1,dice_2,dice_3");
  EpochLog log{3, 0.5, 1.25, std::nullopt, {}};
  CHECK(csv_row(log) == "3,0.5,1.25,");
  log.val_loss = 2.0;
  log.dice = {0.5, 0.75};
  CHECK(csv_row(log) == "3,0.5,1.25,2,0.5,0.75");
}

TEST_CASE("loss decreases on the overfit fixture for every variant") {
  const auto samples = small_slices(2);
  for (Variant v : {Variant::kV1, Variant::kV2, Variant::kV3}) {
    const MixNet net(tiny_net(v));
    OptimConfig c;
    c.batch_size = 2;
    c.epochs = 10;
    c.boundary_fractions.clear();
    Trainer t(net, c, 11);
    const aug::ExpandedView view(samples, no_ops(), 1);
    std::vector<double> losses;
    for (int e = 0; e < 10; ++e) losses.push_back(t.run_epoch(view).train_loss);
    CAPTURE(to_string(v));
    CHECK(losses.back() < losses.front());
  }
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const auto samples = small_slices(2);
  const MixNet net(tiny_net(Variant::kV2));
  OptimConfig c;
  c.lr0 = 0.0;
  c.batch_size = 2;
  c.epochs = 2;
  Trainer t(net, c, 3);
  const auto before = t.params();
  const aug::ExpandedView view(samples, no_ops(), 1);
  t.run_epoch(view);
  t.run_epoch(view);
  CHECK(bit_equal(before, t.params()));
}

TEST_CASE("checkpoint round trip and resume") {
  const auto samples = small_slices(3, 3);
  const MixNet net(tiny_net(Variant::kV3, 3));
  OptimConfig c;
  c.batch_size = 2;
  c.epochs = 3;
  c.lr0 = 1e-3;
  const aug::ExpandedView view(samples, aug::Policy::defaults(Plane::kSagittal), 8);

  Trainer straight(net, c, 21);
  for (int e = 0; e < 3; ++e) straight.run_epoch(view, &samples);

  Trainer first(net, c, 21);
  first.run_epoch(view);
  const auto path = std::filesystem::temp_directory_path() / "mixnet_test_resume.ck";
  save_checkpoint(first.checkpoint("sagittal"), path);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.epoch == 1);
  CHECK(ck.plane == "sagittal");
  CHECK(ck.seed == 21);
  CHECK(bit_equal(ck.params, first.params()));
  CHECK(bit_equal(ck.velocity, first.velocity()));

  Trainer resumed(net, ck);
  for (int e = 1; e < 3; ++e) resumed.run_epoch(view);
  CHECK(bit_equal(resumed.params(), straight.params()));
  CHECK(bit_equal(resumed.velocity(), straight.velocity()));

  // A checkpoint for another network is rejected.
  const MixNet other(tiny_net(Variant::kV1, 3));
  CHECK_THROWS_AS(Trainer(other, ck), ConfigError);
  std::filesystem::resize_file(path, 40);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("validation reports loss and per-class dice") {
  const auto samples = small_slices(2, 3);
  const MixNet net(tiny_net(Variant::kV2, 3));
  Trainer t(net, OptimConfig{}, 4);
  const auto [loss, dice] = t.validate(samples);
  CHECK(loss > 0.0);
  CHECK(dice.size() == 2);
  const auto probs = predict_probabilities(net, t.params(), samples, 1);
  REQUIRE(probs.size() == 2);
  for (std::size_t i = 0; i < probs[0].size(); i += 3)
    CHECK(probs[0][i] + probs[0][i + 1] + probs[0][i + 2] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("config overlays and unknown keys") {
  const Json j = {{"lr0", 0.01}, {"epochs", 7}, {"loss_reduction", "sum"}};
  const OptimConfig c = optim_config_from_json(j, OptimConfig{});
  CHECK(c.lr0 == 0.01);
  CHECK(c.epochs == 7);
  CHECK(c.loss_reduction == Reduction::kSum);
  CHECK(c.momentum == 0.99);
  const OptimConfig back = optim_config_from_json(to_json(c), OptimConfig{});
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(optim_config_from_json({{"learning_rate", 1.0}}, OptimConfig{}), ConfigError);
  CHECK_THROWS_AS(optim_config_from_json({{"epochs", "many"}}, OptimConfig{}), ConfigError);

  const NetConfig n = net_config_from_json({{"variant", "v1"}, {"n_classes", 3}}, NetConfig{});
  CHECK(n.variant == Variant::kV1);
  CHECK(n.levels.size() == 5);
  CHECK(n.levels[0].filters == 72);
  CHECK(n.n_classes == 3);
  CHECK_THROWS_AS(net_config_from_json({{"variant", "v9"}}, NetConfig{}), ConfigError);
  CHECK_THROWS_AS(net_config_from_json({{"depth", 3}}, NetConfig{}), ConfigError);

  const FusionConfig f = fusion_config_from_json({{"weights", {1, 2, 3}}}, FusionConfig{});
  CHECK(f.weights[2] == 3.0);
  CHECK_THROWS_AS(read_json_file("/nonexistent/config.json"), ConfigError);
}
