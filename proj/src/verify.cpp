#include "mixnet/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <json.hpp>
#include <limits>
#include <random>

#include "mixnet/arch.hpp"
#include "mixnet/augment.hpp"
#include "mixnet/error.hpp"
#include "mixnet/gradcheck.hpp"
#include "mixnet/metrics.hpp"
#include "mixnet/ops.hpp"
#include "mixnet/trainer.hpp"

namespace mixnet::verify {

bool SuiteResult::passed() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

namespace {

DTensor random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  DTensor t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Check bound_check(std::string name, double value, double tolerance, std::string detail = "") {
  return {std::move(name), value <= tolerance, value, tolerance, std::move(detail)};
}

Check equal_check(std::string name, double value, double expected) {
  return {std::move(name), value == expected, value, expected, ""};
}

// ---- gradcheck ----

void gradcheck_suite(std::vector<Check>& out) {
  struct Case {
    std::string name;
    std::function<std::pair<GraphBuilder, std::vector<DTensor>>(std::uint64_t)> make;
  };
  auto project = [](Graph<double>& g, Var y, std::uint64_t seed) {
    return dot(g, y, random_tensor(g.value(y).shape(), seed + 999));
  };
  const std::vector<std::uint8_t> labels{0, 2, 1, 1, 2, 0};
  const std::vector<Case> cases = {
      {"conv2d",
       [&](std::uint64_t s) {
         const std::size_t d = 1 + s % 3;
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, conv2d(g, in[0], in[1], in[2], ConvSpec{3, 3, d, 1}), s);
                          }),
                          std::vector{random_tensor(Shape{1, 5, 6, 2}, s), random_tensor(Shape{3, 3, 2, 3}, s + 100),
                                      random_tensor(Shape{3}, s + 200)}};
       }},
      {"add",
       [&](std::uint64_t s) {
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, add(g, in[0], in[1]), s);
                          }),
                          std::vector{random_tensor(Shape{1, 3, 3, 2}, s), random_tensor(Shape{1, 3, 3, 2}, s + 1)}};
       }},
      {"scale",
       [&](std::uint64_t s) {
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, scale(g, in[0], 0.37), s);
                          }),
                          std::vector{random_tensor(Shape{1, 3, 3, 2}, s)}};
       }},
      {"relu",
       [&](std::uint64_t s) {
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, relu(g, in[0]), s);
                          }),
                          std::vector{random_tensor(Shape{1, 4, 4, 2}, s)}};
       }},
      {"maxpool2x2",
       [&](std::uint64_t s) {
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, maxpool2x2(g, in[0]), s);
                          }),
                          std::vector{random_tensor(Shape{1, 5, 4, 2}, s)}};
       }},
      {"avgpool_region",
       [&](std::uint64_t s) {
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, avgpool_region(g, in[0], 3, 2), s);
                          }),
                          std::vector{random_tensor(Shape{1, 7, 5, 2}, s)}};
       }},
      {"bilinear_resize",
       [&](std::uint64_t s) {
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, bilinear_resize(g, in[0], 7, 5), s);
                          }),
                          std::vector{random_tensor(Shape{1, 3, 4, 2}, s)}};
       }},
      {"concat_slice",
       [&](std::uint64_t s) {
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return project(g, slice_channels(g, concat_channels(g, {in[0], in[1]}), 1, 3), s);
                          }),
                          std::vector{random_tensor(Shape{1, 2, 3, 2}, s), random_tensor(Shape{1, 2, 3, 2}, s + 1)}};
       }},
      {"softmax_cross_entropy",
       [&](std::uint64_t s) {
         const Reduction r = s % 2 ? Reduction::kMean : Reduction::kSum;
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            return softmax_cross_entropy(g, in[0], labels, r);
                          }),
                          std::vector{random_tensor(Shape{1, 2, 3, 3}, s, -2, 2)}};
       }},
      {"dilate_res_unit",
       [&](std::uint64_t s) {
         const DilateResUnitConfig cfg{4, s % 2 ? 6u : 4u, 4, 1 + s % 3};
         ParamManifest m;
         declare_dilate_res_unit(m, "u", cfg);
         std::vector<DTensor> inputs{random_tensor(Shape{1, 8, 8, 4}, s)};
         std::vector<std::string> names;
         for (const auto& spec : m.specs()) {
           names.push_back(spec.name);
           inputs.push_back(random_tensor(spec.shape, derive_seed(s, names.size()), -0.5, 0.5));
         }
         return std::pair{GraphBuilder([=](Graph<double>& g, const std::vector<Var>& in) {
                            ParamVars pv;
                            for (std::size_t i = 0; i < names.size(); ++i) pv.emplace(names[i], in[i + 1]);
                            return project(g, dilate_res_unit(g, pv, "u", cfg, in[0]), s);
                          }),
                          inputs};
       }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    bool ok = true;
    std::string detail;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto [f, inputs] = c.make(s);
      const auto r = grad_check(f, inputs);
      ok = ok && r.passed;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        detail = r.worst;
      }
    }
    Check k = bound_check(c.name + " (5 instances)", worst, 1e-4, detail);
    k.passed = k.passed && ok;
    out.push_back(k);
  }
}

// ---- shapes ----

std::string hwc(const Shape& s) { return std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" + std::to_string(s[3]); }

void shapes_suite(std::vector<Check>& out) {
  // Published per-level layout for a 240x240 input: (unit input, unit output).
  const std::size_t dilations[5] = {2, 1, 4, 1, 8};
  for (Variant v : {Variant::kV1, Variant::kV2, Variant::kV3}) {
    const MixNet net(NetConfig::defaults(v, 4));
    Graph<float> g(false);
    ForwardTrace trace;
    net.forward(g, bind_params(g, net.init_params(1)), g.constant(Tensor(Shape{1, 240, 240, 3})), &trace);
    std::size_t mismatches = 0, seen = 0;
    std::string detail;
    for (const auto& u : trace.units) {
      if (u.level == 0) continue;
      ++seen;
      std::string in, outp;
      if (v == Variant::kV1) {
        in = outp = "120x120x72";
      } else if (v == Variant::kV3) {
        in = outp = "120x120x24";
      } else {
        in = u.level % 2 == 1 ? "120x120x72" : "120x120x48";
        outp = "120x120x24";
      }
      if (hwc(u.input) != in || hwc(u.output) != outp) {
        ++mismatches;
        detail = u.name + ": " + hwc(u.input) + " -> " + hwc(u.output);
      }
    }
    for (const auto& [prefix, cfg] : net.units()) {
      const std::size_t level = std::stoul(prefix.substr(5, 1));
      const std::size_t filters = v == Variant::kV1 ? 72 : 24;
      if (cfg.f != filters || cfg.d != dilations[level - 1]) {
        ++mismatches;
        detail = prefix + ": filters/dilation";
      }
    }
    // v1 one unit per level, v2 shared units on odd levels, v3 one per stream.
    const std::size_t expected_units = v == Variant::kV1 ? 5 : v == Variant::kV2 ? 3 + 2 * 3 : 15;
    if (seen != expected_units) {
      ++mismatches;
      detail = "unit count " + std::to_string(seen);
    }
    if (!(trace.logits == Shape({1, 240, 240, 4}))) {
      ++mismatches;
      detail = "logits " + trace.logits.str();
    }
    Check c = equal_check(to_string(v) + " level layout mismatches", static_cast<double>(mismatches), 0.0);
    c.detail = detail;
    out.push_back(c);
  }
}

// ---- embedding ----

void embedding_suite(std::vector<Check>& out) {
  const MixNet v3(NetConfig::defaults(Variant::kV3, 4)), v1(NetConfig::defaults(Variant::kV1, 4));
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    ParamStore<float> p3;
    std::uint64_t i = 0;
    for (const auto& s : v3.manifest().specs())
      p3.insert(s.name, random_tensor(s.shape, derive_seed(100 + draw, i++), -0.15, 0.15).cast<float>());
    const ParamStore<float> p1 = embed_v3_into_v1(v3, p3, v1);
    const Tensor x = random_tensor(Shape{2, 48, 40, 3}, 200 + draw).cast<float>();
    Graph<float> g3(false), g1(false);
    const Tensor& y3 = g3.value(v3.forward(g3, bind_params(g3, p3), g3.constant(x)));
    const Tensor& y1 = g1.value(v1.forward(g1, bind_params(g1, p1), g1.constant(x)));
    for (std::size_t k = 0; k < y3.size(); ++k) worst = std::max(worst, static_cast<double>(std::abs(y3[k] - y1[k])));
  }
  out.push_back(bound_check("v3 logits reproduced by embedded v1 (5 draws, max abs)", worst, 1e-4));
}

// ---- metrics ----

// All-pairs reference for the surface distance percentile.
double brute_hd95(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, const Dims3& d,
                  const Spacing3& s, bool pooled) {
  auto inside = [&](const std::vector<std::uint8_t>& m, long x, long y, long z) {
    if (x < 0 || y < 0 || z < 0 || x >= long(d[0]) || y >= long(d[1]) || z >= long(d[2])) return false;
    return m[(std::size_t(z) * d[1] + std::size_t(y)) * d[0] + std::size_t(x)] != 0;
  };
  auto border = [&](const std::vector<std::uint8_t>& m) {
    std::vector<std::array<long, 3>> pts;
    for (long z = 0; z < long(d[2]); ++z)
      for (long y = 0; y < long(d[1]); ++y)
        for (long x = 0; x < long(d[0]); ++x)
          if (inside(m, x, y, z) && !(inside(m, x - 1, y, z) && inside(m, x + 1, y, z) && inside(m, x, y - 1, z) &&
                                      inside(m, x, y + 1, z) && inside(m, x, y, z - 1) && inside(m, x, y, z + 1)))
            pts.push_back({x, y, z});
    return pts;
  };
  auto dists = [&](const auto& from, const auto& to) {
    std::vector<double> r;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to)
        best = std::min(best, std::hypot((p[0] - q[0]) * s[0], (p[1] - q[1]) * s[1], (p[2] - q[2]) * s[2]));
      r.push_back(best);
    }
    return r;
  };
  auto pct = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t rank = 1;
    while (100 * rank < 95 * v.size()) ++rank;
    return v[rank - 1];
  };
  const auto ba = border(a), bb = border(b);
  auto ab = dists(ba, bb);
  const auto ba_ = dists(bb, ba);
  if (pooled) {
    ab.insert(ab.end(), ba_.begin(), ba_.end());
    return pct(ab);
  }
  return std::max(pct(ab), pct(ba_));
}

void metrics_suite(std::vector<Check>& out) {
  {
    const std::vector<std::uint8_t> a{1, 1, 1, 1, 0, 0, 0, 0}, b{0, 0, 1, 1, 1, 1, 0, 0};
    out.push_back(bound_check("dice worked example", std::abs(dice(a, b) - 0.5), 1e-12));
    std::vector<std::uint8_t> big(150, 0), small(150, 0);
    std::fill(big.begin(), big.begin() + 100, 1);
    std::fill(small.begin() + 100, small.end(), 1);
    out.push_back(bound_check("volumetric similarity worked example", std::abs(volumetric_similarity(big, small) - 2.0 / 3.0), 1e-12));
    const Dims3 d{8, 2, 2};
    std::vector<std::uint8_t> p(32, 0), q(32, 0);
    p[1] = 1;
    q[4] = 1;
    out.push_back(bound_check("single voxels 3 apart at 3 mm spacing", std::abs(hd95(p, q, d, {3, 1, 1}) - 9.0), 1e-12));
  }
  std::mt19937_64 rng(20240501);
  double worst_overlap = 0.0, worst_hd = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Dims3 d{2 + rng() % 11, 2 + rng() % 11, 1 + rng() % 12};
    std::bernoulli_distribution fill(0.1 + 0.05 * (trial % 8));
    std::vector<std::uint8_t> a(voxel_count(d)), b(voxel_count(d));
    for (auto& v : a) v = fill(rng);
    for (auto& v : b) v = fill(rng);
    a[0] = 1;
    b.back() = 1;
    std::uniform_real_distribution<double> us(0.5, 3.0);
    const Spacing3 s{us(rng), us(rng), us(rng)};
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      na += a[i];
      nb += b[i];
      both += a[i] & b[i];
    }
    const double ref_dice = 2.0 * double(both) / double(na + nb);
    const double ref_vs = 1.0 - std::abs(double(na) - double(nb)) / double(na + nb);
    worst_overlap = std::max({worst_overlap, std::abs(dice(a, b) - ref_dice), std::abs(volumetric_similarity(a, b) - ref_vs)});
    worst_hd = std::max({worst_hd, std::abs(hd95(a, b, d, s) - brute_hd95(a, b, d, s, false)),
                         std::abs(hd95(a, b, d, s, HdMode::kPooled) - brute_hd95(a, b, d, s, true))});
  }
  out.push_back(bound_check("dice / VS vs counting (100 random masks)", worst_overlap, 1e-12));
  out.push_back(bound_check("hd95 vs all-pairs (100 random masks, both modes)", worst_hd, 1e-9));
}

// ---- schedule ----

void schedule_suite(std::vector<Check>& out) {
  OptimConfig c;
  c.epochs = 100;
  const std::size_t boundaries[] = {20, 40, 60, 75, 80, 85, 90, 95};
  double worst = 0.0;
  for (std::size_t e = 0; e < 100; ++e) {
    int k = 0;
    for (std::size_t b : boundaries) k += e >= b;
    worst = std::max(worst, std::abs(lr_schedule(e, c) - 2e-4 / double(1 << k)));
  }
  out.push_back(equal_check("lr table for 100 epochs (max abs error)", worst, 0.0));

  OptimConfig n;
  n.momentum = 0.9;
  n.weight_decay = 1e-3;
  ParamStore<double> p, v;
  p.insert("p", DTensor(Shape{1}, {1.0}));
  v.insert("p", DTensor(Shape{1}, {0.0}));
  // Gradient of 0.25 p^2 - 0.25 p, two steps at lr 0.1 written out by hand.
  const double g1 = 0.5 - 0.25 + 1e-3, v1 = -0.1 * g1, p1 = 1.0 + 0.9 * v1 - 0.1 * g1;
  const double g2 = 0.5 * p1 - 0.25 + 1e-3 * p1, v2 = 0.9 * v1 - 0.1 * g2, p2 = p1 + 0.9 * v2 - 0.1 * g2;
  for (int s = 0; s < 2; ++s) {
    ParamStore<double> g;
    g.insert("p", DTensor(Shape{1}, {0.5 * p.at("p")[0] - 0.25}));
    nesterov_step(p, g, v, 0.1, n);
  }
  out.push_back(bound_check("two-step nesterov trace", std::max(std::abs(p.at("p")[0] - p2), std::abs(v.at("p")[0] - v2)), 1e-12));
}

// ---- augment ----

Sample pattern_sample(std::size_t h, std::size_t w) {
  Sample s;
  s.image = Tensor(Shape{h, w, 3});
  s.label = {h, w, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < s.image.size(); ++i) s.image[i] = std::sin(0.37f * float(i));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) s.label.data[i * w + j] = std::uint8_t(((i / 5) + (j / 7)) % 4);
  return s;
}

void augment_suite(std::vector<Check>& out) {
  const std::vector<Sample> one{pattern_sample(32, 28)};
  out.push_back(equal_check("transverse samples per original",
                            double(aug::expand_dataset(one, aug::Policy::defaults(Plane::kTransverse), 1).size()), 15));
  out.push_back(equal_check("sagittal samples per original",
                            double(aug::expand_dataset(one, aug::Policy::defaults(Plane::kSagittal), 1).size()), 3));
  out.push_back(equal_check("coronal samples per original",
                            double(aug::expand_dataset(one, aug::Policy::defaults(Plane::kCoronal), 1).size()), 3));
  const Sample e = aug::elastic(one[0], 0.0, 4.0, 3);
  double diff = 0.0;
  for (std::size_t i = 0; i < e.image.size(); ++i) diff = std::max(diff, double(std::abs(e.image[i] - one[0].image[i])));
  diff += e.label.data == one[0].label.data ? 0.0 : 1.0;
  out.push_back(equal_check("elastic with alpha 0 is the identity", diff, 0.0));
  std::size_t new_labels = 0;
  for (const Sample& s : aug::expand_dataset(one, aug::Policy::defaults(Plane::kTransverse), 2))
    for (std::uint8_t l : s.label.data) new_labels += l > 3;
  out.push_back(equal_check("augmented labels stay in the original set", double(new_labels), 0.0));
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"gradcheck", "shapes", "embedding", "metrics", "schedule", "augment"};
  return names;
}

SuiteResult run_suite(const std::string& name) {
  SuiteResult r;
  r.suite = name;
  const auto t0 = std::chrono::steady_clock::now();
  if (name == "gradcheck")
    gradcheck_suite(r.checks);
  else if (name == "shapes")
    shapes_suite(r.checks);
  else if (name == "embedding")
    embedding_suite(r.checks);
  else if (name == "metrics")
    metrics_suite(r.checks);
  else if (name == "schedule")
    schedule_suite(r.checks);
  else if (name == "augment")
    augment_suite(r.checks);
  else
    throw ConfigError("unknown verify suite '" + name + "'");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string summary_json(const std::vector<SuiteResult>& results) {
  nlohmann::json j;
  bool all = true;
  j["suites"] = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json s{{"suite", r.suite}, {"passed", r.passed()}, {"seconds", r.seconds}};
    s["checks"] = nlohmann::json::array();
    for (const auto& c : r.checks)
      s["checks"].push_back(
          {{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"tolerance", c.tolerance}, {"detail", c.detail}});
    j["suites"].push_back(s);
    all = all && r.passed();
  }
  j["passed"] = all;
  return j.dump(2);
}

}  // namespace mixnet::verify
