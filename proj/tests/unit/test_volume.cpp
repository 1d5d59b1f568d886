#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <set>

#include "mixnet/dataset.hpp"
#include "mixnet/error.hpp"
#include "mixnet/volume.hpp"

using namespace mixnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mixnet_test_volume_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume random_volume(const Dims3& d, std::uint64_t seed, Spacing3 spacing = {1, 1, 1}) {
  Volume v;
  v.dims = d;
  v.spacing = spacing;
  v.data.resize(voxel_count(d));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(3.0f, 2.0f);
  for (auto& x : v.data) x = n(rng);
  return v;
}

LabelVolume random_labels(const Dims3& d, std::uint64_t seed, std::size_t k) {
  LabelVolume l;
  l.dims = d;
  l.data.resize(voxel_count(d));
  std::mt19937_64 rng(seed);
  for (auto& x : l.data) x = static_cast<std::uint8_t>(rng() % k);
  return l;
}

ProbVolume random_probs(const Dims3& d, std::size_t k, std::uint64_t seed) {
  ProbVolume p;
  p.dims = d;
  p.n_classes = k;
  p.data.resize(voxel_count(d) * k);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.01f, 1.0f);
  for (std::size_t v = 0; v < voxel_count(d); ++v) {
    float s = 0;
    for (std::size_t c = 0; c < k; ++c) s += p.data[v * k + c] = u(rng);
    for (std::size_t c = 0; c < k; ++c) p.data[v * k + c] /= s;
  }
  return p;
}

}  // namespace

TEST_CASE("volume round trip is bit-exact and keeps anisotropic spacing") {
  const fs::path dir = scratch("roundtrip");
  Volume v = random_volume({240, 240, 48}, 1, {0.958, 0.958, 3.0});
  v.modality = "T1";
  write_volume(v, dir / "t1.json");
  const Volume r = read_volume(dir / "t1.json");
  CHECK(r.dims == v.dims);
  CHECK(r.spacing == v.spacing);
  CHECK(r.modality == "T1");
  CHECK(r.data == v.data);

  const LabelVolume l = random_labels({5, 6, 7}, 2, 4);
  write_volume(l, dir / "lab.json");
  const LabelVolume lr = read_label_volume(dir / "lab.json");
  CHECK(lr.data == l.data);
  CHECK(lr.dims == l.dims);

  ProbVolume p = random_probs({4, 3, 2}, 3, 3);
  p.plane = "coronal";
  write_volume(p, dir / "p.json");
  const ProbVolume pr = read_prob_volume(dir / "p.json");
  CHECK(pr.data == p.data);
  CHECK(pr.n_classes == 3);
  CHECK(pr.plane == "coronal");
}

TEST_CASE("volume read errors") {
  const fs::path dir = scratch("errors");
  const Volume v = random_volume({4, 4, 4}, 1);
  write_volume(v, dir / "v.json");
  fs::resize_file(dir / "v.raw", 4 * 4 * 4 * 4 - 8);
  CHECK_THROWS_AS(read_volume(dir / "v.json"), DataError);

  write_volume(v, dir / "w.json");
  nlohmann::json h;
  std::ifstream(dir / "w.json") >> h;
  h["version"] = 99;
  std::ofstream(dir / "w.json") << h.dump();
  CHECK_THROWS_AS(read_volume(dir / "w.json"), DataError);
  CHECK_THROWS_AS(read_volume(dir / "missing.json"), DataError);

  write_volume(random_labels({4, 4, 4}, 1, 3), dir / "l.json");
  CHECK_THROWS_AS(read_volume(dir / "l.json"), DataError);
}

TEST_CASE("normalize") {
  Volume c;
  c.dims = {3, 3, 3};
  c.data.assign(27, 5.0f);
  for (float x : normalize(c).data) CHECK(x == 0.0f);

  const Volume v = random_volume({20, 20, 20}, 4);
  const Volume n = normalize(v);
  double s = 0, s2 = 0;
  for (float x : n.data) {
    s += x;
    s2 += double(x) * x;
  }
  const double mean = s / n.data.size();
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::abs(std::sqrt(s2 / n.data.size() - mean * mean) - 1.0) < 1e-5);

  Volume a = v;
  for (auto& x : a.data) x = 2.5f * x - 7.0f;
  const Volume na = normalize(a);
  for (std::size_t i = 0; i < n.data.size(); ++i) CHECK(na.data[i] == doctest::Approx(n.data[i]).epsilon(1e-4));
}

TEST_CASE("plane permutations") {
  CHECK(plane_axes(Plane::kSagittal) == std::array<std::size_t, 3>{0, 1, 2});
  CHECK(plane_axes(Plane::kCoronal) == std::array<std::size_t, 3>{1, 0, 2});
  CHECK(plane_axes(Plane::kTransverse) == std::array<std::size_t, 3>{2, 0, 1});
  std::mt19937_64 rng(3);
  for (Plane p : {Plane::kSagittal, Plane::kCoronal, Plane::kTransverse})
    for (int t = 0; t < 100; ++t) {
      const std::array<std::size_t, 3> xyz{rng() % 50, rng() % 50, rng() % 50};
      CHECK(from_plane(p, to_plane(p, xyz)) == xyz);
    }
  CHECK(parse_plane(to_string(Plane::kCoronal)) == Plane::kCoronal);
  CHECK_THROWS_AS(parse_plane("axial"), ConfigError);
}

TEST_CASE("slice_stack geometry and restacking") {
  const Dims3 d{24, 20, 6};
  std::vector<Volume> mods{random_volume(d, 1), random_volume(d, 2), random_volume(d, 3)};
  const LabelVolume labels = random_labels(d, 4, 4);

  const auto trans = slice_stack(mods, labels, Plane::kTransverse);
  CHECK(trans.size() == 6);
  CHECK(trans[0].image.shape() == Shape({24, 20, 3}));
  const auto sag = slice_stack(mods, labels, Plane::kSagittal);
  CHECK(sag.size() == 24);
  CHECK(sag[0].image.shape() == Shape({20, 6, 3}));
  const auto cor = slice_stack(mods, labels, Plane::kCoronal);
  CHECK(cor.size() == 20);
  CHECK(cor[0].image.shape() == Shape({24, 6, 3}));

  for (const auto* stack : {&trans, &sag, &cor}) {
    const Plane p = stack == &trans ? Plane::kTransverse : stack == &sag ? Plane::kSagittal : Plane::kCoronal;
    CHECK(restack_labels(*stack, p, d, labels.spacing).data == labels.data);
    for (std::size_t m = 0; m < 3; ++m) CHECK(restack_channel(*stack, m, p, d, labels.spacing).data == mods[m].data);
  }

  // Spot-check the documented axis mapping.
  const std::size_t x = 7, y = 3, z = 4;
  const float v = mods[1].data[(z * d[1] + y) * d[0] + x];
  CHECK(trans[z].image[(x * 20 + y) * 3 + 1] == v);
  CHECK(sag[x].image[(y * 6 + z) * 3 + 1] == v);
  CHECK(cor[y].image[(x * 6 + z) * 3 + 1] == v);

  std::vector<Volume> bad{random_volume(d, 1), random_volume({24, 20, 7}, 2), random_volume(d, 3)};
  CHECK_THROWS_AS(slice_stack(bad, labels, Plane::kSagittal), ShapeError);
}

TEST_CASE("slice_stack on a 240x240x48 volume") {
  const Dims3 d{240, 240, 48};
  std::vector<Volume> mods{random_volume(d, 1, {0.958, 0.958, 3.0})};
  LabelVolume l = random_labels(d, 2, 3);
  l.spacing = {0.958, 0.958, 3.0};
  const auto t = slice_stack(mods, l, Plane::kTransverse);
  CHECK(t.size() == 48);
  CHECK(t[0].height() == 240);
  CHECK(t[0].width() == 240);
  const auto s = slice_stack(mods, l, Plane::kSagittal);
  CHECK(s.size() == 240);
  CHECK(s[0].height() == 240);
  CHECK(s[0].width() == 48);
  CHECK(s[0].spacing == std::array<double, 2>{0.958, 3.0});
}

TEST_CASE("fusion") {
  const Dims3 d{1, 1, 1};
  auto voxel = [&](float p0, float p1) {
    ProbVolume p;
    p.dims = d;
    p.n_classes = 2;
    p.data = {p0, p1};
    return p;
  };
  const std::vector<ProbVolume> planes{voxel(0.6f, 0.4f), voxel(0.6f, 0.4f), voxel(0.2f, 0.8f)};
  CHECK(fuse_predictions(planes, FusionConfig{}).data[0] == 1);
  CHECK(fuse_predictions(planes, FusionConfig{{1, 1, 0}}).data[0] == 0);
  CHECK(fuse_predictions(planes, FusionConfig{{0, 0, 1}}).data[0] == 1);
  CHECK(fuse_predictions({voxel(0.5f, 0.5f), voxel(0.5f, 0.5f), voxel(0.5f, 0.5f)}, FusionConfig{}).data[0] == 0);
  CHECK_THROWS_AS(fuse_predictions(planes, FusionConfig{{0, 0, 0}}), ConfigError);
  CHECK_THROWS_AS(fuse_predictions(planes, FusionConfig{{1, -1, 1}}), ConfigError);

  const Dims3 big{6, 5, 4};
  const ProbVolume a = random_probs(big, 4, 1), b = random_probs(big, 4, 2), c = random_probs(big, 4, 3);
  const LabelVolume single = argmax_labels(a);
  CHECK(fuse_predictions({a, a, a}, FusionConfig{{0.3, 2, 5}}).data == single.data);
  CHECK(fuse_predictions({a, b, c}, FusionConfig{{0, 0, 1}}).data == argmax_labels(c).data);
  const LabelVolume base = fuse_predictions({a, b, c}, FusionConfig{{1, 1, 4}});
  CHECK(fuse_predictions({a, b, c}, FusionConfig{{2.5, 2.5, 10}}).data == base.data);
  CHECK_THROWS_AS(fuse_predictions({a, b, random_probs({6, 5, 3}, 4, 1)}, FusionConfig{}), ShapeError);
}

TEST_CASE("assembled probabilities sum to one") {
  const Dims3 d{8, 6, 5};
  std::vector<Tensor> slices;
  std::mt19937_64 rng(1);
  for (std::size_t z = 0; z < 5; ++z) {
    Tensor t(Shape{8, 6, 3});
    for (std::size_t p = 0; p < 48; ++p) {
      float s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += t[p * 3 + k] = 0.1f + float(rng() % 100);
      for (std::size_t k = 0; k < 3; ++k) t[p * 3 + k] /= s;
    }
    slices.push_back(t);
  }
  const ProbVolume p = assemble_probabilities(slices, Plane::kTransverse, d, {1, 1, 1});
  for (std::size_t v = 0; v < voxel_count(d); ++v)
    CHECK(std::abs(p.data[v * 3] + p.data[v * 3 + 1] + p.data[v * 3 + 2] - 1.0f) < 1e-5);
  CHECK(p.data[((2 * 6 + 3) * 8 + 5) * 3 + 1] == slices[2][(5 * 6 + 3) * 3 + 1]);
}

TEST_CASE("synthetic generator") {
  SyntheticConfig cfg;
  cfg.dims = {48, 40, 36};
  const SyntheticSubject a = generate_synthetic(5, cfg), b = generate_synthetic(5, cfg);
  CHECK(a.labels.data == b.labels.data);
  for (std::size_t m = 0; m < 3; ++m) CHECK(a.modalities[m].data == b.modalities[m].data);
  CHECK(a.modalities.size() == 3);
  CHECK(a.modalities[0].modality == "synthetic-0");

  std::vector<std::size_t> hist(4, 0);
  for (auto l : a.labels.data) ++hist.at(l);
  for (std::size_t c = 0; c < 4; ++c) CHECK(double(hist[c]) / a.labels.data.size() >= 0.01);

  SyntheticConfig clean = cfg;
  clean.noise_sigma = 0.0;
  clean.bias_amplitude = 0.0;
  const SyntheticSubject s = generate_synthetic(6, clean);
  for (std::size_t m = 0; m < 3; ++m) {
    std::set<float> values;
    for (std::size_t c = 0; c < 4; ++c) values.insert(float(synthetic_intensity(m, c, 4)));
    CHECK(values.size() == 4);
    for (std::size_t i = 0; i < s.labels.data.size(); i += 7)
      CHECK(s.modalities[m].data[i] == float(synthetic_intensity(m, s.labels.data[i], 4)));
  }

  SyntheticConfig tiny = cfg;
  tiny.dims = {31, 40, 40};
  CHECK_THROWS_AS(generate_synthetic(1, tiny), ParameterError);
}

TEST_CASE("dataset manifest") {
  const fs::path dir = scratch("dataset");
  SyntheticConfig cfg;
  cfg.dims = {32, 32, 32};
  const DatasetManifest m = generate_dataset(dir / "ds", 2, cfg, 7);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "ds"))
    if (e.path().extension() == ".json" && e.path().filename() != "dataset.json") ++files;
  CHECK(files == 2 * 4);
  const DatasetManifest r = read_manifest(dir / "ds" / "dataset.json");
  CHECK(r.n_classes == 4);
  REQUIRE(r.subjects.size() == 2);
  CHECK(r.subjects[1].modalities.size() == 3);
  const Subject s = load_subject(r, 1);
  CHECK(s.labels.dims == cfg.dims);
  std::set<int> labels(s.labels.data.begin(), s.labels.data.end());
  CHECK(labels == std::set<int>{0, 1, 2, 3});

  DatasetManifest bad = r;
  bad.n_classes = 3;
  CHECK_THROWS_AS(load_subject(bad, 0), DataError);
  CHECK_THROWS_AS(r.index_of("nobody"), DataError);
}
