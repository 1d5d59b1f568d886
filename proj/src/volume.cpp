#include "mixnet/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "mixnet/error.hpp"

namespace mixnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kFormat = "mixnet-volume";
constexpr int kVersion = 1;

void check_geometry(const Dims3& dims, const Spacing3& spacing, std::size_t buffer, std::size_t channels,
                    const char* what) {
  for (std::size_t d : dims)
    if (d == 0) throw ShapeError(std::string(what) + ": extents must be >= 1");
  for (double s : spacing)
    if (!(s > 0.0)) throw DataError(std::string(what) + ": spacing must be > 0");
  if (buffer != voxel_count(dims) * channels)
    throw ShapeError(std::string(what) + ": buffer length " + std::to_string(buffer) + " does not match dims");
}

template <typename T>
void write_body(const fs::path& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  } else {
    for (T v : data) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), sizeof(T));
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

template <typename T>
std::vector<T> read_body(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw DataError("cannot stat volume body " + path.string());
  if (bytes != count * sizeof(T))
    throw DataError("volume body size mismatch: " + path.string() + " has " + std::to_string(bytes) +
                    " bytes, header implies " + std::to_string(count * sizeof(T)));
  std::vector<T> data(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("read failed: " + path.string());
  if constexpr (std::endian::native != std::endian::little && sizeof(T) > 1) {
    for (auto& v : data) {
      auto b = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(b.begin(), b.end());
      v = std::bit_cast<T>(b);
    }
  }
  return data;
}

fs::path body_path(const fs::path& header) {
  fs::path p = header;
  p.replace_extension(".raw");
  return p;
}

void write_header(const fs::path& header, const Dims3& dims, const Spacing3& spacing, const char* dtype,
                  std::size_t channels, const std::string& modality, const std::string& plane) {
  json h;
  h["format"] = kFormat;
  h["version"] = kVersion;
  h["dims"] = dims;
  h["spacing"] = spacing;
  h["dtype"] = dtype;
  h["channels"] = channels;
  h["modality"] = modality;
  h["plane"] = plane;
  h["byte_order"] = "little";
  h["data_file"] = body_path(header).filename().string();
  if (header.has_parent_path()) fs::create_directories(header.parent_path());
  std::ofstream out(header);
  if (!out) throw DataError("cannot open " + header.string() + " for writing");
  out << h.dump(2) << '\n';
}

struct Header {
  Dims3 dims{};
  Spacing3 spacing{};
  std::string dtype;
  std::size_t channels = 1;
  std::string modality;
  std::string plane;
  fs::path body;
};

Header read_header(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open volume header " + path.string());
  json h;
  try {
    in >> h;
  } catch (const json::exception& e) {
    throw DataError("malformed volume header " + path.string() + ": " + e.what());
  }
  try {
    if (h.at("format").get<std::string>() != kFormat) throw DataError("not a volume header: " + path.string());
    const int version = h.at("version").get<int>();
    if (version != kVersion) throw DataError("unknown volume format version " + std::to_string(version));
    if (h.value("byte_order", "little") != "little") throw DataError("unsupported byte order in " + path.string());
    Header r;
    r.dims = h.at("dims").get<Dims3>();
    r.spacing = h.at("spacing").get<Spacing3>();
    r.dtype = h.at("dtype").get<std::string>();
    r.channels = h.value("channels", std::size_t{1});
    r.modality = h.value("modality", std::string{});
    r.plane = h.value("plane", std::string{});
    r.body = path.parent_path() / h.at("data_file").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw DataError("invalid volume header " + path.string() + ": " + e.what());
  }
}

std::size_t axis_offset(const Dims3& d, const std::array<std::size_t, 3>& xyz) {
  return (xyz[2] * d[1] + xyz[1]) * d[0] + xyz[0];
}

}  // namespace

void Volume::validate() const { check_geometry(dims, spacing, data.size(), 1, "volume"); }
void LabelVolume::validate() const { check_geometry(dims, spacing, data.size(), 1, "label volume"); }
void ProbVolume::validate() const {
  if (n_classes == 0) throw ShapeError("probability volume: n_classes must be >= 1");
  check_geometry(dims, spacing, data.size(), n_classes, "probability volume");
}

void write_volume(const Volume& v, const fs::path& header) {
  v.validate();
  write_header(header, v.dims, v.spacing, "f32", 1, v.modality, "");
  write_body(body_path(header), v.data);
}

void write_volume(const LabelVolume& v, const fs::path& header) {
  v.validate();
  write_header(header, v.dims, v.spacing, "u8", 1, "labels", "");
  write_body(body_path(header), v.data);
}

void write_volume(const ProbVolume& v, const fs::path& header) {
  v.validate();
  write_header(header, v.dims, v.spacing, "f32", v.n_classes, "probabilities", v.plane);
  write_body(body_path(header), v.data);
}

Volume read_volume(const fs::path& header) {
  const Header h = read_header(header);
  if (h.dtype != "f32" || h.channels != 1) throw DataError(header.string() + " is not a scalar f32 volume");
  Volume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.modality = h.modality;
  v.data = read_body<float>(h.body, voxel_count(h.dims));
  v.validate();
  return v;
}

LabelVolume read_label_volume(const fs::path& header) {
  const Header h = read_header(header);
  if (h.dtype != "u8" || h.channels != 1) throw DataError(header.string() + " is not a u8 label volume");
  LabelVolume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.data = read_body<std::uint8_t>(h.body, voxel_count(h.dims));
  v.validate();
  return v;
}

ProbVolume read_prob_volume(const fs::path& header) {
  const Header h = read_header(header);
  if (h.dtype != "f32") throw DataError(header.string() + " is not an f32 probability volume");
  ProbVolume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.n_classes = h.channels;
  v.plane = h.plane;
  v.data = read_body<float>(h.body, voxel_count(h.dims) * h.channels);
  v.validate();
  return v;
}

Volume normalize(const Volume& v) {
  v.validate();
  double mean = 0.0;
  for (float x : v.data) mean += x;
  mean /= static_cast<double>(v.data.size());
  double var = 0.0;
  for (float x : v.data) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.data.size()));
  Volume out = v;
  for (std::size_t i = 0; i < v.data.size(); ++i)
    out.data[i] = sd < 1e-8 ? 0.0f : static_cast<float>((v.data[i] - mean) / sd);
  return out;
}

std::string to_string(Plane p) {
  switch (p) {
    case Plane::kSagittal:
      return "sagittal";
    case Plane::kCoronal:
      return "coronal";
    case Plane::kTransverse:
      return "transverse";
  }
  return "?";
}

Plane parse_plane(const std::string& s) {
  if (s == "sagittal") return Plane::kSagittal;
  if (s == "coronal") return Plane::kCoronal;
  if (s == "transverse") return Plane::kTransverse;
  throw ConfigError("unknown plane '" + s + "' (expected sagittal, coronal or transverse)");
}

std::array<std::size_t, 3> plane_axes(Plane p) {
  switch (p) {
    case Plane::kSagittal:
      return {0, 1, 2};
    case Plane::kCoronal:
      return {1, 0, 2};
    case Plane::kTransverse:
      return {2, 0, 1};
  }
  return {0, 1, 2};
}

std::array<std::size_t, 3> to_plane(Plane p, const std::array<std::size_t, 3>& xyz) {
  const auto a = plane_axes(p);
  return {xyz[a[0]], xyz[a[1]], xyz[a[2]]};
}

std::array<std::size_t, 3> from_plane(Plane p, const std::array<std::size_t, 3>& src) {
  const auto a = plane_axes(p);
  std::array<std::size_t, 3> xyz{};
  for (std::size_t i = 0; i < 3; ++i) xyz[a[i]] = src[i];
  return xyz;
}

std::vector<Sample> slice_stack(const std::vector<Volume>& modalities, const LabelVolume& labels, Plane plane) {
  if (modalities.empty()) throw ShapeError("slice_stack: no modalities");
  labels.validate();
  for (const auto& m : modalities) {
    m.validate();
    if (m.dims != labels.dims) throw ShapeError("slice_stack: modality and label dims differ");
    if (m.spacing != labels.spacing) throw DataError("slice_stack: modality and label spacing differ");
  }
  const auto a = plane_axes(plane);
  const Dims3& d = labels.dims;
  const std::size_t n = d[a[0]], rows = d[a[1]], cols = d[a[2]], c = modalities.size();
  std::vector<Sample> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    Sample& smp = out[s];
    smp.image = Tensor(Shape{rows, cols, c});
    smp.label = LabelMap{rows, cols, std::vector<std::uint8_t>(rows * cols)};
    smp.spacing = {labels.spacing[a[1]], labels.spacing[a[2]]};
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t col = 0; col < cols; ++col) {
        const std::size_t off = axis_offset(d, from_plane(plane, {s, r, col}));
        const std::size_t px = r * cols + col;
        smp.label.data[px] = labels.data[off];
        for (std::size_t m = 0; m < c; ++m) smp.image[px * c + m] = modalities[m].data[off];
      }
  }
  return out;
}

namespace {

void check_restack(const std::vector<Sample>& samples, Plane plane, const Dims3& dims) {
  const auto a = plane_axes(plane);
  if (samples.size() != dims[a[0]]) throw ShapeError("restack: slice count does not match dims");
  for (const auto& s : samples)
    if (s.label.height != dims[a[1]] || s.label.width != dims[a[2]])
      throw ShapeError("restack: slice extent does not match dims");
}

}  // namespace

LabelVolume restack_labels(const std::vector<Sample>& samples, Plane plane, const Dims3& dims, const Spacing3& spacing) {
  check_restack(samples, plane, dims);
  LabelVolume v{dims, spacing, std::vector<std::uint8_t>(voxel_count(dims))};
  const auto a = plane_axes(plane);
  for (std::size_t s = 0; s < samples.size(); ++s)
    for (std::size_t r = 0; r < dims[a[1]]; ++r)
      for (std::size_t c = 0; c < dims[a[2]]; ++c)
        v.data[axis_offset(dims, from_plane(plane, {s, r, c}))] = samples[s].label.data[r * dims[a[2]] + c];
  return v;
}

Volume restack_channel(const std::vector<Sample>& samples, std::size_t channel, Plane plane, const Dims3& dims,
                       const Spacing3& spacing) {
  check_restack(samples, plane, dims);
  Volume v;
  v.dims = dims;
  v.spacing = spacing;
  v.data.resize(voxel_count(dims));
  const auto a = plane_axes(plane);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const std::size_t ch = samples[s].channels();
    if (channel >= ch) throw ShapeError("restack: channel out of range");
    for (std::size_t r = 0; r < dims[a[1]]; ++r)
      for (std::size_t c = 0; c < dims[a[2]]; ++c)
        v.data[axis_offset(dims, from_plane(plane, {s, r, c}))] = samples[s].image[(r * dims[a[2]] + c) * ch + channel];
  }
  return v;
}

ProbVolume assemble_probabilities(const std::vector<Tensor>& slices, Plane plane, const Dims3& dims,
                                  const Spacing3& spacing) {
  const auto a = plane_axes(plane);
  if (slices.size() != dims[a[0]]) throw ShapeError("assemble_probabilities: slice count does not match dims");
  if (slices.empty()) throw ShapeError("assemble_probabilities: no slices");
  const std::size_t k = slices.front().dim(2);
  ProbVolume v;
  v.dims = dims;
  v.spacing = spacing;
  v.n_classes = k;
  v.plane = to_string(plane);
  v.data.resize(voxel_count(dims) * k);
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const Tensor& t = slices[s];
    if (!(t.shape() == Shape{dims[a[1]], dims[a[2]], k}))
      throw ShapeError("assemble_probabilities: slice shape " + t.shape().str());
    for (std::size_t r = 0; r < dims[a[1]]; ++r)
      for (std::size_t c = 0; c < dims[a[2]]; ++c) {
        const std::size_t off = axis_offset(dims, from_plane(plane, {s, r, c}));
        std::copy_n(t.raw() + (r * dims[a[2]] + c) * k, k, v.data.begin() + static_cast<std::ptrdiff_t>(off * k));
      }
  }
  return v;
}

void FusionConfig::validate() const {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("fusion weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("fusion weights must not all be zero");
}

LabelVolume fuse_predictions(const std::vector<ProbVolume>& planes, const FusionConfig& cfg) {
  cfg.validate();
  if (planes.size() != 3) throw ShapeError("fuse_predictions: expected sagittal, coronal and transverse inputs");
  for (const auto& p : planes) {
    p.validate();
    if (p.dims != planes[0].dims || p.n_classes != planes[0].n_classes)
      throw ShapeError("fuse_predictions: probability volumes differ in dims or class count");
  }
  const double total = cfg.weights[0] + cfg.weights[1] + cfg.weights[2];
  std::array<double, 3> w{};
  for (std::size_t i = 0; i < 3; ++i) w[i] = cfg.weights[i] / total;
  const std::size_t k = planes[0].n_classes;
  const std::size_t n = voxel_count(planes[0].dims);
  LabelVolume out{planes[0].dims, planes[0].spacing, std::vector<std::uint8_t>(n)};
  std::vector<double> score(k);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < 3; ++p) s += w[p] * static_cast<double>(planes[p].data[v * k + c]);
      score[c] = s;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (score[c] > score[best]) best = c;
    out.data[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelVolume argmax_labels(const ProbVolume& p) {
  p.validate();
  const std::size_t k = p.n_classes;
  const std::size_t n = voxel_count(p.dims);
  LabelVolume out{p.dims, p.spacing, std::vector<std::uint8_t>(n)};
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (p.data[v * k + c] > p.data[v * k + best]) best = c;
    out.data[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

double synthetic_intensity(std::size_t modality, std::size_t c, std::size_t n_classes) {
  const double t = static_cast<double>(c) / static_cast<double>(n_classes - 1);
  switch (modality % 3) {
    case 0:
      return 0.1 + 0.9 * t;
    case 1:
      return 0.1 + 0.9 * std::sqrt(t);
    default:
      return 1.0 - 0.8 * t;
  }
}

SyntheticSubject generate_synthetic(std::uint64_t seed, const SyntheticConfig& cfg) {
  if (cfg.n_classes < 2 || cfg.n_classes > 255) throw ParameterError("synthetic: n_classes must be in [2, 255]");
  for (std::size_t d : cfg.dims)
    if (d < 32) throw ParameterError("synthetic: every extent must be >= 32");
  for (double s : cfg.spacing)
    if (!(s > 0.0)) throw ParameterError("synthetic: spacing must be > 0");
  if (cfg.noise_sigma < 0.0 || cfg.bias_amplitude < 0.0) throw ParameterError("synthetic: negative noise or bias");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Dims3& d = cfg.dims;
  const std::size_t k = cfg.n_classes;

  std::array<double, 3> center{}, radius{};
  for (std::size_t a = 0; a < 3; ++a) {
    center[a] = 0.5 * static_cast<double>(d[a] - 1) + 0.03 * static_cast<double>(d[a]) * u(rng);
    radius[a] = 0.38 * static_cast<double>(d[a]) * (1.0 + 0.05 * u(rng));
  }

  // Smooth deformation: sums of random low-frequency plane waves in the
  // ellipsoid's normalized coordinates.
  struct Wave {
    std::array<double, 3> k;
    double phase;
    double amplitude;
  };
  auto make_waves = [&](double amp_lo, double amp_hi) {
    std::vector<Wave> waves(3);
    for (auto& w : waves) {
      for (auto& c : w.k) c = 2.5 * u(rng);
      w.phase = std::numbers::pi * u(rng);
      w.amplitude = amp_lo + (amp_hi - amp_lo) * 0.5 * (1.0 + u(rng));
    }
    return waves;
  };
  auto eval = [](const std::vector<Wave>& waves, const std::array<double, 3>& q) {
    double s = 0.0;
    for (const auto& w : waves) s += w.amplitude * std::sin(w.k[0] * q[0] + w.k[1] * q[1] + w.k[2] * q[2] + w.phase);
    return s;
  };
  const std::vector<Wave> outer = make_waves(0.02, 0.05);
  std::vector<std::vector<Wave>> inner;
  for (std::size_t j = 2; j < k; ++j) inner.push_back(make_waves(0.005, 0.01));
  // Boundary j (1-based) sits at normalized radius 1 - (j-1) * 0.8 / (K-1).
  const double step = 0.8 / static_cast<double>(k - 1);

  std::vector<std::array<double, 3>> bias_phase(3);
  for (auto& p : bias_phase)
    for (auto& c : p) c = std::numbers::pi * u(rng);

  SyntheticSubject out;
  out.labels = LabelVolume{d, cfg.spacing, std::vector<std::uint8_t>(voxel_count(d))};
  for (std::size_t m = 0; m < 3; ++m) {
    Volume v;
    v.dims = d;
    v.spacing = cfg.spacing;
    v.modality = "synthetic-" + std::to_string(m);
    v.data.resize(voxel_count(d));
    out.modalities.push_back(std::move(v));
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        const std::array<double, 3> q{(static_cast<double>(x) - center[0]) / radius[0],
                                      (static_cast<double>(y) - center[1]) / radius[1],
                                      (static_cast<double>(z) - center[2]) / radius[2]};
        const double rho = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]) * (1.0 + eval(outer, q));
        std::size_t cls = 0;
        if (rho <= 1.0) {
          cls = 1;
          for (std::size_t j = 2; j < k; ++j) {
            const double boundary = (1.0 - static_cast<double>(j - 1) * step) * (1.0 + eval(inner[j - 2], q));
            if (rho <= boundary) cls = j;
          }
        }
        const std::size_t off = (z * d[1] + y) * d[0] + x;
        out.labels.data[off] = static_cast<std::uint8_t>(cls);
        for (std::size_t m = 0; m < 3; ++m) {
          const auto& ph = bias_phase[m];
          const double field = 1.0 + cfg.bias_amplitude * std::sin(0.8 * q[0] + ph[0]) * std::cos(0.6 * q[1] + ph[1]) *
                                         std::cos(0.5 * q[2] + ph[2]);
          double value = synthetic_intensity(m, cls, k) * field;
          if (cfg.noise_sigma > 0.0) value += cfg.noise_sigma * noise(rng);
          out.modalities[m].data[off] = static_cast<float>(value);
        }
      }
  return out;
}

}  // namespace mixnet
