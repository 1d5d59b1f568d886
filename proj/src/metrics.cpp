#include "mixnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "mixnet/error.hpp"

namespace mixnet {

namespace {

void check_same_size(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("masks differ in size");
}

std::size_t count(std::span<const std::uint8_t> m) {
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }));
}

double point_distance(const std::array<std::size_t, 3>& a, const std::array<std::size_t, 3>& b, const Spacing3& s) {
  const double dx = (static_cast<double>(a[0]) - static_cast<double>(b[0])) * s[0];
  const double dy = (static_cast<double>(a[1]) - static_cast<double>(b[1])) * s[1];
  const double dz = (static_cast<double>(a[2]) - static_cast<double>(b[2])) * s[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Uniform bucket grid over target surface points; exact nearest-neighbour
// queries by expanding Chebyshev rings of cells.
class SurfaceGrid {
 public:
  SurfaceGrid(std::vector<std::array<std::size_t, 3>> points, const Dims3& dims, const Spacing3& spacing)
      : points_(std::move(points)), spacing_(spacing) {
    for (std::size_t a = 0; a < 3; ++a) cells_[a] = (dims[a] + kCell - 1) / kCell;
    min_spacing_ = std::min({spacing[0], spacing[1], spacing[2]});
    std::vector<std::size_t> counts(cells_[0] * cells_[1] * cells_[2] + 1, 0);
    for (const auto& p : points_) ++counts[cell_index(p) + 1];
    for (std::size_t i = 1; i < counts.size(); ++i) counts[i] += counts[i - 1];
    start_ = counts;
    order_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) order_[counts[cell_index(points_[i])]++] = i;
  }

  double nearest(const std::array<std::size_t, 3>& q) const {
    double best = std::numeric_limits<double>::infinity();
    const long qc[3] = {static_cast<long>(q[0] / kCell), static_cast<long>(q[1] / kCell),
                        static_cast<long>(q[2] / kCell)};
    const long max_ring = static_cast<long>(std::max({cells_[0], cells_[1], cells_[2]}));
    for (long r = 0; r <= max_ring; ++r) {
      if (r > 0) {
        const double bound = static_cast<double>((r - 1) * static_cast<long>(kCell) + 1) * min_spacing_;
        if (bound * (1.0 - 1e-12) > best) break;
      }
      for (long i = -r; i <= r; ++i)
        for (long j = -r; j <= r; ++j)
          for (long k = -r; k <= r; ++k) {
            if (std::max({std::abs(i), std::abs(j), std::abs(k)}) != r) continue;
            const long c0 = qc[0] + i, c1 = qc[1] + j, c2 = qc[2] + k;
            if (c0 < 0 || c1 < 0 || c2 < 0 || c0 >= static_cast<long>(cells_[0]) ||
                c1 >= static_cast<long>(cells_[1]) || c2 >= static_cast<long>(cells_[2]))
              continue;
            const std::size_t cell = (static_cast<std::size_t>(c2) * cells_[1] + static_cast<std::size_t>(c1)) * cells_[0] +
                                     static_cast<std::size_t>(c0);
            for (std::size_t t = start_[cell]; t < start_[cell + 1]; ++t)
              best = std::min(best, point_distance(q, points_[order_[t]], spacing_));
          }
    }
    return best;
  }

 private:
  static constexpr std::size_t kCell = 4;

  std::size_t cell_index(const std::array<std::size_t, 3>& p) const {
    return ((p[2] / kCell) * cells_[1] + p[1] / kCell) * cells_[0] + p[0] / kCell;
  }

  std::vector<std::array<std::size_t, 3>> points_;
  Spacing3 spacing_;
  double min_spacing_ = 1.0;
  std::array<std::size_t, 3> cells_{};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
};

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  check_same_size(pred, truth);
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    a += p;
    b += t;
    both += p && t;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double volumetric_similarity(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  check_same_size(pred, truth);
  const double a = static_cast<double>(count(pred)), b = static_cast<double>(count(truth));
  if (a + b == 0.0) return 1.0;
  return 1.0 - std::abs(a - b) / (a + b);
}

std::vector<std::array<std::size_t, 3>> surface_voxels(std::span<const std::uint8_t> mask, const Dims3& d) {
  if (mask.size() != voxel_count(d)) throw ShapeError("mask does not match dims");
  std::vector<std::array<std::size_t, 3>> out;
  auto inside = [&](long x, long y, long z) {
    if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(d[0]) || y >= static_cast<long>(d[1]) ||
        z >= static_cast<long>(d[2]))
      return false;
    return mask[(static_cast<std::size_t>(z) * d[1] + static_cast<std::size_t>(y)) * d[0] + static_cast<std::size_t>(x)] != 0;
  };
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        if (mask[(z * d[1] + y) * d[0] + x] == 0) continue;
        const long X = static_cast<long>(x), Y = static_cast<long>(y), Z = static_cast<long>(z);
        if (!inside(X - 1, Y, Z) || !inside(X + 1, Y, Z) || !inside(X, Y - 1, Z) || !inside(X, Y + 1, Z) ||
            !inside(X, Y, Z - 1) || !inside(X, Y, Z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

std::vector<double> directed_surface_distances(std::span<const std::uint8_t> from, std::span<const std::uint8_t> to,
                                               const Dims3& dims, const Spacing3& spacing) {
  const auto src = surface_voxels(from, dims);
  auto dst = surface_voxels(to, dims);
  if (src.empty() || dst.empty()) throw UndefinedMetric("surface distance of an empty mask");
  SurfaceGrid grid(std::move(dst), dims, spacing);
  std::vector<double> out;
  out.reserve(src.size());
  for (const auto& p : src) out.push_back(grid.nearest(p));
  return out;
}

double nearest_rank_percentile(std::vector<double> values, unsigned percent) {
  if (values.empty()) throw UndefinedMetric("percentile of an empty set");
  if (percent == 0 || percent > 100) throw ParameterError("percentile must be in 1..100");
  std::sort(values.begin(), values.end());
  const std::size_t rank = (percent * values.size() + 99) / 100;
  return values[rank - 1];
}

double hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, const Dims3& dims,
            const Spacing3& spacing, HdMode mode) {
  check_same_size(pred, truth);
  if (count(pred) == 0 || count(truth) == 0) throw UndefinedMetric("HD95 is undefined for an empty mask");
  auto ab = directed_surface_distances(pred, truth, dims, spacing);
  auto ba = directed_surface_distances(truth, pred, dims, spacing);
  if (mode == HdMode::kPooled) {
    ab.insert(ab.end(), ba.begin(), ba.end());
    return nearest_rank_percentile(std::move(ab), 95);
  }
  return std::max(nearest_rank_percentile(std::move(ab), 95), nearest_rank_percentile(std::move(ba), 95));
}

ScoreWeights placeholder_weights(const std::vector<std::size_t>& classes) {
  ScoreWeights w;
  const double each = classes.empty() ? 0.0 : 1.0 / (3.0 * static_cast<double>(classes.size()));
  for (std::size_t c : classes) w[c] = MetricWeights{each, each, each};
  return w;
}

double hd_score(const std::optional<double>& hd) { return hd ? 1.0 / (1.0 + *hd) : 0.0; }

double overall_score(const std::vector<ClassMetrics>& classes, const ScoreWeights& weights) {
  double total = 0.0;
  for (const auto& c : classes) {
    auto it = weights.find(c.label);
    if (it == weights.end()) throw ConfigError("overall score: no weights for class " + std::to_string(c.label));
    const MetricWeights& w = it->second;
    total += w.dice * c.dice + w.hd95 * hd_score(c.hd95) + w.vs * c.vs;
  }
  return total;
}

std::vector<std::uint8_t> class_mask(const LabelVolume& v, std::size_t label) {
  std::vector<std::uint8_t> m(v.data.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = v.data[i] == label ? 1 : 0;
  return m;
}

EvalReport evaluate(const LabelVolume& pred, const LabelVolume& truth, std::size_t n_classes,
                    const std::optional<ScoreWeights>& weights, HdMode mode) {
  pred.validate();
  truth.validate();
  if (pred.dims != truth.dims) throw ShapeError("evaluate: prediction and truth dims differ");
  EvalReport r;
  std::vector<std::size_t> labels;
  for (std::size_t c = 1; c < n_classes; ++c) labels.push_back(c);
  for (std::size_t c : labels) {
    const auto p = class_mask(pred, c);
    const auto t = class_mask(truth, c);
    ClassMetrics m;
    m.label = c;
    m.dice = dice(p, t);
    m.vs = volumetric_similarity(p, t);
    try {
      m.hd95 = hd95(p, t, truth.dims, truth.spacing, mode);
    } catch (const UndefinedMetric&) {
      m.hd95.reset();
    }
    r.classes.push_back(m);
  }
  r.weights = weights ? *weights : placeholder_weights(labels);
  r.overall = overall_score(r.classes, r.weights);
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : classes) {
    nlohmann::json e;
    e["label"] = c.label;
    e["dice"] = c.dice;
    e["hd95"] = c.hd95 ? nlohmann::json(*c.hd95) : nlohmann::json(nullptr);
    e["vs"] = c.vs;
    j["classes"].push_back(e);
  }
  nlohmann::json w = nlohmann::json::object();
  for (const auto& [label, mw] : weights) w[std::to_string(label)] = {{"dice", mw.dice}, {"hd95", mw.hd95}, {"vs", mw.vs}};
  j["weights"] = w;
  j["overall"] = overall;
  j["hd95_score"] = "1/(1+hd95)";
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(8) << "class" << std::right << std::setw(9) << "Dice" << std::setw(10) << "HD" << std::setw(9)
     << "VS" << '\n';
  for (const auto& c : classes)
    os << std::left << std::setw(8) << c.label << std::right << std::setw(9) << fmt(c.dice, 4) << std::setw(10)
       << (c.hd95 ? fmt(*c.hd95, 4) : std::string("n/a")) << std::setw(9) << fmt(c.vs, 4) << '\n';
  os << "overall " << fmt(overall, 4) << '\n';
  return os.str();
}

}  // namespace mixnet
