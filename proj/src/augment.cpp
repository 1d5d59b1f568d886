#include "mixnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "mixnet/error.hpp"

namespace mixnet::aug {

namespace {

enum class Border { kZero, kClamp };

// Inverse-mapped resampling: for each output pixel, map(r, c) gives the
// continuous (row, col) source position.
Sample warp(const Sample& s, const std::function<std::pair<double, double>(double, double)>& map, Border border) {
  const std::size_t h = s.height(), w = s.width(), ch = s.channels();
  Sample out;
  out.image = Tensor(s.image.shape());
  out.label = LabelMap{h, w, std::vector<std::uint8_t>(h * w, 0)};
  out.spacing = s.spacing;
  const long hi_r = static_cast<long>(h) - 1, hi_c = static_cast<long>(w) - 1;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      auto [sr, sc] = map(static_cast<double>(r), static_cast<double>(c));
      if (border == Border::kClamp) {
        sr = std::clamp(sr, 0.0, static_cast<double>(hi_r));
        sc = std::clamp(sc, 0.0, static_cast<double>(hi_c));
      }
      float* dst = out.image.raw() + (r * w + c) * ch;
      const long r0 = static_cast<long>(std::floor(sr)), c0 = static_cast<long>(std::floor(sc));
      const double fr = sr - static_cast<double>(r0), fc = sc - static_cast<double>(c0);
      const std::pair<long, double> rows[2] = {{r0, 1.0 - fr}, {r0 + 1, fr}};
      const std::pair<long, double> cols[2] = {{c0, 1.0 - fc}, {c0 + 1, fc}};
      for (std::size_t k = 0; k < ch; ++k) {
        double v = 0.0;
        for (const auto& [rr, wr] : rows) {
          if (wr == 0.0 || rr < 0 || rr > hi_r) continue;
          for (const auto& [cc, wc] : cols) {
            if (wc == 0.0 || cc < 0 || cc > hi_c) continue;
            v += wr * wc * static_cast<double>(s.image[(static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)) * ch + k]);
          }
        }
        dst[k] = static_cast<float>(v);
      }
      const long nr = std::lround(sr), nc = std::lround(sc);
      if (nr >= 0 && nr <= hi_r && nc >= 0 && nc <= hi_c)
        out.label.data[r * w + c] = s.label.data[static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc)];
    }
  return out;
}

bool in_set(double v, std::span<const double> set) {
  return std::any_of(set.begin(), set.end(), [v](double x) { return std::abs(x - v) < 1e-9; });
}

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable Gaussian blur with edge clamping.
std::vector<double> smooth(const std::vector<double>& in, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long radius = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long i = -radius; i <= radius; ++i) {
        const long cc = std::clamp(static_cast<long>(c) + i, 0L, static_cast<long>(w) - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * in[r * w + static_cast<std::size_t>(cc)];
      }
      tmp[r * w + c] = acc;
    }
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long i = -radius; i <= radius; ++i) {
        const long rr = std::clamp(static_cast<long>(r) + i, 0L, static_cast<long>(h) - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(rr) * w + c];
      }
      out[r * w + c] = acc;
    }
  return out;
}

// Exact sine/cosine for multiples of 45 degrees.
std::pair<double, double> lattice_sincos(double degrees) {
  const long step = std::lround(degrees / 45.0);
  const double h = std::sqrt(0.5);
  static const double kSin[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  static const double kCos[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  const long i = ((step % 8) + 8) % 8;
  const double scale_sin = (i % 2) ? h : 1.0;
  return {kSin[i] * scale_sin, kCos[i] * scale_sin};
}

}  // namespace

Policy Policy::defaults(Plane plane) {
  Policy p;
  p.plane = plane;
  if (plane == Plane::kTransverse) {
    for (double f : kScaleFactors) p.ops.push_back({Kind::kScale, f});
    for (double a : kRotationAngles)
      if (a != 0.0) p.ops.push_back({Kind::kRotate, a});
    p.ops.push_back({Kind::kElastic, 0.0});
  }
  p.ops.push_back({Kind::kTranslate, 0.0});
  p.ops.push_back({Kind::kFlip, 0.0});
  return p;
}

void Policy::validate() const {
  if (elastic_alpha < 0.0 || !(elastic_sigma > 0.0)) throw PolicyError("elastic needs alpha >= 0 and sigma > 0");
  if (max_translate_fraction < 0.0 || max_translate_fraction > 0.15)
    throw PolicyError("translation fraction must lie in [0, 0.15]");
  for (const Op& op : ops) {
    if (plane != Plane::kTransverse && op.kind != Kind::kFlip && op.kind != Kind::kTranslate)
      throw PolicyError(to_string(plane) + " policy may only flip and translate");
    if (op.kind == Kind::kScale && !in_set(op.value, kScaleFactors))
      throw PolicyError("scale factor " + std::to_string(op.value) + " is not in the policy set");
    if (op.kind == Kind::kRotate && !in_set(op.value, kRotationAngles))
      throw PolicyError("rotation " + std::to_string(op.value) + " is not in the policy set");
  }
}

std::string Policy::describe() const {
  std::ostringstream os;
  os << "plane=" << to_string(plane) << " ops=[";
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) os << ',';
    switch (ops[i].kind) {
      case Kind::kElastic:
        os << "elastic(alpha=" << elastic_alpha << ",sigma=" << elastic_sigma << ")";
        break;
      case Kind::kScale:
        os << "scale(" << ops[i].value << ")";
        break;
      case Kind::kRotate:
        os << "rotate(" << ops[i].value << ")";
        break;
      case Kind::kTranslate:
        os << "translate(" << max_translate_fraction << ")";
        break;
      case Kind::kFlip:
        os << "flip";
        break;
    }
  }
  os << ']';
  return os.str();
}

DeformField make_deform_field(std::size_t height, std::size_t width, double alpha, double sigma, std::uint64_t seed) {
  if (alpha < 0.0 || !(sigma > 0.0)) throw PolicyError("elastic needs alpha >= 0 and sigma > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> nx(height * width), ny(height * width);
  for (auto& v : nx) v = u(rng);
  for (auto& v : ny) v = u(rng);
  DeformField f{height, width, smooth(nx, height, width, sigma), smooth(ny, height, width, sigma)};
  for (auto& v : f.dx) v *= alpha;
  for (auto& v : f.dy) v *= alpha;
  return f;
}

Sample apply_deform_field(const Sample& s, const DeformField& field) {
  if (field.height != s.height() || field.width != s.width()) throw ShapeError("deform field does not match sample");
  const std::size_t w = s.width();
  return warp(
      s,
      [&](double r, double c) {
        const std::size_t i = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
        return std::pair{r + field.dy[i], c + field.dx[i]};
      },
      Border::kClamp);
}

Sample elastic(const Sample& s, double alpha, double sigma, std::uint64_t seed) {
  return apply_deform_field(s, make_deform_field(s.height(), s.width(), alpha, sigma, seed));
}

Sample rotate(const Sample& s, double degrees) {
  if (!in_set(degrees, kRotationAngles)) throw PolicyError("rotation " + std::to_string(degrees) + " is not in the policy set");
  const auto [sn, cs] = lattice_sincos(degrees);
  const double cr = 0.5 * static_cast<double>(s.height() - 1), cc = 0.5 * static_cast<double>(s.width() - 1);
  return warp(
      s,
      [&, sn = sn, cs = cs](double r, double c) {
        const double y = r - cr, x = c - cc;
        return std::pair{cr + cs * y + sn * x, cc - sn * y + cs * x};
      },
      Border::kZero);
}

Sample scale(const Sample& s, double factor) {
  if (!in_set(factor, kScaleFactors)) throw PolicyError("scale factor " + std::to_string(factor) + " is not in the policy set");
  const double cr = 0.5 * static_cast<double>(s.height() - 1), cc = 0.5 * static_cast<double>(s.width() - 1);
  return warp(
      s, [&](double r, double c) { return std::pair{cr + (r - cr) / factor, cc + (c - cc) / factor}; }, Border::kZero);
}

Sample translate(const Sample& s, long dx, long dy, double max_fraction) {
  if (std::abs(static_cast<double>(dx)) > max_fraction * static_cast<double>(s.width()) ||
      std::abs(static_cast<double>(dy)) > max_fraction * static_cast<double>(s.height()))
    throw PolicyError("translation exceeds " + std::to_string(max_fraction) + " of the image extent");
  return warp(
      s, [&](double r, double c) { return std::pair{r - static_cast<double>(dy), c - static_cast<double>(dx)}; },
      Border::kZero);
}

Sample random_translate(const Sample& s, double max_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto max_x = static_cast<long>(std::floor(max_fraction * static_cast<double>(s.width())));
  const auto max_y = static_cast<long>(std::floor(max_fraction * static_cast<double>(s.height())));
  std::uniform_int_distribution<long> ux(-max_x, max_x), uy(-max_y, max_y);
  const long dx = ux(rng);
  const long dy = uy(rng);
  return translate(s, dx, dy, max_fraction);
}

Sample flip(const Sample& s) {
  const double last = static_cast<double>(s.width() - 1);
  return warp(s, [&](double r, double c) { return std::pair{r, last - c}; }, Border::kZero);
}

Sample apply(const Sample& s, const Op& op, const Policy& policy, std::uint64_t seed) {
  switch (op.kind) {
    case Kind::kElastic:
      return elastic(s, policy.elastic_alpha, policy.elastic_sigma, seed);
    case Kind::kScale:
      return scale(s, op.value);
    case Kind::kRotate:
      return rotate(s, op.value);
    case Kind::kTranslate:
      return random_translate(s, policy.max_translate_fraction, seed);
    case Kind::kFlip:
      return flip(s);
  }
  return s;
}

ExpandedView::ExpandedView(const std::vector<Sample>& samples, Policy policy, std::uint64_t seed)
    : samples_(&samples), policy_(std::move(policy)), seed_(seed) {
  policy_.validate();
}

Sample ExpandedView::at(std::size_t index) const {
  if (index >= size()) throw std::out_of_range("augmented sample index out of range");
  const std::size_t per = 1 + policy_.ops.size();
  const std::size_t i = index / per, j = index % per;
  if (j == 0) return (*samples_)[i];
  return apply((*samples_)[i], policy_.ops[j - 1], policy_, derive_seed(seed_, i, j - 1));
}

std::vector<Sample> expand_dataset(const std::vector<Sample>& samples, const Policy& policy, std::uint64_t seed) {
  ExpandedView view(samples, policy, seed);
  std::vector<Sample> out;
  out.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) out.push_back(view.at(i));
  return out;
}

}  // namespace mixnet::aug
