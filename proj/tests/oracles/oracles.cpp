#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace oracle {

using mixnet::DTensor;
using mixnet::Shape;

DTensor conv2d(const DTensor& x, const DTensor& w, const std::vector<double>& bias, std::size_t dilation) {
  const long N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const long KH = w.dim(0), KW = w.dim(1), CO = w.dim(3);
  const long d = static_cast<long>(dilation);
  const long pad_top = ((KH - 1) * d) / 2, pad_left = ((KW - 1) * d) / 2;
  DTensor y(Shape{x.dim(0), x.dim(1), x.dim(2), w.dim(3)});
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < H; ++i)
      for (long j = 0; j < W; ++j)
        for (long co = 0; co < CO; ++co) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (long ky = 0; ky < KH; ++ky)
            for (long kx = 0; kx < KW; ++kx)
              for (long ci = 0; ci < C; ++ci) {
                const long yi = i - pad_top + ky * d, xj = j - pad_left + kx * d;
                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                acc += x[((n * H + yi) * W + xj) * C + ci] * w[((ky * KW + kx) * C + ci) * CO + co];
              }
          y[((n * H + i) * W + j) * CO + co] = acc;
        }
  return y;
}

DTensor avgpool_region(const DTensor& x, std::size_t bh, std::size_t bw) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  DTensor y(Shape{N, bh, bw, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t a = 0; a < bh; ++a)
      for (std::size_t b = 0; b < bw; ++b) {
        const std::size_t y0 = a * H / bh, y1 = (a + 1) * H / bh;
        const std::size_t x0 = b * W / bw, x1 = (b + 1) * W / bw;
        for (std::size_t c = 0; c < C; ++c) {
          double s = 0.0;
          for (std::size_t i = y0; i < y1; ++i)
            for (std::size_t j = x0; j < x1; ++j) s += x[((n * H + i) * W + j) * C + c];
          y[((n * bh + a) * bw + b) * C + c] = s / static_cast<double>((y1 - y0) * (x1 - x0));
        }
      }
  return y;
}

DTensor maxpool2x2(const DTensor& x) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t OH = (H + 1) / 2, OW = (W + 1) / 2;
  DTensor y(Shape{N, OH, OW, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        for (std::size_t c = 0; c < C; ++c) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t di = 0; di < 2; ++di)
            for (std::size_t dj = 0; dj < 2; ++dj) {
              const std::size_t yi = 2 * i + di, xj = 2 * j + dj;
              if (yi < H && xj < W) m = std::max(m, x[((n * H + yi) * W + xj) * C + c]);
            }
          y[((n * OH + i) * OW + j) * C + c] = m;
        }
  return y;
}

DTensor bilinear_resize(const DTensor& x, std::size_t OH, std::size_t OW) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  DTensor y(Shape{N, OH, OW, C});
  auto src = [](std::size_t i, std::size_t in, std::size_t out) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        const double sy = src(i, H, OH), sx = src(j, W, OW);
        const std::size_t y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
        const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
        const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
        for (std::size_t c = 0; c < C; ++c) {
          auto at = [&](std::size_t a, std::size_t b) { return x[((n * H + a) * W + b) * C + c]; };
          y[((n * OH + i) * OW + j) * C + c] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                                fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        }
      }
  return y;
}

double cross_entropy_sum(const DTensor& logits, const std::vector<std::uint8_t>& labels) {
  const std::size_t K = logits.shape().dims().back();
  double total = 0.0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[p * K + k]);
    total += std::log(z) - logits[p * K + labels[p]];
  }
  return total;
}

bool Mask::at(long x, long y, long z) const {
  if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(dims[0]) || y >= static_cast<long>(dims[1]) ||
      z >= static_cast<long>(dims[2]))
    return false;
  return data[(static_cast<std::size_t>(z) * dims[1] + static_cast<std::size_t>(y)) * dims[0] + static_cast<std::size_t>(x)] != 0;
}

double dice(const Mask& a, const Mask& b) {
  double na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    na += a.data[i] != 0;
    nb += b.data[i] != 0;
    both += a.data[i] != 0 && b.data[i] != 0;
  }
  return na + nb == 0 ? 1.0 : 2 * both / (na + nb);
}

double volumetric_similarity(const Mask& a, const Mask& b) {
  double na = 0, nb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    na += a.data[i] != 0;
    nb += b.data[i] != 0;
  }
  return na + nb == 0 ? 1.0 : 1.0 - std::abs(na - nb) / (na + nb);
}

namespace {

std::vector<std::array<long, 3>> boundary(const Mask& m) {
  std::vector<std::array<long, 3>> out;
  for (long z = 0; z < static_cast<long>(m.dims[2]); ++z)
    for (long y = 0; y < static_cast<long>(m.dims[1]); ++y)
      for (long x = 0; x < static_cast<long>(m.dims[0]); ++x) {
        if (!m.at(x, y, z)) continue;
        const bool interior = m.at(x - 1, y, z) && m.at(x + 1, y, z) && m.at(x, y - 1, z) && m.at(x, y + 1, z) &&
                              m.at(x, y, z - 1) && m.at(x, y, z + 1);
        if (!interior) out.push_back({x, y, z});
      }
  return out;
}

std::vector<double> directed(const std::vector<std::array<long, 3>>& from, const std::vector<std::array<long, 3>>& to,
                             const std::array<double, 3>& s) {
  std::vector<double> out;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dx = (static_cast<double>(p[0]) - static_cast<double>(q[0])) * s[0];
      const double dy = (static_cast<double>(p[1]) - static_cast<double>(q[1])) * s[1];
      const double dz = (static_cast<double>(p[2]) - static_cast<double>(q[2])) * s[2];
      best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    out.push_back(best);
  }
  return out;
}

double p95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()) - 1e-9));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

double hd95(const Mask& a, const Mask& b, const std::array<double, 3>& s) {
  const auto ba = boundary(a), bb = boundary(b);
  if (ba.empty() || bb.empty()) throw std::domain_error("empty mask");
  return std::max(p95(directed(ba, bb, s)), p95(directed(bb, ba, s)));
}

double hd95_pooled(const Mask& a, const Mask& b, const std::array<double, 3>& s) {
  const auto ba = boundary(a), bb = boundary(b);
  if (ba.empty() || bb.empty()) throw std::domain_error("empty mask");
  auto d = directed(ba, bb, s);
  const auto e = directed(bb, ba, s);
  d.insert(d.end(), e.begin(), e.end());
  return p95(d);
}

ScalarTrace nesterov_scalar(double p, double slope, double offset, double lr, double mu, double wd, int steps) {
  ScalarTrace t;
  double v = 0.0;
  for (int s = 0; s < steps; ++s) {
    const double g = slope * p + offset + wd * p;
    v = mu * v - lr * g;
    p = p + mu * v - lr * g;
    t.params.push_back(p);
    t.velocities.push_back(v);
  }
  return t;
}

std::vector<LevelRow> level_table(const std::string& variant) {
  const std::size_t dil[5] = {2, 1, 4, 1, 8};
  std::vector<LevelRow> rows;
  for (int l = 1; l <= 5; ++l) {
    if (variant == "v1")
      rows.push_back({l, "120x120x72", 72, dil[l - 1], "120x120x72"});
    else if (variant == "v2")
      rows.push_back({l, l % 2 == 1 ? "120x120x72" : "120x120x48", 24, dil[l - 1], "120x120x24"});
    else if (variant == "v3")
      rows.push_back({l, "120x120x24", 24, dil[l - 1], "120x120x24"});
    else
      throw std::invalid_argument(variant);
  }
  return rows;
}

}  // namespace oracle
