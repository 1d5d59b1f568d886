#include "mixnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "mixnet/error.hpp"

namespace mixnet {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void require_rank4(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeError(std::string(op) + ": expected (N,H,W,C), got " + s.str());
}

struct ConvGeometry {
  std::size_t n, h, w, cin, cout, kh, kw, d, stride, oh, ow, pad_top, pad_left;
  std::size_t k() const { return kh * kw * cin; }
  std::size_t pixels() const { return n * oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1; }
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, const ConvSpec& spec) {
  require_rank4(xs, "conv2d");
  if (ws.rank() != 4) throw ShapeError("conv2d: kernel must be (kh,kw,in,out), got " + ws.str());
  if (spec.dilation == 0 || spec.stride == 0) throw ParameterError("conv2d: dilation and stride must be >= 1");
  if (ws[0] != spec.kernel_h || ws[1] != spec.kernel_w)
    throw ShapeError("conv2d: kernel extent " + ws.str() + " does not match spec");
  if (ws[2] != xs[3])
    throw ShapeError("conv2d: input has " + std::to_string(xs[3]) + " channels, kernel expects " +
                     std::to_string(ws[2]));
  ConvGeometry g{};
  g.n = xs[0];
  g.h = xs[1];
  g.w = xs[2];
  g.cin = xs[3];
  g.cout = ws[3];
  g.kh = ws[0];
  g.kw = ws[1];
  g.d = spec.dilation;
  g.stride = spec.stride;
  g.oh = spec.output_extent(g.h);
  g.ow = spec.output_extent(g.w);
  auto pad_total = [&](std::size_t out, std::size_t eff, std::size_t in) -> std::size_t {
    std::size_t need = (out - 1) * g.stride + eff;
    return need > in ? need - in : 0;
  };
  g.pad_top = pad_total(g.oh, spec.effective_h(), g.h) / 2;
  g.pad_left = pad_total(g.ow, spec.effective_w(), g.w) / 2;
  return g;
}

// Rows per im2col chunk; depends only on geometry so results are reproducible.
std::size_t chunk_rows(const ConvGeometry& g) {
  const std::size_t budget = std::size_t{1} << 20;
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(g.k(), 1), 64, std::max<std::size_t>(g.pixels(), 1));
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t p0, std::size_t p1, T* col) {
  const std::size_t k = g.k();
  for (std::size_t p = p0; p < p1; ++p) {
    const std::size_t ox = p % g.ow;
    const std::size_t oy = (p / g.ow) % g.oh;
    const std::size_t n = p / (g.ow * g.oh);
    T* row = col + (p - p0) * k;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const long iy = static_cast<long>(oy * g.stride + ky * g.d) - static_cast<long>(g.pad_top);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const long ix = static_cast<long>(ox * g.stride + kx * g.d) - static_cast<long>(g.pad_left);
        T* dst = row + (ky * g.kw + kx) * g.cin;
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) {
          std::fill(dst, dst + g.cin, T{0});
        } else {
          const T* src = x + ((n * g.h + iy) * g.w + ix) * g.cin;
          std::copy(src, src + g.cin, dst);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::size_t p0, std::size_t p1, T* dx) {
  const std::size_t k = g.k();
  for (std::size_t p = p0; p < p1; ++p) {
    const std::size_t ox = p % g.ow;
    const std::size_t oy = (p / g.ow) % g.oh;
    const std::size_t n = p / (g.ow * g.oh);
    const T* row = col + (p - p0) * k;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const long iy = static_cast<long>(oy * g.stride + ky * g.d) - static_cast<long>(g.pad_top);
      if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const long ix = static_cast<long>(ox * g.stride + kx * g.d) - static_cast<long>(g.pad_left);
        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
        const T* src = row + (ky * g.kw + kx) * g.cin;
        T* dst = dx + ((n * g.h + iy) * g.w + ix) * g.cin;
        for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
      }
    }
  }
}

}  // namespace

std::vector<ResizeTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<ResizeTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 >= in - 1) {
      taps[i] = {in - 1, in - 1, 0.0};
    } else {
      taps[i] = {i0, i0 + 1, src - static_cast<double>(i0)};
    }
  }
  return taps;
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, const ConvSpec& spec) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  const ConvGeometry geo = conv_geometry(xv.shape(), wv.shape(), spec);
  if (b.valid() && !(g.value(b).shape() == Shape{geo.cout}))
    throw ShapeError("conv2d: bias shape " + g.value(b).shape().str() + " for " + std::to_string(geo.cout) +
                     " output channels");

  BasicTensor<T> out(Shape{geo.n, geo.oh, geo.ow, geo.cout});
  CMapR<T> wm(wv.raw(), geo.k(), geo.cout);
  MapR<T> om(out.raw(), geo.pixels(), geo.cout);
  if (geo.pointwise()) {
    CMapR<T> xm(xv.raw(), geo.pixels(), geo.cin);
    om.noalias() = xm * wm;
  } else {
    const std::size_t rows = chunk_rows(geo);
    MatR<T> col(rows, geo.k());
    for (std::size_t p0 = 0; p0 < geo.pixels(); p0 += rows) {
      const std::size_t p1 = std::min(p0 + rows, geo.pixels());
      im2col(geo, xv.raw(), p0, p1, col.data());
      om.middleRows(p0, p1 - p0).noalias() = col.topRows(p1 - p0) * wm;
    }
  }
  if (b.valid()) {
    const auto& bv = g.value(b);
    for (std::size_t p = 0; p < geo.pixels(); ++p) {
      T* row = out.raw() + p * geo.cout;
      for (std::size_t c = 0; c < geo.cout; ++c) row[c] += bv[c];
    }
  }

  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return g.record(std::move(out), parents, [x, w, b, geo](Graph<T>& gr, const BasicTensor<T>& gout) {
    CMapR<T> gm(gout.raw(), geo.pixels(), geo.cout);
    const auto& xv = gr.value(x);
    const auto& wv = gr.value(w);
    CMapR<T> wm(wv.raw(), geo.k(), geo.cout);
    const bool need_x = gr.requires_grad(x);
    const bool need_w = gr.requires_grad(w);
    if (b.valid() && gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t c = 0; c < geo.cout; ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < geo.pixels(); ++p) acc += static_cast<double>(gout[p * geo.cout + c]);
        gb[c] += static_cast<T>(acc);
      }
    }
    if (!need_x && !need_w) return;
    if (geo.pointwise()) {
      CMapR<T> xm(xv.raw(), geo.pixels(), geo.cin);
      if (need_w) {
        MapR<T> gw(gr.grad_buffer(w).raw(), geo.k(), geo.cout);
        gw.noalias() += xm.transpose() * gm;
      }
      if (need_x) {
        MapR<T> gx(gr.grad_buffer(x).raw(), geo.pixels(), geo.cin);
        gx.noalias() += gm * wm.transpose();
      }
      return;
    }
    const std::size_t rows = chunk_rows(geo);
    MatR<T> col(rows, geo.k());
    MatR<T> dcol(need_x ? rows : 0, geo.k());
    T* gx = need_x ? gr.grad_buffer(x).raw() : nullptr;
    for (std::size_t p0 = 0; p0 < geo.pixels(); p0 += rows) {
      const std::size_t p1 = std::min(p0 + rows, geo.pixels());
      const std::size_t r = p1 - p0;
      if (need_w) {
        im2col(geo, xv.raw(), p0, p1, col.data());
        MapR<T> gw(gr.grad_buffer(w).raw(), geo.k(), geo.cout);
        gw.noalias() += col.topRows(r).transpose() * gm.middleRows(p0, r);
      }
      if (need_x) {
        dcol.topRows(r).noalias() = gm.middleRows(p0, r) * wm.transpose();
        col2im_add(geo, dcol.data(), p0, p1, gx);
      }
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  auto out = mixnet::add(g.value(a), g.value(b));
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const BasicTensor<T>& gout) {
    for (Var p : {a, b}) {
      if (!gr.requires_grad(p)) continue;
      auto& gp = gr.grad_buffer(p);
      for (std::size_t i = 0; i < gout.size(); ++i) gp[i] += gout[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  auto out = mixnet::scale(g.value(x), factor);
  return g.record(std::move(out), {x}, [x, factor](Graph<T>& gr, const BasicTensor<T>& gout) {
    auto& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] * factor;
  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  auto out = mixnet::relu(g.value(x));
  if (g.tracking_branches()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i] > T{0}) h = (h ^ i) * kFnvPrime;
    g.note_branch(h);
  }
  return g.record(std::move(out), {x}, [x](Graph<T>& gr, const BasicTensor<T>& gout) {
    const auto& xv = gr.value(x);
    auto& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < gout.size(); ++i)
      if (xv[i] > T{0}) gx[i] += gout[i];
  });
}

template <typename T>
Var maxpool2x2(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  require_rank4(xv.shape(), "maxpool2x2");
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  BasicTensor<T> out(Shape{n, oh, ow, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t iy = 2 * oy + dy, ix = 2 * ox + dx;
              if (iy >= h || ix >= w) continue;
              const std::size_t idx = ((b * h + iy) * w + ix) * c + ch;
              if (xv[idx] > xv[best]) best = idx;
            }
          const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
          out[o] = xv[best];
          (*argmax)[o] = best;
        }
  if (g.tracking_branches()) {
    std::uint64_t hsh = 0xcbf29ce484222325ULL;
    for (std::size_t i : *argmax) hsh = (hsh ^ i) * kFnvPrime;
    g.note_branch(hsh);
  }
  return g.record(std::move(out), {x}, [x, argmax](Graph<T>& gr, const BasicTensor<T>& gout) {
    auto& gx = gr.grad_buffer(x);
    for (std::size_t o = 0; o < gout.size(); ++o) gx[(*argmax)[o]] += gout[o];
  });
}

template <typename T>
Var avgpool_region(Graph<T>& g, Var x, std::size_t bins_h, std::size_t bins_w) {
  const auto& xv = g.value(x);
  require_rank4(xv.shape(), "avgpool_region");
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (bins_h == 0 || bins_w == 0 || bins_h > h || bins_w > w)
    throw ParameterError("avgpool_region: " + std::to_string(bins_h) + "x" + std::to_string(bins_w) +
                         " bins on a " + std::to_string(h) + "x" + std::to_string(w) + " map");
  BasicTensor<T> out(Shape{n, bins_h, bins_w, c});
  std::vector<double> acc(c);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t by = 0; by < bins_h; ++by) {
      const std::size_t y0 = by * h / bins_h, y1 = (by + 1) * h / bins_h;
      for (std::size_t bx = 0; bx < bins_w; ++bx) {
        const std::size_t x0 = bx * w / bins_w, x1 = (bx + 1) * w / bins_w;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) {
            const T* src = xv.raw() + ((b * h + y) * w + xx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += static_cast<double>(src[ch]);
          }
        const double count = static_cast<double>((y1 - y0) * (x1 - x0));
        T* dst = out.raw() + ((b * bins_h + by) * bins_w + bx) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = static_cast<T>(acc[ch] / count);
      }
    }
  return g.record(std::move(out), {x}, [x, n, h, w, c, bins_h, bins_w](Graph<T>& gr, const BasicTensor<T>& gout) {
    auto& gx = gr.grad_buffer(x);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t by = 0; by < bins_h; ++by) {
        const std::size_t y0 = by * h / bins_h, y1 = (by + 1) * h / bins_h;
        for (std::size_t bx = 0; bx < bins_w; ++bx) {
          const std::size_t x0 = bx * w / bins_w, x1 = (bx + 1) * w / bins_w;
          const T inv = static_cast<T>(1.0 / static_cast<double>((y1 - y0) * (x1 - x0)));
          const T* src = gout.raw() + ((b * bins_h + by) * bins_w + bx) * c;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t xx = x0; xx < x1; ++xx) {
              T* dst = gx.raw() + ((b * h + y) * w + xx) * c;
              for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch] * inv;
            }
        }
      }
  });
}

template <typename T>
Var bilinear_resize(Graph<T>& g, Var x, std::size_t out_h, std::size_t out_w) {
  const auto& xv = g.value(x);
  require_rank4(xv.shape(), "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ParameterError("bilinear_resize: output extents must be >= 1");
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  auto ty = std::make_shared<std::vector<ResizeTap>>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<std::vector<ResizeTap>>(bilinear_taps(w, out_w));
  BasicTensor<T> out(Shape{n, out_h, out_w, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const ResizeTap& a = (*ty)[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = static_cast<T>(1.0 - a.w1);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const ResizeTap& e = (*tx)[ox];
        const T wx1 = static_cast<T>(e.w1), wx0 = static_cast<T>(1.0 - e.w1);
        const T* p00 = xv.raw() + ((b * h + a.i0) * w + e.i0) * c;
        const T* p01 = xv.raw() + ((b * h + a.i0) * w + e.i1) * c;
        const T* p10 = xv.raw() + ((b * h + a.i1) * w + e.i0) * c;
        const T* p11 = xv.raw() + ((b * h + a.i1) * w + e.i1) * c;
        T* dst = out.raw() + ((b * out_h + oy) * out_w + ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch)
          dst[ch] = wy0 * (wx0 * p00[ch] + wx1 * p01[ch]) + wy1 * (wx0 * p10[ch] + wx1 * p11[ch]);
      }
    }
  return g.record(std::move(out), {x}, [x, n, h, w, c, out_h, out_w, ty, tx](Graph<T>& gr, const BasicTensor<T>& gout) {
    auto& gx = gr.grad_buffer(x);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const ResizeTap& a = (*ty)[oy];
        const T wy1 = static_cast<T>(a.w1), wy0 = static_cast<T>(1.0 - a.w1);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const ResizeTap& e = (*tx)[ox];
          const T wx1 = static_cast<T>(e.w1), wx0 = static_cast<T>(1.0 - e.w1);
          const T* src = gout.raw() + ((b * out_h + oy) * out_w + ox) * c;
          T* p00 = gx.raw() + ((b * h + a.i0) * w + e.i0) * c;
          T* p01 = gx.raw() + ((b * h + a.i0) * w + e.i1) * c;
          T* p10 = gx.raw() + ((b * h + a.i1) * w + e.i0) * c;
          T* p11 = gx.raw() + ((b * h + a.i1) * w + e.i1) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            p00[ch] += wy0 * wx0 * src[ch];
            p01[ch] += wy0 * wx1 * src[ch];
            p10[ch] += wy1 * wx0 * src[ch];
            p11[ch] += wy1 * wx1 * src[ch];
          }
        }
      }
  });
}

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = g.value(xs[0]).shape();
  require_rank4(s0, "concat_channels");
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (Var v : xs) {
    const Shape& s = g.value(v).shape();
    require_rank4(s, "concat_channels");
    if (s[0] != s0[0] || s[1] != s0[1] || s[2] != s0[2])
      throw ShapeError("concat_channels: " + s.str() + " does not match " + s0.str());
    widths.push_back(s[3]);
    total += s[3];
  }
  const std::size_t pixels = s0[0] * s0[1] * s0[2];
  BasicTensor<T> out(Shape{s0[0], s0[1], s0[2], total});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const T* src = g.value(xs[i]).raw();
    for (std::size_t p = 0; p < pixels; ++p)
      std::copy(src + p * widths[i], src + (p + 1) * widths[i], out.raw() + p * total + offset);
    offset += widths[i];
  }
  return g.record(std::move(out), xs, [xs, widths, total, pixels](Graph<T>& gr, const BasicTensor<T>& gout) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (gr.requires_grad(xs[i])) {
        T* dst = gr.grad_buffer(xs[i]).raw();
        for (std::size_t p = 0; p < pixels; ++p) {
          const T* src = gout.raw() + p * total + off;
          for (std::size_t ch = 0; ch < widths[i]; ++ch) dst[p * widths[i] + ch] += src[ch];
        }
      }
      off += widths[i];
    }
  });
}

template <typename T>
Var slice_channels(Graph<T>& g, Var x, std::size_t begin, std::size_t count) {
  const auto& xv = g.value(x);
  require_rank4(xv.shape(), "slice_channels");
  const std::size_t c = xv.dim(3);
  if (count == 0 || begin + count > c)
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + std::to_string(c) + " channels");
  const std::size_t pixels = xv.dim(0) * xv.dim(1) * xv.dim(2);
  BasicTensor<T> out(Shape{xv.dim(0), xv.dim(1), xv.dim(2), count});
  for (std::size_t p = 0; p < pixels; ++p)
    std::copy(xv.raw() + p * c + begin, xv.raw() + p * c + begin + count, out.raw() + p * count);
  return g.record(std::move(out), {x}, [x, begin, count, c, pixels](Graph<T>& gr, const BasicTensor<T>& gout) {
    T* dst = gr.grad_buffer(x).raw();
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t ch = 0; ch < count; ++ch) dst[p * c + begin + ch] += gout[p * count + ch];
  });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  const std::size_t k = logits.shape()[logits.shape().rank() - 1];
  const std::size_t rows = logits.size() / k;
  BasicTensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = logits.raw() + r * k;
    T* dst = out.raw() + r * k;
    const double m = static_cast<double>(*std::max_element(src, src + k));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(src[j]) - m);
    for (std::size_t j = 0; j < k; ++j) dst[j] = static_cast<T>(std::exp(static_cast<double>(src[j]) - m) / z);
  }
  return out;
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const std::uint8_t> labels, Reduction reduction) {
  const auto& lv = g.value(logits);
  require_rank4(lv.shape(), "softmax_cross_entropy");
  const std::size_t k = lv.dim(3);
  const std::size_t pixels = lv.size() / k;
  if (labels.size() != pixels)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(pixels) + " pixels");
  auto probs = std::make_shared<BasicTensor<T>>(softmax(lv));
  double loss = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    if (labels[p] >= k)
      throw DataError("softmax_cross_entropy: label " + std::to_string(labels[p]) + " outside [0," +
                      std::to_string(k) + ")");
    const T* src = lv.raw() + p * k;
    const double m = static_cast<double>(*std::max_element(src, src + k));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(src[j]) - m);
    loss += m + std::log(z) - static_cast<double>(src[labels[p]]);
  }
  const double norm = reduction == Reduction::kMean ? 1.0 / static_cast<double>(pixels) : 1.0;
  BasicTensor<T> out(Shape{1});
  out[0] = static_cast<T>(loss * norm);
  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.begin(), labels.end());
  return g.record(std::move(out), {logits}, [logits, probs, lab, k, norm](Graph<T>& gr, const BasicTensor<T>& gout) {
    auto& gl = gr.grad_buffer(logits);
    const T scale_factor = static_cast<T>(static_cast<double>(gout[0]) * norm);
    const std::size_t pixels = lab->size();
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t j = 0; j < k; ++j) {
        const T onehot = j == (*lab)[p] ? T{1} : T{0};
        gl[p * k + j] += ((*probs)[p * k + j] - onehot) * scale_factor;
      }
  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  double acc = 0.0;
  for (T v : xv.data()) acc += static_cast<double>(v);
  BasicTensor<T> out(Shape{1});
  out[0] = static_cast<T>(acc);
  return g.record(std::move(out), {x}, [x](Graph<T>& gr, const BasicTensor<T>& gout) {
    auto& gx = gr.grad_buffer(x);
    for (auto& v : gx.data()) v += gout[0];
  });
}

template <typename T>
Var dot(Graph<T>& g, Var x, const BasicTensor<T>& weights) {
  const auto& xv = g.value(x);
  if (!(xv.shape() == weights.shape()))
    throw ShapeError("dot: " + xv.shape().str() + " vs " + weights.shape().str());
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * static_cast<double>(weights[i]);
  BasicTensor<T> out(Shape{1});
  out[0] = static_cast<T>(acc);
  return g.record(std::move(out), {x}, [x, weights](Graph<T>& gr, const BasicTensor<T>& gout) {
    auto& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[0] * weights[i];
  });
}

#define MIXNET_INSTANTIATE(T)                                                                        \
  template Var conv2d(Graph<T>&, Var, Var, Var, const ConvSpec&);                                    \
  template Var add(Graph<T>&, Var, Var);                                                             \
  template Var scale(Graph<T>&, Var, T);                                                             \
  template Var relu(Graph<T>&, Var);                                                                 \
  template Var maxpool2x2(Graph<T>&, Var);                                                           \
  template Var avgpool_region(Graph<T>&, Var, std::size_t, std::size_t);                             \
  template Var bilinear_resize(Graph<T>&, Var, std::size_t, std::size_t);                            \
  template Var concat_channels(Graph<T>&, const std::vector<Var>&);                                  \
  template Var slice_channels(Graph<T>&, Var, std::size_t, std::size_t);                             \
  template Var softmax_cross_entropy(Graph<T>&, Var, std::span<const std::uint8_t>, Reduction);      \
  template Var sum(Graph<T>&, Var);                                                                  \
  template Var dot(Graph<T>&, Var, const BasicTensor<T>&);                                           \
  template BasicTensor<T> softmax(const BasicTensor<T>&);

MIXNET_INSTANTIATE(float)
MIXNET_INSTANTIATE(double)
#undef MIXNET_INSTANTIATE

}  // namespace mixnet
