#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mixnet/autodiff.hpp"

namespace mixnet {

// Differentiable operations on NHWC activations. Every op is instantiated for
// float (training, inference) and double (gradient checking).

/// Cross-correlation (no kernel flip) with SAME zero padding. The padding total
/// is split floor before / ceil after, so with stride 1 the output has the
/// input's spatial size.
struct ConvSpec {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t dilation = 1;
  std::size_t stride = 1;

  std::size_t effective_h() const { return (kernel_h - 1) * dilation + 1; }
  std::size_t effective_w() const { return (kernel_w - 1) * dilation + 1; }
  std::size_t output_extent(std::size_t in) const { return (in + stride - 1) / stride; }
};

enum class Reduction { kSum, kMean };

/// x: (N,H,W,Cin), w: (kh,kw,Cin,Cout), b: (Cout) or an invalid Var for no bias.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, const ConvSpec& spec);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

template <typename T>
Var scale(Graph<T>& g, Var x, T factor);

template <typename T>
Var relu(Graph<T>& g, Var x);

/// 2x2 window, stride 2; odd extents round up and the last window is clipped.
/// Ties resolve to the first maximum in row-major window order.
template <typename T>
Var maxpool2x2(Graph<T>& g, Var x);

/// Mean over a bins_h x bins_w partition of the spatial plane. Bin i along an
/// axis of extent n covers [floor(i*n/b), floor((i+1)*n/b)), so bin sizes
/// differ by at most one.
template <typename T>
Var avgpool_region(Graph<T>& g, Var x, std::size_t bins_h, std::size_t bins_w);

/// Half-pixel-center bilinear resampling: src = (i + 0.5) * in / out - 0.5,
/// clamped at 0 below and at in - 1 above.
template <typename T>
Var bilinear_resize(Graph<T>& g, Var x, std::size_t out_h, std::size_t out_w);

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& xs);

template <typename T>
Var slice_channels(Graph<T>& g, Var x, std::size_t begin, std::size_t count);

/// Per-pixel softmax cross-entropy over the last axis of (N,H,W,K) logits.
/// kSum accumulates over pixels; kMean divides by the pixel count.
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const std::uint8_t> labels,
                          Reduction reduction = Reduction::kSum);

template <typename T>
Var sum(Graph<T>& g, Var x);

/// <x, weights> as a scalar; weights are a constant.
template <typename T>
Var dot(Graph<T>& g, Var x, const BasicTensor<T>& weights);

/// Softmax along the last axis (no graph).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// Bilinear index/weight table for one axis; shared by resize and its backward.
struct ResizeTap {
  std::size_t i0;
  std::size_t i1;
  double w1;
};
std::vector<ResizeTap> bilinear_taps(std::size_t in, std::size_t out);

}  // namespace mixnet
