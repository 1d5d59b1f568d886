#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixnet/autodiff.hpp"
#include "mixnet/params.hpp"

namespace mixnet {

enum class Variant { kV1, kV2, kV3 };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Residual unit parameters: in channels c1, out channels c2, filter count f
/// (bottleneck width f/2), dilation d of the 3x3 convolution.
struct DilateResUnitConfig {
  std::size_t c1 = 0;
  std::size_t c2 = 0;
  std::size_t f = 0;
  std::size_t d = 1;

  void validate() const;
  bool has_shortcut_conv() const { return c1 != c2; }
};

struct LevelConfig {
  std::size_t filters = 0;
  std::size_t dilation = 1;
};

struct NetConfig {
  Variant variant = Variant::kV2;
  std::vector<LevelConfig> levels;
  std::size_t n_classes = 4;
  std::size_t n_modalities = 3;
  bool init_pool = true;
  std::vector<std::size_t> pyramid_bins{2, 4, 6, 12};

  /// Five levels, dilations (2,1,4,1,8); 72 filters for v1, 24 for v2/v3.
  static NetConfig defaults(Variant variant, std::size_t n_classes);
};

// Units. `prefix` names the unit inside the parameter manifest.

void declare_init_unit(ParamManifest& m, const std::string& prefix, std::size_t in_channels, std::size_t out_channels);
void declare_dilate_res_unit(ParamManifest& m, const std::string& prefix, const DilateResUnitConfig& cfg);
void declare_output_unit(ParamManifest& m, const std::string& prefix, std::size_t in_channels, std::size_t n_bins,
                         std::size_t n_classes);

/// 5x5 SAME conv, ReLU, optional 2x2/2 max pool.
template <typename T>
Var init_unit(Graph<T>& g, const ParamVars& p, const std::string& prefix, Var x, bool pool);

/// relu( expand(relu(dilated(relu(reduce(x))))) + shortcut(x) ), where the
/// shortcut is the identity when c1 == c2 and a 1x1 conv otherwise.
template <typename T>
Var dilate_res_unit(Graph<T>& g, const ParamVars& p, const std::string& prefix, const DilateResUnitConfig& cfg, Var x);

/// Pyramid pooling (average pooling per bin count, bilinear back to H x W,
/// concatenated after x), 3x3 SAME conv to class logits, then bilinear
/// resize to (out_h, out_w) when those differ from H x W.
template <typename T>
Var output_unit(Graph<T>& g, const ParamVars& p, const std::string& prefix, Var x,
                const std::vector<std::size_t>& bins, std::size_t out_h, std::size_t out_w);

/// Shapes observed during a forward pass, for conformance checks.
struct UnitTrace {
  std::string name;
  std::size_t level = 0;  // 1-based; 0 for init/output
  int stream = -1;        // modality stream, -1 when shared
  Shape input;
  Shape output;
};

struct ForwardTrace {
  std::vector<UnitTrace> units;
  Shape aggregate;
  Shape logits;
};

class MixNet {
 public:
  explicit MixNet(NetConfig cfg);

  const NetConfig& config() const { return cfg_; }
  const ParamManifest& manifest() const { return manifest_; }
  std::size_t aggregate_channels() const { return aggregate_channels_; }
  /// Residual unit configs in manifest order, with their parameter prefixes.
  const std::vector<std::pair<std::string, DilateResUnitConfig>>& units() const { return units_; }

  /// He-initialized weights, zero biases; parameter i uses derive_seed(seed, i).
  ParamStore<float> init_params(std::uint64_t seed) const;

  /// input: (N,H,W,n_modalities) -> logits (N,H,W,n_classes).
  template <typename T>
  Var forward(Graph<T>& g, const ParamVars& params, Var input, ForwardTrace* trace = nullptr) const;

 private:
  template <typename T>
  Var unit(Graph<T>& g, const ParamVars& p, std::size_t index, std::size_t level, int stream, Var x,
           ForwardTrace* trace) const;

  NetConfig cfg_;
  ParamManifest manifest_;
  std::vector<std::pair<std::string, DilateResUnitConfig>> units_;
  std::size_t aggregate_channels_ = 0;
};

/// Places parallel-stream (v3) parameters into a stacked-channel (v1) network
/// with the given config: block-diagonal kernels, zeros across streams, and
/// output-conv input channels permuted from stream-major to level-major order.
/// The resulting v1 network computes the same logits as the v3 network.
ParamStore<float> embed_v3_into_v1(const MixNet& v3, const ParamStore<float>& v3_params, const MixNet& v1);

}  // namespace mixnet
