#include "mixnet/arch.hpp"


#include "mixnet/error.hpp"
#include "mixnet/ops.hpp"

namespace mixnet {

namespace {

std::string stream_name(std::size_t m) { return "m" + std::to_string(m); }
std::string level_name(std::size_t l) { return "level" + std::to_string(l); }

template <typename T>
Var conv(Graph<T>& g, const ParamVars& p, const std::string& name, Var x, std::size_t k, std::size_t d = 1) {
  ConvSpec spec{k, k, d, 1};
  return conv2d(g, x, param(p, name + ".weight"), param(p, name + ".bias"), spec);
}

void declare_conv(ParamManifest& m, const std::string& name, std::size_t k, std::size_t in, std::size_t out) {
  m.add(name + ".weight", Shape{k, k, in, out}, k * k * in);
  m.add(name + ".bias", Shape{out}, 0);
}

// Copies src (kh,kw,in,out) into dst at channel offsets (in_off, out_off).
void place_block(Tensor& dst, const Tensor& src, std::size_t in_off, std::size_t out_off) {
  const Shape& s = src.shape();
  const Shape& d = dst.shape();
  if (s[0] != d[0] || s[1] != d[1] || in_off + s[2] > d[2] || out_off + s[3] > d[3])
    throw BuildError("embed: block " + s.str() + " does not fit in " + d.str());
  for (std::size_t ky = 0; ky < s[0]; ++ky)
    for (std::size_t kx = 0; kx < s[1]; ++kx)
      for (std::size_t i = 0; i < s[2]; ++i)
        for (std::size_t o = 0; o < s[3]; ++o)
          dst[((ky * d[1] + kx) * d[2] + in_off + i) * d[3] + out_off + o] = src[((ky * s[1] + kx) * s[2] + i) * s[3] + o];
}

void place_vector(Tensor& dst, const Tensor& src, std::size_t off) {
  if (off + src.size() > dst.size()) throw BuildError("embed: bias block does not fit");
  std::copy(src.data().begin(), src.data().end(), dst.data().begin() + static_cast<std::ptrdiff_t>(off));
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kV1:
      return "v1";
    case Variant::kV2:
      return "v2";
    case Variant::kV3:
      return "v3";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "v1") return Variant::kV1;
  if (s == "v2") return Variant::kV2;
  if (s == "v3") return Variant::kV3;
  throw ConfigError("unknown variant '" + s + "' (expected v1, v2 or v3)");
}

void DilateResUnitConfig::validate() const {
  if (c1 == 0 || c2 == 0) throw BuildError("DilateResUnit: channel counts must be >= 1");
  if (f < 2 || f % 2 != 0) throw BuildError("DilateResUnit: filter count f must be even, got " + std::to_string(f));
  if (d == 0) throw BuildError("DilateResUnit: dilation must be >= 1");
}

NetConfig NetConfig::defaults(Variant variant, std::size_t n_classes) {
  NetConfig cfg;
  cfg.variant = variant;
  cfg.n_classes = n_classes;
  const std::size_t f = variant == Variant::kV1 ? 72 : 24;
  for (std::size_t d : {2, 1, 4, 1, 8}) cfg.levels.push_back({f, d});
  return cfg;
}

void declare_init_unit(ParamManifest& m, const std::string& prefix, std::size_t in_channels, std::size_t out_channels) {
  declare_conv(m, prefix + ".conv", 5, in_channels, out_channels);
}

void declare_dilate_res_unit(ParamManifest& m, const std::string& prefix, const DilateResUnitConfig& cfg) {
  cfg.validate();
  const std::size_t half = cfg.f / 2;
  declare_conv(m, prefix + ".reduce", 1, cfg.c1, half);
  declare_conv(m, prefix + ".dilated", 3, half, half);
  declare_conv(m, prefix + ".expand", 1, half, cfg.c2);
  if (cfg.has_shortcut_conv()) declare_conv(m, prefix + ".shortcut", 1, cfg.c1, cfg.c2);
}

void declare_output_unit(ParamManifest& m, const std::string& prefix, std::size_t in_channels, std::size_t n_bins,
                         std::size_t n_classes) {
  declare_conv(m, prefix + ".conv", 3, in_channels * (1 + n_bins), n_classes);
}

template <typename T>
Var init_unit(Graph<T>& g, const ParamVars& p, const std::string& prefix, Var x, bool pool) {
  Var y = relu(g, conv(g, p, prefix + ".conv", x, 5));
  return pool ? maxpool2x2(g, y) : y;
}

template <typename T>
Var dilate_res_unit(Graph<T>& g, const ParamVars& p, const std::string& prefix, const DilateResUnitConfig& cfg, Var x) {
  cfg.validate();
  const std::size_t channels = g.value(x).shape()[3];
  if (channels != cfg.c1)
    throw ShapeError(prefix + ": input has " + std::to_string(channels) + " channels, unit expects " +
                     std::to_string(cfg.c1));
  Var branch = relu(g, conv(g, p, prefix + ".reduce", x, 1));
  branch = relu(g, conv(g, p, prefix + ".dilated", branch, 3, cfg.d));
  branch = conv(g, p, prefix + ".expand", branch, 1);
  Var shortcut = cfg.has_shortcut_conv() ? conv(g, p, prefix + ".shortcut", x, 1) : x;
  return relu(g, add(g, branch, shortcut));
}

template <typename T>
Var output_unit(Graph<T>& g, const ParamVars& p, const std::string& prefix, Var x,
                const std::vector<std::size_t>& bins, std::size_t out_h, std::size_t out_w) {
  const Shape& s = g.value(x).shape();
  const std::size_t h = s[1], w = s[2];
  std::vector<Var> parts{x};
  for (std::size_t b : bins) {
    if (b > h || b > w)
      throw ShapeError(prefix + ": " + std::to_string(h) + "x" + std::to_string(w) + " map is smaller than " +
                       std::to_string(b) + " pyramid bins");
    parts.push_back(bilinear_resize(g, avgpool_region(g, x, b, b), h, w));
  }
  Var logits = conv(g, p, prefix + ".conv", concat_channels(g, parts), 3);
  if (out_h != h || out_w != w) logits = bilinear_resize(g, logits, out_h, out_w);
  return logits;
}

MixNet::MixNet(NetConfig cfg) : cfg_(std::move(cfg)) {
  const std::size_t n_levels = cfg_.levels.size();
  const std::size_t modalities = cfg_.n_modalities;
  if (n_levels == 0) throw BuildError("network needs at least one level");
  if (cfg_.n_classes < 2) throw BuildError("network needs at least two classes");
  if (modalities == 0) throw BuildError("network needs at least one modality");
  if (cfg_.pyramid_bins.empty()) throw BuildError("pyramid needs at least one bin count");
  const std::size_t f = cfg_.levels.front().filters;
  for (const auto& lv : cfg_.levels)
    if (lv.filters != f) throw BuildError("all levels must share one filter count (got " + std::to_string(lv.filters) +
                                          " and " + std::to_string(f) + ")");
  if (cfg_.variant == Variant::kV2 && n_levels % 2 == 0)
    throw BuildError("v2 alternates summarization and stream levels and must end on a summarization level");

  auto add_unit = [&](std::string name, DilateResUnitConfig u) {
    declare_dilate_res_unit(manifest_, name, u);
    units_.emplace_back(std::move(name), u);
  };

  switch (cfg_.variant) {
    case Variant::kV1:
      declare_init_unit(manifest_, "init", modalities, f);
      for (std::size_t l = 0; l < n_levels; ++l) add_unit(level_name(l + 1), {f, f, f, cfg_.levels[l].dilation});
      aggregate_channels_ = n_levels * f;
      break;
    case Variant::kV2:
      for (std::size_t m = 0; m < modalities; ++m) declare_init_unit(manifest_, "init." + stream_name(m), 1, f);
      for (std::size_t l = 0; l < n_levels; ++l) {
        const std::size_t d = cfg_.levels[l].dilation;
        if (l % 2 == 0) {
          add_unit(level_name(l + 1), {modalities * f, f, f, d});
          aggregate_channels_ += f;
        } else {
          for (std::size_t m = 0; m < modalities; ++m)
            add_unit(level_name(l + 1) + "." + stream_name(m), {2 * f, f, f, d});
          aggregate_channels_ += modalities * f;
        }
      }
      break;
    case Variant::kV3:
      for (std::size_t m = 0; m < modalities; ++m) {
        declare_init_unit(manifest_, "init." + stream_name(m), 1, f);
        for (std::size_t l = 0; l < n_levels; ++l)
          add_unit(level_name(l + 1) + "." + stream_name(m), {f, f, f, cfg_.levels[l].dilation});
      }
      aggregate_channels_ = modalities * n_levels * f;
      break;
  }
  declare_output_unit(manifest_, "output", aggregate_channels_, cfg_.pyramid_bins.size(), cfg_.n_classes);
}

ParamStore<float> MixNet::init_params(std::uint64_t seed) const {
  ParamStore<float> store;
  std::uint64_t i = 0;
  for (const auto& s : manifest_.specs()) {
    store.insert(s.name, s.fan_in == 0 ? Tensor(s.shape) : he_init(s.shape, s.fan_in, derive_seed(seed, i)));
    ++i;
  }
  return store;
}

template <typename T>
Var MixNet::unit(Graph<T>& g, const ParamVars& p, std::size_t index, std::size_t level, int stream, Var x,
                 ForwardTrace* trace) const {
  const auto& [name, cfg] = units_.at(index);
  Var y = dilate_res_unit(g, p, name, cfg, x);
  if (trace) trace->units.push_back({name, level, stream, g.value(x).shape(), g.value(y).shape()});
  return y;
}

template <typename T>
Var MixNet::forward(Graph<T>& g, const ParamVars& p, Var input, ForwardTrace* trace) const {
  const Shape in = g.value(input).shape();
  if (in.rank() != 4 || in[3] != cfg_.n_modalities)
    throw ShapeError("MixNet input must be (N,H,W," + std::to_string(cfg_.n_modalities) + "), got " + in.str());
  const std::size_t n_levels = cfg_.levels.size();
  const std::size_t modalities = cfg_.n_modalities;

  auto init = [&](const std::string& name, Var x, int stream) {
    Var y = init_unit(g, p, name, x, cfg_.init_pool);
    if (trace) trace->units.push_back({name, 0, stream, g.value(x).shape(), g.value(y).shape()});
    return y;
  };

  std::vector<Var> aggregate;
  std::size_t next_unit = 0;
  switch (cfg_.variant) {
    case Variant::kV1: {
      Var h = init("init", input, -1);
      for (std::size_t l = 0; l < n_levels; ++l) {
        h = unit(g, p, next_unit++, l + 1, -1, h, trace);
        aggregate.push_back(h);
      }
      break;
    }
    case Variant::kV2: {
      std::vector<Var> streams;
      for (std::size_t m = 0; m < modalities; ++m)
        streams.push_back(init("init." + stream_name(m), slice_channels(g, input, m, 1), static_cast<int>(m)));
      Var summary;
      for (std::size_t l = 0; l < n_levels; ++l) {
        if (l % 2 == 0) {
          summary = unit(g, p, next_unit++, l + 1, -1, concat_channels(g, streams), trace);
          aggregate.push_back(summary);
        } else {
          for (std::size_t m = 0; m < modalities; ++m) {
            streams[m] = unit(g, p, next_unit++, l + 1, static_cast<int>(m), concat_channels(g, {streams[m], summary}),
                              trace);
            aggregate.push_back(streams[m]);
          }
        }
      }
      break;
    }
    case Variant::kV3: {
      for (std::size_t m = 0; m < modalities; ++m) {
        Var h = init("init." + stream_name(m), slice_channels(g, input, m, 1), static_cast<int>(m));
        for (std::size_t l = 0; l < n_levels; ++l) {
          h = unit(g, p, next_unit++, l + 1, static_cast<int>(m), h, trace);
          aggregate.push_back(h);
        }
      }
      break;
    }
  }
  Var agg = concat_channels(g, aggregate);
  Var logits = output_unit(g, p, "output", agg, cfg_.pyramid_bins, in[1], in[2]);
  if (trace) {
    trace->aggregate = g.value(agg).shape();
    trace->logits = g.value(logits).shape();
  }
  return logits;
}

ParamStore<float> embed_v3_into_v1(const MixNet& v3, const ParamStore<float>& v3_params, const MixNet& v1) {
  const NetConfig& a = v3.config();
  const NetConfig& b = v1.config();
  if (a.variant != Variant::kV3 || b.variant != Variant::kV1) throw BuildError("embed: expected a v3 source and v1 target");
  if (a.levels.size() != b.levels.size())
    throw BuildError("embed: mismatched level counts (" + std::to_string(a.levels.size()) + " vs " +
                     std::to_string(b.levels.size()) + ")");
  const std::size_t modalities = a.n_modalities;
  const std::size_t levels = a.levels.size();
  const std::size_t f = a.levels.front().filters;
  if (b.n_modalities != modalities || b.n_classes != a.n_classes || b.init_pool != a.init_pool ||
      b.pyramid_bins != a.pyramid_bins)
    throw BuildError("embed: v1 and v3 configs disagree on modalities, classes, pooling or pyramid");
  for (std::size_t l = 0; l < levels; ++l) {
    if (b.levels[l].filters != modalities * f)
      throw BuildError("embed: v1 filter count must be " + std::to_string(modalities * f));
    if (b.levels[l].dilation != a.levels[l].dilation) throw BuildError("embed: dilation schedules differ");
  }

  ParamStore<float> out(v1.manifest());
  const std::size_t half = f / 2;
  for (std::size_t m = 0; m < modalities; ++m) {
    const std::string s = "." + stream_name(m);
    place_block(out.at("init.conv.weight"), v3_params.at("init" + s + ".conv.weight"), m, m * f);
    place_vector(out.at("init.conv.bias"), v3_params.at("init" + s + ".conv.bias"), m * f);
    for (std::size_t l = 1; l <= levels; ++l) {
      const std::string dst = level_name(l);
      const std::string src = dst + s;
      place_block(out.at(dst + ".reduce.weight"), v3_params.at(src + ".reduce.weight"), m * f, m * half);
      place_vector(out.at(dst + ".reduce.bias"), v3_params.at(src + ".reduce.bias"), m * half);
      place_block(out.at(dst + ".dilated.weight"), v3_params.at(src + ".dilated.weight"), m * half, m * half);
      place_vector(out.at(dst + ".dilated.bias"), v3_params.at(src + ".dilated.bias"), m * half);
      place_block(out.at(dst + ".expand.weight"), v3_params.at(src + ".expand.weight"), m * half, m * f);
      place_vector(out.at(dst + ".expand.bias"), v3_params.at(src + ".expand.bias"), m * f);
    }
  }

  // v3 aggregates stream-major (m, level, j); v1 aggregates level-major (level, m, j).
  const Tensor& w3 = v3_params.at("output.conv.weight");
  Tensor& w1 = out.at("output.conv.weight");
  const Shape& ws = w3.shape();
  const std::size_t agg = modalities * levels * f;
  const std::size_t blocks = ws[2] / agg;
  const std::size_t classes = ws[3];
  for (std::size_t tap = 0; tap < ws[0] * ws[1]; ++tap)
    for (std::size_t blk = 0; blk < blocks; ++blk)
      for (std::size_t m = 0; m < modalities; ++m)
        for (std::size_t l = 0; l < levels; ++l)
          for (std::size_t j = 0; j < f; ++j) {
            const std::size_t a3 = blk * agg + (m * levels + l) * f + j;
            const std::size_t a1 = blk * agg + (l * modalities + m) * f + j;
            for (std::size_t k = 0; k < classes; ++k)
              w1[(tap * ws[2] + a1) * classes + k] = w3[(tap * ws[2] + a3) * classes + k];
          }
  out.at("output.conv.bias") = v3_params.at("output.conv.bias");
  return out;
}

#define MIXNET_INSTANTIATE(T)                                                                                \
  template Var init_unit(Graph<T>&, const ParamVars&, const std::string&, Var, bool);                        \
  template Var dilate_res_unit(Graph<T>&, const ParamVars&, const std::string&, const DilateResUnitConfig&,  \
                               Var);                                                                         \
  template Var output_unit(Graph<T>&, const ParamVars&, const std::string&, Var,                             \
                           const std::vector<std::size_t>&, std::size_t, std::size_t);                       \
  template Var MixNet::forward(Graph<T>&, const ParamVars&, Var, ForwardTrace*) const;

MIXNET_INSTANTIATE(float)
MIXNET_INSTANTIATE(double)
#undef MIXNET_INSTANTIATE

}  // namespace mixnet
