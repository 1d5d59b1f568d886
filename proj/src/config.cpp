#include "mixnet/config.hpp"

#include <fstream>
#include <sstream>

#include "mixnet/error.hpp"

namespace mixnet {

namespace {

template <typename T>
T get(const Json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

}  // namespace

void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  require_object(j, where);
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
}

Json to_json(const NetConfig& c) {
  Json levels = Json::array();
  for (const auto& l : c.levels) levels.push_back({{"filters", l.filters}, {"dilation", l.dilation}});
  return {{"variant", to_string(c.variant)}, {"levels", levels},           {"n_classes", c.n_classes},
          {"n_modalities", c.n_modalities},  {"init_pool", c.init_pool}, {"pyramid_bins", c.pyramid_bins}};
}

NetConfig net_config_from_json(const Json& j, NetConfig c) {
  const std::string w = "net";
  reject_unknown_keys(j, {"variant", "levels", "n_classes", "n_modalities", "init_pool", "pyramid_bins"}, w);
  if (j.contains("variant")) {
    // Switching variant resets the level table to that variant's default.
    const Variant v = parse_variant(get<std::string>(j, "variant", w));
    if (v != c.variant) c.levels = NetConfig::defaults(v, c.n_classes).levels;
    c.variant = v;
  }
  if (j.contains("n_classes")) c.n_classes = get<std::size_t>(j, "n_classes", w);
  if (j.contains("n_modalities")) c.n_modalities = get<std::size_t>(j, "n_modalities", w);
  if (j.contains("init_pool")) c.init_pool = get<bool>(j, "init_pool", w);
  if (j.contains("pyramid_bins")) c.pyramid_bins = get<std::vector<std::size_t>>(j, "pyramid_bins", w);
  if (j.contains("levels")) {
    const Json& ls = j.at("levels");
    if (!ls.is_array()) throw ConfigError("net.levels must be an array");
    c.levels.clear();
    for (const Json& l : ls) {
      reject_unknown_keys(l, {"filters", "dilation"}, "net.levels[]");
      c.levels.push_back({get<std::size_t>(l, "filters", "net.levels[]"), get<std::size_t>(l, "dilation", "net.levels[]")});
    }
  }
  return c;
}

Json to_json(const OptimConfig& c) {
  return {{"lr0", c.lr0},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"boundary_fractions", c.boundary_fractions},
          {"batch_size", c.batch_size},
          {"loss_reduction", c.loss_reduction == Reduction::kSum ? "sum" : "mean"},
          {"max_samples_per_epoch", c.max_samples_per_epoch}};
}

OptimConfig optim_config_from_json(const Json& j, OptimConfig c) {
  const std::string w = "optim";
  reject_unknown_keys(j,
                      {"lr0", "momentum", "weight_decay", "epochs", "boundary_fractions", "batch_size", "loss_reduction",
                       "max_samples_per_epoch"},
                      w);
  if (j.contains("lr0")) c.lr0 = get<double>(j, "lr0", w);
  if (j.contains("momentum")) c.momentum = get<double>(j, "momentum", w);
  if (j.contains("weight_decay")) c.weight_decay = get<double>(j, "weight_decay", w);
  if (j.contains("epochs")) c.epochs = get<std::size_t>(j, "epochs", w);
  if (j.contains("boundary_fractions")) c.boundary_fractions = get<std::vector<double>>(j, "boundary_fractions", w);
  if (j.contains("batch_size")) c.batch_size = get<std::size_t>(j, "batch_size", w);
  if (j.contains("max_samples_per_epoch")) c.max_samples_per_epoch = get<std::size_t>(j, "max_samples_per_epoch", w);
  if (j.contains("loss_reduction")) {
    const auto r = get<std::string>(j, "loss_reduction", w);
    if (r == "sum")
      c.loss_reduction = Reduction::kSum;
    else if (r == "mean")
      c.loss_reduction = Reduction::kMean;
    else
      throw ConfigError("optim.loss_reduction must be 'sum' or 'mean'");
  }
  return c;
}

std::string to_string(const aug::Op& op) {
  std::ostringstream os;
  switch (op.kind) {
    case aug::Kind::kElastic:
      return "elastic";
    case aug::Kind::kTranslate:
      return "translate";
    case aug::Kind::kFlip:
      return "flip";
    case aug::Kind::kScale:
      os << "scale:" << op.value;
      return os.str();
    case aug::Kind::kRotate:
      os << "rotate:" << op.value;
      return os.str();
  }
  return "?";
}

aug::Op parse_op(const std::string& s) {
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  double value = 0.0;
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      value = std::stod(s.substr(colon + 1), &used);
      if (used != s.size() - colon - 1) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError("bad augmentation op '" + s + "'");
    }
  }
  const bool has_value = colon != std::string::npos;
  if (kind == "elastic" && !has_value) return {aug::Kind::kElastic, 0.0};
  if (kind == "translate" && !has_value) return {aug::Kind::kTranslate, 0.0};
  if (kind == "flip" && !has_value) return {aug::Kind::kFlip, 0.0};
  if (kind == "scale" && has_value) return {aug::Kind::kScale, value};
  if (kind == "rotate" && has_value) return {aug::Kind::kRotate, value};
  throw ConfigError("bad augmentation op '" + s + "'");
}

Json to_json(const aug::Policy& p) {
  Json ops = Json::array();
  for (const auto& op : p.ops) ops.push_back(to_string(op));
  return {{"plane", to_string(p.plane)},
          {"ops", ops},
          {"elastic_alpha", p.elastic_alpha},
          {"elastic_sigma", p.elastic_sigma},
          {"max_translate_fraction", p.max_translate_fraction}};
}

aug::Policy policy_from_json(const Json& j, aug::Policy p) {
  const std::string w = "augment";
  reject_unknown_keys(j, {"plane", "ops", "elastic_alpha", "elastic_sigma", "max_translate_fraction"}, w);
  if (j.contains("plane")) p.plane = parse_plane(get<std::string>(j, "plane", w));
  if (j.contains("ops")) {
    p.ops.clear();
    for (const auto& s : get<std::vector<std::string>>(j, "ops", w)) p.ops.push_back(parse_op(s));
  }
  if (j.contains("elastic_alpha")) p.elastic_alpha = get<double>(j, "elastic_alpha", w);
  if (j.contains("elastic_sigma")) p.elastic_sigma = get<double>(j, "elastic_sigma", w);
  if (j.contains("max_translate_fraction")) p.max_translate_fraction = get<double>(j, "max_translate_fraction", w);
  return p;
}

Json to_json(const FusionConfig& c) { return {{"weights", c.weights}}; }

FusionConfig fusion_config_from_json(const Json& j, FusionConfig c) {
  reject_unknown_keys(j, {"weights"}, "fusion");
  if (j.contains("weights")) {
    const auto w = get<std::vector<double>>(j, "weights", "fusion");
    if (w.size() != 3) throw ConfigError("fusion.weights needs three values (sagittal, coronal, transverse)");
    c.weights = {w[0], w[1], w[2]};
  }
  return c;
}

void RunConfig::validate() const {
  optim.validate();
  augment.validate();
  if (augment.plane != plane) throw ConfigError("augmentation policy plane differs from the training plane");
  MixNet check(net);
  (void)check;
}

Json to_json(const RunConfig& c) {
  return {{"net", to_json(c.net)},     {"optim", to_json(c.optim)}, {"plane", to_string(c.plane)},
          {"augment", to_json(c.augment)}, {"seed", c.seed},          {"holdout", c.holdout}};
}

RunConfig run_config_from_json(const Json& j, RunConfig c) {
  const std::string w = "config";
  reject_unknown_keys(j, {"net", "optim", "plane", "augment", "seed", "holdout"}, w);
  if (j.contains("net")) c.net = net_config_from_json(j.at("net"), c.net);
  if (j.contains("optim")) c.optim = optim_config_from_json(j.at("optim"), c.optim);
  if (j.contains("plane")) {
    const Plane p = parse_plane(get<std::string>(j, "plane", w));
    if (p != c.plane) {
      aug::Policy fresh = aug::Policy::defaults(p);
      fresh.elastic_alpha = c.augment.elastic_alpha;
      fresh.elastic_sigma = c.augment.elastic_sigma;
      fresh.max_translate_fraction = c.augment.max_translate_fraction;
      c.augment = fresh;
    }
    c.plane = p;
  }
  if (j.contains("augment")) c.augment = policy_from_json(j.at("augment"), c.augment);
  c.augment.plane = c.plane;
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", w);
  if (j.contains("holdout")) c.holdout = get<std::string>(j, "holdout", w);
  return c;
}

}  // namespace mixnet
