#pragma once

#include <json.hpp>
#include <cstdint>
#include <set>
#include <string>

#include "mixnet/arch.hpp"
#include "mixnet/augment.hpp"
#include "mixnet/trainer.hpp"
#include "mixnet/volume.hpp"

namespace mixnet {

using Json = nlohmann::json;

// JSON forms of the run configuration. The *_from_json functions overlay the
// keys present in `j` onto `base`, so defaults < file < flags can be layered
// by repeated calls. Unknown keys and wrongly typed values raise ConfigError.

Json to_json(const NetConfig& c);
NetConfig net_config_from_json(const Json& j, NetConfig base);

Json to_json(const OptimConfig& c);
OptimConfig optim_config_from_json(const Json& j, OptimConfig base);

/// Ops are written as "elastic", "translate", "flip", "scale:0.9", "rotate:45".
Json to_json(const aug::Policy& p);
aug::Policy policy_from_json(const Json& j, aug::Policy base);
aug::Op parse_op(const std::string& s);
std::string to_string(const aug::Op& op);

Json to_json(const FusionConfig& c);
FusionConfig fusion_config_from_json(const Json& j, FusionConfig base);

/// Everything a training run needs besides the data: network, optimizer,
/// augmentation, plane, seed and the held-out subject (empty for none).
struct RunConfig {
  NetConfig net = NetConfig::defaults(Variant::kV2, 4);
  OptimConfig optim;
  Plane plane = Plane::kTransverse;
  aug::Policy augment = aug::Policy::defaults(Plane::kTransverse);
  std::uint64_t seed = 1;
  std::string holdout;

  void validate() const;
};

Json to_json(const RunConfig& c);
/// Keys: net, optim, plane, augment, seed, holdout. Changing the plane resets
/// the augmentation ops to that plane's default policy before "augment" is
/// applied.
RunConfig run_config_from_json(const Json& j, RunConfig base);

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where);

/// Reads a JSON object from file; ConfigError on I/O or parse failure.
Json read_json_file(const std::string& path);

}  // namespace mixnet
