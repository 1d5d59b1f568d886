#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "mixnet/config.hpp"
#include "mixnet/dataset.hpp"
#include "mixnet/trainer.hpp"

namespace mixnet {

// Run directory of one training job:
//   config.json      resolved RunConfig
//   log.csv          one row per epoch (header row first)
//   checkpoint.bin   written after every epoch

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;  // epochs run by this call
};

/// Slices of every train-role subject except the holdout, along the plane.
std::vector<Sample> training_slices(const DatasetManifest& m, const RunConfig& cfg);

/// Trains along cfg.plane until cfg.optim.epochs, validating on the holdout
/// subject when one is named. With `resume`, training continues from the
/// checkpoint's epoch and the log is appended to.
TrainOutcome train_plane(const DatasetManifest& m, const RunConfig& cfg, const std::filesystem::path& out_dir,
                         const std::optional<Checkpoint>& resume = std::nullopt,
                         const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace mixnet
