#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mixnet/arch.hpp"
#include "mixnet/augment.hpp"
#include "mixnet/ops.hpp"
#include "mixnet/volume.hpp"

namespace mixnet {

struct OptimConfig {
  double lr0 = 2e-4;
  double momentum = 0.99;
  double weight_decay = 1e-3;
  std::size_t epochs = 1;
  std::vector<double> boundary_fractions{0.2, 0.4, 0.6, 0.75, 0.8, 0.85, 0.9, 0.95};
  std::size_t batch_size = 8;
  /// Mean keeps the step size independent of slice size; sum is the raw
  /// per-pixel total and needs a much smaller lr0.
  Reduction loss_reduction = Reduction::kMean;
  /// Random subset drawn per epoch from the (augmented) training set; 0 = all.
  std::size_t max_samples_per_epoch = 0;

  void validate() const;
};

/// lr0 * 2^-(number of boundary fractions b with b <= epoch / epochs).
double lr_schedule(std::size_t epoch, const OptimConfig& cfg);

/// Nesterov momentum with L2 decay, per element:
///   g' = g + weight_decay * p
///   v  = momentum * v - lr * g'
///   p  = p + momentum * v - lr * g'
/// Throws NumericError naming the parameter if a gradient is not finite.
template <typename T>
void nesterov_step(ParamStore<T>& params, const ParamStore<T>& grads, ParamStore<T>& velocity, double lr,
                   const OptimConfig& cfg);

struct Checkpoint {
  NetConfig net;
  OptimConfig optim;
  std::string plane;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;  // completed epochs
  ParamStore<float> params;
  ParamStore<float> velocity;
};

// Binary layout: "MIXNETCK", u32 version, u64 length + JSON header (configs,
// plane, seed, epoch), u64 tensor count, then per parameter the name, rank,
// extents and little-endian f32 values; velocities follow in the same order.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;                // mean batch loss under the configured reduction
  std::optional<double> val_loss;         // mean per-slice summed loss
  std::vector<double> dice;               // classes 1..K-1 on the validation slices
};

/// CSV header and row: epoch,lr,train_loss,val_loss,dice_1..dice_{K-1}.
std::string csv_header(std::size_t n_classes);
std::string csv_row(const EpochLog& log);

/// Per-pixel class probabilities (H, W, K) for each sample.
std::vector<Tensor> predict_probabilities(const MixNet& net, const ParamStore<float>& params,
                                          const std::vector<Sample>& samples, std::size_t batch_size);

/// Foreground Dice per class 1..K-1, pooled over all pixels of the samples.
std::vector<double> slice_dice(const std::vector<Tensor>& probabilities, const std::vector<Sample>& samples,
                               std::size_t n_classes);

/// Stacks equally sized samples into an (N, H, W, C) batch and flat labels.
Tensor stack_images(const std::vector<const Sample*>& batch);
std::vector<std::uint8_t> stack_labels(const std::vector<const Sample*>& batch);

class Trainer {
 public:
  /// Fresh run: He-initialized parameters from `seed`, zero velocity.
  Trainer(const MixNet& net, OptimConfig cfg, std::uint64_t seed);
  /// Continues from a checkpoint; the network config must match.
  Trainer(const MixNet& net, const Checkpoint& ck);

  /// One optimizer step on a batch of equally sized samples; returns the loss.
  double step(const std::vector<const Sample*>& batch, double lr);

  /// One pass over a random permutation of `train` (seeded by seed and epoch
  /// index). Batches are cut early when the sample size changes.
  EpochLog run_epoch(const aug::ExpandedView& train, const std::vector<Sample>* validation = nullptr);

  /// Mean per-slice summed loss and per-class Dice.
  std::pair<double, std::vector<double>> validate(const std::vector<Sample>& samples) const;

  Checkpoint checkpoint(const std::string& plane = "") const;

  const ParamStore<float>& params() const { return params_; }
  const ParamStore<float>& velocity() const { return velocity_; }
  const OptimConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }

 private:
  const MixNet* net_;
  OptimConfig cfg_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  ParamStore<float> params_;
  ParamStore<float> velocity_;
};

}  // namespace mixnet
