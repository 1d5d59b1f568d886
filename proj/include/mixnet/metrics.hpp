#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixnet/volume.hpp"

namespace mixnet {

// Binary masks are byte spans (nonzero = inside) in Volume voxel order.

/// 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

/// 1 - ||A|-|B|| / (|A|+|B|); 1 when both masks are empty.
double volumetric_similarity(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

enum class HdMode {
  kMaxOfDirected,  // max(P95(d(A->B)), P95(d(B->A)))
  kPooled,         // P95 over both directed distance sets together
};

/// Mask voxels with at least one 6-neighbour outside the mask; neighbours
/// beyond the volume border count as outside.
std::vector<std::array<std::size_t, 3>> surface_voxels(std::span<const std::uint8_t> mask, const Dims3& dims);

/// For each surface voxel of `from`, the physical distance (mm) to the nearest
/// surface voxel of `to`.
std::vector<double> directed_surface_distances(std::span<const std::uint8_t> from, std::span<const std::uint8_t> to,
                                               const Dims3& dims, const Spacing3& spacing);

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value. p is an integer percent.
double nearest_rank_percentile(std::vector<double> values, unsigned percent);

/// 95th-percentile surface Hausdorff distance in mm. Throws UndefinedMetric
/// when either mask is empty.
double hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, const Dims3& dims,
            const Spacing3& spacing, HdMode mode = HdMode::kMaxOfDirected);

struct ClassMetrics {
  std::size_t label = 0;
  double dice = 0.0;
  std::optional<double> hd95;  // empty when undefined
  double vs = 0.0;
};

struct MetricWeights {
  double dice = 0.0;
  double hd95 = 0.0;
  double vs = 0.0;
};

/// Per-class weights for the overall score, keyed by class id.
using ScoreWeights = std::map<std::size_t, MetricWeights>;

/// Placeholder weighting: every metric of every class gets 1 / (3 * classes),
/// so a perfect segmentation scores 1. Not a reproduction of any challenge formula.
ScoreWeights placeholder_weights(const std::vector<std::size_t>& classes);

/// Monotone decreasing map of a distance onto (0, 1]: 1 / (1 + hd).
/// An undefined distance contributes 0.
double hd_score(const std::optional<double>& hd);

/// sum over classes of w.dice * dice + w.hd95 * hd_score(hd95) + w.vs * vs.
/// Throws ConfigError if a class has no weights.
double overall_score(const std::vector<ClassMetrics>& classes, const ScoreWeights& weights);

struct EvalReport {
  std::vector<ClassMetrics> classes;
  ScoreWeights weights;
  double overall = 0.0;

  std::string to_json() const;
  /// Aligned table, one row per class with Dice / HD / VS columns.
  std::string to_table() const;
};

/// Metrics for each foreground class 1..K-1 of two label volumes.
EvalReport evaluate(const LabelVolume& pred, const LabelVolume& truth, std::size_t n_classes,
                    const std::optional<ScoreWeights>& weights = std::nullopt, HdMode mode = HdMode::kMaxOfDirected);

std::vector<std::uint8_t> class_mask(const LabelVolume& v, std::size_t label);

}  // namespace mixnet
