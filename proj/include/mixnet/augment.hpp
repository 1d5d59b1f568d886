#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mixnet/volume.hpp"

namespace mixnet::aug {

// Geometric augmentations on 2D samples. Images are resampled bilinearly and
// labels by nearest neighbour, so label maps never gain new class ids.
// Rotation, scaling and translation fill uncovered pixels with zeros (label
// 0); elastic deformation clamps reads to the image edge.

enum class Kind { kElastic, kScale, kRotate, kTranslate, kFlip };

struct Op {
  Kind kind;
  double value = 0.0;  // scale factor or rotation angle in degrees
};

struct Policy {
  Plane plane = Plane::kTransverse;
  std::vector<Op> ops;
  double elastic_alpha = 10.0;
  double elastic_sigma = 4.0;
  /// Translation bound as a fraction of the image extent along each axis.
  double max_translate_fraction = 0.15;

  /// Transverse: 4 scales, 7 non-zero rotations, elastic, translate, flip.
  /// Sagittal / coronal: flip and translate only.
  static Policy defaults(Plane plane);
  void validate() const;
  std::string describe() const;
};

inline constexpr double kScaleFactors[] = {0.9, 0.95, 1.05, 1.1};
inline constexpr double kRotationAngles[] = {0, 45, 90, 135, 180, 225, 270, 315};

/// Per-pixel displacement in pixels: alpha * gaussian_smooth(uniform(-1, 1), sigma).
struct DeformField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> dx;
  std::vector<double> dy;
};

DeformField make_deform_field(std::size_t height, std::size_t width, double alpha, double sigma, std::uint64_t seed);
Sample apply_deform_field(const Sample& s, const DeformField& field);

Sample elastic(const Sample& s, double alpha, double sigma, std::uint64_t seed);
/// Counter-clockwise rotation about the image center; angle must be one of kRotationAngles.
Sample rotate(const Sample& s, double degrees);
/// Zoom about the image center keeping the original extent; factor must be one of kScaleFactors.
Sample scale(const Sample& s, double factor);
/// Integer shift (dx columns, dy rows), bounded by max_fraction of the extent.
Sample translate(const Sample& s, long dx, long dy, double max_fraction = 0.15);
/// Seeded uniform shift within max_fraction of each extent.
Sample random_translate(const Sample& s, double max_fraction, std::uint64_t seed);
/// Mirrors columns (left-right).
Sample flip(const Sample& s);

Sample apply(const Sample& s, const Op& op, const Policy& policy, std::uint64_t seed);

/// Lazily expanded dataset: index i * (1 + ops) is original i, the following
/// entries are the policy ops applied to that original (never to an augmented
/// sample). Op j on sample i uses derive_seed(seed, i, j). Holds a reference
/// to `samples`.
class ExpandedView {
 public:
  ExpandedView(const std::vector<Sample>& samples, Policy policy, std::uint64_t seed);

  std::size_t size() const { return samples_->size() * (1 + policy_.ops.size()); }
  Sample at(std::size_t index) const;
  /// Shape of entry `index` without materializing it.
  const Sample& original(std::size_t index) const { return (*samples_)[index / (1 + policy_.ops.size())]; }
  const Policy& policy() const { return policy_; }

 private:
  const std::vector<Sample>* samples_;
  Policy policy_;
  std::uint64_t seed_;
};

/// Materialized ExpandedView.
std::vector<Sample> expand_dataset(const std::vector<Sample>& samples, const Policy& policy, std::uint64_t seed);

}  // namespace mixnet::aug
