#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixnet/tensor.hpp"

namespace mixnet {

/// Voxel grid extents (X, Y, Z). Storage is x-fastest:
/// offset = (z * Y + y) * X + x.
using Dims3 = std::array<std::size_t, 3>;
/// Physical voxel size in mm per axis.
using Spacing3 = std::array<double, 3>;

inline std::size_t voxel_count(const Dims3& d) { return d[0] * d[1] * d[2]; }

struct Volume {
  Dims3 dims{};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::string modality = "synthetic";
  std::vector<float> data;

  void validate() const;
};

struct LabelVolume {
  Dims3 dims{};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  void validate() const;
};

/// K class probabilities per voxel, stored voxel-major with classes innermost.
struct ProbVolume {
  Dims3 dims{};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::size_t n_classes = 0;
  std::string plane;  // optional provenance tag
  std::vector<float> data;

  void validate() const;
};

// File format: a JSON header (the path given) plus a raw little-endian body
// next to it whose file name is recorded in the header under "data_file".
// Header keys: format, version, dims, spacing, dtype (f32|u8), channels,
// modality, plane, byte_order, data_file.

void write_volume(const Volume& v, const std::filesystem::path& header);
void write_volume(const LabelVolume& v, const std::filesystem::path& header);
void write_volume(const ProbVolume& v, const std::filesystem::path& header);
Volume read_volume(const std::filesystem::path& header);
LabelVolume read_label_volume(const std::filesystem::path& header);
ProbVolume read_prob_volume(const std::filesystem::path& header);

/// Zero mean, unit (population) variance; a volume whose standard deviation is
/// below 1e-8 maps to all zeros.
Volume normalize(const Volume& v);

// Anatomical planes. A plane removes its normal axis and keeps the remaining
// two axes in increasing order as (rows, cols):
//   sagittal:   normal X, rows Y, cols Z
//   coronal:    normal Y, rows X, cols Z
//   transverse: normal Z, rows X, cols Y
enum class Plane { kSagittal, kCoronal, kTransverse };

std::string to_string(Plane p);
Plane parse_plane(const std::string& s);

/// (normal, row, col) volume axes of a plane.
std::array<std::size_t, 3> plane_axes(Plane p);

/// Maps a volume coordinate (x,y,z) to (slice, row, col) and back.
std::array<std::size_t, 3> to_plane(Plane p, const std::array<std::size_t, 3>& xyz);
std::array<std::size_t, 3> from_plane(Plane p, const std::array<std::size_t, 3>& src);

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;
};

/// One 2D training example: an (H, W, C) image and its label map. `spacing`
/// holds the physical (row, col) pixel size.
struct Sample {
  Tensor image;
  LabelMap label;
  std::array<double, 2> spacing{1.0, 1.0};

  std::size_t height() const { return image.dim(0); }
  std::size_t width() const { return image.dim(1); }
  std::size_t channels() const { return image.dim(2); }
};

/// One sample per index along the plane normal; the image stacks the given
/// modalities as channels in order.
std::vector<Sample> slice_stack(const std::vector<Volume>& modalities, const LabelVolume& labels, Plane plane);

/// Inverse of slice_stack for the label maps.
LabelVolume restack_labels(const std::vector<Sample>& samples, Plane plane, const Dims3& dims, const Spacing3& spacing);
/// Inverse of slice_stack for channel `channel` of the images.
Volume restack_channel(const std::vector<Sample>& samples, std::size_t channel, Plane plane, const Dims3& dims,
                       const Spacing3& spacing);

/// Places per-slice (H, W, K) probability maps back into volume coordinates.
ProbVolume assemble_probabilities(const std::vector<Tensor>& slices, Plane plane, const Dims3& dims,
                                  const Spacing3& spacing);

struct FusionConfig {
  /// Weights for sagittal, coronal, transverse predictions.
  std::array<double, 3> weights{1.0, 1.0, 4.0};

  void validate() const;
};

/// Voxelwise argmax of the weight-normalised sum of per-plane probabilities;
/// ties go to the lower class id. `planes` are in sagittal, coronal,
/// transverse order.
LabelVolume fuse_predictions(const std::vector<ProbVolume>& planes, const FusionConfig& cfg);

/// Argmax of a single probability volume (lower class id on ties).
LabelVolume argmax_labels(const ProbVolume& p);

struct SyntheticConfig {
  Dims3 dims{96, 96, 96};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::size_t n_classes = 4;
  double noise_sigma = 0.05;
  /// Amplitude of the multiplicative smooth bias field; 0 disables it.
  double bias_amplitude = 0.1;
};

struct SyntheticSubject {
  std::vector<Volume> modalities;  // three volumes
  LabelVolume labels;
};

/// Nested, smoothly deformed ellipsoidal shells: class 0 outside, class K-1 at
/// the core. Each modality maps class ids through its own strictly monotone
/// intensity table, then applies the bias field and Gaussian noise.
SyntheticSubject generate_synthetic(std::uint64_t seed, const SyntheticConfig& cfg);

/// Intensity of class `c` in modality `m` before bias and noise.
double synthetic_intensity(std::size_t modality, std::size_t c, std::size_t n_classes);

}  // namespace mixnet
