#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixnet/arch.hpp"
#include "mixnet/volume.hpp"

namespace mixnet {

struct SubjectEntry {
  std::string id;
  std::vector<std::string> modalities;  // header paths, relative to the manifest directory
  std::string labels;
  std::string role = "train";  // train | test
};

/// Dataset manifest (JSON): {"format": "mixnet-dataset", "version": 1,
/// "n_classes": K, "subjects": [{"id", "modalities": [...], "labels", "role"}]}.
struct DatasetManifest {
  std::size_t n_classes = 0;
  std::vector<SubjectEntry> subjects;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::size_t index_of(const std::string& id) const;
};

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Writes `n_subjects` synthetic subjects (subject i from derive_seed(seed, i))
/// plus dataset.json into `dir`.
DatasetManifest generate_dataset(const std::filesystem::path& dir, std::size_t n_subjects, const SyntheticConfig& cfg,
                                 std::uint64_t seed);

struct Subject {
  std::string id;
  std::vector<Volume> modalities;  // normalized
  LabelVolume labels;
};

/// Reads one subject, normalizes each modality and checks labels against K.
Subject load_subject(const DatasetManifest& m, std::size_t index);

/// Normalized in-memory subject, as load_subject would return after a round trip.
Subject make_subject(std::string id, const SyntheticSubject& s);

/// Per-voxel class probabilities predicted slice by slice along `plane`.
ProbVolume predict_volume(const MixNet& net, const ParamStore<float>& params, const Subject& subject, Plane plane,
                          std::size_t batch_size);

}  // namespace mixnet
