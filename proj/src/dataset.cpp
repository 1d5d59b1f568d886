#include "mixnet/dataset.hpp"

#include <fstream>
#include <json.hpp>

#include "mixnet/error.hpp"
#include "mixnet/trainer.hpp"

namespace mixnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t DatasetManifest::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].id == id) return i;
  throw DataError("no subject '" + id + "' in dataset");
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  json subjects = json::array();
  for (const auto& s : m.subjects)
    subjects.push_back({{"id", s.id}, {"modalities", s.modalities}, {"labels", s.labels}, {"role", s.role}});
  const json j = {{"format", "mixnet-dataset"}, {"version", 1}, {"n_classes", m.n_classes}, {"subjects", subjects}};
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset manifest " + path.string());
  DatasetManifest m;
  try {
    const json j = json::parse(is);
    if (j.at("format") != "mixnet-dataset") throw DataError(path.string() + " is not a dataset manifest");
    if (j.at("version") != 1) throw DataError("unsupported dataset manifest version");
    m.n_classes = j.at("n_classes").get<std::size_t>();
    for (const auto& s : j.at("subjects")) {
      SubjectEntry e;
      e.id = s.at("id").get<std::string>();
      e.modalities = s.at("modalities").get<std::vector<std::string>>();
      e.labels = s.at("labels").get<std::string>();
      e.role = s.value("role", std::string("train"));
      if (e.role != "train" && e.role != "test") throw DataError("subject " + e.id + ": role must be train or test");
      m.subjects.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DataError("bad dataset manifest " + path.string() + ": " + e.what());
  }
  if (m.n_classes < 2) throw DataError("dataset manifest: n_classes must be >= 2");
  m.root = path.parent_path();
  return m;
}

DatasetManifest generate_dataset(const fs::path& dir, std::size_t n_subjects, const SyntheticConfig& cfg,
                                 std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.n_classes = cfg.n_classes;
  m.root = dir;
  for (std::size_t i = 0; i < n_subjects; ++i) {
    const SyntheticSubject s = generate_synthetic(derive_seed(seed, i), cfg);
    SubjectEntry e;
    e.id = "subject" + std::to_string(i);
    for (std::size_t k = 0; k < s.modalities.size(); ++k) {
      const std::string name = e.id + "_m" + std::to_string(k) + ".json";
      write_volume(s.modalities[k], dir / name);
      e.modalities.push_back(name);
    }
    e.labels = e.id + "_labels.json";
    write_volume(s.labels, dir / e.labels);
    m.subjects.push_back(std::move(e));
  }
  write_manifest(m, dir / "dataset.json");
  return m;
}

Subject load_subject(const DatasetManifest& m, std::size_t index) {
  const SubjectEntry& e = m.subjects.at(index);
  Subject s;
  s.id = e.id;
  for (const auto& p : e.modalities) s.modalities.push_back(normalize(read_volume(m.root / p)));
  s.labels = read_label_volume(m.root / e.labels);
  for (std::uint8_t v : s.labels.data)
    if (v >= m.n_classes) throw DataError("subject " + e.id + ": label " + std::to_string(v) + " >= K");
  return s;
}

Subject make_subject(std::string id, const SyntheticSubject& syn) {
  Subject s;
  s.id = std::move(id);
  for (const auto& v : syn.modalities) s.modalities.push_back(normalize(v));
  s.labels = syn.labels;
  return s;
}

ProbVolume predict_volume(const MixNet& net, const ParamStore<float>& params, const Subject& subject, Plane plane,
                          std::size_t batch_size) {
  if (subject.modalities.size() != net.config().n_modalities)
    throw DataError("subject " + subject.id + " has " + std::to_string(subject.modalities.size()) +
                    " modalities, network expects " + std::to_string(net.config().n_modalities));
  const auto samples = slice_stack(subject.modalities, subject.labels, plane);
  const auto probs = predict_probabilities(net, params, samples, batch_size);
  ProbVolume p = assemble_probabilities(probs, plane, subject.labels.dims, subject.labels.spacing);
  p.plane = to_string(plane);
  return p;
}

}  // namespace mixnet
