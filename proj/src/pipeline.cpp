#include "mixnet/pipeline.hpp"

#include <fstream>

#include "mixnet/error.hpp"

namespace mixnet {

namespace fs = std::filesystem;

std::vector<Sample> training_slices(const DatasetManifest& m, const RunConfig& cfg) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < m.subjects.size(); ++i) {
    const SubjectEntry& e = m.subjects[i];
    if (e.role != "train" || e.id == cfg.holdout) continue;
    const Subject s = load_subject(m, i);
    auto slices = slice_stack(s.modalities, s.labels, cfg.plane);
    std::move(slices.begin(), slices.end(), std::back_inserter(out));
  }
  if (out.empty()) throw DataError("no training subjects left after the holdout");
  return out;
}

TrainOutcome train_plane(const DatasetManifest& m, const RunConfig& cfg, const fs::path& out_dir,
                         const std::optional<Checkpoint>& resume, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (cfg.net.n_classes != m.n_classes)
    throw DataError("network has " + std::to_string(cfg.net.n_classes) + " classes, dataset has " +
                    std::to_string(m.n_classes));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream os(out_dir / "config.json");
    os << to_json(cfg).dump(2) << '\n';
  }

  const std::vector<Sample> train = training_slices(m, cfg);
  std::vector<Sample> validation;
  if (!cfg.holdout.empty()) {
    const Subject h = load_subject(m, m.index_of(cfg.holdout));
    validation = slice_stack(h.modalities, h.labels, cfg.plane);
  }

  if (resume && (resume->seed != cfg.seed || !(MixNet(resume->net).manifest() == MixNet(cfg.net).manifest())))
    throw ConfigError("resume checkpoint was written by a run with a different seed or network");
  const MixNet net(cfg.net);
  Trainer trainer = resume ? Trainer(net, *resume) : Trainer(net, cfg.optim, cfg.seed);
  const aug::ExpandedView view(train, cfg.augment, derive_seed(cfg.seed, 2));

  const fs::path log_path = out_dir / "log.csv";
  const bool append = resume.has_value() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (!append) log << csv_header(cfg.net.n_classes) << '\n';

  TrainOutcome outcome;
  while (trainer.epoch() < trainer.config().epochs) {
    EpochLog e = trainer.run_epoch(view, validation.empty() ? nullptr : &validation);
    log << csv_row(e) << '\n' << std::flush;
    save_checkpoint(trainer.checkpoint(to_string(cfg.plane)), out_dir / "checkpoint.bin");
    if (on_epoch) on_epoch(e);
    outcome.log.push_back(std::move(e));
  }
  outcome.checkpoint = trainer.checkpoint(to_string(cfg.plane));
  if (outcome.log.empty()) save_checkpoint(outcome.checkpoint, out_dir / "checkpoint.bin");
  return outcome;
}

}  // namespace mixnet
