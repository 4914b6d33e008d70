#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mit/checkpoint.hpp"
#include "mit/model.hpp"

namespace mit {

struct StepRecord {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  double encoder = 0.0;
  double decoder = 0.0;
  double contrastive = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_miou;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

AdamWSettings optimizer_settings(const Config& cfg);

/// Fresh training state: parameters from cfg.seed, empty optimizer, epoch 0.
Checkpoint initial_state(const Config& cfg, const std::vector<std::string>& class_names);

class Trainer {
 public:
  /// `train` must outlive the trainer; `val` may be null.
  Trainer(Config cfg, const Dataset& train, const Dataset* val = nullptr);

  /// Runs one epoch on `state`, appending to `log`.
  void run_epoch(Checkpoint& state, TrainLog& log) const;

  /// Trains until state.epoch == target_epochs. `on_epoch` runs after every
  /// completed epoch (used for periodic checkpoints and progress output).
  void train(Checkpoint& state, std::uint64_t target_epochs, TrainLog& log,
             const std::function<void(const Checkpoint&, const EpochRecord&)>& on_epoch = {}) const;

  /// Where a non-finite batch is described before the run aborts.
  void set_dump_path(std::filesystem::path p) { dump_path_ = std::move(p); }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  const Dataset* train_;
  const Dataset* val_;
  std::vector<PreparedScene> prepared_;
  std::optional<std::filesystem::path> dump_path_;
};

/// Hash of the named tensors' bytes (FNV-1a), used to prove a subset of
/// parameters stayed untouched.
std::uint64_t parameter_hash(const ParameterStore& params, const std::function<bool(const std::string&)>& select);

void write_step_log(const TrainLog& log, const std::filesystem::path& path);
void write_epoch_log(const TrainLog& log, const std::filesystem::path& path);

}  // namespace mit
