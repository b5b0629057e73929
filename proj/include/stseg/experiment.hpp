#pragma once

#include <string>
#include <vector>

#include "stseg/trainer.hpp"

namespace stseg {

struct ExperimentRow {
  std::string name;
  Placement placement = Placement::frame_by_frame;
  TemporalKind kind = TemporalKind::pointwise_tn;
  bool control = false;  // feed frame T repeated T times (train and eval)
};

// The Table-1 style matrix: frame-by-frame, every placement x temporal kind,
// plus the repeated-current-frame negative control.
std::vector<ExperimentRow> experiment_rows();

struct ExperimentConfig {
  SynthConfig synth;        // synth.seed seeds the train split; val uses seed+1
  ModelConfig model_base;   // placement/kind overridden per row
  TrainConfig train_base;   // seed overridden per run
  int n_train = 200, n_val = 40;
  int n_seeds = 3;
  std::uint64_t seed0 = 1;  // run seeds are seed0, seed0+1, ...
  int parallel = 1;
  std::string out_dir;      // empty: nothing written
};

struct CellOutcome {
  std::string row;
  std::uint64_t seed = 0;
  double miou = 0;
  double train_acc = 0;
  bool ok = false;
  std::string error;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  std::vector<CellOutcome> cells;  // rows x seeds, row-major

  double mean_miou(const std::string& row) const;
  double std_miou(const std::string& row) const;
  bool row_ok(const std::string& row) const;
  std::string to_markdown() const;
  std::string to_csv() const;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace stseg
