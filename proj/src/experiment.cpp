#include "stseg/experiment.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace stseg {

namespace fs = std::filesystem;

std::vector<ExperimentRow> experiment_rows() {
  std::vector<ExperimentRow> rows;
  rows.push_back({"frame_by_frame", Placement::frame_by_frame, TemporalKind::pointwise_tn, false});
  const std::pair<TemporalKind, std::string> kinds[] = {
      {TemporalKind::pointwise_tn, "pointwise"},
      {TemporalKind::tn_2dhw, "2dhw"},
      {TemporalKind::convlstm, "convlstm"},
  };
  const std::pair<Placement, std::string> places[] = {
      {Placement::bottleneck, "bottleneck"},
      {Placement::skip, "skip"},
      {Placement::encoder, "encoder"},
  };
  for (const auto& [kind, kname] : kinds)
    for (const auto& [pl, pname] : places)
      rows.push_back({kname + "_" + pname, pl, kind, false});
  rows.push_back({"control_repeat_frame", Placement::encoder, TemporalKind::convlstm, true});
  return rows;
}

double ExperimentResult::mean_miou(const std::string& row) const {
  double sum = 0;
  int n = 0;
  for (const auto& c : cells)
    if (c.row == row && c.ok) {
      sum += c.miou;
      ++n;
    }
  return n ? sum / n : 0.0;
}

double ExperimentResult::std_miou(const std::string& row) const {
  const double mu = mean_miou(row);
  double sq = 0;
  int n = 0;
  for (const auto& c : cells)
    if (c.row == row && c.ok) {
      sq += (c.miou - mu) * (c.miou - mu);
      ++n;
    }
  return n > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
}

bool ExperimentResult::row_ok(const std::string& row) const {
  int n = 0;
  for (const auto& c : cells)
    if (c.row == row) {
      if (!c.ok) return false;
      ++n;
    }
  return n > 0;
}

std::string ExperimentResult::to_markdown() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| method | mIoU |\n|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.name << " | ";
    if (row_ok(r.name))
      os << mean_miou(r.name) << " ± " << std_miou(r.name);
    else
      os << "failed";
    os << " |\n";
  }
  return os.str();
}

std::string ExperimentResult::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "row,seed,miou,train_acc,ok,error\n";
  for (const auto& c : cells) {
    std::string err = c.error;
    for (auto& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    os << c.row << "," << c.seed << "," << c.miou << "," << c.train_acc << "," << (c.ok ? 1 : 0)
       << "," << err << "\n";
  }
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  SynthConfig train_synth = cfg.synth;
  SynthConfig val_synth = cfg.synth;
  val_synth.seed = cfg.synth.seed + 1;
  const auto train_set = synth_generate(train_synth, cfg.n_train);
  const auto val_set = synth_generate(val_synth, cfg.n_val);

  ExperimentResult result;
  result.rows = experiment_rows();
  const int n_rows = static_cast<int>(result.rows.size());
  result.cells.assign(static_cast<std::size_t>(n_rows) * cfg.n_seeds, CellOutcome{});

  auto run_cell = [&](int row_idx, int seed_idx) {
    const ExperimentRow& row = result.rows[static_cast<std::size_t>(row_idx)];
    CellOutcome& cell =
        result.cells[static_cast<std::size_t>(row_idx) * cfg.n_seeds + seed_idx];
    cell.row = row.name;
    cell.seed = cfg.seed0 + static_cast<std::uint64_t>(seed_idx);
    try {
      ModelConfig mc = cfg.model_base;
      mc.placement = row.placement;
      mc.temporal_kind = row.kind;
      SegModel<float> model = build_model<float>(mc, cell.seed * 7919 + row_idx);

      TrainConfig tc = cfg.train_base;
      tc.seed = cell.seed;
      tc.repeat_last_frame = row.control;
      tc.out_dir.clear();
      train_model(model, train_set, tc);

      cell.miou = evaluate_model(model, val_set, row.control).miou;
      cell.train_acc = training_pixel_accuracy(model, train_set, row.control);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  };

  const int total = n_rows * cfg.n_seeds;
  if (cfg.parallel <= 1) {
    for (int i = 0; i < total; ++i) run_cell(i / cfg.n_seeds, i % cfg.n_seeds);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= total) return;
        run_cell(i / cfg.n_seeds, i % cfg.n_seeds);
      }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min(cfg.parallel, total);
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream md(fs::path(cfg.out_dir) / "table.md");
    md << result.to_markdown();
    std::ofstream csv(fs::path(cfg.out_dir) / "table.csv");
    csv << result.to_csv();
  }
  return result;
}

}  // namespace stseg
