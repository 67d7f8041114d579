#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transtailor/cli/config.hpp"

namespace transtailor::cli {

// One line of history.jsonl.
struct HistoryRecord {
  std::string method;
  int iteration = 0;
  std::uint64_t flops = 0;
  double flops_reduction = 0.0;
  double val_accuracy = 0.0;
  bool accepted = true;
  double wall_seconds = 0.0;
  std::string checkpoint;  // relative to the run directory
};

nlohmann::json to_json(const HistoryRecord& r);
HistoryRecord history_record_from_json(const nlohmann::json& j);
std::vector<HistoryRecord> read_history(const std::filesystem::path& path);

struct PretrainResult {
  std::filesystem::path checkpoint;
  double val_accuracy = 0.0;
};

// Trains VGG-mini on the source dataset. Writes model.ttm, model.json
// (manifest plus normalization and split metadata), pretrain_log.jsonl and
// config.json under cfg.out.
PretrainResult cmd_pretrain(const RunConfig& cfg, std::ostream& log);

struct TailorResult {
  std::vector<HistoryRecord> history;
  HistoryRecord final;
  std::string stop_reason;
};

// Runs cfg.method on the target task starting from cfg.pretrained. Writes
// config.json, history.jsonl, summary.csv, result.json, final.ttm/.json and
// checkpoints/iter_NNN.ttm/.json under cfg.out.
TailorResult cmd_tailor(const RunConfig& cfg, std::ostream& log);

struct LayerPruning {
  int conv_index = 0;
  int original = 0;
  int final = 0;
};

struct RunSummary {
  std::string run;  // directory name
  std::string method;
  std::string target;
  std::uint64_t seed = 0;
  std::vector<HistoryRecord> history;
  std::vector<LayerPruning> layers;
};

struct Report {
  std::vector<RunSummary> runs;
};

// Reads run directories and writes accuracy_vs_flops.csv,
// pruned_filters.csv (per run and conv layer) and
// pruned_filters_by_target.csv (mean per method, target and conv layer)
// under out_dir.
Report cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                  const std::filesystem::path& out_dir);

struct VerifyOptions {
  int gradient_trials = 100;
  int equivalence_trials = 50;
  std::vector<std::uint64_t> oracle_seeds{0, 1, 2, 3, 4};
  std::uint64_t seed = 0;
  // Op whose backward is deliberately corrupted (negative control).
  std::string fault_op;
};

// Prints one line per check with the measured value. True when all pass.
bool cmd_verify(const VerifyOptions& options, std::ostream& out);

}  // namespace transtailor::cli
