#pragma once

// Command implementations behind the `times2d` executable.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "times2d/data.hpp"
#include "times2d/metrics.hpp"
#include "times2d/model.hpp"
#include "times2d/training.hpp"

namespace times2d {

/// Everything a command needs. Field names double as the flat keys of the
/// JSON config file.
struct RunConfig {
  std::string task = "forecast";  // forecast | short-forecast | impute | classify | anomaly
  std::string data;
  bool has_timestamp = false;
  std::string out = "out";
  std::string checkpoint;  // eval/infer; defaults to <out>/checkpoint.json
  std::string mask;        // infer/eval for impute: optional 0/1 mask CSV

  std::size_t seq_len = 96;
  std::size_t pred_len = 96;
  std::size_t k = 5;
  std::size_t layers = 2;
  std::size_t d_min = 32;
  std::size_t d_max = 512;
  std::size_t branches = 3;
  std::string aggregation = "softmax";
  bool layer_norm = true;

  double mask_ratio = 0.375;
  double anomaly_ratio = 0.01;
  std::size_t season = 1;  // m for MASE / OWA

  double lr = 1e-4;
  std::string loss = "mse";
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 2024;

  double train_split = 0.7;
  double val_split = 0.1;
  double test_split = 0.2;
  std::size_t stride = 1;
  std::string split = "test";  // split scored by eval / predicted by infer
};

/// Per-task defaults for the model and training fields.
RunConfig task_defaults(const std::string& task);

nlohmann::json to_json(const RunConfig& c);
/// Overwrites the fields present in `j`; unknown keys are an error.
void apply_json(RunConfig& c, const nlohmann::json& j);

Task model_task(const std::string& task);

/// Inputs loaded and windowed per the config.
struct PreparedData {
  RawSeries series;
  std::vector<WindowSample> train, val, test;
  std::size_t n_classes = 0;
  const std::vector<WindowSample>& split(const std::string& name) const;
};

PreparedData prepare_data(const RunConfig& c);
ModelConfig model_config(const RunConfig& c, const PreparedData& data);

struct TrainOutcome {
  TrainResult result;
  nlohmann::json report;
};

/// Period-density CSV plus per-window JSON lines in `out`.
void cmd_analyze_periods(const RunConfig& c);
/// Trains, writes checkpoint.json, loss_trace.csv, train_report.json and config.json.
TrainOutcome cmd_train(const RunConfig& c);
/// Scores the checkpoint on one split; writes eval_report.json.
EvalReport cmd_eval(const RunConfig& c);
/// Writes predictions.csv for one split.
void cmd_infer(const RunConfig& c);
/// Trains and evaluates once per value of `key`; writes <out>/<key>=<v>/ and sweep.csv.
void cmd_sweep(const RunConfig& c, const std::string& sweep);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace times2d
