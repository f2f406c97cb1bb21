#include "times2d/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <atomic>
#include <set>
#include <sstream>
#include <thread>

#include "times2d/checkpoint.hpp"
#include "times2d/spectral.hpp"

namespace times2d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path ensure_out(const RunConfig& c) {
  fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error("cannot create output directory " + c.out + ": " + ec.message());
  return out;
}

std::string checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? (fs::path(c.out) / "checkpoint.json").string() : c.checkpoint;
}

bool is_forecast(const std::string& task) { return task == "forecast" || task == "short-forecast"; }

std::size_t effective_stride(const RunConfig& c) {
  if (c.stride != 0) return c.stride;
  return c.task == "anomaly" || c.task == "analyze-periods" ? c.seq_len : 1;
}

// Same-shape reconstruction error averaged over channels, one score per time step.
std::vector<double> point_scores(const RowMatrix& pred, const RowMatrix& target) {
  std::vector<double> s(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index t = 0; t < pred.rows(); ++t) s[static_cast<std::size_t>(t)] = (pred.row(t) - target.row(t)).squaredNorm() / static_cast<double>(pred.cols());
  return s;
}

std::vector<double> window_scores(const TimesNet& model, const std::vector<WindowSample>& windows) {
  std::vector<double> scores;
  const auto preds = predict(model, windows);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto s = point_scores(preds[i], windows[i].target);
    scores.insert(scores.end(), s.begin(), s.end());
  }
  return scores;
}

// Mean CKA between the first and last block outputs over up to 64 samples.
std::optional<double> cka_first_last(const TimesNet& model, const std::vector<WindowSample>& windows) {
  if (windows.size() < 2 || model.config().layers < 2) return std::nullopt;
  const std::size_t n = std::min<std::size_t>(windows.size(), 64);
  ForwardTrace trace;
  predict_batch(model, make_batch(std::span(windows).first(n), model.config().task), nullptr, &trace);
  auto flat = [n](const Tensor& t) {
    const std::size_t per = t.numel() / n;
    return Eigen::MatrixXd(Eigen::Map<const RowMatrix>(t.values().data(), static_cast<Eigen::Index>(n),
                                                       static_cast<Eigen::Index>(per)));
  };
  try {
    return linear_cka(flat(trace.layer_outputs.front()), flat(trace.layer_outputs.back()));
  } catch (const Error&) {
    return std::nullopt;
  }
}

json report_to_json(const EvalReport& r, const RunConfig& c) {
  json j = {{"config", to_json(c)}, {"split", c.split}, {"samples", r.samples}, {"channels", r.channels},
            {"metrics", r.metrics}};
  if (c.task == "anomaly") j["threshold"] = r.threshold;
  return j;
}

TimesNet load_model_for(const RunConfig& c, const PreparedData& data) {
  TimesNet model = load_checkpoint(checkpoint_path(c));
  const ModelConfig want = model_config(c, data);
  const ModelConfig& have = model.config();
  if (want.channels != have.channels) {
    throw Error("channel count mismatch: checkpoint expects " + std::to_string(have.channels) + " channels, data has " +
                std::to_string(want.channels));
  }
  if (config_hash(want) != config_hash(have)) {
    const json a = config_to_json(have), b = config_to_json(want);
    std::string diff;
    for (const auto& [key, value] : a.items()) {
      if (b.at(key) != value) diff += " " + key + " (checkpoint " + value.dump() + ", run " + b.at(key).dump() + ")";
    }
    throw Error("incompatible checkpoint: config hash mismatch;" + diff);
  }
  return model;
}

void mask_from_file(std::vector<WindowSample>& windows, const RowMatrix& mask) {
  for (auto& w : windows) {
    const auto off = static_cast<Eigen::Index>(w.offset);
    w.mask = mask.middleRows(off, w.input.rows());
    w.target = w.input;
    w.input = w.input.cwiseProduct(w.mask);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

RunConfig task_defaults(const std::string& task) {
  RunConfig c;
  c.task = task;
  if (task == "forecast") return c;
  if (task == "short-forecast") {
    c.seq_len = 24;
    c.pred_len = 12;
    c.d_min = 16;
    c.d_max = 64;
    c.lr = 1e-3;
    c.loss = "smape";
    c.batch_size = 16;
  } else if (task == "impute") {
    c.k = 3;
    c.d_min = 64;
    c.d_max = 128;
    c.lr = 1e-3;
    c.batch_size = 16;
  } else if (task == "classify") {
    c.k = 3;
    c.d_max = 64;
    c.lr = 1e-3;
    c.loss = "cross-entropy";
    c.batch_size = 16;
    c.epochs = 30;
    c.train_split = 0.6;
    c.val_split = 0.2;
  } else if (task == "anomaly") {
    c.seq_len = 100;
    c.k = 3;
    c.layers = 3;
    c.d_max = 128;
    c.batch_size = 128;
    c.train_split = 0.6;
    c.val_split = 0.2;
    c.stride = 0;
  } else if (task == "analyze-periods") {
    c.k = 6;
    c.stride = 0;
  } else {
    throw Error("unknown task '" + task + "' (expected forecast, short-forecast, impute, classify, anomaly or analyze-periods)");
  }
  return c;
}

#define TIMES2D_RUN_FIELDS(X)                                                                                         \
  X(task) X(data) X(has_timestamp) X(out) X(checkpoint) X(mask) X(seq_len) X(pred_len) X(k) X(layers) X(d_min)       \
  X(d_max) X(branches) X(aggregation) X(layer_norm) X(mask_ratio) X(anomaly_ratio) X(season) X(lr) X(loss)           \
  X(batch_size) X(epochs) X(patience) X(seed) X(train_split) X(val_split) X(test_split) X(stride) X(split)

json to_json(const RunConfig& c) {
  json j;
#define X(field) j[#field] = c.field;
  TIMES2D_RUN_FIELDS(X)
#undef X
  return j;
}

void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw Error("config must be a JSON object with flat keys");
  static const std::set<std::string> known = {
#define X(field) #field,
      TIMES2D_RUN_FIELDS(X)
#undef X
  };
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error("unknown config key '" + key + "'");
  }
  try {
#define X(field) \
  if (j.contains(#field)) j.at(#field).get_to(c.field);
    TIMES2D_RUN_FIELDS(X)
#undef X
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
}

#undef TIMES2D_RUN_FIELDS

Task model_task(const std::string& task) {
  if (is_forecast(task)) return Task::Forecast;
  if (task == "impute") return Task::Impute;
  if (task == "classify") return Task::Classify;
  if (task == "anomaly") return Task::Reconstruct;
  throw Error("task '" + task + "' has no model");
}

const std::vector<WindowSample>& PreparedData::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw Error("unknown split '" + name + "' (expected train, val or test)");
}

PreparedData prepare_data(const RunConfig& c) {
  if (c.data.empty()) throw Error("no input data (use --data)");
  PreparedData d;
  d.series = load_csv(c.data, c.has_timestamp);
  const Task task = model_task(c.task);
  if (task == Task::Impute && !(c.mask_ratio > 0.0 && c.mask_ratio < 1.0)) {
    throw Error("mask ratio must lie in (0, 1)");
  }
  WindowSpec spec;
  spec.task = task;
  spec.seq_len = c.seq_len;
  spec.pred_len = task == Task::Forecast ? c.pred_len : 0;
  spec.splits = {c.train_split, c.val_split, c.test_split};
  spec.stride = effective_stride(c);
  for (auto& w : make_windows(d.series, spec)) {
    (w.split == Split::Train ? d.train : w.split == Split::Val ? d.val : d.test).push_back(std::move(w));
  }
  if (task == Task::Classify) {
    int top = -1;
    for (int l : d.series.labels) {
      if (l < 0) throw Error("class labels must be non-negative integers");
      top = std::max(top, l);
    }
    d.n_classes = static_cast<std::size_t>(top + 1);
    if (d.n_classes < 2) throw Error("classification needs at least two classes");
  }
  if (task == Task::Impute) {
    if (!c.mask.empty()) {
      const RowMatrix mask = load_mask_csv(c.mask, c.has_timestamp);
      if (mask.rows() != d.series.values.rows() || mask.cols() != d.series.values.cols()) {
        throw Error("mask file shape differs from the data");
      }
      mask_from_file(d.val, mask);
      mask_from_file(d.test, mask);
    } else {
      for (std::size_t i = 0; i < d.val.size(); ++i) d.val[i] = random_mask(d.val[i], c.mask_ratio, mix_seed(c.seed, 1, i));
      for (std::size_t i = 0; i < d.test.size(); ++i) d.test[i] = random_mask(d.test[i], c.mask_ratio, mix_seed(c.seed, 2, i));
    }
  }
  return d;
}

ModelConfig model_config(const RunConfig& c, const PreparedData& data) {
  ModelConfig m;
  m.task = model_task(c.task);
  m.seq_len = c.seq_len;
  m.pred_len = m.task == Task::Forecast ? c.pred_len : 0;
  m.channels = data.series.channels();
  m.n_classes = m.task == Task::Classify ? data.n_classes : 2;
  m.k = c.k;
  m.layers = c.layers;
  m.d_min = c.d_min;
  m.d_max = c.d_max;
  m.branches = c.branches;
  m.aggregation = aggregation_from_string(c.aggregation);
  m.layer_norm = c.layer_norm;
  m.seed = c.seed;
  return m;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_analyze_periods(const RunConfig& c) {
  if (c.data.empty()) throw Error("no input data (use --data)");
  const RawSeries series = load_csv(c.data, c.has_timestamp);
  if (series.length() < c.seq_len) {
    throw Error("series has " + std::to_string(series.length()) + " steps, shorter than the window length " +
                std::to_string(c.seq_len));
  }
  const fs::path out = ensure_out(c);
  const std::size_t stride = effective_stride(c);
  std::map<std::size_t, double> counts;
  double total = 0.0;
  std::string lines;
  std::size_t index = 0;
  for (std::size_t o = 0; o + c.seq_len <= series.length(); o += stride, ++index) {
    const PeriodSet ps = discover_periods(series.values.middleRows(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c.seq_len)), c.k);
    json top = json::array();
    const double peak = ps.entries.empty() ? 0.0 : ps.entries.front().amplitude;
    for (const auto& e : ps.entries) {
      top.push_back({{"frequency", e.frequency}, {"period", e.period}, {"amplitude", e.amplitude}});
      if (peak > 0.0 && e.amplitude > 1e-6 * peak) {
        counts[e.period] += 1.0;
        total += 1.0;
      }
    }
    lines += json{{"window", index}, {"offset", o}, {"top", top}}.dump() + "\n";
  }
  if (total == 0.0) throw Error("every window is constant; no periods to report");
  std::string csv = "period,density\n";
  for (const auto& [period, count] : counts) csv += std::to_string(period) + "," + num(count / total) + "\n";
  write_text(out / "periods.csv", csv);
  write_text(out / "periods.jsonl", lines);
  write_json(out / "config.json", to_json(c));
}

TrainOutcome cmd_train(const RunConfig& c) {
  const PreparedData data = prepare_data(c);
  TimesNet model(model_config(c, data));
  TrainConfig tc;
  tc.lr = c.lr;
  tc.batch_size = c.batch_size;
  tc.epochs = c.epochs;
  tc.patience = c.patience;
  tc.loss = loss_from_string(c.loss);
  tc.seed = c.seed;
  tc.mask_ratio = model.config().task == Task::Impute ? c.mask_ratio : 0.0;

  TrainOutcome outcome;
  outcome.result = train(model, data.train, data.val, tc);
  const fs::path out = ensure_out(c);
  save_checkpoint((out / "checkpoint.json").string(), model);

  std::string trace = "epoch,train_loss,val_loss\n";
  json epochs = json::array();
  for (const auto& r : outcome.result.trace) {
    trace += std::to_string(r.epoch) + "," + num(r.train_loss) + "," + num(r.val_loss) + "\n";
    epochs.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
  }
  write_text(out / "loss_trace.csv", trace);
  outcome.report = {{"config", to_json(c)},
                    {"model", config_to_json(model.config())},
                    {"d_model", model.d_model()},
                    {"parameter_count", model.parameter_count()},
                    {"windows", {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}}},
                    {"epochs_run", outcome.result.trace.size()},
                    {"best_epoch", outcome.result.best_epoch},
                    {"best_val_loss", outcome.result.best_val_loss},
                    {"trace", epochs}};
  write_json(out / "train_report.json", outcome.report);
  write_json(out / "config.json", to_json(c));
  return outcome;
}

EvalReport cmd_eval(const RunConfig& c) {
  const PreparedData data = prepare_data(c);
  const TimesNet model = load_model_for(c, data);
  const auto& windows = data.split(c.split);
  if (windows.empty()) throw Error("the " + c.split + " split has no windows");
  const Task task = model.config().task;

  EvalReport r;
  r.samples = windows.size();
  r.channels = data.series.channels();
  const LossKind kind = loss_from_string(c.loss);
  r.metrics["loss"] = evaluate_loss(model, windows, kind);
  const auto preds = predict(model, windows);

  switch (task) {
    case Task::Forecast: {
      Buffer pv, tv;
      double mase_sum = 0.0, owa_sum = 0.0;
      std::size_t scaled = 0;
      for (std::size_t i = 0; i < windows.size(); ++i) {
        pv.insert(pv.end(), preds[i].data(), preds[i].data() + preds[i].size());
        tv.insert(tv.end(), windows[i].target.data(), windows[i].target.data() + windows[i].target.size());
        for (Eigen::Index ch = 0; ch < preds[i].cols(); ++ch) {
          const Eigen::VectorXd pcol = preds[i].col(ch), tcol = windows[i].target.col(ch), icol = windows[i].input.col(ch);
          const std::span<const double> pc(pcol.data(), static_cast<std::size_t>(pcol.size()));
          const std::span<const double> tc(tcol.data(), static_cast<std::size_t>(tcol.size()));
          const std::span<const double> ic(icol.data(), static_cast<std::size_t>(icol.size()));
          try {
            const double m = mase(pc, tc, ic, c.season);
            const double o = owa(pc, tc, ic, c.season);
            mase_sum += m;
            owa_sum += o;
            ++scaled;
          } catch (const Error&) {
            // degenerate in-sample scale or exact reference: no MASE/OWA for this series
          }
        }
      }
      const Eigen::Map<const Eigen::ArrayXd> pa(pv.data(), static_cast<Eigen::Index>(pv.size()));
      const Eigen::Map<const Eigen::ArrayXd> ta(tv.data(), static_cast<Eigen::Index>(tv.size()));
      r.metrics["mse"] = mse(pa, ta);
      r.metrics["mae"] = mae(pa, ta);
      r.metrics["smape"] = smape(pa, ta);
      if (!(ta == 0.0).any()) r.metrics["mape"] = mape(pa, ta);
      if (scaled) {
        r.metrics["mase"] = mase_sum / static_cast<double>(scaled);
        r.metrics["owa"] = owa_sum / static_cast<double>(scaled);
      }
      break;
    }
    case Task::Impute: {
      double se = 0.0, ae = 0.0, n = 0.0;
      for (std::size_t i = 0; i < windows.size(); ++i) {
        const RowMatrix missing = (1.0 - windows[i].mask.array()).matrix();
        const RowMatrix diff = (preds[i] - windows[i].target).cwiseProduct(missing);
        se += diff.squaredNorm();
        ae += diff.cwiseAbs().sum();
        n += missing.sum();
      }
      if (n == 0.0) throw Error("empty mask selection: no missing points to score");
      r.metrics["mse"] = se / n;
      r.metrics["mae"] = ae / n;
      r.metrics["missing_points"] = n;
      break;
    }
    case Task::Classify: {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < windows.size(); ++i) {
        Eigen::Index best = 0;
        preds[i].row(0).maxCoeff(&best);
        correct += static_cast<int>(best) == windows[i].label;
      }
      r.metrics["accuracy"] = static_cast<double>(correct) / static_cast<double>(windows.size());
      break;
    }
    case Task::Reconstruct: {
      std::vector<double> test_scores;
      double se = 0.0, n = 0.0;
      for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto s = point_scores(preds[i], windows[i].target);
        test_scores.insert(test_scores.end(), s.begin(), s.end());
        se += (preds[i] - windows[i].target).squaredNorm();
        n += static_cast<double>(preds[i].size());
      }
      r.metrics["mse"] = se / n;
      if (data.series.labels.size() == data.series.length()) {
        std::vector<bool> labels;
        for (const auto& w : windows)
          for (Eigen::Index t = 0; t < w.input.rows(); ++t) labels.push_back(data.series.labels[w.offset + static_cast<std::size_t>(t)] != 0);
        const auto train_scores = window_scores(model, data.train);
        const EvalReport det = anomaly_eval(train_scores, test_scores, labels, c.anomaly_ratio);
        r.threshold = det.threshold;
        for (const auto& [key, value] : det.metrics) r.metrics[key] = value;
      }
      break;
    }
  }
  if (auto cka = cka_first_last(model, windows)) r.metrics["cka_first_last"] = *cka;

  const fs::path out = ensure_out(c);
  write_json(out / "eval_report.json", report_to_json(r, c));
  return r;
}

void cmd_infer(const RunConfig& c) {
  const PreparedData data = prepare_data(c);
  const TimesNet model = load_model_for(c, data);
  const auto& windows = data.split(c.split);
  if (windows.empty()) throw Error("the " + c.split + " split has no windows");
  const auto preds = predict(model, windows);
  const Task task = model.config().task;

  std::ostringstream csv;
  auto channel_header = [&] {
    for (std::size_t ch = 0; ch < data.series.channels(); ++ch) csv << "," << data.series.channel_names[ch];
  };
  switch (task) {
    case Task::Classify:
      csv << "window,offset,predicted";
      for (std::size_t j = 0; j < model.config().n_classes; ++j) csv << ",logit_" << j;
      csv << "\n";
      for (std::size_t i = 0; i < windows.size(); ++i) {
        Eigen::Index best = 0;
        preds[i].row(0).maxCoeff(&best);
        csv << i << "," << windows[i].offset << "," << best;
        for (Eigen::Index j = 0; j < preds[i].cols(); ++j) csv << "," << num(preds[i](0, j));
        csv << "\n";
      }
      break;
    case Task::Reconstruct: {
      const auto train_scores = window_scores(model, data.train);
      const double threshold = quantile(train_scores, 1.0 - c.anomaly_ratio);
      csv << "window,time";
      channel_header();
      csv << ",score,anomaly\n";
      for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto s = point_scores(preds[i], windows[i].target);
        for (Eigen::Index t = 0; t < preds[i].rows(); ++t) {
          csv << i << "," << windows[i].offset + static_cast<std::size_t>(t);
          for (Eigen::Index ch = 0; ch < preds[i].cols(); ++ch) csv << "," << num(preds[i](t, ch));
          csv << "," << num(s[static_cast<std::size_t>(t)]) << "," << (s[static_cast<std::size_t>(t)] > threshold) << "\n";
        }
      }
      break;
    }
    default: {
      const std::size_t shift = task == Task::Forecast ? c.seq_len : 0;
      csv << "window,time";
      channel_header();
      csv << "\n";
      for (std::size_t i = 0; i < windows.size(); ++i) {
        for (Eigen::Index t = 0; t < preds[i].rows(); ++t) {
          csv << i << "," << windows[i].offset + shift + static_cast<std::size_t>(t);
          for (Eigen::Index ch = 0; ch < preds[i].cols(); ++ch) csv << "," << num(preds[i](t, ch));
          csv << "\n";
        }
      }
    }
  }
  const fs::path out = ensure_out(c);
  write_text(out / "predictions.csv", csv.str());
  write_json(out / "infer_config.json", to_json(c));
}

void cmd_sweep(const RunConfig& c, const std::string& sweep) {
  const auto eq = sweep.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == sweep.size()) {
    throw Error("sweep must look like key=v1,v2,...; got '" + sweep + "'");
  }
  std::string key = sweep.substr(0, eq);
  std::replace(key.begin(), key.end(), '-', '_');
  std::vector<std::string> values;
  std::stringstream ss(sweep.substr(eq + 1));
  for (std::string v; std::getline(ss, v, ',');) {
    if (v.empty()) throw Error("sweep: empty value in '" + sweep + "'");
    values.push_back(v);
  }

  std::vector<RunConfig> runs;
  for (const auto& v : values) {
    RunConfig rc = c;
    json value;
    try {
      value = json::parse(v);
    } catch (const json::exception&) {
      value = v;
    }
    apply_json(rc, json{{key, value}});
    rc.out = (fs::path(c.out) / (key + "=" + v)).string();
    rc.checkpoint.clear();
    runs.push_back(std::move(rc));
  }

  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TIMES2D_THREADS")) {
    try {
      workers = std::max<std::size_t>(1, std::stoul(env));
    } catch (const std::exception&) {
      throw Error(std::string("TIMES2D_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  workers = std::min(workers, runs.size());

  std::vector<EvalReport> reports(runs.size());
  std::vector<double> best_val(runs.size());
  std::vector<std::string> errors(runs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < runs.size();) {
      try {
        best_val[i] = cmd_train(runs[i]).result.best_val_loss;
        reports[i] = cmd_eval(runs[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!errors[i].empty()) throw Error("sweep run " + key + "=" + values[i] + " failed: " + errors[i]);
  }

  std::set<std::string> names;
  for (const auto& r : reports)
    for (const auto& [name, value] : r.metrics) names.insert(name);
  std::string csv = key + ",best_val_loss";
  for (const auto& n : names) csv += "," + n;
  csv += "\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    csv += values[i] + "," + num(best_val[i]);
    for (const auto& n : names) {
      const auto it = reports[i].metrics.find(n);
      csv += "," + (it == reports[i].metrics.end() ? std::string() : num(it->second));
    }
    csv += "\n";
  }
  write_text(ensure_out(c) / "sweep.csv", csv);
}

// ---------------------------------------------------------------------------
// Entry point

int run_cli(int argc, char** argv) {
  CLI::App app{"TimesNet time-series toolkit: period analysis, training, evaluation and inference"};
  app.require_subcommand(1);

  RunConfig flags;
  std::string config_path, sweep;
  std::vector<std::pair<CLI::Option*, std::string>> bound;

  auto add_common = [&](CLI::App* sub) {
    auto opt = [&](const std::string& name, auto& field, const std::string& help) {
      std::string key = name.substr(2);
      std::replace(key.begin(), key.end(), '-', '_');
      bound.emplace_back(sub->add_option(name, field, help), key);
    };
    opt("--task", flags.task, "forecast | short-forecast | impute | classify | anomaly");
    opt("--data", flags.data, "input CSV (header row required)");
    opt("--out", flags.out, "output directory");
    opt("--checkpoint", flags.checkpoint, "checkpoint path (default <out>/checkpoint.json)");
    opt("--mask", flags.mask, "0/1 mask CSV for imputation eval/infer");
    opt("--seq-len", flags.seq_len, "input window length T");
    opt("--pred-len", flags.pred_len, "forecast horizon H");
    opt("--k", flags.k, "number of periods per block");
    opt("--layers", flags.layers, "number of TimesBlocks");
    opt("--d-min", flags.d_min, "lower bound of d_model");
    opt("--d-max", flags.d_max, "upper bound of d_model");
    opt("--branches", flags.branches, "inception branches m");
    opt("--aggregation", flags.aggregation, "softmax | direct-sum | no-softmax");
    opt("--mask-ratio", flags.mask_ratio, "imputation mask ratio");
    opt("--anomaly-ratio", flags.anomaly_ratio, "expected anomaly ratio r");
    opt("--season", flags.season, "seasonality m for MASE/OWA");
    opt("--lr", flags.lr, "Adam learning rate");
    opt("--loss", flags.loss, "mse | smape | cross-entropy");
    opt("--batch-size", flags.batch_size, "mini-batch size");
    opt("--epochs", flags.epochs, "maximum epochs");
    opt("--patience", flags.patience, "early-stopping patience");
    opt("--seed", flags.seed, "random seed");
    opt("--train-split", flags.train_split, "train fraction");
    opt("--val-split", flags.val_split, "validation fraction");
    opt("--test-split", flags.test_split, "test fraction");
    opt("--stride", flags.stride, "window stride (0 = task default)");
    opt("--split", flags.split, "split scored by eval / predicted by infer");
    bound.emplace_back(sub->add_flag("--has-timestamp", flags.has_timestamp, "first CSV column is a timestamp"),
                       "has_timestamp");
    bound.emplace_back(sub->add_flag("--layer-norm,!--no-layer-norm", flags.layer_norm, "layer norm after each block"),
                       "layer_norm");
    sub->add_option("--config", config_path, "JSON config with flat keys; flags override it");
  };

  CLI::App* analyze = app.add_subcommand("analyze-periods", "period-length density over sliding windows");
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on one split");
  CLI::App* infer_cmd = app.add_subcommand("infer", "write predictions of a checkpoint");
  for (CLI::App* sub : {analyze, train_cmd, eval_cmd, infer_cmd}) add_common(sub);
  train_cmd->add_option("--sweep", sweep, "key=v1,v2,...: one train+eval run per value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const json flag_values = to_json(flags);
    json explicit_flags = json::object();
    for (const auto& [option, key] : bound) {
      if (option->count() > 0) explicit_flags[key] = flag_values.at(key);
    }
    if (explicit_flags.contains("task") && explicit_flags["task"] == "analyze-periods") {
      throw Error("use the analyze-periods subcommand instead of --task analyze-periods");
    }

    json file = json::object();
    if (config_path.empty() && (eval_cmd->parsed() || infer_cmd->parsed())) {
      // eval/infer reuse the training run's config when it sits next to the checkpoint.
      const std::string ckpt = explicit_flags.value("checkpoint", std::string());
      const fs::path dir = ckpt.empty() ? fs::path(explicit_flags.value("out", std::string("out"))) : fs::path(ckpt).parent_path();
      if (fs::exists(dir / "config.json")) config_path = (dir / "config.json").string();
    }
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw Error("cannot read config " + config_path);
      try {
        in >> file;
      } catch (const json::exception& e) {
        throw Error("config " + config_path + " is not valid JSON: " + e.what());
      }
      if (!file.is_object()) throw Error("config " + config_path + " must be a JSON object");
    }

    std::string task = analyze->parsed() ? "analyze-periods" : "forecast";
    if (!analyze->parsed()) {
      if (file.contains("task")) task = file["task"].get<std::string>();
      if (explicit_flags.contains("task")) task = explicit_flags["task"].get<std::string>();
    }
    RunConfig config = task_defaults(task);
    if (analyze->parsed()) file.erase("task");
    apply_json(config, file);
    apply_json(config, explicit_flags);
    config.task = task;
    if (eval_cmd->parsed() || infer_cmd->parsed()) {
      // Outputs go where asked, not where the training config pointed.
      if (explicit_flags.contains("out")) config.out = explicit_flags["out"].get<std::string>();
    }

    if (analyze->parsed()) {
      cmd_analyze_periods(config);
    } else if (train_cmd->parsed()) {
      if (!sweep.empty()) {
        cmd_sweep(config, sweep);
      } else {
        const auto outcome = cmd_train(config);
        std::cout << "trained " << outcome.result.trace.size() << " epochs; best val loss "
                  << num(outcome.result.best_val_loss) << " at epoch " << outcome.result.best_epoch << "\n";
      }
    } else if (eval_cmd->parsed()) {
      const EvalReport r = cmd_eval(config);
      for (const auto& [name, value] : r.metrics) std::cout << name << " " << num(value) << "\n";
    } else {
      cmd_infer(config);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace times2d
