#include "times2d/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "times2d/timesblock.hpp"

namespace times2d {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string cell_ref(std::size_t row, std::size_t col) {
  return "(row " + std::to_string(row) + ", column " + std::to_string(col) + ")";
}

double parse_number(const std::string& cell, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (!cell.empty() && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    throw Error("non-numeric cell '" + cell + "' at " + cell_ref(row, col));
  }
  if (!std::isfinite(v)) throw Error("NaN or infinite value at " + cell_ref(row, col));
  return v;
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV

RawSeries parse_csv(std::istream& in, bool has_timestamp_column) {
  std::string line;
  if (!std::getline(in, line)) throw Error("CSV input is empty; a header row is required");
  const auto header = split_row(line);
  const std::size_t first_value = has_timestamp_column ? 1 : 0;
  if (header.size() <= first_value) throw Error("CSV header has no value columns");

  std::ptrdiff_t label_col = -1;
  RawSeries series;
  for (std::size_t c = first_value; c < header.size(); ++c) {
    if (header[c] == "label") {
      label_col = static_cast<std::ptrdiff_t>(c);
    } else {
      series.channel_names.push_back(header[c]);
    }
  }
  if (series.channel_names.empty()) throw Error("CSV has no value columns besides 'label'");

  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw Error("ragged CSV: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                  " cells, header has " + std::to_string(header.size()));
    }
    if (has_timestamp_column) series.timestamps.push_back(cells[0]);
    for (std::size_t c = first_value; c < cells.size(); ++c) {
      const double v = parse_number(cells[c], row, c + 1);
      if (static_cast<std::ptrdiff_t>(c) == label_col) {
        series.labels.push_back(static_cast<int>(std::lround(v)));
      } else {
        values.push_back(v);
      }
    }
  }
  if (row == 0) throw Error("CSV has a header but no data rows");
  const auto C = static_cast<Eigen::Index>(series.channel_names.size());
  series.values = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(row), C);
  return series;
}

RawSeries load_csv(const std::string& path, bool has_timestamp_column) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open data file '" + path + "'");
  try {
    return parse_csv(in, has_timestamp_column);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

void write_csv(const std::string& path, const RawSeries& series) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << std::setprecision(17);
  const bool ts = !series.timestamps.empty();
  const bool lab = !series.labels.empty();
  if (ts) out << "timestamp,";
  for (std::size_t c = 0; c < series.channels(); ++c) {
    const std::string name = c < series.channel_names.size() ? series.channel_names[c] : "ch" + std::to_string(c);
    out << (c ? "," : "") << name;
  }
  if (lab) out << ",label";
  out << '\n';
  for (std::size_t t = 0; t < series.length(); ++t) {
    if (ts) out << series.timestamps[t] << ',';
    for (std::size_t c = 0; c < series.channels(); ++c)
      out << (c ? "," : "") << series.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
    if (lab) out << ',' << series.labels[t];
    out << '\n';
  }
}

RowMatrix load_mask_csv(const std::string& path, bool has_timestamp_column) {
  RawSeries m = load_csv(path, has_timestamp_column);
  for (Eigen::Index i = 0; i < m.values.size(); ++i) {
    const double v = m.values.data()[i];
    if (v != 0.0 && v != 1.0) throw Error(path + ": mask entries must be 0 or 1");
  }
  return m.values;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

// ---------------------------------------------------------------------------
// Windows

std::vector<std::pair<std::size_t, std::size_t>> split_bounds(std::size_t length, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw Error("split fractions must be non-negative and sum to 1");
  }
  auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(length) * f.train));
  auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(length) * f.val));
  const std::size_t rest = length - n_train - n_val;
  std::size_t n_test = rest;
  if (f.test == 0.0) {
    // Rounding leftovers stay with the last non-empty split.
    n_test = 0;
    (f.val > 0.0 ? n_val : n_train) += rest;
  }
  return {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, n_train + n_val + n_test}};
}

std::vector<WindowSample> make_windows(const RawSeries& series, const WindowSpec& spec) {
  if (spec.seq_len == 0) throw Error("make_windows: seq_len must be >= 1");
  if (spec.stride == 0) throw Error("make_windows: stride must be >= 1");
  if (spec.task == Task::Classify && series.labels.size() != series.length()) {
    throw Error("make_windows: classification needs a 'label' column");
  }
  const std::size_t horizon = spec.task == Task::Forecast ? spec.pred_len : 0;
  const std::size_t need = spec.seq_len + horizon;
  const auto T = static_cast<Eigen::Index>(spec.seq_len);
  const auto bounds = split_bounds(series.length(), spec.splits);
  const double fractions[3] = {spec.splits.train, spec.splits.val, spec.splits.test};
  const Split tags[3] = {Split::Train, Split::Val, Split::Test};

  std::vector<WindowSample> out;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto [begin, end] = bounds[s];
    if (fractions[s] == 0.0 && end == begin) continue;
    if (end - begin < need) {
      throw Error("make_windows: " + to_string(tags[s]) + " split has " + std::to_string(end - begin) +
                  " steps, a window needs " + std::to_string(need));
    }
    for (std::size_t o = begin; o + need <= end; o += spec.stride) {
      WindowSample w;
      w.split = tags[s];
      w.offset = o;
      const auto off = static_cast<Eigen::Index>(o);
      w.input = series.values.middleRows(off, T);
      switch (spec.task) {
        case Task::Forecast:
          w.target = series.values.middleRows(off + T, static_cast<Eigen::Index>(horizon));
          break;
        case Task::Impute:
          w.target = w.input;
          w.mask = RowMatrix::Ones(w.input.rows(), w.input.cols());
          break;
        case Task::Reconstruct:
          w.target = w.input;
          break;
        case Task::Classify: {
          const auto first = series.labels.begin() + static_cast<long>(o);
          if (!std::all_of(first, first + static_cast<long>(spec.seq_len), [&](int l) { return l == *first; })) continue;
          w.label = *first;
          break;
        }
      }
      out.push_back(std::move(w));
    }
  }
  return out;
}

WindowSample random_mask(const WindowSample& sample, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("random_mask: ratio must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(sample.input.size());
  const auto missing = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < missing; ++i) std::swap(idx[i], idx[i + uniform_below(rng, n - i)]);

  WindowSample out = sample;
  out.target = sample.target.size() == sample.input.size() ? sample.target : sample.input;
  out.mask = RowMatrix::Ones(sample.input.rows(), sample.input.cols());
  out.input = out.target;
  for (std::size_t i = 0; i < missing; ++i) {
    out.mask.data()[idx[i]] = 0.0;
    out.input.data()[idx[i]] = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generators

RawSeries synth_multiperiodic(std::size_t length, std::size_t channels, const std::vector<SineComponent>& components,
                              double trend_slope, double noise_std, std::uint64_t seed) {
  for (const auto& c : components) {
    if (c.period < 2.0) throw Error("synth_multiperiodic: periods must be >= 2");
  }
  std::mt19937_64 rng(seed);
  RawSeries s;
  s.values.resize(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(channels));
  for (std::size_t c = 0; c < channels; ++c) s.channel_names.push_back("ch" + std::to_string(c));
  for (std::size_t t = 0; t < length; ++t) {
    double base = trend_slope * static_cast<double>(t);
    for (const auto& comp : components) {
      base += comp.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / comp.period + comp.phase);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double noise = noise_std > 0.0 ? noise_std * standard_normal(rng) : 0.0;
      s.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = base + noise;
    }
  }
  return s;
}

std::pair<RawSeries, std::vector<bool>> inject_anomalies(const RawSeries& series, std::size_t n_spikes,
                                                         double magnitude_sigma, std::uint64_t seed) {
  const std::size_t N = series.length();
  if (n_spikes * 10 >= N && n_spikes > 0) {
    throw Error("inject_anomalies: " + std::to_string(n_spikes) + " spikes exceed a tenth of length " + std::to_string(N));
  }
  RawSeries out = series;
  std::vector<bool> labels(N, false);
  const auto centered = series.values.rowwise() - series.values.colwise().mean();
  const Eigen::RowVectorXd sigma = (centered.array().square().colwise().sum() / static_cast<double>(N)).sqrt();
  std::vector<std::size_t> idx(N);
  for (std::size_t i = 0; i < N; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n_spikes; ++i) {
    std::swap(idx[i], idx[i + uniform_below(rng, N - i)]);
    const double sign = (rng() & 1u) ? 1.0 : -1.0;
    out.values.row(static_cast<Eigen::Index>(idx[i])) += sign * magnitude_sigma * sigma;
    labels[idx[i]] = true;
  }
  out.labels.assign(N, 0);
  for (std::size_t i = 0; i < N; ++i) out.labels[i] = labels[i] ? 1 : 0;
  return {std::move(out), std::move(labels)};
}

std::vector<WindowSample> synth_classification(std::size_t count, std::size_t seq_len,
                                               const std::vector<double>& class_periods, double noise_std,
                                               std::uint64_t seed, Split split) {
  if (class_periods.size() < 2) throw Error("synth_classification: need at least two classes");
  std::mt19937_64 rng(seed);
  std::vector<WindowSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    WindowSample w;
    w.label = static_cast<int>(i % class_periods.size());
    w.split = split;
    w.offset = i;
    const double period = class_periods[static_cast<std::size_t>(w.label)];
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    const double amp = 0.5 + uniform01(rng);
    w.input.resize(static_cast<Eigen::Index>(seq_len), 1);
    for (std::size_t t = 0; t < seq_len; ++t) {
      const double noise = noise_std > 0.0 ? noise_std * standard_normal(rng) : 0.0;
      w.input(static_cast<Eigen::Index>(t), 0) =
          amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase) + noise;
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace times2d
