#pragma once

// Series ingestion, windowing, masking and synthetic generators.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "times2d/model.hpp"
#include "times2d/tensor.hpp"

namespace times2d {

/// T_total x C values plus optional metadata. A CSV column named `label`
/// is not a channel: it is parsed into `labels`.
struct RawSeries {
  RowMatrix values;
  std::vector<std::string> channel_names;
  std::vector<std::string> timestamps;
  std::vector<int> labels;

  std::size_t length() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(values.cols()); }
};

RawSeries parse_csv(std::istream& in, bool has_timestamp_column);
RawSeries load_csv(const std::string& path, bool has_timestamp_column);
void write_csv(const std::string& path, const RawSeries& series);

/// 0/1 matrix CSV with a header row, same layout as the data it masks.
RowMatrix load_mask_csv(const std::string& path, bool has_timestamp_column);

enum class Split { Train, Val, Test };
std::string to_string(Split s);

struct WindowSample {
  RowMatrix input;   // [T x C]
  RowMatrix target;  // forecast [H x C]; impute/reconstruct [T x C]; empty for classify
  RowMatrix mask;    // impute: 1 observed, 0 missing; otherwise empty
  int label = -1;
  Split split = Split::Train;
  std::size_t offset = 0;  // first time index in the source series
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct WindowSpec {
  Task task = Task::Forecast;
  std::size_t seq_len = 96;
  std::size_t pred_len = 0;
  SplitFractions splits{1.0, 0.0, 0.0};
  std::size_t stride = 1;
};

/// [begin, end) of each split; contiguous, chronological, covering the series.
std::vector<std::pair<std::size_t, std::size_t>> split_bounds(std::size_t length, const SplitFractions& f);

/// Every admissible window start at `stride` inside each split, splits in
/// train/val/test order. Windows never cross a split boundary. For classify,
/// the series labels must be constant over a window; mixed windows are skipped.
std::vector<WindowSample> make_windows(const RawSeries& series, const WindowSpec& spec);

/// Marks exactly floor(ratio * T * C) entries missing, chosen uniformly
/// without replacement. The returned input is zero at missing entries and its
/// target holds the original values.
WindowSample random_mask(const WindowSample& sample, double ratio, std::uint64_t seed);

struct SineComponent {
  double period = 24.0;
  double amplitude = 1.0;
  double phase = 0.0;
};

/// sum_j a_j sin(2 pi t / p_j + phi_j) + slope * t + N(0, noise_std^2), same
/// deterministic part on every channel and independent noise per channel.
RawSeries synth_multiperiodic(std::size_t length, std::size_t channels, const std::vector<SineComponent>& components,
                              double trend_slope, double noise_std, std::uint64_t seed);

/// Adds +/- magnitude_sigma * std(channel) to every channel at n_spikes
/// distinct random times. Returns the series and per-time labels.
std::pair<RawSeries, std::vector<bool>> inject_anomalies(const RawSeries& series, std::size_t n_spikes,
                                                         double magnitude_sigma, std::uint64_t seed);

/// Labeled windows of single-channel sinusoids, one class per period, with
/// random phase, amplitude in [0.5, 1.5] and Gaussian noise. Classes alternate.
std::vector<WindowSample> synth_classification(std::size_t count, std::size_t seq_len,
                                               const std::vector<double>& class_periods, double noise_std,
                                               std::uint64_t seed, Split split);

}  // namespace times2d
