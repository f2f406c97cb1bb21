#include "times2d/metrics.hpp"

#include <numeric>

namespace times2d {

namespace {
// Copied so reductions run on aligned storage whatever the caller's buffer.
Eigen::ArrayXd as_array(std::span<const double> v) {
  return Eigen::Map<const Eigen::ArrayXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace

double mase(std::span<const double> pred, std::span<const double> target, std::span<const double> insample,
            std::size_t m) {
  if (pred.size() != target.size() || pred.empty()) throw ShapeError("mase: prediction and target sizes differ or are empty");
  if (m == 0 || insample.size() <= m) {
    throw ShapeError("mase: in-sample length " + std::to_string(insample.size()) + " must exceed m = " + std::to_string(m));
  }
  double scale = 0.0;
  for (std::size_t j = m; j < insample.size(); ++j) scale += std::abs(insample[j] - insample[j - m]);
  scale /= static_cast<double>(insample.size() - m);
  if (scale == 0.0) throw Error("mase: degenerate scale (in-sample series has no lag-" + std::to_string(m) + " variation)");
  return (as_array(target) - as_array(pred)).abs().mean() / scale;
}

std::vector<double> seasonal_naive(std::span<const double> insample, std::size_t horizon, std::size_t m) {
  if (m == 0 || insample.size() < m) throw ShapeError("seasonal_naive: need at least m in-sample values");
  std::vector<double> out(horizon);
  const std::size_t base = insample.size() - m;
  for (std::size_t i = 0; i < horizon; ++i) out[i] = insample[base + i % m];
  return out;
}

double owa(std::span<const double> pred, std::span<const double> target, std::span<const double> insample,
           std::size_t m) {
  const auto naive = seasonal_naive(insample, target.size(), m);
  const double smape_ref = smape(as_array(naive), as_array(target));
  const double mase_ref = mase(naive, target, insample, m);
  if (smape_ref == 0.0 || mase_ref == 0.0) throw Error("owa: reference forecast is exact; ratio undefined");
  return 0.5 * (smape(as_array(pred), as_array(target)) / smape_ref + mase(pred, target, insample, m) / mase_ref);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("quantile: empty score set");
  if (q < 0.0 || q > 1.0) throw Error("quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

EvalReport detection_scores(const std::vector<bool>& flagged, const std::vector<bool>& labels) {
  if (flagged.size() != labels.size()) throw ShapeError("detection_scores: flags and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    tp += flagged[i] && labels[i];
    fp += flagged[i] && !labels[i];
    fn += !flagged[i] && labels[i];
  }
  const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  EvalReport r;
  r.samples = flagged.size();
  r.metrics = {{"precision", precision}, {"recall", recall}, {"f1", f1},
               {"flagged", static_cast<double>(tp + fp)}};
  return r;
}

EvalReport anomaly_eval(std::span<const double> train_scores, std::span<const double> test_scores,
                        const std::vector<bool>& labels, double anomaly_ratio) {
  if (test_scores.empty() || train_scores.empty()) throw Error("anomaly_eval: empty score set");
  if (test_scores.size() != labels.size()) throw ShapeError("anomaly_eval: scores and labels differ in length");
  if (!(anomaly_ratio > 0.0 && anomaly_ratio < 1.0)) throw Error("anomaly_eval: ratio must lie in (0, 1)");
  const double threshold = quantile({train_scores.begin(), train_scores.end()}, 1.0 - anomaly_ratio);
  std::vector<bool> flagged(test_scores.size());
  for (std::size_t i = 0; i < test_scores.size(); ++i) flagged[i] = test_scores[i] > threshold;
  EvalReport r = detection_scores(flagged, labels);
  r.threshold = threshold;
  return r;
}

double linear_cka(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b) {
  if (a.rows() != b.rows()) throw ShapeError("linear_cka: representations have different sample counts");
  if (a.rows() < 2) throw ShapeError("linear_cka: need at least two samples");
  const Eigen::MatrixXd ac = a.rowwise() - a.colwise().mean();
  const Eigen::MatrixXd bc = b.rowwise() - b.colwise().mean();
  const double norm_a = (ac.transpose() * ac).norm();
  const double norm_b = (bc.transpose() * bc).norm();
  if (norm_a == 0.0 || norm_b == 0.0) throw Error("linear_cka: zero-variance representation");
  return (bc.transpose() * ac).squaredNorm() / (norm_a * norm_b);
}

}  // namespace times2d
