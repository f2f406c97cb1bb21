#pragma once

// Evaluation metrics. The point metrics accept any Eigen dense expression.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "times2d/tensor.hpp"

namespace times2d {

struct EvalReport {
  std::map<std::string, double> metrics;
  std::size_t samples = 0;
  std::size_t channels = 0;
  double threshold = 0.0;  // anomaly detection only
};

namespace detail {
template <typename A, typename B>
void require_same_size(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  if (a.size() == 0) throw ShapeError(std::string(what) + ": empty input");
}
}  // namespace detail

template <typename A, typename B>
double mse(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& target) {
  detail::require_same_size(pred, target, "mse");
  return (pred.derived().array() - target.derived().array()).square().mean();
}

template <typename A, typename B>
double mae(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& target) {
  detail::require_same_size(pred, target, "mae");
  return (pred.derived().array() - target.derived().array()).abs().mean();
}

/// Percent, in [0, 200]. Terms with |x| + |x_hat| < 1e-8 count as 0.
template <typename A, typename B>
double smape(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& target) {
  detail::require_same_size(pred, target, "smape");
  const auto& p = pred.derived().array();
  const auto& t = target.derived().array();
  const auto den = t.abs() + p.abs();
  return 200.0 * (den < 1e-8).select(0.0, (t - p).abs() / den.max(1e-8)).mean();
}

/// Percent; undefined where the target is zero.
template <typename A, typename B>
double mape(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& target) {
  detail::require_same_size(pred, target, "mape");
  const auto& t = target.derived().array();
  if ((t == 0.0).any()) throw Error("mape: target contains zeros");
  return 100.0 * ((t - pred.derived().array()).abs() / t.abs()).mean();
}

/// Mean absolute error scaled by the mean absolute lag-m difference of the
/// in-sample history. Univariate: all arguments are vectors.
double mase(std::span<const double> pred, std::span<const double> target, std::span<const double> insample,
            std::size_t m);

/// Seasonal-naive reference: repeats the last m in-sample values over the horizon.
std::vector<double> seasonal_naive(std::span<const double> insample, std::size_t horizon, std::size_t m);

/// 0.5 * (SMAPE / SMAPE_ref + MASE / MASE_ref) against the seasonal-naive reference.
double owa(std::span<const double> pred, std::span<const double> target, std::span<const double> insample,
           std::size_t m);

/// Linear interpolation between order statistics (the usual "linear" quantile).
double quantile(std::vector<double> values, double q);

/// Flags test points whose score exceeds the (1 - ratio) quantile of the
/// training scores and reports point-wise precision, recall and F1 (fractions).
EvalReport anomaly_eval(std::span<const double> train_scores, std::span<const double> test_scores,
                        const std::vector<bool>& labels, double anomaly_ratio);

/// Precision/recall/F1 of given flags against labels.
EvalReport detection_scores(const std::vector<bool>& flagged, const std::vector<bool>& labels);

/// Linear centered kernel alignment between N x d_a and N x d_b representations.
double linear_cka(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b);

}  // namespace times2d
