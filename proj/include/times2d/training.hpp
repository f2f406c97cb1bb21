#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "times2d/data.hpp"
#include "times2d/model.hpp"
#include "times2d/tensor.hpp"

namespace times2d {

class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class LossKind { MSE, SMAPE, CrossEntropy };

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

/// Mean-reduced loss. With `missing` (1 where an entry is missing) only those
/// entries count.
Tensor compute_loss(LossKind kind, const Tensor& pred, const Tensor& target, const Tensor* missing = nullptr);
/// Cross-entropy against integer class labels.
Tensor compute_loss(const Tensor& logits, std::span<const int> labels);

/// Bias-corrected Adam.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// grads[i] belongs to params[i]. Throws NumericError naming the parameter on a non-finite gradient.
  void step(std::span<Parameter* const> params, const std::vector<std::vector<double>>& grads);

  std::size_t steps() const { return step_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  LossKind loss = LossKind::MSE;
  std::uint64_t seed = 0;
  /// Imputation: training windows are re-masked every epoch at this ratio.
  double mask_ratio = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_loss = 0.0;
};

/// Inputs of a batch of windows as tensors.
struct Batch {
  Tensor input;   // [B x T x C]
  Tensor target;  // task dependent
  Tensor mask;    // impute: 1 observed
  std::vector<int> labels;
};

Batch make_batch(std::span<const WindowSample> samples, Task task);

/// Forward pass of the model's task head on a batch.
Tensor predict_batch(const TimesNet& model, const Batch& batch, Tape* tape = nullptr, ForwardTrace* trace = nullptr);

/// Loss of the model's task on the batch; imputation counts missing entries only.
Tensor batch_loss(const TimesNet& model, const Batch& batch, LossKind kind, Tape* tape = nullptr);

/// Loss over every element of `samples` (not a mean of batch means).
double evaluate_loss(const TimesNet& model, std::span<const WindowSample> samples, LossKind kind,
                     std::size_t batch_size = 64);

/// Per-sample predictions in original scale: forecast [H x C], impute/reconstruct [T x C], classify [1 x n] logits.
std::vector<RowMatrix> predict(const TimesNet& model, std::span<const WindowSample> samples, std::size_t batch_size = 64);

/// Adam training with early stopping on validation loss; the best-validation
/// weights are restored on return. Deterministic for a fixed config.
TrainResult train(TimesNet& model, std::span<const WindowSample> train_set, std::span<const WindowSample> val_set,
                  const TrainConfig& config);

}  // namespace times2d
