#include "times2d/training.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "times2d/timesblock.hpp"

namespace times2d {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::MSE: return "mse";
    case LossKind::SMAPE: return "smape";
    case LossKind::CrossEntropy: return "cross-entropy";
  }
  return "mse";
}

LossKind loss_from_string(const std::string& s) {
  if (s == "mse") return LossKind::MSE;
  if (s == "smape") return LossKind::SMAPE;
  if (s == "cross-entropy" || s == "ce") return LossKind::CrossEntropy;
  throw Error("unknown loss '" + s + "' (expected mse, smape or cross-entropy)");
}

Tensor compute_loss(LossKind kind, const Tensor& pred, const Tensor& target, const Tensor* missing) {
  switch (kind) {
    case LossKind::MSE: return missing ? masked_mse(pred, target, *missing) : mse_loss(pred, target);
    case LossKind::SMAPE:
      if (missing) throw Error("smape loss does not support masks");
      return smape_loss(pred, target);
    case LossKind::CrossEntropy: throw Error("cross-entropy needs class labels");
  }
  throw Error("unknown loss kind");
}

Tensor compute_loss(const Tensor& logits, std::span<const int> labels) { return cross_entropy(logits, labels); }

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<Parameter* const> params, const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params.size()) throw ShapeError("Adam: one gradient per parameter is required");
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.numel(), 0.0);
      v_.emplace_back(p->value.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->value.numel() || m_[i].size() != grads[i].size()) {
      throw ShapeError("Adam: gradient shape mismatch for " + params[i]->name);
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw NumericError("Adam: non-finite gradient for parameter " + params[i]->name);
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto cur = params[i]->value.values();
    std::vector<double> next(cur.begin(), cur.end());
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < next.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      next[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
    params[i]->value = Tensor(params[i]->value.shape(), std::move(next));
  }
}

// ---------------------------------------------------------------------------
// Batches

namespace {

Tensor stack_matrices(std::span<const WindowSample> samples, RowMatrix WindowSample::*field) {
  const RowMatrix& first = samples.front().*field;
  const auto rows = static_cast<std::size_t>(first.rows()), cols = static_cast<std::size_t>(first.cols());
  std::vector<double> v;
  v.reserve(samples.size() * rows * cols);
  for (const auto& s : samples) {
    const RowMatrix& m = s.*field;
    if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
      throw ShapeError("batch: windows have different shapes");
    }
    v.insert(v.end(), m.data(), m.data() + m.size());
  }
  return Tensor(Shape{samples.size(), rows, cols}, std::move(v));
}

Tensor missing_of(const Tensor& mask) {
  std::vector<double> v(mask.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - mask[i];
  return Tensor(mask.shape(), std::move(v));
}

// Number of elements a batch loss averages over.
double loss_count(const TimesNet& model, const Batch& batch) {
  switch (model.config().task) {
    case Task::Classify: return static_cast<double>(batch.labels.size());
    case Task::Impute: {
      double n = 0.0;
      for (double m : batch.mask.values()) n += 1.0 - m;
      return n;
    }
    default: return static_cast<double>(batch.target.numel());
  }
}

}  // namespace

Batch make_batch(std::span<const WindowSample> samples, Task task) {
  if (samples.empty()) throw Error("batch: no samples");
  Batch b;
  b.input = stack_matrices(samples, &WindowSample::input);
  switch (task) {
    case Task::Classify:
      for (const auto& s : samples) b.labels.push_back(s.label);
      break;
    case Task::Impute:
      b.target = stack_matrices(samples, &WindowSample::target);
      b.mask = stack_matrices(samples, &WindowSample::mask);
      break;
    default: b.target = stack_matrices(samples, &WindowSample::target); break;
  }
  return b;
}

Tensor predict_batch(const TimesNet& model, const Batch& batch, Tape* tape, ForwardTrace* trace) {
  switch (model.config().task) {
    case Task::Forecast: return model.forecast(batch.input, tape, trace);
    case Task::Impute: return model.impute(batch.input, batch.mask, tape, trace);
    case Task::Classify: return model.classify(batch.input, tape, trace);
    case Task::Reconstruct: return model.reconstruct(batch.input, tape, trace);
  }
  throw Error("unknown task");
}

Tensor batch_loss(const TimesNet& model, const Batch& batch, LossKind kind, Tape* tape) {
  Tensor pred = predict_batch(model, batch, tape);
  switch (model.config().task) {
    case Task::Classify: return compute_loss(pred, batch.labels);
    case Task::Impute: {
      const Tensor missing = missing_of(batch.mask);
      return compute_loss(kind, pred, batch.target, &missing);
    }
    default: return compute_loss(kind, pred, batch.target);
  }
}

double evaluate_loss(const TimesNet& model, std::span<const WindowSample> samples, LossKind kind, std::size_t batch_size) {
  if (samples.empty()) throw Error("evaluate_loss: no samples");
  double total = 0.0, count = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto part = samples.subspan(start, std::min(batch_size, samples.size() - start));
    const Batch batch = make_batch(part, model.config().task);
    const double n = loss_count(model, batch);
    if (n == 0.0) continue;
    total += batch_loss(model, batch, kind).item() * n;
    count += n;
  }
  if (count == 0.0) throw Error("evaluate_loss: empty mask selection");
  return total / count;
}

std::vector<RowMatrix> predict(const TimesNet& model, std::span<const WindowSample> samples, std::size_t batch_size) {
  std::vector<RowMatrix> out;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto part = samples.subspan(start, std::min(batch_size, samples.size() - start));
    const Tensor pred = predict_batch(model, make_batch(part, model.config().task));
    const auto& s = pred.shape();
    const std::size_t rows = s.rank() == 3 ? s[1] : 1;
    const std::size_t cols = s.dims().back();
    for (std::size_t b = 0; b < part.size(); ++b) {
      out.emplace_back(Eigen::Map<const RowMatrix>(pred.values().data() + b * rows * cols, static_cast<Eigen::Index>(rows),
                                                   static_cast<Eigen::Index>(cols)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(TimesNet& model, std::span<const WindowSample> train_set, std::span<const WindowSample> val_set,
                  const TrainConfig& config) {
  TrainResult result;
  if (config.epochs == 0) return result;
  if (train_set.empty()) throw TrainingError("train: the training split has no windows");
  if (config.batch_size == 0) throw TrainingError("train: batch size must be >= 1");
  const Task task = model.config().task;
  if ((task == Task::Classify) != (config.loss == LossKind::CrossEntropy)) {
    throw TrainingError("train: loss '" + to_string(config.loss) + "' does not fit task '" + to_string(task) + "'");
  }

  std::vector<Parameter*> params = model.parameters();
  Adam adam(config.lr);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Tensor> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const bool remask = task == Task::Impute && config.mask_ratio > 0.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_below(rng, i)]);
    double epoch_total = 0.0, epoch_count = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        std::vector<WindowSample> part;
        for (std::size_t j = start; j < std::min(start + config.batch_size, order.size()); ++j) {
          const std::size_t idx = order[j];
          if (remask) {
            const std::uint64_t s = config.seed * 0x9E3779B97F4A7C15ULL + epoch * 1000003ULL + idx;
            part.push_back(random_mask(train_set[idx], config.mask_ratio, s));
          } else {
            part.push_back(train_set[idx]);
          }
        }
        const Batch batch = make_batch(part, task);
        Tape tape;
        const Tensor loss = batch_loss(model, batch, config.loss, &tape);
        tape.backward(loss);
        std::vector<std::vector<double>> grads;
        grads.reserve(params.size());
        for (const Parameter* p : params) grads.push_back(tape.gradient(*p));
        adam.step(params, grads);
        const double n = loss_count(model, batch);
        epoch_total += loss.item() * n;
        epoch_count += n;
      }
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_total / epoch_count;
    if (!std::isfinite(rec.train_loss)) throw TrainingError("training diverged at epoch " + std::to_string(epoch));
    try {
      rec.val_loss = val_set.empty() ? rec.train_loss : evaluate_loss(model, val_set, config.loss);
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.trace.push_back(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.best_epoch = epoch;
      best.clear();
      for (const Parameter* p : params) best.push_back(p->value);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  result.best_val_loss = best_val;
  return result;
}

}  // namespace times2d
