#include "times2d/transform2d.hpp"

#include <string>
#include <vector>

namespace times2d {

FoldPlan FoldPlan::make(std::size_t series_length, std::size_t frequency) {
  if (frequency == 0 || frequency > series_length) {
    throw ShapeError("FoldPlan: frequency " + std::to_string(frequency) + " outside [1, " +
                     std::to_string(series_length) + "]");
  }
  const std::size_t period = (series_length + frequency - 1) / frequency;
  return {series_length, period, frequency, period * frequency - series_length};
}

void FoldPlan::validate() const {
  const bool ok = frequency >= 1 && frequency <= series_length &&
                  period == (series_length + frequency - 1) / frequency &&
                  pad_length == period * frequency - series_length;
  if (!ok) {
    throw ShapeError("FoldPlan: inconsistent plan (T=" + std::to_string(series_length) + ", p=" +
                     std::to_string(period) + ", f=" + std::to_string(frequency) + ", pad=" +
                     std::to_string(pad_length) + ")");
  }
}

namespace {

// Maps time index t of the padded series to its flat offset within one folded sample.
inline std::size_t folded_offset(std::size_t t, const FoldPlan& plan, std::size_t D) {
  const std::size_t row = t % plan.period;
  const std::size_t col = t / plan.period;
  return (row * plan.frequency + col) * D;
}

Tensor record_unary(std::string_view op, Tensor out, const Tensor& in, Tape::BackwardFn fn) {
  check_finite(op, out.values());
  if (!in.tracked()) return out;
  return in.tape()->record(op, std::move(out), {in.node()}, std::move(fn));
}

}  // namespace

Tensor fold(const Tensor& x, const FoldPlan& plan) {
  plan.validate();
  const auto& dims = x.shape().dims();
  const bool batched = dims.size() == 3;
  if ((dims.size() != 2 && !batched) || dims[dims.size() - 2] != plan.series_length) {
    throw ShapeError("fold: input " + x.shape().str() + " does not match series length " +
                     std::to_string(plan.series_length));
  }
  const std::size_t B = batched ? dims[0] : 1;
  const std::size_t T = plan.series_length, D = dims.back();
  const std::size_t folded = plan.period * plan.frequency * D;
  auto xv = x.values();
  std::vector<double> out(B * folded, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const double* src = xv.data() + (b * T + t) * D;
      double* dst = out.data() + b * folded + folded_offset(t, plan, D);
      for (std::size_t d = 0; d < D; ++d) dst[d] = src[d];
    }
  Shape shape = batched ? Shape{B, plan.period, plan.frequency, D} : Shape{plan.period, plan.frequency, D};
  return record_unary("fold", Tensor(shape, std::move(out)), x, [x, plan, B, T, D, folded](std::span<const double> g, Tape& tape) {
    auto gx = tape.grad(x.node());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        const double* src = g.data() + b * folded + folded_offset(t, plan, D);
        double* dst = gx.data() + (b * T + t) * D;
        for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
      }
  });
}

Tensor unfold_truncate(const Tensor& y, const FoldPlan& plan) {
  plan.validate();
  const auto& dims = y.shape().dims();
  const bool batched = dims.size() == 4;
  if ((dims.size() != 3 && !batched) || dims[dims.size() - 3] != plan.period || dims[dims.size() - 2] != plan.frequency) {
    throw ShapeError("unfold_truncate: input " + y.shape().str() + " does not match plan " +
                     std::to_string(plan.period) + "x" + std::to_string(plan.frequency));
  }
  const std::size_t B = batched ? dims[0] : 1;
  const std::size_t T = plan.series_length, D = dims.back();
  const std::size_t folded = plan.period * plan.frequency * D;
  auto yv = y.values();
  std::vector<double> out(B * T * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const double* src = yv.data() + b * folded + folded_offset(t, plan, D);
      double* dst = out.data() + (b * T + t) * D;
      for (std::size_t d = 0; d < D; ++d) dst[d] = src[d];
    }
  Shape shape = batched ? Shape{B, T, D} : Shape{T, D};
  return record_unary("unfold_truncate", Tensor(shape, std::move(out)), y,
                      [y, plan, B, T, D, folded](std::span<const double> g, Tape& tape) {
                        auto gy = tape.grad(y.node());
                        for (std::size_t b = 0; b < B; ++b)
                          for (std::size_t t = 0; t < T; ++t) {
                            const double* src = g.data() + (b * T + t) * D;
                            double* dst = gy.data() + b * folded + folded_offset(t, plan, D);
                            for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
                          }
                      });
}

}  // namespace times2d
