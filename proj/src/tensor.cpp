#include "times2d/tensor.hpp"

#include <memory>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace times2d {

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape extents must be >= 1, got " + str());
  }
}

std::size_t Shape::numel() const {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : data_(std::make_shared<const Buffer>(1, 0.0)) {}

Tensor::Tensor(Shape shape, const std::vector<double>& values) : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, std::initializer_list<double> values) : Tensor(std::move(shape), Buffer(values)) {}

Tensor::Tensor(Shape shape, Buffer values)
    : shape_(std::move(shape)), data_(std::make_shared<const Buffer>(std::move(values))) {
  if (data_->size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_->size()) + " does not match shape " +
                     shape_.str());
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape.numel();
  return Tensor(std::move(shape), Buffer(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix>& m) {
  Buffer v(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMatrix>(v.data(), m.rows(), m.cols()) = m;
  return Tensor(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_.str());
  return (*data_)[0];
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  if (shape_.rank() != 2) throw ShapeError("matrix() requires rank 2, got " + shape_.str());
  return {data_->data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::watch(const Parameter& p) {
  if (auto it = watched_.find(&p); it != watched_.end()) {
    Tensor t = p.value;
    t.tape_ = this;
    t.node_ = it->second;
    return t;
  }
  Tensor t = leaf(p.value);
  watched_.emplace(&p, t.node_);
  return t;
}

Tensor Tape::leaf(const Tensor& value) {
  Node n;
  n.op = "leaf";
  n.numel = value.numel();
  n.leaf = true;
  nodes_.push_back(std::move(n));
  Tensor t = value;
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  return t;
}

Tensor Tape::record(std::string_view op, Tensor value, std::vector<int> inputs, BackwardFn fn) {
  Node n;
  n.op = std::string(op);
  n.numel = value.numel();
  n.inputs = std::move(inputs);
  n.backward = std::move(fn);
  const int id = static_cast<int>(nodes_.size());
  for (int in : n.inputs) {
    if (in >= id) throw Error("tape order violated by op " + n.op);
  }
  nodes_.push_back(std::move(n));
  value.tape_ = this;
  value.node_ = id;
  return value;
}

std::span<double> Tape::grad(int node) {
  Node& n = nodes_.at(static_cast<std::size_t>(node));
  if (n.grad.empty()) n.grad.assign(n.numel, 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked() || loss.tape() != this) throw Error("backward: loss is not recorded on this tape");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + loss.shape().str());
  for (Node& n : nodes_) {
    if (!n.leaf) n.grad.clear();
  }
  grad(loss.node())[0] += 1.0;
  for (int i = loss.node(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.leaf || n.grad.empty() || !n.backward) continue;
    n.backward(n.grad, *this);
  }
}

std::vector<double> Tape::gradient(const Parameter& p) const {
  auto it = watched_.find(&p);
  if (it == watched_.end()) return std::vector<double>(p.value.numel(), 0.0);
  const Node& n = nodes_[static_cast<std::size_t>(it->second)];
  return n.grad.empty() ? std::vector<double>(n.numel, 0.0) : std::vector<double>(n.grad.begin(), n.grad.end());
}

std::vector<double> Tape::gradient(const Tensor& leaf) const {
  if (leaf.tape() != this) throw Error("gradient: tensor is not on this tape");
  const Node& n = nodes_[static_cast<std::size_t>(leaf.node())];
  return n.grad.empty() ? std::vector<double>(n.numel, 0.0) : std::vector<double>(n.grad.begin(), n.grad.end());
}

Tensor bind(Tape* tape, const Parameter& p) { return tape ? tape->watch(p) : p.value; }

void check_finite(std::string_view op, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Op helpers

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) throw Error("inputs are recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

Tensor finish(std::string_view op, Tensor out, std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn) {
  check_finite(op, out.values());
  Tape* tape = common_tape(inputs);
  if (!tape) return out;
  std::vector<int> ids;
  for (const Tensor* t : inputs) ids.push_back(t->tracked() ? t->node() : -1);
  return tape->record(op, std::move(out), std::move(ids), std::move(fn));
}

Tensor finish_many(std::string_view op, Tensor out, const std::vector<const Tensor*>& inputs, Tape::BackwardFn fn) {
  check_finite(op, out.values());
  Tape* tape = nullptr;
  std::vector<int> ids;
  for (const Tensor* t : inputs) {
    ids.push_back(t->tracked() ? t->node() : -1);
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) throw Error("inputs are recorded on different tapes");
    tape = t->tape();
  }
  if (!tape) return out;
  return tape->record(op, std::move(out), std::move(ids), std::move(fn));
}

// Grad span of an input, or empty when the input is not tracked.
std::span<double> grad_of(Tape& tape, const Tensor& t) {
  return t.tracked() ? tape.grad(t.node()) : std::span<double>{};
}

std::size_t broadcast_extent(const Tensor& a, const Tensor& b, std::string_view op) {
  if (b.numel() == 1) return 1;
  const auto& ad = a.shape().dims();
  const auto& bd = b.shape().dims();
  if (bd.size() <= ad.size() && std::equal(bd.begin(), bd.end(), ad.end() - static_cast<long>(bd.size()))) {
    return b.numel();
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + b.shape().str() + " onto " + a.shape().str());
}

Tensor shaped(const Shape& shape, Buffer v) { return Tensor(shape, std::move(v)); }

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.shape().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + t.shape().str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t n = broadcast_extent(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % n];
  return finish("add", shaped(a.shape(), std::move(out)), {&a, &b}, [a, b, n](std::span<const double> g, Tape& tape) {
    if (auto ga = grad_of(tape, a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = grad_of(tape, b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t n = broadcast_extent(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i % n];
  return finish("sub", shaped(a.shape(), std::move(out)), {&a, &b}, [a, b, n](std::span<const double> g, Tape& tape) {
    if (auto ga = grad_of(tape, a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = grad_of(tape, b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t n = broadcast_extent(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i % n];
  return finish("mul", shaped(a.shape(), std::move(out)), {&a, &b}, [a, b, n](std::span<const double> g, Tape& tape) {
    auto av = a.values();
    auto bv = b.values();
    if (auto ga = grad_of(tape, a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % n];
    if (auto gb = grad_of(tape, b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  auto av = a.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  return finish("scale", shaped(a.shape(), std::move(out)), {&a}, [a, s](std::span<const double> g, Tape& tape) {
    auto ga = tape.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Tensor sum(const Tensor& a) {
  auto av = a.values();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  return finish("sum", Tensor::scalar(total), {&a}, [a](std::span<const double> g, Tape& tape) {
    auto ga = tape.grad(a.node());
    for (double& x : ga) x += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.numel() != a.numel()) {
    throw ShapeError("reshape: " + a.shape().str() + " has " + std::to_string(a.numel()) + " elements, target " +
                     shape.str() + " has " + std::to_string(shape.numel()));
  }
  Buffer out(a.values().begin(), a.values().end());
  return finish("reshape", Tensor(std::move(shape), std::move(out)), {&a}, [a](std::span<const double> g, Tape& tape) {
    auto ga = tape.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], n = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != n) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape().str() + " * " + b.shape().str());
  }
  Buffer out(m * p);
  MutMap(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p)).noalias() = a.matrix() * b.matrix();
  return finish("matmul", shaped(Shape{m, p}, std::move(out)), {&a, &b},
                [a, b, m, p](std::span<const double> g, Tape& tape) {
                  ConstMap G(g.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
                  if (auto ga = grad_of(tape, a); !ga.empty()) {
                    MutMap(ga.data(), a.matrix().rows(), a.matrix().cols()).noalias() += G * b.matrix().transpose();
                  }
                  if (auto gb = grad_of(tape, b); !gb.empty()) {
                    MutMap(gb.data(), b.matrix().rows(), b.matrix().cols()).noalias() += a.matrix().transpose() * G;
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(w, 2, "linear");
  const std::size_t n = w.shape()[0], p = w.shape()[1];
  const auto& xd = x.shape().dims();
  if (xd.empty() || xd.back() != n) {
    throw ShapeError("linear: input " + x.shape().str() + " does not end in " + std::to_string(n));
  }
  if (bias.numel() != p) throw ShapeError("linear: bias must have " + std::to_string(p) + " elements");
  const auto rows = static_cast<Eigen::Index>(x.numel() / n);
  std::vector<std::size_t> od = xd;
  od.back() = p;
  Buffer out(static_cast<std::size_t>(rows) * p);
  ConstMap X(x.values().data(), rows, static_cast<Eigen::Index>(n));
  ConstMap W = w.matrix();
  Eigen::Map<const Eigen::RowVectorXd> B(bias.values().data(), static_cast<Eigen::Index>(p));
  MutMap O(out.data(), rows, static_cast<Eigen::Index>(p));
  O.noalias() = X * W;
  O.rowwise() += B;
  return finish("linear", shaped(Shape(od), std::move(out)), {&x, &w, &bias},
                [x, w, bias, rows, n, p](std::span<const double> g, Tape& tape) {
                  const auto ni = static_cast<Eigen::Index>(n), pi = static_cast<Eigen::Index>(p);
                  ConstMap G(g.data(), rows, pi);
                  ConstMap X(x.values().data(), rows, ni);
                  if (auto gx = grad_of(tape, x); !gx.empty()) MutMap(gx.data(), rows, ni).noalias() += G * w.matrix().transpose();
                  if (auto gw = grad_of(tape, w); !gw.empty()) MutMap(gw.data(), ni, pi).noalias() += X.transpose() * G;
                  if (auto gb = grad_of(tape, bias); !gb.empty())
                    Eigen::Map<Eigen::RowVectorXd>(gb.data(), pi) += G.colwise().sum();
                });
}

Tensor temporal_linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 3, "temporal_linear");
  require_rank(w, 2, "temporal_linear");
  const std::size_t B = x.shape()[0], T = x.shape()[1], D = x.shape()[2];
  const std::size_t T2 = w.shape()[0];
  if (w.shape()[1] != T) {
    throw ShapeError("temporal_linear: weight " + w.shape().str() + " does not map length " + std::to_string(T));
  }
  if (bias.numel() != T2) throw ShapeError("temporal_linear: bias must have " + std::to_string(T2) + " elements");
  const auto Ti = static_cast<Eigen::Index>(T), T2i = static_cast<Eigen::Index>(T2), Di = static_cast<Eigen::Index>(D);
  Buffer out(B * T2 * D);
  Eigen::Map<const Eigen::VectorXd> bvec(bias.values().data(), T2i);
  for (std::size_t b = 0; b < B; ++b) {
    MutMap O(out.data() + b * T2 * D, T2i, Di);
    O.noalias() = w.matrix() * ConstMap(x.values().data() + b * T * D, Ti, Di);
    O.colwise() += bvec;
  }
  return finish("temporal_linear", shaped(Shape{B, T2, D}, std::move(out)), {&x, &w, &bias},
                [x, w, bias, B, Ti, T2i, Di](std::span<const double> g, Tape& tape) {
                  auto gx = grad_of(tape, x);
                  auto gw = grad_of(tape, w);
                  auto gb = grad_of(tape, bias);
                  const auto in_stride = static_cast<std::size_t>(Ti * Di);
                  const auto out_stride = static_cast<std::size_t>(T2i * Di);
                  for (std::size_t b = 0; b < B; ++b) {
                    ConstMap G(g.data() + b * out_stride, T2i, Di);
                    if (!gx.empty()) MutMap(gx.data() + b * in_stride, Ti, Di).noalias() += w.matrix().transpose() * G;
                    if (!gw.empty())
                      MutMap(gw.data(), T2i, Ti).noalias() += G * ConstMap(x.values().data() + b * in_stride, Ti, Di).transpose();
                    if (!gb.empty()) Eigen::Map<Eigen::VectorXd>(gb.data(), T2i) += G.rowwise().sum();
                  }
                });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvDims {
  std::size_t B, H, W, Cin, Cout, k;
  std::size_t rows() const { return B * H * W; }
  std::size_t patch() const { return k * k * Cin; }
};

// Patch matrix [B*H*W x k*k*Cin], patch layout (dy, dx, cin) matching the kernel layout.
void im2col(const double* in, const ConvDims& d, double* cols) {
  const long r = static_cast<long>(d.k / 2);
  const std::size_t patch = d.patch();
  for (std::size_t b = 0; b < d.B; ++b) {
    for (std::size_t y = 0; y < d.H; ++y) {
      for (std::size_t x = 0; x < d.W; ++x) {
        double* dst = cols + ((b * d.H + y) * d.W + x) * patch;
        for (std::size_t dy = 0; dy < d.k; ++dy) {
          const long iy = static_cast<long>(y + dy) - r;
          for (std::size_t dx = 0; dx < d.k; ++dx, dst += d.Cin) {
            const long ix = static_cast<long>(x + dx) - r;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(d.H) || ix >= static_cast<long>(d.W)) {
              std::fill(dst, dst + d.Cin, 0.0);
            } else {
              const double* src = in + ((b * d.H + static_cast<std::size_t>(iy)) * d.W + static_cast<std::size_t>(ix)) * d.Cin;
              std::copy(src, src + d.Cin, dst);
            }
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvDims& d, double* in_grad) {
  const long r = static_cast<long>(d.k / 2);
  const std::size_t patch = d.patch();
  for (std::size_t b = 0; b < d.B; ++b) {
    for (std::size_t y = 0; y < d.H; ++y) {
      for (std::size_t x = 0; x < d.W; ++x) {
        const double* src = cols + ((b * d.H + y) * d.W + x) * patch;
        for (std::size_t dy = 0; dy < d.k; ++dy) {
          const long iy = static_cast<long>(y + dy) - r;
          for (std::size_t dx = 0; dx < d.k; ++dx, src += d.Cin) {
            const long ix = static_cast<long>(x + dx) - r;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(d.H) || ix >= static_cast<long>(d.W)) continue;
            double* dst = in_grad + ((b * d.H + static_cast<std::size_t>(iy)) * d.W + static_cast<std::size_t>(ix)) * d.Cin;
            for (std::size_t c = 0; c < d.Cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank(input, 4, "conv2d_same");
  require_rank(kernel, 4, "conv2d_same");
  const auto& id = input.shape();
  const auto& kd = kernel.shape();
  if (kd[0] != kd[1]) throw ShapeError("conv2d_same: kernel must be square, got " + kd.str());
  if (kd[0] % 2 == 0) throw ShapeError("conv2d_same: kernel size must be odd, got " + std::to_string(kd[0]));
  if (kd[2] != id[3]) {
    throw ShapeError("conv2d_same: input has " + std::to_string(id[3]) + " channels, kernel expects " +
                     std::to_string(kd[2]));
  }
  if (bias.numel() != kd[3]) throw ShapeError("conv2d_same: bias must have " + std::to_string(kd[3]) + " elements");
  const ConvDims d{id[0], id[1], id[2], id[3], kd[3], kd[0]};
  const auto rows = static_cast<Eigen::Index>(d.rows());
  const auto patch = static_cast<Eigen::Index>(d.patch());
  const auto cout = static_cast<Eigen::Index>(d.Cout);

  Buffer out(d.rows() * d.Cout);
  ConstMap K(kernel.values().data(), patch, cout);
  MutMap O(out.data(), rows, cout);
  if (d.k == 1) {
    O.noalias() = ConstMap(input.values().data(), rows, patch) * K;
  } else {
    Buffer cols(d.rows() * d.patch());
    im2col(input.values().data(), d, cols.data());
    O.noalias() = ConstMap(cols.data(), rows, patch) * K;
  }
  O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), cout);

  // Patches are rebuilt in the backward pass rather than kept alive on the tape.
  return finish("conv2d_same", shaped(Shape{d.B, d.H, d.W, d.Cout}, std::move(out)), {&input, &kernel, &bias},
                [input, kernel, bias, d, rows, patch, cout](std::span<const double> g, Tape& tape) {
                  ConstMap G(g.data(), rows, cout);
                  ConstMap K(kernel.values().data(), patch, cout);
                  auto gi = grad_of(tape, input);
                  auto gk = grad_of(tape, kernel);
                  auto gb = grad_of(tape, bias);
                  if (!gb.empty()) Eigen::Map<Eigen::RowVectorXd>(gb.data(), cout) += G.colwise().sum();
                  if (d.k == 1) {
                    if (!gk.empty())
                      MutMap(gk.data(), patch, cout).noalias() += ConstMap(input.values().data(), rows, patch).transpose() * G;
                    if (!gi.empty()) MutMap(gi.data(), rows, patch).noalias() += G * K.transpose();
                    return;
                  }
                  Buffer cols(d.rows() * d.patch());
                  if (!gk.empty()) {
                    im2col(input.values().data(), d, cols.data());
                    MutMap(gk.data(), patch, cout).noalias() += ConstMap(cols.data(), rows, patch).transpose() * G;
                  }
                  if (!gi.empty()) {
                    MutMap(cols.data(), rows, patch).noalias() = G * K.transpose();
                    col2im_add(cols.data(), d, gi.data());
                  }
                });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

namespace {
constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  auto av = a.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x)));
  }
  return finish("gelu", shaped(a.shape(), std::move(out)), {&a}, [a](std::span<const double> g, Tape& tape) {
    auto av = a.values();
    auto ga = tape.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      const double t = std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x));
      const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
      ga[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner);
    }
  });
}

Tensor relu(const Tensor& a) {
  auto av = a.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return finish("relu", shaped(a.shape(), std::move(out)), {&a}, [a](std::span<const double> g, Tape& tape) {
    auto av = a.values();
    auto ga = tape.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > 0.0 ? g[i] : 0.0;
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto& dims = a.shape().dims();
  if (axis >= dims.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + a.shape().str());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t n = dims[axis];
  auto av = a.values();
  auto out = std::make_shared<Buffer>(av.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = av[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += ((*out)[base + j * inner] = std::exp(av[base + j * inner] - mx));
      for (std::size_t j = 0; j < n; ++j) (*out)[base + j * inner] /= z;
    }
  }
  Tensor result(a.shape(), *out);
  return finish("softmax", std::move(result), {&a}, [a, out, outer, inner, n](std::span<const double> g, Tape& tape) {
    auto ga = tape.grad(a.node());
    const auto& y = *out;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) ga[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
      }
    }
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto& dims = a.shape().dims();
  if (dims.empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = dims.back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) + " elements");
  }
  const std::size_t rows = a.numel() / d;
  auto av = a.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  auto xhat = std::make_shared<Buffer>(a.numel());
  auto inv_std = std::make_shared<Buffer>(rows);
  Buffer out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return finish("layer_norm", shaped(a.shape(), std::move(out)), {&a, &gamma, &beta},
                [a, gamma, beta, xhat, inv_std, rows, d](std::span<const double> g, Tape& tape) {
                  auto gv = gamma.values();
                  auto ga = grad_of(tape, a);
                  auto gg = grad_of(tape, gamma);
                  auto gbeta = grad_of(tape, beta);
                  const auto dd = static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * d;
                    const double* h = xhat->data() + r * d;
                    if (!gg.empty())
                      for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * h[j];
                    if (!gbeta.empty())
                      for (std::size_t j = 0; j < d; ++j) gbeta[j] += gr[j];
                    if (ga.empty()) continue;
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = gr[j] * gv[j];
                      mean_dh += dh;
                      mean_dh_h += dh * h[j];
                    }
                    mean_dh /= dd;
                    mean_dh_h /= dd;
                    for (std::size_t j = 0; j < d; ++j) {
                      ga[r * d + j] += (*inv_std)[r] * (gr[j] * gv[j] - mean_dh - h[j] * mean_dh_h);
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Structural

Tensor select(const Tensor& a, std::size_t index) {
  const auto& dims = a.shape().dims();
  if (dims.empty() || index >= dims[0]) {
    throw ShapeError("select: index " + std::to_string(index) + " out of range for " + a.shape().str());
  }
  std::vector<std::size_t> od(dims.begin() + 1, dims.end());
  const std::size_t inner = a.numel() / dims[0];
  auto av = a.values();
  Buffer out(av.begin() + static_cast<long>(index * inner), av.begin() + static_cast<long>((index + 1) * inner));
  return finish("select", shaped(Shape(od), std::move(out)), {&a}, [a, index, inner](std::span<const double> g, Tape& tape) {
    auto ga = tape.grad(a.node());
    for (std::size_t i = 0; i < inner; ++i) ga[index * inner + i] += g[i];
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& s = parts.front().shape();
  std::vector<const Tensor*> ptrs;
  Buffer out;
  out.reserve(parts.size() * s.numel());
  for (const Tensor& p : parts) {
    if (p.shape() != s) throw ShapeError("stack: shape " + p.shape().str() + " differs from " + s.str());
    out.insert(out.end(), p.values().begin(), p.values().end());
    ptrs.push_back(&p);
  }
  std::vector<std::size_t> od{parts.size()};
  od.insert(od.end(), s.dims().begin(), s.dims().end());
  return finish_many("stack", shaped(Shape(od), std::move(out)), ptrs, [parts](std::span<const double> g, Tape& tape) {
    const std::size_t inner = parts.front().numel();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto gp = grad_of(tape, parts[k]);
      if (gp.empty()) continue;
      for (std::size_t i = 0; i < inner; ++i) gp[i] += g[k * inner + i];
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& dims = a.shape().dims();
  if (axis >= dims.size() || length == 0 || start + length > dims[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid on axis " + std::to_string(axis) + " of " + a.shape().str());
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t n = dims[axis];
  std::vector<std::size_t> od = dims;
  od[axis] = length;
  auto av = a.values();
  Buffer out;
  out.reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    auto first = av.begin() + static_cast<long>((o * n + start) * inner);
    out.insert(out.end(), first, first + static_cast<long>(length * inner));
  }
  return finish("slice", shaped(Shape(od), std::move(out)), {&a},
                [a, outer, inner, n, start, length](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad(a.node());
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < length * inner; ++i) ga[(o * n + start) * inner + i] += g[o * length * inner + i];
                });
}

Tensor embed_kernel(const Tensor& kernel, std::size_t size) {
  require_rank(kernel, 4, "embed_kernel");
  const auto& kd = kernel.shape();
  if (kd[0] != kd[1] || kd[0] > size || (size - kd[0]) % 2 != 0) {
    throw ShapeError("embed_kernel: cannot center " + kd.str() + " in a " + std::to_string(size) + "x" +
                     std::to_string(size) + " window");
  }
  const std::size_t k = kd[0], cc = kd[2] * kd[3], off = (size - k) / 2;
  Buffer out(size * size * cc, 0.0);
  auto kv = kernel.values();
  for (std::size_t y = 0; y < k; ++y)
    for (std::size_t x = 0; x < k; ++x)
      std::copy_n(kv.begin() + static_cast<long>((y * k + x) * cc), cc,
                  out.begin() + static_cast<long>(((y + off) * size + x + off) * cc));
  return finish("embed_kernel", shaped(Shape{size, size, kd[2], kd[3]}, std::move(out)), {&kernel},
                [kernel, k, cc, off, size](std::span<const double> g, Tape& tape) {
                  auto gk = tape.grad(kernel.node());
                  for (std::size_t y = 0; y < k; ++y)
                    for (std::size_t x = 0; x < k; ++x)
                      for (std::size_t c = 0; c < cc; ++c)
                        gk[(y * k + x) * cc + c] += g[((y + off) * size + x + off) * cc + c];
                });
}

Tensor weighted_sum(const std::vector<Tensor>& parts, const Tensor& weights) {
  if (parts.empty()) throw ShapeError("weighted_sum: no inputs");
  if (weights.numel() != parts.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(parts.size()) + " parts but " + std::to_string(weights.numel()) +
                     " weights");
  }
  const Shape& s = parts.front().shape();
  std::vector<const Tensor*> ptrs{&weights};
  Buffer out(s.numel(), 0.0);
  auto wv = weights.values();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].shape() != s) throw ShapeError("weighted_sum: shape " + parts[k].shape().str() + " differs from " + s.str());
    auto pv = parts[k].values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[k] * pv[i];
    ptrs.push_back(&parts[k]);
  }
  return finish_many("weighted_sum", shaped(s, std::move(out)), ptrs, [parts, weights](std::span<const double> g, Tape& tape) {
    auto wv = weights.values();
    auto gw = grad_of(tape, weights);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto pv = parts[k].values();
      if (!gw.empty()) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * pv[i];
        gw[k] += dot;
      }
      if (auto gp = grad_of(tape, parts[k]); !gp.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += wv[k] * g[i];
    }
  });
}

Tensor channel_affine(const Tensor& x, const Tensor& scale_bc, const Tensor& shift_bc) {
  require_rank(x, 3, "channel_affine");
  const std::size_t B = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  if (scale_bc.numel() != B * C || shift_bc.numel() != B * C) {
    throw ShapeError("channel_affine: scale/shift must have B*C = " + std::to_string(B * C) + " elements");
  }
  auto xv = x.values();
  auto sv = scale_bc.values();
  auto hv = shift_bc.values();
  Buffer out(xv.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (b * T + t) * C + c;
        out[i] = xv[i] * sv[b * C + c] + hv[b * C + c];
      }
  return finish("channel_affine", shaped(x.shape(), std::move(out)), {&x},
                [x, scale_bc, B, T, C](std::span<const double> g, Tape& tape) {
                  auto sv = scale_bc.values();
                  auto gx = tape.grad(x.node());
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t t = 0; t < T; ++t)
                      for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t i = (b * T + t) * C + c;
                        gx[i] += g[i] * sv[b * C + c];
                      }
                });
}

Tensor blend(const Tensor& a, const Tensor& b, const Tensor& keep) {
  if (a.shape() != b.shape() || a.shape() != keep.shape()) {
    throw ShapeError("blend: shapes " + a.shape().str() + ", " + b.shape().str() + ", " + keep.shape().str() + " differ");
  }
  auto av = a.values();
  auto bv = b.values();
  auto kv = keep.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * kv[i] + bv[i] * (1.0 - kv[i]);
  return finish("blend", shaped(a.shape(), std::move(out)), {&a, &b}, [a, b, keep](std::span<const double> g, Tape& tape) {
    auto kv = keep.values();
    if (auto ga = grad_of(tape, a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * kv[i];
    if (auto gb = grad_of(tape, b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (1.0 - kv[i]);
  });
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t B = logits.shape()[0], n = logits.shape()[1];
  if (labels.size() != B) throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(B));
  auto lv = logits.values();
  auto probs = std::make_shared<Buffer>(B * n);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= n) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(n) + ")");
    }
    const double* row = lv.data() + b * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += ((*probs)[b * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) (*probs)[b * n + j] /= z;
    total += mx + std::log(z) - row[labels[b]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return finish("cross_entropy", Tensor::scalar(total / static_cast<double>(B)), {&logits},
                [logits, probs, lab, B, n](std::span<const double> g, Tape& tape) {
                  auto gl = tape.grad(logits.node());
                  const double s = g[0] / static_cast<double>(B);
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < n; ++j)
                      gl[b * n + j] += s * ((*probs)[b * n + j] - (static_cast<int>(j) == lab[b] ? 1.0 : 0.0));
                });
}

namespace {
double sign(double x) { return (x > 0.0) - (x < 0.0); }
}  // namespace

Tensor smape_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("smape_loss: " + pred.shape().str() + " vs " + target.shape().str());
  }
  auto pv = pred.values();
  auto tv = target.values();
  const auto N = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double den = std::abs(tv[i]) + std::abs(pv[i]);
    if (den >= 1e-8) total += 200.0 * std::abs(tv[i] - pv[i]) / den;
  }
  return finish("smape_loss", Tensor::scalar(total / N), {&pred, &target}, [pred, target, N](std::span<const double> g, Tape& tape) {
    auto pv = pred.values();
    auto tv = target.values();
    auto gp = grad_of(tape, pred);
    auto gt = grad_of(tape, target);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double s = std::abs(tv[i]) + std::abs(pv[i]);
      if (s < 1e-8) continue;
      const double u = tv[i] - pv[i];
      const double c = 200.0 * g[0] / (N * s * s);
      if (!gp.empty()) gp[i] += c * (-sign(u) * s - std::abs(u) * sign(pv[i]));
      if (!gt.empty()) gt[i] += c * (sign(u) * s - std::abs(u) * sign(tv[i]));
    }
  });
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& weight) {
  if (pred.shape() != target.shape() || pred.shape() != weight.shape()) {
    throw ShapeError("masked_mse: shapes " + pred.shape().str() + ", " + target.shape().str() + ", " +
                     weight.shape().str() + " differ");
  }
  auto pv = pred.values();
  auto tv = target.values();
  auto wv = weight.values();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (wv[i] == 0.0) continue;
    ++count;
    total += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  }
  if (count == 0) throw Error("masked_mse: empty mask selection");
  const auto n = static_cast<double>(count);
  return finish("masked_mse", Tensor::scalar(total / n), {&pred, &target}, [pred, target, weight, n](std::span<const double> g, Tape& tape) {
    auto pv = pred.values();
    auto tv = target.values();
    auto wv = weight.values();
    auto gp = grad_of(tape, pred);
    auto gt = grad_of(tape, target);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (wv[i] == 0.0) continue;
      const double d = 2.0 * g[0] * (pv[i] - tv[i]) / n;
      if (!gp.empty()) gp[i] += d;
      if (!gt.empty()) gt[i] -= d;
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  return masked_mse(pred, target, Tensor::full(pred.shape(), 1.0));
}

}  // namespace times2d
