#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is an immutable value: a Shape plus a shared, read-only buffer in
// row-major order. Operations on tensors that carry a tape handle record a
// node on that Tape; Tape::backward then walks the nodes in reverse order
// exactly once. Trainable weights live in Parameter objects and enter a
// graph through Tape::watch (or bind(), which tolerates a null tape for
// inference).

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace times2d {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Storage for tensor values and gradients. Every buffer starts on a packet
/// boundary, so Eigen's vectorized reductions split work the same way on every
/// run and results are bit-reproducible.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const;
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  std::vector<std::size_t> dims_;
};

class Tape;

class Tensor {
 public:
  /// Rank-0 tensor holding 0.
  Tensor();
  Tensor(Shape shape, Buffer values);
  Tensor(Shape shape, const std::vector<double>& values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Copies a row-major matrix into a rank-2 tensor.
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_->size(); }
  std::span<const double> values() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  /// Read-only matrix view of a rank-2 tensor.
  Eigen::Map<const RowMatrix> matrix() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  /// Same values, no tape handle.
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const Buffer> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

struct Parameter {
  std::string name;
  Tensor value;
};

class Tape {
 public:
  /// Receives the gradient of the node's output; adds into input gradients.
  using BackwardFn = std::function<void(std::span<const double> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node for a parameter. Watching the same parameter twice returns the same node.
  Tensor watch(const Parameter& p);
  /// Leaf node for an arbitrary input whose gradient the caller wants to read.
  Tensor leaf(const Tensor& value);

  /// Appends a node computed from `inputs`. Untracked inputs are allowed.
  Tensor record(std::string_view op, Tensor value, std::vector<int> inputs, BackwardFn fn);

  /// Gradient accumulator of a node, allocated and zeroed on first use.
  std::span<double> grad(int node);

  void backward(const Tensor& loss);

  /// dLoss/dParam accumulated over every backward() call; zeros when unused.
  std::vector<double> gradient(const Parameter& p) const;
  /// Gradient of a node created by leaf().
  std::vector<double> gradient(const Tensor& leaf) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    std::size_t numel = 0;
    std::vector<int> inputs;
    BackwardFn backward;
    Buffer grad;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> watched_;
};

/// Parameter as a graph input, or its plain value when `tape` is null.
Tensor bind(Tape* tape, const Parameter& p);

/// Throws NumericError naming `op` if any value is NaN or infinite.
void check_finite(std::string_view op, std::span<const double> values);

// ---------------------------------------------------------------------------
// Operations. `b` may broadcast over the trailing axes of `a` (b's shape
// equals a suffix of a's shape) or be a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

/// [m x n] * [n x p].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Affine map over the last axis: x[... x n] * w[n x p] + bias[p].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Affine map over axis 1 of x[B x T x D]: out[b] = w[T' x T] * x[b] + bias[T'] (bias per row).
Tensor temporal_linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Zero-padded stride-1 convolution; input [B x H x W x Cin], kernel [k x k x Cin x Cout].
Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias);

/// tanh approximation.
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);
/// Normalizes over the last axis using the biased variance, then applies gamma/beta.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Slice `index` of axis 0, dropping that axis.
Tensor select(const Tensor& a, std::size_t index);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Contiguous range [start, start+length) of `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
/// Zero-pads a square kernel [k x k x Cin x Cout] to [size x size x Cin x Cout], centered.
Tensor embed_kernel(const Tensor& kernel, std::size_t size);

/// sum_i weights[i] * parts[i]; weights has shape [k].
Tensor weighted_sum(const std::vector<Tensor>& parts, const Tensor& weights);

/// x[B x T x C] * scale[B x C] + shift[B x C], broadcast over T. No gradient to scale/shift.
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);

/// out = a * keep + b * (1 - keep) with a constant 0/1 `keep` of a's shape.
Tensor blend(const Tensor& a, const Tensor& b, const Tensor& keep);

/// Mean over samples of -log softmax(logits[b])[labels[b]]; logits [B x n].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Mean of 200*|t - p| / (|t| + |p|) over all elements; terms with |t|+|p| < 1e-8 count as 0.
Tensor smape_loss(const Tensor& pred, const Tensor& target);
/// Mean squared error over positions where weight != 0 (weights are 0/1 constants).
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& weight);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace times2d
