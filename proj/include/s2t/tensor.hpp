#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace s2t {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Raised when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an operation's preconditions.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

template <typename Scalar>
struct TensorData {
  Shape shape;
  std::vector<Scalar> values;
  std::vector<Scalar> grad;  // empty until a gradient is written
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a handle: copies share the same buffers, which is what lets the
/// autodiff tape write gradients back into parameters. Use clone() for a deep,
/// detached copy.
template <typename Scalar>
class Tensor {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : data_(std::make_shared<TensorData<Scalar>>()) {
    const Index n = checked_numel(shape);
    data_->shape = std::move(shape);
    data_->values.assign(static_cast<std::size_t>(n), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> values) : data_(std::make_shared<TensorData<Scalar>>()) {
    const Index n = checked_numel(shape);
    if (static_cast<Index>(values.size()) != n) {
      throw DimensionError("Tensor: shape " + shape_str(shape) + " needs " + std::to_string(n) +
                           " values, got " + std::to_string(values.size()));
    }
    data_->shape = std::move(shape);
    data_->values = std::move(values);
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, std::vector<Scalar>{v}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  int rank() const { return static_cast<int>(data_->shape.size()); }
  Index numel() const { return static_cast<Index>(data_->values.size()); }

  Index dim(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("Tensor::dim: axis out of range for " + shape_str(shape()));
    return data_->shape[static_cast<std::size_t>(a)];
  }

  std::span<Scalar> values() { return data_->values; }
  std::span<const Scalar> values() const { return data_->values; }

  bool has_grad() const { return data_ && !data_->grad.empty(); }

  /// Gradient buffer, allocated (zero-filled) on first access. Mutable through
  /// a const handle, like the pointee of a const shared_ptr.
  std::span<Scalar> grad() const {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), Scalar(0));
    return data_->grad;
  }

  void zero_grad() {
    if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), Scalar(0));
  }

  Scalar item() const {
    if (numel() != 1) throw ContractError("Tensor::item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return data_->values[0];
  }

  Scalar& operator[](Index i) { return data_->values[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](Index i) const { return data_->values[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return data_ && data_->requires_grad; }
  bool is_leaf() const { return data_->is_leaf; }
  Tensor& set_requires_grad(bool on) {
    data_->requires_grad = on;
    return *this;
  }

  Tensor clone() const {
    Tensor out(shape(), std::vector<Scalar>(data_->values));
    return out;
  }

  MatrixMap matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return MatrixMap(data_->values.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap(data_->values.data(), rows, cols);
  }

  bool is(const Tensor& other) const { return data_ == other.data_; }
  const std::shared_ptr<TensorData<Scalar>>& data() const { return data_; }

 private:
  static Index checked_numel(const Shape& shape) {
    for (Index e : shape) {
      if (e <= 0) throw DimensionError("Tensor: non-positive extent in shape " + shape_str(shape));
    }
    return shape_numel(shape);
  }

  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) {
      throw DimensionError("Tensor::matrix: " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " view of shape " + shape_str(shape()));
    }
  }

  std::shared_ptr<TensorData<Scalar>> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Thread-local switch for tape recording. Shared by every scalar type.
bool grad_enabled();
void set_grad_enabled(bool on);

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode tape. One instance per thread and scalar type; nodes are
/// appended in construction order and replayed in exact reverse order.
template <typename Scalar>
class Graph {
 public:
  struct Node {
    const char* op = "";
    std::shared_ptr<TensorData<Scalar>> output;
    std::function<void()> backward;
  };

  static Graph& current();

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  /// Populates dLoss/dT for every requires_grad leaf reachable from `loss`.
  /// Leaf gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor<Scalar>& loss);

 private:
  std::vector<Node> nodes_;
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Graph<Scalar>::current().backward(loss);
}

/// Attaches `out` to the tape as the product of `inputs`. `backward_fn` must
/// read out.grad() and accumulate into the grads of inputs that require them.
/// A no-op when recording is disabled or no input requires a gradient.
template <typename Scalar>
void record_op(const char* op, Tensor<Scalar>& out, std::initializer_list<const Tensor<Scalar>*> inputs,
               std::function<void()> backward_fn) {
  if (!grad_enabled()) return;
  bool any = false;
  for (const Tensor<Scalar>* t : inputs) any = any || (t->defined() && t->requires_grad());
  if (!any) return;
  out.data()->requires_grad = true;
  out.data()->is_leaf = false;
  Graph<Scalar>::current().record({op, out.data(), std::move(backward_fn)});
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> v(t.values().begin(), t.values().end());
  return Tensor<To>(t.shape(), std::move(v));
}

template <typename Scalar>
bool all_finite(std::span<const Scalar> v) {
  for (Scalar x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return all_finite<Scalar>(std::span<const Scalar>(t.values()));
}

}  // namespace s2t
