#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmnas {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

/// Shared storage behind a Tensor handle. The gradient buffer is allocated
/// lazily on first accumulation so tensors that never participate in a
/// backward pass carry no grad.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};

std::vector<double>& grad_buffer(TensorNode& node);

}  // namespace detail

/// Dense N-dimensional double tensor with value semantics on the handle and
/// shared storage underneath. Row-major layout, last axis fastest.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  bool requires_grad() const;
  void set_requires_grad(bool value);

  std::span<double> values();
  std::span<const double> values() const;

  /// Scalar extraction; throws unless numel() == 1.
  double value() const;

  /// Row-major element access, mainly for tests and small fixtures.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Drops the gradient buffer (has_grad becomes false).
  void zero_grad();

  bool all_finite() const;

  /// Deep copy of values (fresh storage, no graph history).
  Tensor clone() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

/// Reverse-mode tape. Constructing a Tape makes it the active recorder for
/// the current thread; primitives executed while it is active append their
/// backward steps. One backward() consumes the tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_step);
  void backward(const Tensor& loss);

  std::size_t size() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// Elementwise primitives. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

/// Sum of identically shaped tensors in one tape step.
Tensor sum_tensors(std::span<const Tensor> tensors);

/// Reduces to a scalar.
Tensor sum_all(const Tensor& a);

}  // namespace mmnas
