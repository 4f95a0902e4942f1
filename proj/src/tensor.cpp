#include "mmnas/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace mmnas {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

namespace detail {

std::vector<double>& grad_buffer(TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

}  // namespace detail

namespace {

std::shared_ptr<detail::TensorNode> make_node(Shape shape,
                                              std::vector<double> data,
                                              bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  if (node->data.size() != shape_numel(node->shape)) {
    throw std::invalid_argument("tensor: data size " + std::to_string(node->data.size()) +
                                " does not match shape " + shape_str(node->shape));
  }
  return node;
}

detail::TensorNode& deref(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("tensor: undefined handle");
  return *t.node();
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_node({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return deref(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw std::out_of_range("tensor: axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return deref(*this).data.size(); }

bool Tensor::requires_grad() const { return deref(*this).requires_grad; }

void Tensor::set_requires_grad(bool value) { deref(*this).requires_grad = value; }

std::span<double> Tensor::values() { return deref(*this).data; }

std::span<const double> Tensor::values() const { return deref(*this).data; }

double Tensor::value() const {
  if (numel() != 1) {
    throw std::invalid_argument("tensor: value() on non-scalar shape " + shape_str(shape()));
  }
  return deref(*this).data[0];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  auto& node = deref(*this);
  if (index.size() != node.shape.size()) throw std::invalid_argument("tensor: index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node.shape[axis]) throw std::out_of_range("tensor: index out of range");
    flat = flat * node.shape[axis] + i;
    ++axis;
  }
  return node.data[flat];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return const_cast<Tensor*>(this)->at(index);
}

bool Tensor::has_grad() const { return !deref(*this).grad.empty(); }

std::span<const double> Tensor::grad() const {
  auto& node = deref(*this);
  if (node.grad.empty()) throw std::runtime_error("tensor: gradient not populated");
  return node.grad;
}

void Tensor::zero_grad() { deref(*this).grad.clear(); }

bool Tensor::all_finite() const {
  for (double v : deref(*this).data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::clone() const {
  auto& node = deref(*this);
  return Tensor(make_node(node.shape, node.data, node.requires_grad));
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
  if (consumed_) throw std::runtime_error("tape: cannot record after backward");
  steps_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (consumed_) throw std::runtime_error("backward: tape already consumed");
  if (steps_.empty()) throw std::runtime_error("backward: empty tape");
  consumed_ = true;
  detail::grad_buffer(*loss.node())[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Elementwise primitives

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape(), any_requires_grad({&a, &b}));
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on] {
      const auto& g = detail::grad_buffer(*on);
      if (an->requires_grad) {
        auto& ga = detail::grad_buffer(*an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = detail::grad_buffer(*bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape(), any_requires_grad({&a, &b}));
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on] {
      const auto& g = detail::grad_buffer(*on);
      if (an->requires_grad) {
        auto& ga = detail::grad_buffer(*an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& gb = detail::grad_buffer(*bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (should_record({&a})) {
    auto an = a.node(), on = out.node();
    Tape::active()->record([an, on] {
      const auto& g = detail::grad_buffer(*on);
      auto& ga = detail::grad_buffer(*an);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (an->data[i] > 0.0) ga[i] += g[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
  if (should_record({&a})) {
    auto an = a.node(), on = out.node();
    Tape::active()->record([an, on, factor] {
      const auto& g = detail::grad_buffer(*on);
      auto& ga = detail::grad_buffer(*an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor sum_tensors(std::span<const Tensor> tensors) {
  if (tensors.empty()) throw std::invalid_argument("sum_tensors: empty input");
  bool rg = false;
  for (const Tensor& t : tensors) {
    check_same_shape("sum_tensors", tensors[0], t);
    rg = rg || t.requires_grad();
  }
  Tensor out = Tensor::zeros(tensors[0].shape(), rg);
  auto ov = out.values();
  for (const Tensor& t : tensors) {
    auto tv = t.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += tv[i];
  }
  if (rg && Tape::active()) {
    std::vector<std::shared_ptr<detail::TensorNode>> ins;
    ins.reserve(tensors.size());
    for (const Tensor& t : tensors) ins.push_back(t.node());
    auto on = out.node();
    Tape::active()->record([ins, on] {
      const auto& g = detail::grad_buffer(*on);
      for (const auto& in : ins) {
        if (!in->requires_grad) continue;
        auto& gi = detail::grad_buffer(*in);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::zeros({1}, a.requires_grad());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  out.values()[0] = acc;
  if (should_record({&a})) {
    auto an = a.node(), on = out.node();
    Tape::active()->record([an, on] {
      double g = detail::grad_buffer(*on)[0];
      auto& ga = detail::grad_buffer(*an);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

}  // namespace mmnas
