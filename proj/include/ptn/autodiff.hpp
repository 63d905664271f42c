#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ptn/tensor.hpp"

namespace ptn {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  /// Returns the gradient buffer, allocating zeros on first use.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty() && grad.size() == value.size(); }
};

/// Shared handle to a value on (or off) the tape. Copies alias the same node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>(Node<T>{std::move(value), {}, requires_grad})) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  Node<T>* node() const { return node_.get(); }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Records are appended in execution order, so every record's inputs were
/// produced by earlier records (or are leaves). backward() walks them in reverse.
template <typename T>
class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<Var<T>> inputs;
    Var<T> output;
    std::function<void()> backward;
  };

  /// Appends a record when recording is enabled and some input needs a gradient.
  /// Returns whether the output was marked as requiring a gradient.
  bool record(std::string op, std::vector<Var<T>> inputs, Var<T>& output, std::function<void()> backward);

  /// True when an op with these inputs should build backward state.
  bool wants(std::initializer_list<const Var<T>*> inputs) const;

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

 private:
  std::vector<Record> records_;
  bool recording_ = true;
};

/// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in reverse.
/// Throws ArgumentError if `loss` is not a single-element tensor.
template <typename T>
void backward(const Var<T>& loss, Tape<T>& tape);

}  // namespace ptn
