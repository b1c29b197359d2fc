#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "siam/errors.hpp"

namespace siam {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Product of extents; 1 for a rank-0 shape.
Index numel(const Shape& shape);
std::string to_string(const Shape& shape);
/// Throws ShapeError unless every extent is positive.
void check_shape(const Shape& shape);
/// Row-major strides for `shape`.
Shape strides_of(const Shape& shape);

template <typename Scalar>
class Tape;

/// Dense row-major array with an optional link into an autodiff tape.
///
/// Storage is shared between copies and detached on the first mutable access,
/// so a Tensor behaves as a value while copies stay cheap. A tensor produced by
/// an op is tracked exactly when one of the op's inputs was tracked.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using ArrayMap = Eigen::Map<Array>;
  using ConstArrayMap = Eigen::Map<const Array>;

  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = std::make_shared<Array>(Array::Zero(numel(shape_)));
  }
  Tensor(Shape shape, Array values) : shape_(std::move(shape)) {
    check_shape(shape_);
    if (values.size() != numel(shape_)) {
      throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                       std::to_string(numel(shape_)) + " values, got " +
                       std::to_string(values.size()));
    }
    data_ = std::make_shared<Array>(std::move(values));
  }
  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Array(Eigen::Map<const Array>(values.begin(), values.size()))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_->setConstant(value);
    return t;
  }
  static Tensor scalar(Scalar value) { return full(Shape{}, value); }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)); }
  Index size() const noexcept { return data_->size(); }

  const Scalar* data() const noexcept { return data_->data(); }
  std::span<const Scalar> span() const noexcept { return {data_->data(), static_cast<std::size_t>(size())}; }
  const Array& array() const noexcept { return *data_; }
  ConstArrayMap values() const { return ConstArrayMap(data_->data(), data_->size()); }
  Scalar operator[](Index i) const { return (*data_)[i]; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }

  /// Writable view; detaches shared storage first. Does not touch the tape link.
  Scalar* mutable_data() {
    detach();
    return data_->data();
  }
  ArrayMap mutable_values() {
    detach();
    return ArrayMap(data_->data(), data_->size());
  }

  /// Same values, new shape, no tape link.
  Tensor reshaped_value(Shape shape) const {
    check_shape(shape);
    if (numel(shape) != size()) {
      throw ShapeError("cannot view " + to_string(shape_) + " as " + to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    out.tape_ = nullptr;
    out.node_ = -1;
    return out;
  }

  /// Copy of the values with the tape link removed.
  Tensor detached() const {
    Tensor out = *this;
    out.tape_ = nullptr;
    out.node_ = -1;
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_->template cast<Other>());
  }

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape<Scalar>* tape() const noexcept { return tape_; }
  int node() const noexcept { return node_; }

  bool all_finite() const { return data_->isFinite().all(); }
  /// Shares storage with `other`.
  bool shares_storage(const Tensor& other) const noexcept { return data_ == other.data_; }

 private:
  friend class Tape<Scalar>;

  void detach() {
    if (data_.use_count() > 1) data_ = std::make_shared<Array>(*data_);
  }

  Shape shape_;
  std::shared_ptr<Array> data_;
  Tape<Scalar>* tape_ = nullptr;
  int node_ = -1;
};

/// Ordered record of tracked operations for reverse-mode differentiation.
///
/// Nodes are appended as ops run, so the list is already topologically
/// ordered; backward() walks it once in reverse. A tape is single-use:
/// after backward() it is consumed until reset().
template <typename Scalar>
class Tape {
 public:
  using Array = typename Tensor<Scalar>::Array;
  /// Receives d(loss)/d(output) and accumulates into the op's inputs.
  using BackwardFn = std::function<void(const Array& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a tracked leaf. Named leaves are reported by backward().
  Tensor<Scalar> watch(const Tensor<Scalar>& value, const std::string& name = {}) {
    ensure_open();
    if (!name.empty() && named_.count(name) != 0) {
      throw TapeError("leaf '" + name + "' watched twice on one tape");
    }
    Tensor<Scalar> out = value.detached();
    attach(out, nullptr);
    if (!name.empty()) named_.emplace(name, out.node_);
    return out;
  }

  /// Links an op result to the tape with its backward rule.
  Tensor<Scalar> record(Tensor<Scalar> output, BackwardFn backward) {
    ensure_open();
    attach(output, std::move(backward));
    return output;
  }

  /// Adds `grad` to the gradient buffer of `node`; a negative node is ignored.
  template <typename Derived>
  void accumulate(int node, const Eigen::ArrayBase<Derived>& grad) {
    if (node < 0) return;
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.size() == 0) {
      n.grad = grad;
    } else {
      n.grad += grad;
    }
  }

  /// Gradient buffer of `node`, zero-allocated on first use. Lets backward
  /// rules scatter into a slice without materializing a full-size temporary.
  Array& grad_buffer(int node) {
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.size() == 0) n.grad = Array::Zero(numel(n.shape));
    return n.grad;
  }

  /// Runs reverse accumulation from a scalar loss and returns gradients of all
  /// named leaves (zero-filled for leaves the loss does not reach).
  std::map<std::string, Tensor<Scalar>> backward(const Tensor<Scalar>& loss) {
    if (consumed_) throw TapeError("backward called on a consumed tape; reset() it first");
    if (loss.tape_ != this) throw TapeError("loss is not tracked on this tape");
    if (loss.size() != 1) {
      throw TapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    consumed_ = true;
    nodes_[static_cast<std::size_t>(loss.node_)].grad = Array::Ones(1);
    for (int id = loss.node_; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(n.grad, *this);
      n.backward = nullptr;  // releases captured activations
    }
    std::map<std::string, Tensor<Scalar>> grads;
    for (const auto& [name, id] : named_) grads.emplace(name, gradient_of(id));
    return grads;
  }

  /// Gradient of any tracked tensor after backward(); zeros if unreached.
  Tensor<Scalar> grad(const Tensor<Scalar>& t) const {
    if (t.tape_ != this) throw TapeError("tensor is not tracked on this tape");
    return gradient_of(t.node_);
  }

  void reset() {
    nodes_.clear();
    named_.clear();
    consumed_ = false;
  }

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t leaf_count() const noexcept { return named_.size(); }

 private:
  struct Node {
    Shape shape;
    Array grad;
    BackwardFn backward;
  };

  void ensure_open() const {
    if (consumed_) throw TapeError("tape already consumed by backward; reset() before recording");
  }

  void attach(Tensor<Scalar>& t, BackwardFn fn) {
    nodes_.push_back(Node{t.shape_, Array(), std::move(fn)});
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size() - 1);
  }

  Tensor<Scalar> gradient_of(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) return Tensor<Scalar>::zeros(n.shape);
    return Tensor<Scalar>(n.shape, n.grad);
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> named_;
  bool consumed_ = false;
};

/// The tape shared by the tracked tensors among `inputs`, or nullptr if none is
/// tracked. Mixing tapes is an error.
template <typename Scalar>
Tape<Scalar>* common_tape(std::initializer_list<const Tensor<Scalar>*> inputs) {
  Tape<Scalar>* tape = nullptr;
  for (const Tensor<Scalar>* t : inputs) {
    if (t == nullptr || !t->tracked()) continue;
    if (tape != nullptr && tape != t->tape()) throw TapeError("op inputs live on different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace siam
