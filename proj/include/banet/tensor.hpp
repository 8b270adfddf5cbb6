#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "banet/errors.hpp"

namespace banet {

/// Scalar width of a graph. Training runs in f32, verification in f64.
enum class Precision { f32, f64 };

Precision parse_precision(std::string_view text);
std::string_view to_string(Precision p);

/// Extents of a rank-4 [batch, channel, height, width] tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

template <typename T>
class Tape;

/// Dense NCHW tensor with shared storage. Copies are shallow; use clone()
/// for a deep copy. A tensor produced while recording carries the id of its
/// tape node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }
  bool empty() const { return storage_ == nullptr; }

  std::span<const T> data() const { return {storage_->values}; }
  /// Writable view. Only leaves (parameters, inputs) should be written.
  std::span<T> mutable_data() { return {storage_->values}; }

  T item() const;
  T at(int n, int c, int h, int w) const {
    return storage_->values[offset(n, c, h, w)];
  }
  T& at(int n, int c, int h, int w) {
    return storage_->values[offset(n, c, h, w)];
  }
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  /// Marks the tensor as a trainable leaf and allocates a zeroed grad buffer.
  void set_requires_grad(bool on);
  /// True once a backward pass has accumulated into this leaf.
  bool has_grad() const { return storage_ && storage_->grad_touched; }
  std::span<const T> grad() const { return {storage_->grad}; }
  std::span<T> mutable_grad() { return {storage_->grad}; }
  void zero_grad();

  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr; }

  /// Same storage, no tape handle.
  Tensor detach() const;
  Tensor clone() const;
  bool shares_storage(const Tensor& other) const {
    return storage_ == other.storage_;
  }
  const void* storage_id() const { return storage_.get(); }

  bool all_finite() const;

 private:
  friend class Tape<T>;

  struct Storage {
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
    bool grad_touched = false;
  };

  Shape shape_{};
  std::shared_ptr<Storage> storage_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

enum class OpKind {
  leaf,
  conv2d,
  avg_pool2d,
  global_avg_pool,
  bilinear_resize,
  sigmoid,
  relu,
  add,
  sub,
  mul,
  scalar_rsub,
  concat_channels,
  sum,
  bce_loss,
};

std::string_view to_string(OpKind kind);

/// Records operations in execution order for one reverse-mode pass. A tape
/// is single-use: call reset() before recording a new graph on it.
template <typename T>
class Tape {
 public:
  /// Called with the node's output gradient; adds into input gradients
  /// obtained through grad_for().
  using BackwardFn = std::function<void(std::span<const T>, Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Returns a handle to `leaf` recorded on this tape. Watching the same
  /// storage twice yields the same node.
  Tensor<T> watch(const Tensor<T>& leaf, std::string label = {});

  Tensor<T> record(OpKind kind, std::vector<int> inputs, Tensor<T> output,
                   BackwardFn backward);

  void backward(const Tensor<T>& loss);

  /// Gradient buffer of a node, allocated on first use. Empty for node -1.
  std::span<T> grad_for(int node);
  /// Gradient reached by `t` in the last backward pass (empty if none).
  std::span<const T> grad(const Tensor<T>& t) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(int node) const { return nodes_.at(node).kind; }
  const std::vector<int>& inputs(int node) const {
    return nodes_.at(node).inputs;
  }
  bool backward_done() const { return done_; }

  /// Index of the first node whose value contains NaN/Inf, or -1.
  int first_non_finite() const;
  std::string describe(int node) const;

  void reset();

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Tensor<T> value;
    BackwardFn backward;
    std::vector<T> grad;
    std::string label;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> watched_;
  bool done_ = false;
};

/// Tape shared by the recorded inputs, or nullptr when none is recorded.
/// Mixing two tapes is an error.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative extent in shape " + to_string(shape));
  }
  storage_ = std::make_shared<Storage>();
  storage_->values.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(shape) {
  if (values.size() != shape.numel()) {
    throw ShapeError("buffer of " + std::to_string(values.size()) +
                     " values does not match shape " + to_string(shape));
  }
  storage_ = std::make_shared<Storage>();
  storage_->values = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
  }
  return storage_->values[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  storage_->requires_grad = on;
  if (on) {
    storage_->grad.assign(numel(), T(0));
  } else {
    storage_->grad.clear();
  }
  storage_->grad_touched = false;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
  storage_->grad_touched = false;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out = *this;
  out.tape_ = nullptr;
  out.node_ = -1;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(shape_, storage_->values);
  return out;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : storage_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& leaf, std::string label) {
  if (leaf.empty()) throw ShapeError("cannot watch an empty tensor");
  if (leaf.tape_ == this) return leaf;
  if (leaf.tape_ != nullptr) {
    throw ShapeError("tensor is already recorded on another tape");
  }
  if (auto it = watched_.find(leaf.storage_id()); it != watched_.end()) {
    Tensor<T> out = leaf;
    out.tape_ = this;
    out.node_ = it->second;
    return out;
  }
  Tensor<T> out = leaf;
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{OpKind::leaf, {}, leaf.detach(), {}, {},
                        std::move(label)});
  watched_.emplace(leaf.storage_id(), out.node_);
  return out;
}

template <typename T>
Tensor<T> Tape<T>::record(OpKind kind, std::vector<int> inputs,
                          Tensor<T> output, BackwardFn backward) {
  if (done_) throw ShapeError("recording on a tape after backward(); reset it");
  output.tape_ = this;
  output.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(
      Node{kind, std::move(inputs), output.detach(), std::move(backward), {}, {}});
  return output;
}

template <typename T>
std::span<T> Tape<T>::grad_for(int node) {
  if (node < 0) return {};
  Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
  return {n.grad};
}

template <typename T>
std::span<const T> Tape<T>::grad(const Tensor<T>& t) const {
  if (t.tape_ != this || t.node_ < 0) return {};
  return {nodes_[static_cast<std::size_t>(t.node_)].grad};
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.tape_ != this || loss.node_ < 0) {
    throw ShapeError("backward() on a tensor that is not recorded on this tape");
  }
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar root, got " +
                     to_string(loss.shape()));
  }
  if (done_) throw ShapeError("backward() called twice without reset()");
  done_ = true;

  grad_for(loss.node_)[0] = T(1);
  for (int i = loss.node_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    // Inputs always precede n, so n.grad is never reallocated here.
    n.backward(std::span<const T>(n.grad), *this);
  }
  for (Node& n : nodes_) {
    if (n.kind != OpKind::leaf || n.grad.empty()) continue;
    auto& storage = *n.value.storage_;
    if (!storage.requires_grad) continue;
    for (std::size_t k = 0; k < n.grad.size(); ++k) storage.grad[k] += n.grad[k];
    storage.grad_touched = true;
  }
}

template <typename T>
int Tape<T>::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.all_finite()) return static_cast<int>(i);
  }
  return -1;
}

template <typename T>
std::string Tape<T>::describe(int node) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(node));
  std::string out = "node #" + std::to_string(node) + " (" +
                    std::string(to_string(n.kind));
  if (!n.label.empty()) out += " '" + n.label + "'";
  out += ", shape " + to_string(n.value.shape()) + ")";
  return out;
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  watched_.clear();
  done_ = false;
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t == nullptr || t->tape() == nullptr) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw ShapeError("operation mixes tensors from two different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

}  // namespace banet
