#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ir2net/errors.hpp"

namespace ir2net {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  Tape<T>* tape = nullptr;
  std::uint64_t tape_id = 0;  // guards against a later tape reusing the address
  std::int64_t node = -1;

  void accumulate(std::span<const T> g) {
    if (grad.empty()) grad.assign(data.size(), T(0));
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major array with optional participation in a gradient tape.
///
/// Copies share storage. Values are treated as immutable once an op has
/// consumed them; only leaves (parameters, buffers) are edited in place.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Storage = TensorStorage<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Storage> storage) : s_(std::move(storage)) {}

  static BasicTensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static BasicTensor full(Shape shape, T value) {
    auto s = std::make_shared<Storage>();
    const auto n = shape_numel(shape);
    s->shape = std::move(shape);
    s->data.assign(static_cast<std::size_t>(n), value);
    return BasicTensor(std::move(s));
  }

  static BasicTensor from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    auto s = std::make_shared<Storage>();
    s->shape = std::move(shape);
    s->data = std::move(values);
    return BasicTensor(std::move(s));
  }

  static BasicTensor scalar(T value) { return from({}, {value}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::int64_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t ndim() const { return s_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->data.size()); }

  std::span<const T> data() const { return s_->data; }
  std::span<T> mutable_data() { return s_->data; }
  T item() const {
    if (s_->data.size() != 1) throw ContractError("item() on a tensor with " + std::to_string(s_->data.size()) + " elements");
    return s_->data[0];
  }
  T operator[](std::size_t i) const { return s_->data[i]; }

  bool requires_grad() const { return s_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    s_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> mutable_grad() { return s_->grad_buffer(); }
  void zero_grad() { s_->grad.clear(); }

  /// Fresh leaf holding a copy of the values, cut from any tape.
  BasicTensor detach() const { return from(s_->shape, s_->data); }
  BasicTensor clone() const {
    auto t = detach();
    t.set_requires_grad(s_->requires_grad);
    return t;
  }

  bool on_tape(const Tape<T>* tape) const;
  const std::shared_ptr<Storage>& storage() const { return s_; }

 private:
  std::shared_ptr<Storage> s_;
};

using Tensor = BasicTensor<float>;
using WideTensor = BasicTensor<double>;

/// Append-only record of differentiable operations.
///
/// Nodes are appended in execution order, so every node's parents precede it
/// and a reverse sweep is a valid reverse topological order.
template <typename T>
class Tape {
 public:
  using Storage = TensorStorage<T>;

  struct Node {
    std::string_view op;
    std::vector<std::int64_t> parents;
    std::shared_ptr<Storage> output;
    std::function<void(std::span<const T>)> backward;  // receives d(loss)/d(output)
  };

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `output` as produced by `op` from `inputs`.
  void record(std::string_view op, std::span<const std::shared_ptr<Storage>> inputs,
              const std::shared_ptr<Storage>& output,
              std::function<void(std::span<const T>)> backward) {
    if (consumed_) throw ContractError("recording onto a tape that already ran backward");
    Node node{op, {}, output, std::move(backward)};
    for (const auto& in : inputs) {
      if (owns(*in)) {
        bool seen = false;
        for (auto p : node.parents) seen = seen || p == in->node;
        if (!seen) node.parents.push_back(in->node);
      }
    }
    output->tape = this;
    output->tape_id = id_;
    output->node = static_cast<std::int64_t>(nodes_.size());
    output->requires_grad = true;
    nodes_.push_back(std::move(node));
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node once.
  void backward(const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward() needs a scalar loss");
    }
    if (!loss.on_tape(this)) throw ContractError("backward() loss was not produced on this tape");
    if (consumed_) throw ContractError("tape already consumed by a previous backward()");
    visits_.assign(nodes_.size(), 0);
    std::vector<bool> needed(nodes_.size(), false);
    const auto root = loss.storage()->node;
    needed[static_cast<std::size_t>(root)] = true;
    loss.storage()->grad_buffer()[0] += T(1);
    for (std::int64_t i = root; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (!needed[static_cast<std::size_t>(i)]) continue;
      ++visits_[static_cast<std::size_t>(i)];
      for (auto p : node.parents) needed[static_cast<std::size_t>(p)] = true;
      if (node.output->grad.empty()) continue;
      node.backward(node.output->grad);
    }
    consumed_ = true;
    for (auto& node : nodes_) node.backward = nullptr;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  /// Per-node visit counts of the last backward sweep.
  const std::vector<int>& visits() const { return visits_; }
  bool consumed() const { return consumed_; }
  bool owns(const Storage& s) const { return s.tape == this && s.tape_id == id_ && s.node >= 0; }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<int> visits_;
  bool consumed_ = false;
};

template <typename T>
bool BasicTensor<T>::on_tape(const Tape<T>* tape) const {
  return tape != nullptr && tape->owns(*s_);
}

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
}  // namespace detail

template <typename T>
Tape<T>* active_tape() {
  return detail::active_tape_slot<T>();
}

/// Makes `tape` the recording target for the current thread until scope exit.
/// Without an active tape, ops run as pure functions and record nothing.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>* tape) : prev_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = tape;
  }
  ~TapeScope() { detail::active_tape_slot<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Suspends recording (gradient-detached region).
template <typename T>
class NoGradScope : public TapeScope<T> {
 public:
  NoGradScope() : TapeScope<T>(nullptr) {}
};

}  // namespace ir2net
