#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "csunet/tensor.hpp"

namespace csunet {

/// Named tensor owned by a network. Trainable parameters receive gradients;
/// non-trainable entries (normalization running statistics) are persisted
/// alongside them but never touched by optimizers.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { grad.fill(T(0)); }
};

/// Insertion-ordered parameter store with stable element addresses.
template <typename T>
class ParameterRegistry {
 public:
  ParameterRegistry() = default;
  ParameterRegistry(const ParameterRegistry&) = delete;
  ParameterRegistry& operator=(const ParameterRegistry&) = delete;

  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true);

  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Number of trainable scalars.
  std::int64_t trainable_count() const;
  void zero_grad();

 private:
  std::deque<Parameter<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

/// One recorded value in the graph.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  Parameter<T>* param = nullptr;
  std::function<void(const Tensor<T>&)> backward;
  const char* op = "leaf";

  void accumulate(const Tensor<T>& g);
  void accumulate_at(std::int64_t i, T g);
  T* grad_buffer();
};

/// Handle to a value, possibly recorded on a tape. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;

  /// Untracked value; ops over untracked inputs record nothing.
  static Var constant(Tensor<T> value);

  const Tensor<T>& value() const& { return node_->value; }
  /// Copy out, so the result outlives a temporary Var.
  Tensor<T> value() && { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<T>* tape() const noexcept { return tape_; }
  bool defined() const noexcept { return static_cast<bool>(node_); }

  /// Gradient accumulated into this node by the last backward pass (zeros if
  /// the node was unreachable).
  Tensor<T> grad() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  friend class Tape<T>;
  template <typename U>
  friend Var<U> record(const char*, Tensor<U>, std::vector<Var<U>>,
                       std::function<void(const Tensor<U>&)>);

  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

/// Raised for misuse of the tape (non-scalar loss, replayed backward).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Ordered record of forward operations. Backward walks it in exact reverse
/// and then clears it; a consumed tape rejects a second backward.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> input(Tensor<T> value, bool requires_grad = false);
  Var<T> param(Parameter<T>& p);

  void backward(const Var<T>& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void push(std::shared_ptr<Node<T>> node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  bool consumed_ = false;
};

/// Create the output node of an op. The node is recorded only when some input
/// requires a gradient; `backward` receives dL/d(output).
template <typename T>
Var<T> record(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
              std::function<void(const Tensor<T>&)> backward);

extern template struct Parameter<float>;
extern template struct Parameter<double>;
extern template class ParameterRegistry<float>;
extern template class ParameterRegistry<double>;
extern template struct Node<float>;
extern template struct Node<double>;
extern template class Var<float>;
extern template class Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace csunet
