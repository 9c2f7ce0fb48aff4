#include "csunet/autodiff.hpp"

#include <algorithm>

namespace csunet {

template <typename T>
Parameter<T>& ParameterRegistry<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Parameter<T> p;
  p.name = name;
  p.grad = Tensor<T>::zeros(value.shape());
  p.value = std::move(value);
  p.trainable = trainable;
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(p));
  return entries_.back();
}

template <typename T>
Parameter<T>& ParameterRegistry<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second];
}

template <typename T>
const Parameter<T>& ParameterRegistry<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second];
}

template <typename T>
std::int64_t ParameterRegistry<T>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& p : entries_) {
    if (p.trainable) n += p.value.numel();
  }
  return n;
}

template <typename T>
void ParameterRegistry<T>::zero_grad() {
  for (auto& p : entries_) p.zero_grad();
}

template <typename T>
T* Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
  return grad.data();
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (g.numel() != value.numel()) {
    throw ShapeError(std::string("gradient shape ") + to_string(g.shape()) + " does not match value " +
                     to_string(value.shape()) + " in op " + op);
  }
  if (grad.empty()) {
    grad = g.reshaped(value.shape());
    return;
  }
  T* dst = grad.data();
  const T* src = g.data();
  const auto n = g.numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
void Node<T>::accumulate_at(std::int64_t i, T g) {
  grad_buffer()[i] += g;
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node), nullptr);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (!node_->grad.empty()) return node_->grad;
  return Tensor<T>::zeros(node_->value.shape());
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) nodes_.push_back(node);
  return Var<T>(std::move(node), this);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  auto node = std::make_shared<Node<T>>();
  node->value = p.value;
  node->requires_grad = p.trainable;
  node->param = p.trainable ? &p : nullptr;
  node->op = "param";
  if (p.trainable) nodes_.push_back(node);
  return Var<T>(std::move(node), this);
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (consumed_) throw TapeError("backward called twice on a consumed tape");
  if (loss.value().numel() != 1) {
    throw TapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (loss.tape() != this || !loss.requires_grad()) {
    throw TapeError("loss is not reachable from this tape");
  }
  loss.node()->grad = Tensor<T>::full(loss.shape(), T(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& node = **it;
    if (node.grad.empty()) continue;
    if (node.backward) node.backward(node.grad);
    if (node.param) {
      T* dst = node.param->grad.data();
      const T* src = node.grad.data();
      const auto n = node.grad.numel();
      for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
  }
  // Saved contexts hold references to inputs; drop them so activations free.
  for (auto& n : nodes_) n->backward = nullptr;
  nodes_.clear();
  consumed_ = true;
}

template <typename T>
Var<T> record(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
              std::function<void(const Tensor<T>&)> backward) {
  if (!value.all_finite()) throw NonFiniteError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  Tape<T>* tape = nullptr;
  bool needs = false;
  for (const auto& in : inputs) {
    if (!tape && in.tape()) tape = in.tape();
    needs = needs || in.requires_grad();
  }
  if (needs && tape) {
    if (tape->consumed()) throw TapeError("recording on a consumed tape");
    node->requires_grad = true;
    node->backward = std::move(backward);
    tape->push(node);
  }
  return Var<T>(std::move(node), tape);
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterRegistry<float>;
template class ParameterRegistry<double>;
template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;
template Var<float> record(const char*, Tensor<float>, std::vector<Var<float>>,
                           std::function<void(const Tensor<float>&)>);
template Var<double> record(const char*, Tensor<double>, std::vector<Var<double>>,
                            std::function<void(const Tensor<double>&)>);

}  // namespace csunet
