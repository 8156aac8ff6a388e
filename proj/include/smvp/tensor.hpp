#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "smvp/common.hpp"

namespace smvp::diff {

// Reverse-mode autodiff over dense N-d arrays. Every op producing a tensor
// that (transitively) depends on a requires_grad leaf records a node holding
// its parents and a pull-back closure; backward() runs the closures in
// reverse topological order. Values are immutable once created; only
// parameter leaves are updated in place by the optimizer.

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same extent as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> pullback;  // accumulates into parents' grads

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

inline thread_local bool g_grad_enabled = true;

/// Disables graph recording in scope (rollout / evaluation fast path).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

template <class T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    node_->shape = std::move(shape);
    node_->value.assign(static_cast<size_t>(shape_numel(node_->shape)), fill);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return TensorT(std::move(shape), T(0), requires_grad);
  }

  static TensorT full(Shape shape, T v, bool requires_grad = false) {
    return TensorT(std::move(shape), v, requires_grad);
  }

  static TensorT from_vec(Shape shape, std::vector<T> v,
                          bool requires_grad = false) {
    if (static_cast<int64_t>(v.size()) != shape_numel(shape))
      throw ShapeError("from_vec: " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(v.size()));
    TensorT t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(v);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->ensure_grad();
    return t;
  }

  static TensorT scalar(T v, bool requires_grad = false) {
    return from_vec({1}, {v}, requires_grad);
  }

  static TensorT randn(Shape shape, Rng& rng, T scale = T(1),
                       bool requires_grad = false) {
    TensorT t(std::move(shape), T(0), requires_grad);
    for (auto& x : t.node_->value) x = static_cast<T>(rng.normal()) * scale;
    return t;
  }

  static TensorT rand_uniform(Shape shape, Rng& rng, T lo, T hi,
                              bool requires_grad = false) {
    TensorT t(std::move(shape), T(0), requires_grad);
    for (auto& x : t.node_->value) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t size(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (rg) node_->ensure_grad();
  }

  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const { return node_->grad; }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool has_nonfinite() const {
    for (T v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return true;
    return false;
  }

  /// Value copy with no graph history.
  TensorT detach() const {
    return from_vec(shape(), node_->value, false);
  }

  template <class U>
  TensorT<U> cast() const {
    std::vector<U> v(node_->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(node_->value[i]);
    return TensorT<U>::from_vec(shape(), std::move(v));
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  /// Runs reverse-mode accumulation from this scalar.
  void backward() {
    if (numel() != 1)
      throw ShapeError("backward() requires a scalar, got " +
                       shape_str(shape()));
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    // Iterative post-order DFS over parents.
    std::vector<std::pair<TensorNode<T>*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        TensorNode<T>* p = n->parents[i++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (auto* n : order) n->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->pullback) (*it)->pullback(**it);
  }

  // Op construction helper: result inherits requires_grad from parents and
  // records the pullback only while grad mode is on.
  static TensorT make_op(Shape shape, const char* op,
                         std::vector<TensorT> parents,
                         std::function<void(TensorNode<T>&)> pullback) {
    TensorT out(std::move(shape));
    out.node_->op = op;
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg && g_grad_enabled) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node());
      out.node_->pullback = std::move(pullback);
    }
    return out;
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = TensorT<float>;

template <class T>
void check_finite(const TensorT<T>& t, const std::string& context) {
  if (t.has_nonfinite())
    throw NumericError("non-finite values in " + context);
}

}  // namespace smvp::diff
