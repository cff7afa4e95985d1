#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dseg/common.hpp"
#include "dseg/rng.hpp"

namespace dseg {

enum class OpKind { add, mul, sub, div, relu, sigmoid, log, exp, power };

template <typename T>
class Tape;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Dense row-major n-d array. A Tensor is a cheap handle over shared storage;
// it may additionally be bound to a Tape, in which case ops consuming it
// record backward rules there. Tensors that never touch a tape are immutable
// after construction as far as the op library is concerned and can be shared
// across threads.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T v);
  static Tensor from(Shape shape, std::vector<T> data);
  static Tensor scalar(T v) { return from({1}, {v}); }
  // Fan-in scaled uniform in [-limit, limit]; used by parameter init.
  static Tensor uniform(Shape shape, T limit, Rng& rng);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  int64_t rank() const { return static_cast<int64_t>(storage_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(storage_->value.size()); }

  std::vector<T>& data() { return storage_->value; }
  const std::vector<T>& data() const { return storage_->value; }
  std::vector<T>& grad() { return storage_->grad; }
  const std::vector<T>& grad() const { return storage_->grad; }

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    storage_->requires_grad = on;
    if (on) storage_->ensure_grad();
    return *this;
  }
  void zero_grad() {
    if (storage_->requires_grad) storage_->grad.assign(storage_->value.size(), T(0));
  }

  // Scalar extraction (size must be 1).
  T item() const {
    require(size() == 1, "item() requires a single-element tensor, got shape " +
                             shape_str(shape()));
    return storage_->value[0];
  }

  // Same storage, bound to `tape` so downstream ops record onto it.
  Tensor attached(Tape<T>& tape) const {
    Tensor t = *this;
    t.tape_ = &tape;
    return t;
  }
  Tape<T>* tape() const { return tape_; }

  // Deep copy of values (grad state not copied).
  Tensor clone() const { return from(shape(), data()); }

  std::shared_ptr<TensorStorage<T>> storage_;
  Tape<T>* tape_ = nullptr;
};

// Records one backward closure per op, in execution order. Single-owner:
// record and backward must happen on one logical thread.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the nodes once in reverse order.
  // Every requires_grad tensor reachable from `loss` ends with its grad
  // populated; unreachable tensors keep zero grad.
  void backward(const Tensor<T>& loss);

 private:
  std::vector<std::function<void()>> nodes_;
};

template <typename T>
void backward(const Tensor<T>& loss);

// ---------------------------------------------------------------------------
// Op library. Binary ops broadcast by the trailing-dimension rule.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> elementwise(OpKind kind, const Tensor<T>& a, const Tensor<T>* b = nullptr);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> pow_elem(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> log_elem(const Tensor<T>& a);
template <typename T> Tensor<T> exp_elem(const Tensor<T>& a);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
// Gradient passes through the unclamped region and is zero outside it.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// Rank 2..3. The leading (batch) dimension broadcasts when one side is rank-2
// or has batch size 1. Gradients: dA = dC.Bᵀ, dB = Aᵀ.dC.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> sum(const Tensor<T>& a);   // scalar
template <typename T> Tensor<T> mean(const Tensor<T>& a);  // scalar

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape new_shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& a);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (central differences, step h).
// ---------------------------------------------------------------------------

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int64_t worst_coord = -1;
  int64_t coords_checked = 0;
  std::string detail;  // set on failure (NaN coordinate, tolerance breach)
};

// f must map a tensor to a scalar tensor. Up to max_coords coordinates are
// sampled (all of them when the tensor is small). Relative error per
// coordinate: |g_ad - g_fd| / (|g_ad| + |g_fd| + eps).
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           const Tensor<T>& x, double h, double tol,
                           int64_t max_coords, Rng& rng);

}  // namespace dseg
