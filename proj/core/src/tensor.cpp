#include "dseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include "gemm.hpp"

namespace dseg {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

template <typename T>
std::shared_ptr<TensorStorage<T>> make_storage(Shape shape, std::vector<T> data) {
  auto st = std::make_shared<TensorStorage<T>>();
  st->shape = std::move(shape);
  st->value = std::move(data);
  return st;
}

// Result of aligning two shapes under the trailing-dimension broadcast rule.
struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> stride_a;  // per out dim; 0 where a broadcasts
  std::vector<int64_t> stride_b;
  bool trivial_a = false;  // a already has the out shape
  bool trivial_b = false;
};

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  const size_t ra = a.size(), rb = b.size(), ro = std::max(ra, rb);
  plan.out.resize(ro);
  for (size_t i = 0; i < ro; ++i) {
    const int64_t da = i < ro - ra ? 1 : a[i - (ro - ra)];
    const int64_t db = i < ro - rb ? 1 : b[i - (ro - rb)];
    if (da != db && da != 1 && db != 1)
      fail("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    plan.out[i] = std::max(da, db);
  }
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  plan.stride_a.assign(ro, 0);
  plan.stride_b.assign(ro, 0);
  for (size_t i = 0; i < ro; ++i) {
    if (i >= ro - ra && a[i - (ro - ra)] != 1) plan.stride_a[i] = sa[i - (ro - ra)];
    if (i >= ro - rb && b[i - (ro - rb)] != 1) plan.stride_b[i] = sb[i - (ro - rb)];
  }
  plan.trivial_a = (a == plan.out);
  plan.trivial_b = (b == plan.out);
  return plan;
}

// Calls fn(out_idx, a_idx, b_idx) for every output coordinate.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& fn) {
  const int64_t n = numel(plan.out);
  const size_t r = plan.out.size();
  std::vector<int64_t> counter(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t io = 0; io < n; ++io) {
    fn(io, ia, ib);
    for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
      ++counter[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (counter[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      counter[d] = 0;
    }
  }
}

template <typename T>
bool any_grad(const Tensor<T>& a) {
  return a.requires_grad();
}

template <typename T>
Tape<T>* pick_tape(const Tensor<T>& a, const Tensor<T>* b = nullptr) {
  if (a.tape()) return a.tape();
  if (b && b->tape()) return b->tape();
  return nullptr;
}

// Creates the output tensor for an op and decides whether grads flow.
template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> value, Tape<T>* tape, bool needs_grad) {
  Tensor<T> out;
  out.storage_ = make_storage<T>(std::move(shape), std::move(value));
  out.tape_ = tape;
  if (tape && needs_grad) {
    out.storage_->requires_grad = true;
    out.storage_->ensure_grad();
  }
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor construction
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const int64_t n = numel(shape);
  require(n >= 0, "negative dimension in shape " + shape_str(shape));
  Tensor<T> t;
  t.storage_ = make_storage<T>(std::move(shape), std::vector<T>(n, T(0)));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
  const int64_t n = numel(shape);
  Tensor<T> t;
  t.storage_ = make_storage<T>(std::move(shape), std::vector<T>(n, v));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data) {
  require(numel(shape) == static_cast<int64_t>(data.size()),
          "data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(shape));
  Tensor<T> t;
  t.storage_ = make_storage<T>(std::move(shape), std::move(data));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, T limit, Rng& rng) {
  const int64_t n = numel(shape);
  std::vector<T> data(n);
  for (int64_t i = 0; i < n; ++i)
    data[i] = static_cast<T>(rng.uniform(-static_cast<double>(limit), static_cast<double>(limit)));
  return from(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  require(loss.defined() && loss.size() == 1,
          "backward requires a scalar loss, got shape " +
              (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  loss.storage_->ensure_grad();
  loss.storage_->grad[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.tape() != nullptr, "backward: loss is not attached to a tape");
  loss.tape()->backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> unary_op(OpKind kind, const Tensor<T>& a) {
  const int64_t n = a.size();
  const auto& av = a.data();
  std::vector<T> out(n);
  switch (kind) {
    case OpKind::relu:
      for (int64_t i = 0; i < n; ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
      break;
    case OpKind::sigmoid:
      for (int64_t i = 0; i < n; ++i) out[i] = stable_sigmoid(av[i]);
      break;
    case OpKind::log:
      for (int64_t i = 0; i < n; ++i) {
        require(av[i] > T(0), "log of non-positive input at coordinate " + std::to_string(i));
        out[i] = std::log(av[i]);
      }
      break;
    case OpKind::exp:
      for (int64_t i = 0; i < n; ++i) out[i] = std::exp(av[i]);
      break;
    default:
      fail("unary elementwise called with a binary op kind");
  }
  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>(a.shape(), std::move(out), tape, any_grad(a));
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([kind, sa, so, n]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      const T* g = so->grad.data();
      const T* x = sa->value.data();
      const T* y = so->value.data();
      T* gx = sa->grad.data();
      switch (kind) {
        case OpKind::relu:
          for (int64_t i = 0; i < n; ++i) gx[i] += x[i] > T(0) ? g[i] : T(0);
          break;
        case OpKind::sigmoid:
          for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
          break;
        case OpKind::log:
          for (int64_t i = 0; i < n; ++i) gx[i] += g[i] / x[i];
          break;
        case OpKind::exp:
          for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
          break;
        default:
          break;
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> binary_op(OpKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const BroadcastPlan plan = broadcast_plan(a.shape(), b.shape());
  const int64_t n = numel(plan.out);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> out(n);

  auto apply = [kind](T x, T y) -> T {
    switch (kind) {
      case OpKind::add: return x + y;
      case OpKind::sub: return x - y;
      case OpKind::mul: return x * y;
      case OpKind::div: return x / y;
      case OpKind::power: return std::pow(x, y);
      default: fail("binary elementwise called with a unary op kind");
    }
  };

  if (kind == OpKind::div) {
    for (int64_t i = 0; i < static_cast<int64_t>(bv.size()); ++i)
      require(bv[i] != T(0), "division by zero at coordinate " + std::to_string(i));
  }
  if (kind == OpKind::power && b.requires_grad()) {
    for (int64_t i = 0; i < static_cast<int64_t>(av.size()); ++i)
      require(av[i] > T(0),
              "pow with differentiable exponent requires positive base, got non-positive at " +
                  std::to_string(i));
  }

  if (plan.trivial_a && plan.trivial_b) {
    for (int64_t i = 0; i < n; ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(plan, [&](int64_t io, int64_t ia, int64_t ib) {
      out[io] = apply(av[ia], bv[ib]);
    });
  }

  Tape<T>* tape = pick_tape(a, &b);
  const bool needs = any_grad(a) || any_grad(b);
  Tensor<T> res = make_output<T>(plan.out, std::move(out), tape, needs);
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto sb = b.storage_;
    auto so = res.storage_;
    tape->record([kind, plan, sa, sb, so]() {
      const T* g = so->grad.data();
      const T* x = sa->value.data();
      const T* y = sb->value.data();
      const T* z = so->value.data();
      if (sa->requires_grad) sa->ensure_grad();
      if (sb->requires_grad) sb->ensure_grad();
      T* gx = sa->requires_grad ? sa->grad.data() : nullptr;
      T* gy = sb->requires_grad ? sb->grad.data() : nullptr;
      auto accum = [&](int64_t io, int64_t ia, int64_t ib) {
        const T gi = g[io];
        switch (kind) {
          case OpKind::add:
            if (gx) gx[ia] += gi;
            if (gy) gy[ib] += gi;
            break;
          case OpKind::sub:
            if (gx) gx[ia] += gi;
            if (gy) gy[ib] -= gi;
            break;
          case OpKind::mul:
            if (gx) gx[ia] += gi * y[ib];
            if (gy) gy[ib] += gi * x[ia];
            break;
          case OpKind::div:
            if (gx) gx[ia] += gi / y[ib];
            if (gy) gy[ib] -= gi * x[ia] / (y[ib] * y[ib]);
            break;
          case OpKind::power:
            if (gx) gx[ia] += gi * y[ib] * std::pow(x[ia], y[ib] - T(1));
            if (gy) gy[ib] += gi * z[io] * std::log(x[ia]);
            break;
          default:
            break;
        }
      };
      if (plan.trivial_a && plan.trivial_b) {
        const int64_t n = static_cast<int64_t>(so->value.size());
        for (int64_t i = 0; i < n; ++i) accum(i, i, i);
      } else {
        for_each_broadcast(plan, accum);
      }
    });
  }
  return res;
}

}  // namespace

template <typename T>
Tensor<T> elementwise(OpKind kind, const Tensor<T>& a, const Tensor<T>* b) {
  switch (kind) {
    case OpKind::relu:
    case OpKind::sigmoid:
    case OpKind::log:
    case OpKind::exp:
      require(b == nullptr, "unary op does not take a second operand");
      return unary_op(kind, a);
    default:
      require(b != nullptr, "binary op requires a second operand");
      return binary_op(kind, a, *b);
  }
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(OpKind::add, a, &b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(OpKind::sub, a, &b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(OpKind::mul, a, &b); }
template <typename T> Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(OpKind::div, a, &b); }
template <typename T> Tensor<T> pow_elem(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(OpKind::power, a, &b); }
template <typename T> Tensor<T> relu(const Tensor<T>& a) { return elementwise(OpKind::relu, a); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a) { return elementwise(OpKind::sigmoid, a); }
template <typename T> Tensor<T> log_elem(const Tensor<T>& a) { return elementwise(OpKind::log, a); }
template <typename T> Tensor<T> exp_elem(const Tensor<T>& a) { return elementwise(OpKind::exp, a); }

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  const int64_t n = a.size();
  std::vector<T> out(n);
  const auto& av = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] + s;
  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>(a.shape(), std::move(out), tape, any_grad(a));
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([sa, so, n]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      for (int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  const int64_t n = a.size();
  std::vector<T> out(n);
  const auto& av = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] * s;
  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>(a.shape(), std::move(out), tape, any_grad(a));
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([sa, so, n, s]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      for (int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i] * s;
    });
  }
  return res;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  require(lo <= hi, "clamp bounds out of order");
  const int64_t n = a.size();
  std::vector<T> out(n);
  const auto& av = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::min(std::max(av[i], lo), hi);
  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>(a.shape(), std::move(out), tape, any_grad(a));
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([sa, so, n, lo, hi]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T x = sa->value[i];
        if (x >= lo && x <= hi) sa->grad[i] += so->grad[i];
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require(sa.size() >= 2 && sa.size() <= 3 && sb.size() >= 2 && sb.size() <= 3,
          "matmul supports rank 2..3, got " + shape_str(sa) + " x " + shape_str(sb));
  const int64_t ba = sa.size() == 3 ? sa[0] : 1;
  const int64_t bb = sb.size() == 3 ? sb[0] : 1;
  const int64_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
  const int64_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  require(ka == kb, "matmul inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
  require(ba == bb || ba == 1 || bb == 1,
          "matmul batch dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
  const int64_t batch = std::max(ba, bb);
  const int64_t k = ka;

  Shape out_shape = (sa.size() == 3 || sb.size() == 3) ? Shape{batch, m, n} : Shape{m, n};
  std::vector<T> out(batch * m * n, T(0));
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (int64_t bi = 0; bi < batch; ++bi) {
    const T* abi = ap + (ba == 1 ? 0 : bi) * m * k;
    const T* bbi = bp + (bb == 1 ? 0 : bi) * k * n;
    detail::gemm_acc(abi, bbi, out.data() + bi * m * n, m, k, n);
  }

  Tape<T>* tape = pick_tape(a, &b);
  const bool needs = any_grad(a) || any_grad(b);
  Tensor<T> res = make_output<T>(std::move(out_shape), std::move(out), tape, needs);
  if (tape && res.requires_grad()) {
    auto st_a = a.storage_;
    auto st_b = b.storage_;
    auto st_o = res.storage_;
    tape->record([st_a, st_b, st_o, ba, bb, batch, m, k, n]() {
      const T* g = st_o->grad.data();
      if (st_a->requires_grad) {
        st_a->ensure_grad();
        for (int64_t bi = 0; bi < batch; ++bi) {
          // dA += dC . Bᵀ
          detail::gemm_bt_acc(g + bi * m * n, st_b->value.data() + (bb == 1 ? 0 : bi) * k * n,
                              st_a->grad.data() + (ba == 1 ? 0 : bi) * m * k, m, n, k);
        }
      }
      if (st_b->requires_grad) {
        st_b->ensure_grad();
        for (int64_t bi = 0; bi < batch; ++bi) {
          // dB += Aᵀ . dC
          detail::gemm_at_acc(st_a->value.data() + (ba == 1 ? 0 : bi) * m * k, g + bi * m * n,
                              st_b->grad.data() + (bb == 1 ? 0 : bi) * k * n, k, m, n);
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reductions, shape ops, softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto& av = a.data();
  double acc = 0.0;
  for (T v : av) acc += static_cast<double>(v);
  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>({1}, {static_cast<T>(acc)}, tape, any_grad(a));
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([sa, so]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      const T g = so->grad[0];
      for (auto& gx : sa->grad) gx += g;
    });
  }
  return res;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  require(numel(new_shape) == a.size(), "reshape " + shape_str(a.shape()) + " -> " +
                                            shape_str(new_shape) + " changes element count");
  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>(std::move(new_shape), a.data(), tape, any_grad(a));
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([sa, so]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      const int64_t n = static_cast<int64_t>(sa->value.size());
      for (int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i];
    });
  }
  return res;
}

namespace {

// dst[coord under out layout] = src[coord permuted back], shapes row-major.
template <typename T>
void permute_raw(const T* src, const Shape& src_shape, const std::vector<int>& axes, T* dst) {
  const size_t r = src_shape.size();
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = src_shape[axes[i]];
  const auto src_strides = row_major_strides(src_shape);
  std::vector<int64_t> step(r);
  for (size_t i = 0; i < r; ++i) step[i] = src_strides[axes[i]];
  const int64_t n = numel(src_shape);
  std::vector<int64_t> counter(r, 0);
  int64_t is = 0;
  for (int64_t io = 0; io < n; ++io) {
    dst[io] = src[is];
    for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
      ++counter[d];
      is += step[d];
      if (counter[d] < out_shape[d]) break;
      is -= step[d] * out_shape[d];
      counter[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes) {
  const size_t r = a.shape().size();
  require(axes.size() == r, "permute axes rank mismatch");
  std::vector<bool> seen(r, false);
  for (int ax : axes) {
    require(ax >= 0 && ax < static_cast<int>(r) && !seen[ax], "permute axes must be a permutation");
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[axes[i]];
  std::vector<T> out(a.size());
  permute_raw(a.data().data(), a.shape(), axes, out.data());

  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>(std::move(out_shape), std::move(out), tape, any_grad(a));
  if (tape && res.requires_grad()) {
    std::vector<int> inverse(r);
    for (size_t i = 0; i < r; ++i) inverse[axes[i]] = static_cast<int>(i);
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([sa, so, inverse]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      std::vector<T> tmp(so->grad.size());
      permute_raw(so->grad.data(), so->shape, inverse, tmp.data());
      const int64_t n = static_cast<int64_t>(tmp.size());
      for (int64_t i = 0; i < n; ++i) sa->grad[i] += tmp[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts[0].shape();
  const size_t r = first.size();
  require(axis >= 0 && axis < static_cast<int>(r), "concat axis out of range");
  Shape out_shape = first;
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    require(p.shape().size() == r, "concat rank mismatch");
    for (size_t d = 0; d < r; ++d)
      if (static_cast<int>(d) != axis)
        require(p.shape()[d] == first[d], "concat shape mismatch at dim " + std::to_string(d) +
                                              ": " + shape_str(p.shape()) + " vs " + shape_str(first));
    axis_total += p.shape()[axis];
  }
  out_shape[axis] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (size_t d = axis + 1; d < r; ++d) inner *= first[d];

  std::vector<T> out(numel(out_shape));
  int64_t offset = 0;  // in axis units
  for (const auto& p : parts) {
    const int64_t pa = p.shape()[axis];
    const T* src = p.data().data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * axis_total + offset) * inner, src + o * pa * inner,
                  sizeof(T) * pa * inner);
    offset += pa;
  }

  Tape<T>* tape = nullptr;
  bool needs = false;
  for (const auto& p : parts) {
    if (!tape) tape = p.tape();
    needs = needs || p.requires_grad();
  }
  Tensor<T> res = make_output<T>(std::move(out_shape), std::move(out), tape, needs);
  if (tape && res.requires_grad()) {
    std::vector<std::shared_ptr<TensorStorage<T>>> srcs;
    std::vector<int64_t> axis_sizes;
    for (const auto& p : parts) {
      srcs.push_back(p.storage_);
      axis_sizes.push_back(p.shape()[axis]);
    }
    auto so = res.storage_;
    tape->record([srcs, axis_sizes, so, outer, inner, axis_total]() {
      int64_t offset = 0;
      for (size_t pi = 0; pi < srcs.size(); ++pi) {
        const int64_t pa = axis_sizes[pi];
        auto& sp = srcs[pi];
        if (sp->requires_grad) {
          sp->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* g = so->grad.data() + (o * axis_total + offset) * inner;
            T* gx = sp->grad.data() + o * pa * inner;
            for (int64_t i = 0; i < pa * inner; ++i) gx[i] += g[i];
          }
        }
        offset += pa;
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
  require(a.rank() >= 1, "softmax requires rank >= 1");
  const int64_t d = a.shape().back();
  const int64_t rows = a.size() / d;
  std::vector<T> out(a.size());
  const T* x = a.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T* yr = out.data() + r * d;
    T mx = xr[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    T denom = T(0);
    for (int64_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      denom += yr[j];
    }
    for (int64_t j = 0; j < d; ++j) yr[j] /= denom;
  }
  Tape<T>* tape = pick_tape(a);
  Tensor<T> res = make_output<T>(a.shape(), std::move(out), tape, any_grad(a));
  if (tape && res.requires_grad()) {
    auto sa = a.storage_;
    auto so = res.storage_;
    tape->record([sa, so, rows, d]() {
      if (!sa->requires_grad) return;
      sa->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* y = so->value.data() + r * d;
        const T* g = so->grad.data() + r * d;
        T* gx = sa->grad.data() + r * d;
        T dot = T(0);
        for (int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
        for (int64_t j = 0; j < d; ++j) gx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           const Tensor<T>& x, double h, double tol,
                           int64_t max_coords, Rng& rng) {
  require(h > 0, "grad_check requires h > 0");
  GradCheckReport rep;

  Tensor<T> xc = x.clone();
  Tape<T> tape;
  Tensor<T> xt = xc.attached(tape);
  xt.set_requires_grad(true);
  Tensor<T> y = f(xt);
  require(y.size() == 1, "grad_check: f must produce a scalar, got " + shape_str(y.shape()));
  tape.backward(y);
  const std::vector<T> g_ad = xt.grad();

  const int64_t n = x.size();
  std::vector<int64_t> coords;
  if (n <= max_coords) {
    coords.resize(n);
    std::iota(coords.begin(), coords.end(), 0);
  } else {
    std::unordered_set<int64_t> picked;
    while (static_cast<int64_t>(picked.size()) < max_coords)
      picked.insert(rng.uniform_int(0, n - 1));
    coords.assign(picked.begin(), picked.end());
    std::sort(coords.begin(), coords.end());
  }

  rep.coords_checked = static_cast<int64_t>(coords.size());
  rep.pass = true;
  for (int64_t c : coords) {
    Tensor<T> xp = x.clone();
    xp.data()[c] += static_cast<T>(h);
    Tensor<T> xm = x.clone();
    xm.data()[c] -= static_cast<T>(h);
    const double fp = static_cast<double>(f(xp).item());
    const double fm = static_cast<double>(f(xm).item());
    const double g_fd = (fp - fm) / (2.0 * h);
    const double g = static_cast<double>(g_ad[c]);
    if (std::isnan(g) || std::isnan(g_fd)) {
      rep.pass = false;
      rep.worst_coord = c;
      rep.detail = "NaN gradient at coordinate " + std::to_string(c);
      return rep;
    }
    const double rel = std::abs(g - g_fd) / (std::abs(g) + std::abs(g_fd) + 1e-12);
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = c;
    }
  }
  if (rep.max_rel_err > tol) {
    rep.pass = false;
    rep.detail = "max relative error " + std::to_string(rep.max_rel_err) + " at coordinate " +
                 std::to_string(rep.worst_coord);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define DSEG_INSTANTIATE(T)                                                               \
  template class Tensor<T>;                                                               \
  template class Tape<T>;                                                                 \
  template void backward<T>(const Tensor<T>&);                                            \
  template Tensor<T> elementwise<T>(OpKind, const Tensor<T>&, const Tensor<T>*);          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> divide<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> pow_elem<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> relu<T>(const Tensor<T>&);                                           \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                        \
  template Tensor<T> log_elem<T>(const Tensor<T>&);                                       \
  template Tensor<T> exp_elem<T>(const Tensor<T>&);                                       \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                    \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> sum<T>(const Tensor<T>&);                                            \
  template Tensor<T> mean<T>(const Tensor<T>&);                                           \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                 \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);               \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                       \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                \
  template GradCheckReport grad_check<T>(const std::function<Tensor<T>(const Tensor<T>&)>&, \
                                         const Tensor<T>&, double, double, int64_t, Rng&);

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)

#undef DSEG_INSTANTIATE

}  // namespace dseg
