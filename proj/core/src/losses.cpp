#include "dseg/losses.hpp"

namespace dseg {

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "bce") return LossKind::bce;
  if (name == "balanced_bce") return LossKind::balanced_bce;
  if (name == "tversky") return LossKind::tversky;
  if (name == "focal_tversky") return LossKind::focal_tversky;
  fail("unknown loss '" + name + "' (expected bce|balanced_bce|tversky|focal_tversky)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::bce: return "bce";
    case LossKind::balanced_bce: return "balanced_bce";
    case LossKind::tversky: return "tversky";
    case LossKind::focal_tversky: return "focal_tversky";
  }
  return "?";
}

namespace {

// Clamp predictions into the open interval before any log/division. 1e-7 is
// below float resolution near 1, so single precision widens to 1e-6 there.
template <typename T>
Tensor<T> clamp_probs(const Tensor<T>& yhat) {
  const T eps = sizeof(T) == 4 ? static_cast<T>(1e-6) : static_cast<T>(1e-7);
  return clamp(yhat, eps, T(1) - eps);
}

template <typename T>
void check_pair(const Tensor<T>& y, const Tensor<T>& yhat) {
  require(y.shape() == yhat.shape(), "loss shape mismatch: truth " + shape_str(y.shape()) +
                                         " vs prediction " + shape_str(yhat.shape()));
}

// Positive Tversky index as a taped scalar.
template <typename T>
Tensor<T> tversky_index(const Tensor<T>& y, const Tensor<T>& yhat, double beta) {
  check_pair(y, yhat);
  require(beta > 0.0 && beta < 1.0, "tversky beta must lie in (0,1), got " + std::to_string(beta));
  Tensor<T> yh = clamp_probs(yhat);
  Tensor<T> ones_minus_y = add_scalar(mul_scalar(y, T(-1)), T(1));
  Tensor<T> ones_minus_yh = add_scalar(mul_scalar(yh, T(-1)), T(1));
  Tensor<T> tp = sum(mul(y, yh));
  Tensor<T> fp = sum(mul(ones_minus_y, yh));
  Tensor<T> fn = sum(mul(y, ones_minus_yh));
  Tensor<T> denom = add(tp, add(mul_scalar(fp, static_cast<T>(beta)),
                                mul_scalar(fn, static_cast<T>(1.0 - beta))));
  return divide(tp, denom);
}

}  // namespace

template <typename T>
Tensor<T> tversky_loss(const Tensor<T>& y, const Tensor<T>& yhat, double beta) {
  return mul_scalar(tversky_index(y, yhat, beta), T(-1));
}

template <typename T>
Tensor<T> focal_tversky_loss(const Tensor<T>& y, const Tensor<T>& yhat, double beta, double gamma) {
  require(gamma > 0.0, "focal gamma must be positive, got " + std::to_string(gamma));
  Tensor<T> ti = tversky_index(y, yhat, beta);
  Tensor<T> one_minus_ti = add_scalar(mul_scalar(ti, T(-1)), T(1));
  // 1 - TI can reach 0 exactly on perfect predictions; clamp keeps the pow
  // gradient finite for gamma < 1.
  const T tiny = sizeof(T) == 4 ? static_cast<T>(1e-12) : static_cast<T>(1e-30);
  one_minus_ti = clamp(one_minus_ti, tiny, T(2));
  return pow_elem(one_minus_ti, Tensor<T>::scalar(static_cast<T>(gamma)));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& y, const Tensor<T>& yhat) {
  check_pair(y, yhat);
  Tensor<T> yh = clamp_probs(yhat);
  Tensor<T> ones_minus_y = add_scalar(mul_scalar(y, T(-1)), T(1));
  Tensor<T> ones_minus_yh = add_scalar(mul_scalar(yh, T(-1)), T(1));
  Tensor<T> pos = mul(y, log_elem(yh));
  Tensor<T> neg = mul(ones_minus_y, log_elem(ones_minus_yh));
  Tensor<T> total = sum(add(pos, neg));
  return mul_scalar(total, static_cast<T>(-1.0 / static_cast<double>(y.size())));
}

template <typename T>
Tensor<T> balanced_bce_loss(const Tensor<T>& y, const Tensor<T>& yhat, double beta) {
  check_pair(y, yhat);
  require(beta > 0.0 && beta < 1.0, "balanced bce beta must lie in (0,1), got " + std::to_string(beta));
  Tensor<T> yh = clamp_probs(yhat);
  Tensor<T> ones_minus_y = add_scalar(mul_scalar(y, T(-1)), T(1));
  Tensor<T> ones_minus_yh = add_scalar(mul_scalar(yh, T(-1)), T(1));
  Tensor<T> pos = mul_scalar(mul(y, log_elem(yh)), static_cast<T>(beta));
  Tensor<T> neg = mul_scalar(mul(ones_minus_y, log_elem(ones_minus_yh)), static_cast<T>(1.0 - beta));
  Tensor<T> total = sum(add(pos, neg));
  return mul_scalar(total, static_cast<T>(-1.0 / static_cast<double>(y.size())));
}

template <typename T>
Tensor<T> compute_loss(LossKind kind, const Tensor<T>& y, const Tensor<T>& yhat,
                       const LossParams& params) {
  switch (kind) {
    case LossKind::bce: return bce_loss(y, yhat);
    case LossKind::balanced_bce: return balanced_bce_loss(y, yhat, params.beta);
    case LossKind::tversky: return tversky_loss(y, yhat, params.beta);
    case LossKind::focal_tversky: return focal_tversky_loss(y, yhat, params.beta, params.gamma);
  }
  fail("unhandled loss kind");
}

#define DSEG_INSTANTIATE(T)                                                                       \
  template Tensor<T> tversky_loss<T>(const Tensor<T>&, const Tensor<T>&, double);                 \
  template Tensor<T> focal_tversky_loss<T>(const Tensor<T>&, const Tensor<T>&, double, double);   \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> balanced_bce_loss<T>(const Tensor<T>&, const Tensor<T>&, double);            \
  template Tensor<T> compute_loss<T>(LossKind, const Tensor<T>&, const Tensor<T>&, const LossParams&);

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)

#undef DSEG_INSTANTIATE

}  // namespace dseg
