#pragma once

#include "dseg/tensor.hpp"

namespace dseg {

struct LossParams {
  double beta = 0.7;    // Tversky / balanced-BCE weight, in (0,1)
  double gamma = 0.75;  // focal exponent, > 0
};

enum class LossKind { bce, balanced_bce, tversky, focal_tversky };

LossKind loss_kind_from_string(const std::string& name);
std::string to_string(LossKind kind);

// All losses aggregate over every pixel of the batch. Predictions are
// clamped away from {0,1} before any log. y is the {0,1} ground truth,
// yhat the predicted probabilities; both must share a shape.

// L = -sum(y*yh) / (sum(y*yh) + beta*sum((1-y)*yh) + (1-beta)*sum(y*(1-yh)))
template <typename T>
Tensor<T> tversky_loss(const Tensor<T>& y, const Tensor<T>& yhat, double beta);

// L = (1 - TI)^gamma with TI the (positive) Tversky index.
template <typename T>
Tensor<T> focal_tversky_loss(const Tensor<T>& y, const Tensor<T>& yhat, double beta, double gamma);

// L = -(1/N) * sum(y*log(yh) + (1-y)*log(1-yh))
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& y, const Tensor<T>& yhat);

// L = -(1/N) * sum(beta*y*log(yh) + (1-beta)*(1-y)*log(1-yh))
template <typename T>
Tensor<T> balanced_bce_loss(const Tensor<T>& y, const Tensor<T>& yhat, double beta);

template <typename T>
Tensor<T> compute_loss(LossKind kind, const Tensor<T>& y, const Tensor<T>& yhat,
                       const LossParams& params);

}  // namespace dseg
