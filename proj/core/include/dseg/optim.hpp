#pragma once

#include <string>
#include <vector>

#include "dseg/tensor.hpp"

namespace dseg {

enum class OptimizerKind { sgd_momentum, adam };

OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

// Updates an ordered parameter list in place from the accumulated grads.
// State buffers are keyed by parameter position, so the same optimizer must
// be reused with the same parameter list for its whole life.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double momentum = 0.9, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8);

  void step(std::vector<std::pair<std::string, Tensor<T>>>& params);
  void zero_grads(std::vector<std::pair<std::string, Tensor<T>>>& params);

  double learning_rate() const { return lr_; }

 private:
  OptimizerKind kind_;
  double lr_, momentum_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_;  // momentum / first moment
  std::vector<std::vector<T>> v_;  // second moment (adam)
};

}  // namespace dseg
