#include "dseg/optim.hpp"

#include <cmath>

namespace dseg {

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  fail("unknown optimizer '" + s + "' (expected sgd_momentum|adam)");
}

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerKind kind, double lr, double momentum, double beta1, double beta2,
                        double eps)
    : kind_(kind), lr_(lr), momentum_(momentum), beta1_(beta1), beta2_(beta2), eps_(eps) {
  require(lr >= 0.0, "learning rate must be nonnegative");
}

template <typename T>
void Optimizer<T>::step(std::vector<std::pair<std::string, Tensor<T>>>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    if (kind_ == OptimizerKind::adam) v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].second.size(), T(0));
      if (kind_ == OptimizerKind::adam) v_[i].assign(params[i].second.size(), T(0));
    }
  }
  require(m_.size() == params.size(), "optimizer bound to a different parameter list");
  ++t_;

  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].second;
    require(p.requires_grad(), "parameter '" + params[i].first + "' is not trainable");
    auto& value = p.data();
    const auto& grad = p.grad();
    require(grad.size() == value.size(), "parameter '" + params[i].first + "' has no gradient");
    if (kind_ == OptimizerKind::sgd_momentum) {
      auto& vel = m_[i];
      for (size_t j = 0; j < value.size(); ++j) {
        vel[j] = static_cast<T>(momentum_ * vel[j] + grad[j]);
        value[j] -= static_cast<T>(lr_ * vel[j]);
      }
    } else {
      auto& m = m_[i];
      auto& v = v_[i];
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      for (size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j];
        m[j] = static_cast<T>(beta1_ * m[j] + (1.0 - beta1_) * g);
        v[j] = static_cast<T>(beta2_ * v[j] + (1.0 - beta2_) * g * g);
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        value[j] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }
}

template <typename T>
void Optimizer<T>::zero_grads(std::vector<std::pair<std::string, Tensor<T>>>& params) {
  for (auto& [_, p] : params) p.zero_grad();
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dseg
