#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "scdsc/autodiff.hpp"

namespace scdsc {

/// Adaptive-moment gradient descent over a fixed list of parameter matrices.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return step_; }

  /// params[i] -= lr * m_hat / (sqrt(v_hat) + eps), moments keyed by position.
  void step(std::span<ad::Matrix<T>* const> params, std::span<const ad::Matrix<T>* const> grads) {
    if (params.size() != grads.size()) throw DimensionError("Adam: parameter and gradient counts differ");
    if (first_.empty()) {
      for (const auto* p : params) {
        first_.push_back(ad::Matrix<T>::Zero(p->rows(), p->cols()));
        second_.push_back(ad::Matrix<T>::Zero(p->rows(), p->cols()));
      }
    }
    if (first_.size() != params.size()) throw DimensionError("Adam: parameter list changed between steps");
    ++step_;
    const T b1 = static_cast<T>(beta1_);
    const T b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(step_)));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(step_)));
    const T lr = static_cast<T>(lr_);
    const T eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = *grads[i];
      if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols()) {
        throw DimensionError("Adam: gradient shape does not match parameter " + std::to_string(i));
      }
      first_[i] = b1 * first_[i] + (T(1) - b1) * g;
      second_[i] = b2 * second_[i] + (T(1) - b2) * g.cwiseAbs2();
      params[i]->array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
    }
  }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long step_ = 0;
  std::vector<ad::Matrix<T>> first_;
  std::vector<ad::Matrix<T>> second_;
};

}  // namespace scdsc
