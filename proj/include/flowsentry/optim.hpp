#pragma once

#include <cmath>
#include <vector>

#include "flowsentry/tensor.hpp"

namespace flowsentry {

/// Adam with bias correction. Moments are allocated on the first step from
/// the parameter shapes.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// `params` and `grads` must list the same tensors in the same order.
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
    if (first_.empty()) {
      for (const Matrix* p : params) {
        first_.push_back(Matrix::Zero(p->rows(), p->cols()));
        second_.push_back(Matrix::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix& g = *grads[i];
      first_[i] = beta1_ * first_[i] + (1.0 - beta1_) * g;
      second_[i] = beta2_ * second_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      params[i]->array() -=
          lr_ * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

template <class P>
std::vector<Matrix*> tensor_pointers(P& params) {
  std::vector<Matrix*> out;
  for_each_tensor(params, "", [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

template <class P>
std::vector<const Matrix*> tensor_pointers(const P& params) {
  std::vector<const Matrix*> out;
  for_each_tensor(params, "", [&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

template <class P>
void zero_tensors(P& params) {
  for_each_tensor(params, "", [](const std::string&, Matrix& m) { m.setZero(); });
}

}  // namespace flowsentry
