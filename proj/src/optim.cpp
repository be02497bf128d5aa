#include "skillsight/optim.hpp"

#include <cmath>

namespace skillsight::optim {

Sgd::Sgd(std::vector<Var> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.push_back(Matrix::Zero(p.rows(), p.cols()));
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    Matrix g = p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
    if (weight_decay_ != 0.0) g += weight_decay_ * p.value();
    if (momentum_ != 0.0) {
      velocity_[i] = momentum_ * velocity_[i] + g;
      g = velocity_[i];
    }
    p.mutable_value() -= lr_ * g;
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

AdamW::AdamW(std::vector<Var> params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)),
      lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    p.mutable_value() *= 1.0 - lr_ * weight_decay_;
    if (!p.has_grad()) {
      m_[i] *= beta1_;
      v_[i] *= beta2_;
    } else {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad();
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad().cwiseAbs2();
    }
    p.mutable_value().array() -=
        lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace skillsight::optim
