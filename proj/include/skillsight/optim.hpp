#pragma once

#include <vector>

#include "skillsight/nn.hpp"

namespace skillsight::optim {

using ag::Matrix;
using ag::Var;

// Gradients are read from each parameter's node; a parameter that received no
// gradient this step is treated as having a zero gradient.
class Sgd {
 public:
  Sgd(std::vector<Var> params, double lr, double momentum = 0.0, double weight_decay = 0.0);
  void step();
  void zero_grad();
  double lr() const { return lr_; }

 private:
  std::vector<Var> params_;
  std::vector<Matrix> velocity_;
  double lr_, momentum_, weight_decay_;
};

// Decoupled weight decay (Loshchilov & Hutter).
class AdamW {
 public:
  AdamW(std::vector<Var> params, double lr, double weight_decay = 0.01, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();

 private:
  std::vector<Var> params_;
  std::vector<Matrix> m_, v_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace skillsight::optim
