#pragma once

#include <string>
#include <vector>

#include "musicdiff/autodiff.hpp"

namespace musicdiff {

struct NamedParam {
  std::string name;
  ad::Mat* mat;
};
using ParamList = std::vector<NamedParam>;

// Pushes every parameter onto the tape as a leaf, in list order.
std::vector<ad::Var> push_params(ad::Tape& tape, const ParamList& params);

// Reads the gradients of previously pushed parameter leaves.
std::vector<ad::Mat> collect_grads(const ad::Tape& tape, const std::vector<ad::Var>& vars);

// Flattens a gradient set into one parameter-space vector (list order,
// column-major within each matrix).
ad::Vec flatten(const std::vector<ad::Mat>& grads);

double grad_norm(const std::vector<ad::Mat>& grads);
void scale_grads(std::vector<ad::Mat>& grads, double factor);

// Adam with the optimizer defaults used throughout: betas (0.9, 0.99),
// eps 1e-8. Gradient clipping is available but off unless max_norm > 0.
class Adam {
public:
  explicit Adam(double lr = 4e-4, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(const ParamList& params, const std::vector<ad::Mat>& grads);

private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<ad::Mat> m_, v_;
};

// Plain gradient descent: p -= lr * g. Kept separate so callers that promise
// bit-identical single-objective behaviour can rely on the exact arithmetic.
void sgd_step(const ParamList& params, const std::vector<ad::Mat>& grads, double lr);

}  // namespace musicdiff
