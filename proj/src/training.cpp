#include "musicdiff/training.hpp"

#include <cmath>

namespace musicdiff {

std::vector<ad::Var> push_params(ad::Tape& tape, const ParamList& params) {
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const NamedParam& p : params) vars.push_back(tape.leaf(*p.mat));
  return vars;
}

std::vector<ad::Mat> collect_grads(const ad::Tape& tape, const std::vector<ad::Var>& vars) {
  std::vector<ad::Mat> grads;
  grads.reserve(vars.size());
  for (const ad::Var& v : vars) grads.push_back(tape.grad(v));
  return grads;
}

ad::Vec flatten(const std::vector<ad::Mat>& grads) {
  Eigen::Index total = 0;
  for (const ad::Mat& g : grads) total += g.size();
  ad::Vec out(total);
  Eigen::Index at = 0;
  for (const ad::Mat& g : grads) {
    out.segment(at, g.size()) = Eigen::Map<const ad::Vec>(g.data(), g.size());
    at += g.size();
  }
  return out;
}

double grad_norm(const std::vector<ad::Mat>& grads) {
  double sq = 0.0;
  for (const ad::Mat& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void scale_grads(std::vector<ad::Mat>& grads, double factor) {
  for (ad::Mat& g : grads) g *= factor;
}

void Adam::step(const ParamList& params, const std::vector<ad::Mat>& grads) {
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "adam: param/grad count mismatch");
  if (m_.empty()) {
    for (const NamedParam& p : params) {
      m_.push_back(ad::Mat::Zero(p.mat->rows(), p.mat->cols()));
      v_.push_back(ad::Mat::Zero(p.mat->rows(), p.mat->cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * grads[i].array().square()).matrix();
    const ad::Mat mhat = m_[i] / bc1;
    const ad::Mat vhat = v_[i] / bc2;
    params[i].mat->array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

void sgd_step(const ParamList& params, const std::vector<ad::Mat>& grads, double lr) {
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "sgd: param/grad count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].mat -= lr * grads[i];
}

}  // namespace musicdiff
