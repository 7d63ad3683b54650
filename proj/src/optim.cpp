#include "ehfkt/optim.hpp"

#include <cmath>
#include <utility>

#include "ehfkt/errors.hpp"

namespace ehfkt {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Param& p = *params_[pi];
    Matrix& m = m_[pi];
    Matrix& v = v_[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in param '" + p.id + "' at step " +
                           std::to_string(t_));
      }
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

Sgd::Sgd(std::vector<Param*> params, double lr) : params_(std::move(params)), lr_(lr) {}

void Sgd::step() {
  for (Param* p : params_) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g)) {
        throw NumericError("sgd: non-finite gradient in param '" + p->id + "'");
      }
      p->value[i] -= lr_ * g;
    }
  }
}

void Sgd::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

double global_grad_norm(const std::vector<Param*>& params) {
  double acc = 0.0;
  for (const Param* p : params) {
    for (std::size_t i = 0; i < p->grad.size(); ++i) acc += p->grad[i] * p->grad[i];
  }
  return std::sqrt(acc);
}

void clip_global_norm(const std::vector<Param*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
  }
}

}  // namespace ehfkt
