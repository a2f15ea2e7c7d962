#include "stemlm/optimizer.hpp"

#include <cmath>

#include "stemlm/error.hpp"

namespace stemlm::num {

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  fail(ErrorKind::usage, "unknown optimizer '" + name + "' (expected sgd or adam)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorKind::usage, "learning rate must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail(ErrorKind::usage, "decay factor must be in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorKind::usage, "Adam betas must be in [0, 1)");
  if (!(epsilon > 0.0)) fail(ErrorKind::usage, "Adam epsilon must be positive");
  if (clip_norm < 0.0) fail(ErrorKind::usage, "clip norm must be non-negative");
}

double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.data()) g *= factor;
  }
  return norm;
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config), lr_(config.learning_rate) { config_.validate(); }

void Optimizer::step(std::span<Parameter* const> params) {
  if (config_.clip_norm > 0.0) clip_global_norm(params, config_.clip_norm);
  ++steps_;
  if (config_.kind == OptimizerKind::sgd) {
    for (Parameter* p : params) {
      auto value = p->value.data();
      const auto grad = p->grad.data();
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr_ * grad[i];
    }
    return;
  }

  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (m_.size() != params.size()) fail(ErrorKind::invariant, "optimizer called with a different parameter list");
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(b1, t);
  const double correction2 = 1.0 - std::pow(b2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k]->value.data();
    const auto grad = params[k]->grad.data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    if (m.size() != value.size()) fail(ErrorKind::invariant, "optimizer state shape mismatch for " + params[k]->name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= lr_ * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void Optimizer::decay_lr() { lr_ *= config_.decay_factor; }

void Optimizer::restore(double lr, std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) fail(ErrorKind::data, "optimizer moment lists differ in length");
  lr_ = lr;
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace stemlm::num
