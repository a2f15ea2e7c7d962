#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stemlm/tensor.hpp"

namespace stemlm::num {

enum class OptimizerKind { sgd, adam };

const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 5e-5;
  double decay_factor = 0.8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip applied before each step; 0 disables.
  double clip_norm = 5.0;

  void validate() const;
};

// Scales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_global_norm(std::span<Parameter* const> params, double max_norm);

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  // Applies one update (clipping first) to params, which must be passed in
  // the same order on every call.
  void step(std::span<Parameter* const> params);
  // Multiplies the learning rate by the decay factor.
  void decay_lr();

  double learning_rate() const { return lr_; }
  const OptimizerConfig& config() const { return config_; }
  std::uint64_t step_count() const { return steps_; }

  // Adam moments, aligned with the params order; empty for sgd or before the
  // first step.
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(double lr, std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  OptimizerConfig config_;
  double lr_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace stemlm::num
