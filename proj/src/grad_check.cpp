#include "stemlm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stemlm::num {

namespace {

double evaluate(const std::function<Var(Graph&)>& loss_fn) {
  Graph g;
  return g.value(loss_fn(g)).item();
}

}  // namespace

double grad_check(const std::function<Var(Graph&)>& loss_fn, std::span<Parameter* const> params,
                  const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(loss_fn(g));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    analytic.push_back(p->grad);
    p->zero_grad();
  }

  Rng rng(options.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    std::vector<std::size_t> entries(p.value.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_tensor != 0 && entries.size() > options.max_entries_per_tensor) {
      rng.shuffle(entries.begin(), entries.end());
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      const double saved = p.value[i];
      p.value[i] = saved + options.epsilon;
      const double plus = evaluate(loss_fn);
      p.value[i] = saved - options.epsilon;
      const double minus = evaluate(loss_fn);
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace stemlm::num
