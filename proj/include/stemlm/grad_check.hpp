#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "stemlm/graph.hpp"

namespace stemlm::num {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Entries checked per tensor; 0 checks every entry, otherwise a seeded
  // random subsample.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

// Builds a fresh graph with loss_fn, back-propagates, then compares every
// selected parameter entry with the central difference
// (f(x + eps) - f(x - eps)) / 2 eps. Returns the largest relative error
// |a - n| / max(|a|, |n|, 1e-8). Parameter gradients are left zeroed.
double grad_check(const std::function<Var(Graph&)>& loss_fn, std::span<Parameter* const> params,
                  const GradCheckOptions& options = {});

}  // namespace stemlm::num
