#pragma once

#include <span>
#include <vector>

#include "stemlm/corpus.hpp"

namespace stemlm {

// Intermediate quantities of the word/stem composition, all in probability
// space and indexed by token id (marginals are indexed by stem id and are
// zero for ids that are nobody's stem).
struct MixWsTerms {
  std::vector<double> within_class;   // r(w) = p(w) / p'_{stem(w)}
  std::vector<double> word_marginal;  // p'_s
  std::vector<double> stem_marginal;  // q'_s
  std::vector<double> output;         // r(w) * q'_{stem(w)}
};

// p: word-mixture distribution, q: stem-mixture distribution, both over the
// shared vocabulary. Computed in log space. Throws Error(invariant) when a
// stem class carries no mass under p.
MixWsTerms mixws_terms(std::span<const double> p, std::span<const double> q, std::span<const TokenId> stem_of);
std::vector<double> mixws_compose(std::span<const double> p, std::span<const double> q,
                                  std::span<const TokenId> stem_of);

// Log-space form used by evaluation; out may alias neither input.
void mixws_compose_log(std::span<const double> log_p, std::span<const double> log_q,
                       std::span<const TokenId> stem_of, std::span<double> out);

}  // namespace stemlm
