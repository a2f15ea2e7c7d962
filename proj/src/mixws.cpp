#include "stemlm/mixws.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stemlm/error.hpp"

namespace stemlm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_sizes(std::size_t p, std::size_t q, std::size_t stems) {
  if (p != q || p != stems)
    fail(ErrorKind::numeric, "mixws: distributions (" + std::to_string(p) + ", " + std::to_string(q) +
                                 ") and stem map (" + std::to_string(stems) + ") differ in size");
}

// log sum_{w in S(s)} exp(log_dist[w]) for every stem id s.
std::vector<double> class_log_mass(std::span<const double> log_dist, std::span<const TokenId> stem_of) {
  const std::size_t n = log_dist.size();
  std::vector<double> max(n, kNegInf);
  for (std::size_t w = 0; w < n; ++w) {
    const auto s = static_cast<std::size_t>(stem_of[w]);
    if (stem_of[w] < 0 || s >= n) fail(ErrorKind::data, "stem id outside the vocabulary");
    max[s] = std::max(max[s], log_dist[w]);
  }
  std::vector<double> sum(n, 0.0);
  for (std::size_t w = 0; w < n; ++w) {
    const auto s = static_cast<std::size_t>(stem_of[w]);
    if (max[s] != kNegInf) sum[s] += std::exp(log_dist[w] - max[s]);
  }
  std::vector<double> out(n, kNegInf);
  for (std::size_t s = 0; s < n; ++s)
    if (max[s] != kNegInf) out[s] = max[s] + std::log(sum[s]);
  return out;
}

}  // namespace

void mixws_compose_log(std::span<const double> log_p, std::span<const double> log_q,
                       std::span<const TokenId> stem_of, std::span<double> out) {
  check_sizes(log_p.size(), log_q.size(), stem_of.size());
  if (out.size() != log_p.size()) fail(ErrorKind::numeric, "mixws: output size mismatch");
  const std::vector<double> p_mass = class_log_mass(log_p, stem_of);
  const std::vector<double> q_mass = class_log_mass(log_q, stem_of);
  for (std::size_t w = 0; w < log_p.size(); ++w) {
    const auto s = static_cast<std::size_t>(stem_of[w]);
    if (p_mass[s] == kNegInf)
      fail(ErrorKind::invariant, "mixws: stem class of id " + std::to_string(w) + " has zero word-model mass");
    out[w] = (log_p[w] - p_mass[s]) + q_mass[s];
  }
}

MixWsTerms mixws_terms(std::span<const double> p, std::span<const double> q, std::span<const TokenId> stem_of) {
  check_sizes(p.size(), q.size(), stem_of.size());
  std::vector<double> log_p(p.size());
  std::vector<double> log_q(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) fail(ErrorKind::numeric, "mixws: negative probability");
    log_p[i] = std::log(p[i]);
    log_q[i] = std::log(q[i]);
  }
  const std::vector<double> p_mass = class_log_mass(log_p, stem_of);
  const std::vector<double> q_mass = class_log_mass(log_q, stem_of);
  std::vector<double> out(p.size());
  mixws_compose_log(log_p, log_q, stem_of, out);

  MixWsTerms terms;
  terms.within_class.resize(p.size());
  terms.word_marginal.resize(p.size());
  terms.stem_marginal.resize(p.size());
  terms.output.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto s = static_cast<std::size_t>(stem_of[i]);
    terms.within_class[i] = std::exp(log_p[i] - p_mass[s]);
    terms.word_marginal[i] = std::exp(p_mass[i]);
    terms.stem_marginal[i] = std::exp(q_mass[i]);
    terms.output[i] = std::exp(out[i]);
  }
  return terms;
}

std::vector<double> mixws_compose(std::span<const double> p, std::span<const double> q,
                                  std::span<const TokenId> stem_of) {
  return mixws_terms(p, q, stem_of).output;
}

}  // namespace stemlm
