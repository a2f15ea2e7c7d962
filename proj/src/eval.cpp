#include "stemlm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_set>

#include "stemlm/error.hpp"
#include "stemlm/mixws.hpp"

namespace stemlm {

using num::Graph;
using num::Tensor;
using num::Var;

void to_json(nlohmann::json& j, const EvalOptions& o) {
  j = nlohmann::json{{"include_unk", o.include_unk}, {"include_eos", o.include_eos}};
}

void from_json(const nlohmann::json& j, EvalOptions& o) {
  if (!j.is_object()) fail(ErrorKind::usage, "eval options must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_boolean()) fail(ErrorKind::usage, "eval option '" + key + "' must be a boolean");
    if (key == "include_unk")
      o.include_unk = value.get<bool>();
    else if (key == "include_eos")
      o.include_eos = value.get<bool>();
    else
      fail(ErrorKind::usage, "unknown eval option '" + key + "'");
  }
}

namespace {

void check_vocab(const LanguageModel& model, const EncodedCorpus& corpus, const char* what) {
  if (model.vocabulary().fingerprint() != corpus.vocab_fingerprint)
    fail(ErrorKind::data, std::string(what) + " vocabulary does not match the corpus encoding");
}

void check_ids(std::span<const TokenId> ids, std::size_t vocab_size) {
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
      fail(ErrorKind::data, "token id " + std::to_string(id) + " outside the vocabulary");
}

}  // namespace

std::vector<TokenScore> score_tokens(LanguageModel& model, const EncodedCorpus& corpus, std::size_t window,
                                     std::span<const TokenId> stem_of) {
  check_vocab(model, corpus, "model");
  if (!stem_of.empty() && stem_of.size() != model.config().vocab_size)
    fail(ErrorKind::data, "stem map size does not match the vocabulary");
  std::vector<TokenScore> scores(corpus.ids.size());
  for_each_log_distribution(model, corpus.ids, window, [&](std::size_t offset, const Tensor& lp) {
    for (std::size_t r = 0; r < lp.rows(); ++r) {
      const TokenId target = corpus.ids[offset + r];
      const TokenId scored = stem_of.empty() ? target : stem_of[static_cast<std::size_t>(target)];
      scores[offset + r] = TokenScore{target, lp(r, static_cast<std::size_t>(scored))};
    }
  });
  return scores;
}

std::vector<TokenScore> score_tokens_mixws(LanguageModel& p, LanguageModel& q, const stem::StemMap& stems,
                                           const EncodedCorpus& corpus, std::size_t window) {
  check_vocab(p, corpus, "word-mixture");
  check_vocab(q, corpus, "stem-mixture");
  if (p.config().arch() != Arch::mix || q.config().arch() != Arch::mix)
    fail(ErrorKind::usage, "Mix-WS composition needs two mixture-of-softmax models");
  if (stems.size() != p.config().vocab_size) fail(ErrorKind::data, "stem map size does not match the vocabulary");
  if (window == 0) fail(ErrorKind::usage, "window must be positive");
  const std::span<const TokenId> ids = corpus.ids;
  check_ids(ids, p.config().vocab_size);

  const TokenId eos = p.vocabulary().eos_id();
  const std::size_t vocab = p.config().vocab_size;
  RecurrentState p_state = p.initial_state(1);
  RecurrentState q_state = q.initial_state(1);
  std::vector<TokenScore> scores(ids.size());
  std::vector<TokenId> inputs;
  std::vector<double> composed(vocab);
  for (std::size_t start = 0; start < ids.size(); start += window) {
    const std::size_t len = std::min(window, ids.size() - start);
    inputs.resize(len);
    for (std::size_t t = 0; t < len; ++t) inputs[t] = (start + t == 0) ? eos : ids[start + t - 1];
    Graph gp;
    const Tensor& lp = gp.value(p.primary_log_probs(gp, p.encode(gp, inputs, 1, len, p_state, nullptr)));
    Graph gq;
    const Tensor& lq = gq.value(q.primary_log_probs(gq, q.encode(gq, inputs, 1, len, q_state, nullptr)));
    for (std::size_t r = 0; r < len; ++r) {
      mixws_compose_log(lp.row(r), lq.row(r), stems.stems(), composed);
      const TokenId target = ids[start + r];
      scores[start + r] = TokenScore{target, composed[static_cast<std::size_t>(target)]};
    }
  }
  return scores;
}

PerplexityResult perplexity(std::span<const TokenScore> scores, const EvalOptions& options,
                            const std::function<bool(TokenId)>& keep) {
  double total = 0.0;
  std::size_t count = 0;
  for (const TokenScore& s : scores) {
    if (!options.include_unk && s.target == Vocabulary::kUnkId) continue;
    if (!options.include_eos && s.target == Vocabulary::kEosId) continue;
    if (keep && !keep(s.target)) continue;
    total -= s.log_prob;
    ++count;
  }
  if (count == 0) fail(ErrorKind::data, "no target tokens to evaluate");
  return PerplexityResult{std::exp(total / static_cast<double>(count)), count};
}

std::vector<TokenId> select_diverse_stems(const stem::StemMap& stems, std::span<const std::size_t> train_counts,
                                          std::size_t min_types, std::size_t min_tokens) {
  if (train_counts.size() != stems.size()) fail(ErrorKind::data, "training counts do not match the stem map");
  std::vector<TokenId> out;
  for (const auto& [stem_id, words] : stem::stem_classes(stems)) {
    if (Vocabulary::is_reserved(stem_id)) continue;
    std::size_t types = 0;
    std::size_t tokens = 0;
    for (TokenId w : words) {
      const std::size_t c = train_counts[static_cast<std::size_t>(w)];
      if (c > 0) ++types;
      tokens += c;
    }
    if (types >= min_types && tokens >= min_tokens) out.push_back(stem_id);
  }
  return out;
}

SliceResult slice_perplexity(std::span<const TokenScore> scores, std::span<const TokenId> stem_set,
                             const stem::StemMap& stems, const EvalOptions& options) {
  if (stem_set.empty()) fail(ErrorKind::usage, "slice stem set is empty");
  const std::unordered_set<TokenId> wanted(stem_set.begin(), stem_set.end());
  PerplexityResult r;
  try {
    r = perplexity(scores, options, [&](TokenId t) { return wanted.count(stems.stem(t)) > 0; });
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::data) fail(ErrorKind::data, "no target token falls in the slice stem set");
    throw;
  }
  return SliceResult{wanted.size(), r.token_count, r.perplexity};
}

double unigram_perplexity(std::span<const std::size_t> train_counts, std::span<const TokenId> targets,
                          const EvalOptions& options, TokenId unk_id, TokenId eos_id) {
  const double total = std::accumulate(train_counts.begin(), train_counts.end(), 0.0);
  const double denom = total + static_cast<double>(train_counts.size());
  std::vector<TokenScore> scores;
  scores.reserve(targets.size());
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= train_counts.size())
      fail(ErrorKind::data, "target id outside the unigram vocabulary");
    const double p = (static_cast<double>(train_counts[static_cast<std::size_t>(t)]) + 1.0) / denom;
    scores.push_back(TokenScore{t, std::log(p)});
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (const TokenScore& s : scores) {
    if (!options.include_unk && s.target == unk_id) continue;
    if (!options.include_eos && s.target == eos_id) continue;
    sum -= s.log_prob;
    ++count;
  }
  if (count == 0) fail(ErrorKind::data, "no target tokens to evaluate");
  return std::exp(sum / static_cast<double>(count));
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"model_id", model_id},
                   {"split", split},
                   {"perplexity", perplexity},
                   {"token_count", token_count},
                   {"options", options}};
  if (slice)
    j["slice"] = {{"stem_set_size", slice->stem_set_size},
                  {"slice_token_count", slice->slice_token_count},
                  {"slice_perplexity", slice->slice_perplexity}};
  return j;
}

SeedAggregate aggregate(std::span<const std::uint64_t> seeds, std::span<const double> values) {
  if (seeds.size() != values.size()) fail(ErrorKind::usage, "aggregate: seeds and values differ in length");
  if (seeds.empty()) fail(ErrorKind::usage, "aggregate: no values");
  std::vector<std::size_t> order(seeds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return seeds[a] < seeds[b]; });
  SeedAggregate agg;
  for (std::size_t i : order) {
    agg.seeds.push_back(seeds[i]);
    agg.values.push_back(values[i]);
  }
  const double n = static_cast<double>(agg.values.size());
  agg.mean = std::accumulate(agg.values.begin(), agg.values.end(), 0.0) / n;
  if (agg.values.size() > 1) {
    double ss = 0.0;
    for (double v : agg.values) ss += (v - agg.mean) * (v - agg.mean);
    agg.std = std::sqrt(ss / (n - 1.0));
  }
  return agg;
}

nlohmann::json SeedAggregate::to_json() const {
  return {{"seeds", seeds}, {"values", values}, {"mean", mean}, {"std", std}};
}

std::string SeedAggregate::cell() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1%.2f", mean, std);
  return buf;
}

SeedAggregate multi_seed_run(std::span<const std::uint64_t> seeds, const std::function<double(std::uint64_t)>& fn,
                             std::size_t jobs) {
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() < 2 ||
      std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    fail(ErrorKind::usage, "multi-seed runs need at least two distinct seeds");
  std::vector<double> values(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        values[i] = fn(seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, seeds.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::string failed;
  ErrorKind kind = ErrorKind::invariant;
  bool any = false;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!errors[i]) continue;
    std::string msg;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      if (!any) kind = e.kind();
      msg = e.what();
    } catch (const std::exception& e) {
      msg = e.what();
    }
    any = true;
    failed += (failed.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seeds[i]) + ": " + msg;
  }
  if (any) fail(kind, "multi-seed run failed (" + failed + ")");
  return aggregate(seeds, values);
}

nlohmann::json ControlComparison::to_json() const {
  return {{"true_stems", true_stems.to_json()},
          {"shuffled_stems", shuffled_stems.to_json()},
          {"shuffle_seed", shuffle_seed}};
}

ControlComparison control_comparison(const stem::StemMap& stems, std::span<const std::uint64_t> seeds,
                                     std::uint64_t shuffle_seed,
                                     const std::function<double(std::uint64_t, const stem::StemMap&)>& fn,
                                     std::size_t jobs) {
  const stem::StemMap shuffled = stem::shuffle_stem_map(stems, shuffle_seed);
  ControlComparison out;
  out.shuffle_seed = shuffle_seed;
  out.true_stems = multi_seed_run(seeds, [&](std::uint64_t s) { return fn(s, stems); }, jobs);
  out.shuffled_stems = multi_seed_run(seeds, [&](std::uint64_t s) { return fn(s, shuffled); }, jobs);
  return out;
}

}  // namespace stemlm
