#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemlm/corpus.hpp"
#include "stemlm/model.hpp"
#include "stemlm/stemmer.hpp"

namespace stemlm {

// Which target tokens count toward perplexity. Both default on: every
// position of the encoded stream, sentence ends included.
struct EvalOptions {
  bool include_unk = true;
  bool include_eos = true;
};

void to_json(nlohmann::json& j, const EvalOptions& o);
void from_json(const nlohmann::json& j, EvalOptions& o);

struct TokenScore {
  TokenId target = 0;
  double log_prob = 0.0;
};

// Natural-log probability of every token of `corpus` under the model's
// primary head, in stream order. The corpus must have been encoded with the
// model's vocabulary. With `stem_of`, the model is scored on the stem of
// each target (a stem-mixture evaluated on its own task); TokenScore::target
// still holds the word.
std::vector<TokenScore> score_tokens(LanguageModel& model, const EncodedCorpus& corpus, std::size_t window = 64,
                                     std::span<const TokenId> stem_of = {});

// Same, for the word/stem composition of a word mixture p and a stem mixture
// q. Both models advance over the stream together, one window at a time.
std::vector<TokenScore> score_tokens_mixws(LanguageModel& p, LanguageModel& q, const stem::StemMap& stems,
                                           const EncodedCorpus& corpus, std::size_t window = 64);

struct PerplexityResult {
  double perplexity = 0.0;
  std::size_t token_count = 0;
};

// exp of the mean negative log-probability over the counted tokens. An
// optional predicate further restricts the set. Throws Error(data) when no
// token qualifies.
PerplexityResult perplexity(std::span<const TokenScore> scores, const EvalOptions& options,
                            const std::function<bool(TokenId)>& keep = {});

// Stems whose class has at least min_types word types seen in training and
// whose class tokens occur at least min_tokens times there.
std::vector<TokenId> select_diverse_stems(const stem::StemMap& stems, std::span<const std::size_t> train_counts,
                                          std::size_t min_types = 10, std::size_t min_tokens = 500);

struct SliceResult {
  std::size_t stem_set_size = 0;
  std::size_t slice_token_count = 0;
  double slice_perplexity = 0.0;
};

// Perplexity over the targets whose stem is in `stem_set` (context is the
// full stream). Throws Error(usage) on an empty set, Error(data) when no
// target matches.
SliceResult slice_perplexity(std::span<const TokenScore> scores, std::span<const TokenId> stem_set,
                             const stem::StemMap& stems, const EvalOptions& options);

// Add-one smoothed unigram model estimated from `train_counts`, scored on
// `targets`. Used as the frequency baseline the neural models must beat.
double unigram_perplexity(std::span<const std::size_t> train_counts, std::span<const TokenId> targets,
                          const EvalOptions& options, TokenId unk_id, TokenId eos_id);

struct EvalReport {
  std::string model_id;
  std::string split;
  double perplexity = 0.0;
  std::size_t token_count = 0;
  EvalOptions options;
  std::optional<SliceResult> slice;

  nlohmann::json to_json() const;
};

struct SeedAggregate {
  std::vector<std::uint64_t> seeds;  // ascending
  std::vector<double> values;        // aligned with seeds
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation; 0 for one seed

  nlohmann::json to_json() const;
  // "mean ±std" with two decimals.
  std::string cell() const;
};

// Order-independent: pairs are sorted by seed before reduction.
SeedAggregate aggregate(std::span<const std::uint64_t> seeds, std::span<const double> values);

// Runs fn once per seed on up to `jobs` threads. Requires at least two
// distinct seeds. If any seed throws, the error names every failed seed.
SeedAggregate multi_seed_run(std::span<const std::uint64_t> seeds, const std::function<double(std::uint64_t)>& fn,
                             std::size_t jobs = 1);

struct ControlComparison {
  SeedAggregate true_stems;
  SeedAggregate shuffled_stems;
  std::uint64_t shuffle_seed = 0;

  nlohmann::json to_json() const;
};

// The same Mix-WS pipeline with the mined stem map and with a shuffled one.
ControlComparison control_comparison(const stem::StemMap& stems, std::span<const std::uint64_t> seeds,
                                     std::uint64_t shuffle_seed,
                                     const std::function<double(std::uint64_t, const stem::StemMap&)>& fn,
                                     std::size_t jobs = 1);

}  // namespace stemlm
