#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace stemlm::synth {

// Stem x suffix grammar. Stems follow a sparse Markov chain (each stem has a
// few preferred successors, mixed with a global Zipf draw); suffixes are
// drawn from a Zipf distribution and repeat the previous suffix with
// probability suffix_agreement. Every word is stem + suffix, and the empty
// suffix is always part of the inventory so each stem also occurs bare.
struct SynthParams {
  std::size_t stems = 50;
  std::size_t suffixes = 8;
  double zipf_exponent = 1.1;
  std::size_t train_tokens = 30000;
  std::size_t dev_tokens = 3000;
  std::size_t test_tokens = 3000;
  std::size_t min_sentence = 4;
  std::size_t max_sentence = 12;
  std::size_t successors = 3;
  double successor_weight = 0.7;
  double suffix_agreement = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthParams& p);
void from_json(const nlohmann::json& j, SynthParams& p);

struct SynthCorpus {
  std::vector<std::string> stems;
  std::vector<std::string> suffixes;
  // Sentences as space-joined lines.
  std::vector<std::string> train;
  std::vector<std::string> dev;
  std::vector<std::string> test;

  // Every word form that occurs in any split, with its bare stem, sorted by
  // word.
  std::vector<std::pair<std::string, std::string>> gold_stems() const;
};

SynthCorpus generate(const SynthParams& params);

// Writes train.txt, dev.txt, test.txt, gold_stems.tsv and params.json.
void write_corpus(const SynthCorpus& corpus, const SynthParams& params, const std::filesystem::path& dir);

}  // namespace stemlm::synth
