#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemlm/eval.hpp"
#include "stemlm/model.hpp"
#include "stemlm/stemmer.hpp"

namespace stemlm {

namespace stem {
void to_json(nlohmann::json& j, const StemmerParams& p);
void from_json(const nlohmann::json& j, StemmerParams& p);
}  // namespace stem

struct DatasetSpec {
  std::string name;
  std::filesystem::path train;
  std::filesystem::path dev;
  std::filesystem::path test;
  // Mined from the training vocabulary when absent.
  std::optional<std::filesystem::path> stem_map;
};

// JSON schema (every key optional except datasets):
//   datasets:  [{name, train, dev, test, stem_map?}]
//   model:     ModelConfig fields (variant and seed are set per run)
//   stemmer:   {delta_suffix, delta_prefix, max_suffix_len, max_prefix_len, target_suffix_count}
//   eval:      {include_unk, include_eos, slice_diverse_stems, slice_min_types, slice_min_tokens}
//   seeds:     [1, 2, 3, 4, 5]
//   variants:  subset of base, mtl-w, mtl-s, mtl-s2w, mix-w, mix-stem, mix-ws
//   control:   false; adds a shuffled-stem Mix-WS arm
//   shuffle_seed, jobs
struct ExperimentConfig {
  std::vector<DatasetSpec> datasets;
  ModelConfig model;
  stem::StemmerParams stemmer;
  EvalOptions eval;
  bool slice_diverse_stems = false;
  std::size_t slice_min_types = 10;
  std::size_t slice_min_tokens = 500;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> variants = {"base", "mtl-w", "mtl-s", "mtl-s2w", "mix-w", "mix-ws"};
  bool control = false;
  std::uint64_t shuffle_seed = 1;
  std::size_t jobs = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

inline constexpr const char* kShuffledArm = "mix-ws-shuffled";

// The stem mixture composed with a word mixture of seed s is trained with a
// derived seed so the two encoders start from different points.
std::uint64_t stem_model_seed(std::uint64_t seed);

struct ExperimentResult {
  nlohmann::json report;   // resolved config, per-run numbers, aggregates
  std::string table_tsv;   // rows = models, columns = datasets, "mean ±std" of test perplexity
  std::string long_tsv;    // dataset, model, seed, split, perplexity
  // Per-dataset artifacts keyed by relative path (stem maps, rule dumps).
  std::map<std::string, std::string> files;
};

using ProgressFn = std::function<void(const std::string&)>;

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

// report.json, table.tsv and long.tsv, plus per-dataset stem maps and rules.
void write_experiment(const ExperimentResult& result, const std::filesystem::path& dir);

}  // namespace stemlm
