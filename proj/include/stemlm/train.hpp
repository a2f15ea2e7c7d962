#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemlm/checkpoint.hpp"
#include "stemlm/corpus.hpp"
#include "stemlm/model.hpp"
#include "stemlm/stemmer.hpp"

namespace stemlm {

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_primary = 0.0;
  std::optional<double> loss_aux;
  // Perplexity of the primary head on its own targets (stems for mix-stem).
  double dev_ppl = 0.0;
  double lr = 0.0;
  // "stem" or "word" for variants with an auxiliary head.
  std::optional<std::string> aux_target;
  std::optional<std::size_t> s2w_switch_epoch;

  nlohmann::json to_json() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> log;
};

// Trains one variant. stems is required for mtl-s, mtl-s2w and mix-stem.
TrainResult train(const ModelConfig& config, std::shared_ptr<const Vocabulary> vocab, const EncodedCorpus& train_data,
                  const EncodedCorpus& dev_data, const stem::StemMap* stems,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// Mean negative log-likelihood of `targets[t]` given ids[0..t-1] under the
// primary head, run over the stream as in for_each_log_distribution.
double stream_nll(LanguageModel& model, std::span<const TokenId> ids, std::span<const TokenId> targets,
                  std::size_t window = 64);

}  // namespace stemlm
