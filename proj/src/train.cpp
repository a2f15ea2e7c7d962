#include "stemlm/train.hpp"

#include <cmath>

#include "stemlm/error.hpp"
#include "stemlm/random.hpp"

namespace stemlm {

using num::Graph;
using num::Var;

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"loss_primary", loss_primary}, {"dev_ppl", dev_ppl}, {"lr", lr}};
  j["loss_aux"] = loss_aux ? nlohmann::json(*loss_aux) : nlohmann::json(nullptr);
  j["aux_target"] = aux_target ? nlohmann::json(*aux_target) : nlohmann::json(nullptr);
  if (s2w_switch_epoch) j["s2w_switch_epoch"] = *s2w_switch_epoch;
  return j;
}

double stream_nll(LanguageModel& model, std::span<const TokenId> ids, std::span<const TokenId> targets,
                  std::size_t window) {
  if (ids.size() != targets.size()) fail(ErrorKind::usage, "stream_nll: ids and targets differ in length");
  if (ids.empty()) fail(ErrorKind::data, "cannot evaluate an empty stream");
  double total = 0.0;
  for_each_log_distribution(model, ids, window, [&](std::size_t offset, const num::Tensor& lp) {
    for (std::size_t r = 0; r < lp.rows(); ++r) total -= lp(r, static_cast<std::size_t>(targets[offset + r]));
  });
  return total / static_cast<double>(ids.size());
}

TrainResult train(const ModelConfig& config, std::shared_ptr<const Vocabulary> vocab, const EncodedCorpus& train_data,
                  const EncodedCorpus& dev_data, const stem::StemMap* stems,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (!vocab) fail(ErrorKind::usage, "train: missing vocabulary");
  config.validate();
  if (config.needs_stem_map() && stems == nullptr)
    fail(ErrorKind::usage, std::string("variant ") + to_string(config.variant) + " requires a stem map");
  if (stems && stems->size() != vocab->size()) fail(ErrorKind::data, "stem map size does not match the vocabulary");
  const std::uint64_t fp = vocab->fingerprint();
  if (train_data.vocab_fingerprint != fp || dev_data.vocab_fingerprint != fp)
    fail(ErrorKind::data, "corpus was encoded with a different vocabulary");

  auto model = std::make_unique<LanguageModel>(config, vocab);
  initialize_parameters(*model, config.seed);
  num::Optimizer optimizer(config.optimizer);
  const std::vector<num::Parameter*> params = model->parameters();
  const BatchStream stream = batchify(train_data.ids, config.batch_size, config.bptt);
  Rng dropout_rng(splitmix64(config.seed ^ 0x5eedd0f0ULL));
  const std::span<const TokenId> stem_of = stems ? stems->stems() : std::span<const TokenId>{};

  const bool primary_on_stems = config.variant == Variant::mix_stem;
  std::vector<TokenId> dev_targets(dev_data.ids);
  if (primary_on_stems) dev_targets = stem_targets(dev_data.ids, stem_of);

  TrainResult result;
  std::vector<TokenId> targets;
  std::vector<TokenId> aux_targets;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const bool aux_on_stems = config.aux_predicts_stems(epoch);
    RecurrentState state = model->initial_state(config.batch_size);
    double primary_total = 0.0;
    double aux_total = 0.0;
    std::size_t token_total = 0;
    for (const BatchStep& step : stream.steps) {
      // Time-major targets to line up with the encoder output rows.
      targets.resize(step.batch_size * step.length);
      for (std::size_t t = 0; t < step.length; ++t)
        for (std::size_t b = 0; b < step.batch_size; ++b) targets[t * step.batch_size + b] = step.target(b, t);
      if (primary_on_stems) targets = stem_targets(targets, stem_of);

      for (num::Parameter* p : params) p->zero_grad();
      Graph g;
      const Var hidden = model->encode(g, step.inputs, step.batch_size, step.length, state, &dropout_rng);
      const Var primary = model->primary_nll(g, hidden, targets);
      Var loss = primary;
      if (config.has_aux_head()) {
        aux_targets = aux_on_stems ? stem_targets(targets, stem_of) : targets;
        const Var aux = model->aux_nll(g, hidden, aux_targets);
        aux_total += g.value(aux).item() * static_cast<double>(targets.size());
        loss = mtl_loss(g, primary, aux, config.mtl_lambda);
      }
      primary_total += g.value(primary).item() * static_cast<double>(targets.size());
      token_total += targets.size();
      g.backward(loss);
      optimizer.step(params);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss_primary = primary_total / static_cast<double>(token_total);
    if (config.has_aux_head()) {
      record.loss_aux = aux_total / static_cast<double>(token_total);
      record.aux_target = aux_on_stems ? "stem" : "word";
    }
    if (config.variant == Variant::mtl_s2w) record.s2w_switch_epoch = config.s2w_switch_epoch;
    record.dev_ppl = std::exp(stream_nll(*model, dev_data.ids, dev_targets));
    record.lr = optimizer.learning_rate();
    if (on_epoch) on_epoch(record);
    result.log.push_back(std::move(record));
    optimizer.decay_lr();
  }

  result.checkpoint.epoch = config.epochs;
  result.checkpoint.optimizer = OptimizerState{optimizer.learning_rate(), optimizer.step_count(),
                                               optimizer.first_moments(), optimizer.second_moments()};
  for (num::Parameter* p : params) p->zero_grad();
  result.checkpoint.model = std::move(model);
  return result;
}

}  // namespace stemlm
