#pragma once

// Small models and data shared by the model tests and the acceptance binary.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stemlm/corpus.hpp"
#include "stemlm/grad_check.hpp"
#include "stemlm/model.hpp"
#include "stemlm/random.hpp"
#include "stemlm/stemmer.hpp"

namespace tiny {

using namespace stemlm;

// 18 content words plus the two reserved ids.
inline std::shared_ptr<const Vocabulary> vocab(std::size_t content = 18) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < content; ++i) tokens.push_back("w" + std::to_string(i));
  return std::make_shared<const Vocabulary>(Vocabulary::from_content_tokens(tokens));
}

inline ModelConfig config(Variant variant, std::size_t vocab_size, std::size_t mixtures = 2) {
  ModelConfig c;
  c.variant = variant;
  c.vocab_size = vocab_size;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.num_layers = 1;
  c.mixtures = mixtures;
  c.dropout = 0.0;
  c.init_range = 0.5;
  c.epochs = 2;
  c.s2w_switch_epoch = 1;
  c.batch_size = 2;
  c.bptt = 4;
  return c;
}

// Random but non-zero biases, so bias gradients are exercised too.
inline std::unique_ptr<LanguageModel> model(const ModelConfig& c, std::shared_ptr<const Vocabulary> v,
                                            std::uint64_t seed) {
  auto m = std::make_unique<LanguageModel>(c, std::move(v));
  Rng rng(seed);
  for (num::Parameter* p : m->parameters()) {
    for (double& x : p->value.data()) x = rng.uniform(-c.init_range, c.init_range);
    p->zero_grad();
  }
  return m;
}

inline std::vector<TokenId> random_ids(std::size_t n, std::size_t vocab_size, Rng& rng) {
  std::vector<TokenId> ids(n);
  for (TokenId& id : ids) id = static_cast<TokenId>(rng.below(vocab_size));
  return ids;
}

// Stem map over the tiny vocabulary: content word i maps to the first word of
// its group of three.
inline std::vector<TokenId> grouped_stems(std::size_t vocab_size) {
  std::vector<TokenId> stem_of(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i)
    stem_of[i] = Vocabulary::is_reserved(static_cast<TokenId>(i)) ? static_cast<TokenId>(i)
                                                                    : static_cast<TokenId>(2 + (i - 2) / 3 * 3);
  return stem_of;
}

// Some LSTM weight gradients are ~1e-7 on a loss of ~3; at eps = 1e-5 the
// central difference is rounding-limited to ~2e-11 absolute, which alone
// exceeds 1e-4 relative there. 1e-4 keeps truncation negligible.
inline num::GradCheckOptions grad_check_options() {
  num::GradCheckOptions o;
  o.epsilon = 1e-4;
  return o;
}

// One BPTT block as the trainer builds it: the loss of every head the
// variant trains, on batch x length inputs with time-major targets.
struct Block {
  std::size_t batch = 2;
  std::size_t length = 3;
  std::vector<TokenId> inputs;   // [batch][length]
  std::vector<TokenId> targets;  // time-major
};

inline Block random_block(std::size_t vocab_size, Rng& rng, std::size_t batch = 2, std::size_t length = 3) {
  Block b;
  b.batch = batch;
  b.length = length;
  b.inputs = random_ids(batch * length, vocab_size, rng);
  b.targets = random_ids(batch * length, vocab_size, rng);
  return b;
}

inline std::function<num::Var(num::Graph&)> loss_fn(LanguageModel& m, const Block& block,
                                                     std::span<const TokenId> stem_of, bool aux_on_stems) {
  return [&m, &block, stem_of, aux_on_stems](num::Graph& g) {
    RecurrentState state = m.initial_state(block.batch);
    const num::Var hidden = m.encode(g, block.inputs, block.batch, block.length, state, nullptr);
    const bool primary_on_stems = m.config().variant == Variant::mix_stem;
    const std::vector<TokenId> primary_targets =
        primary_on_stems ? stem_targets(block.targets, stem_of) : block.targets;
    num::Var loss = m.primary_nll(g, hidden, primary_targets);
    if (m.config().has_aux_head()) {
      const std::vector<TokenId> aux = aux_on_stems ? stem_targets(block.targets, stem_of) : block.targets;
      loss = mtl_loss(g, loss, m.aux_nll(g, hidden, aux), m.config().mtl_lambda);
    }
    return loss;
  };
}

}  // namespace tiny

#include "stemlm/synth.hpp"

namespace tiny {

struct ToyData {
  std::shared_ptr<const Vocabulary> vocab;
  EncodedCorpus train;
  EncodedCorpus dev;
  EncodedCorpus test;
  stem::StemMap stems;
};

inline TokenizedCorpus join(const std::vector<std::string>& lines) {
  std::string text;
  for (const std::string& l : lines) text += l + "\n";
  return parse_corpus(text);
}

// About 500 training tokens from the stem x suffix generator.
inline ToyData toy_data(std::uint64_t seed = 3) {
  synth::SynthParams p;
  p.stems = 8;
  p.suffixes = 3;
  p.train_tokens = 500;
  p.dev_tokens = 200;
  p.test_tokens = 200;
  p.seed = seed;
  const synth::SynthCorpus c = synth::generate(p);
  ToyData d;
  const TokenizedCorpus train = join(c.train);
  d.vocab = std::make_shared<const Vocabulary>(Vocabulary::build(train));
  d.train = encode(train, *d.vocab);
  d.dev = encode(join(c.dev), *d.vocab);
  d.test = encode(join(c.test), *d.vocab);
  stem::StemmerParams sp;
  sp.delta_suffix = 3;
  sp.delta_prefix = 100;
  d.stems = stem::identify_stems(*d.vocab, sp).map;
  return d;
}

}  // namespace tiny
