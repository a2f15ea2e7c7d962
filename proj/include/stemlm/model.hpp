#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemlm/corpus.hpp"
#include "stemlm/graph.hpp"
#include "stemlm/optimizer.hpp"

namespace stemlm {

// Trainable model variants. mix_stem is the stem-target mixture q that is
// composed with a mix_w model at evaluation time.
enum class Variant { base, mtl_w, mtl_s, mtl_s2w, mix_w, mix_stem };

enum class Arch { base, mix };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::base;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 256;
  std::size_t hidden_dim = 512;
  std::size_t num_layers = 2;
  std::size_t mixtures = 3;
  double dropout = 0.3;
  double init_range = 0.1;
  double mtl_lambda = 0.5;
  std::size_t s2w_switch_epoch = 5;
  std::size_t epochs = 15;
  std::size_t batch_size = 20;
  std::size_t bptt = 35;
  std::uint64_t seed = 1;
  num::OptimizerConfig optimizer;

  Arch arch() const;
  bool has_aux_head() const;
  bool needs_stem_map() const;
  // Epochs are counted from 1; the aux head of mtl-s2w predicts stems for
  // epochs 1..s2w_switch_epoch and words afterwards.
  bool aux_predicts_stems(std::size_t epoch) const;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Affine projection to vocabulary logits followed by a softmax.
class SoftmaxHead {
 public:
  SoftmaxHead(std::string name, std::size_t hidden, std::size_t vocab);

  num::Var log_probs(num::Graph& g, num::Var hidden);
  num::Var nll(num::Graph& g, num::Var hidden, std::span<const TokenId> targets, std::span<const double> weights);

  std::vector<num::Parameter*> parameters();

  num::Parameter weight;  // [H x V]
  num::Parameter bias;    // [1 x V]
};

/// K softmax components over a shared output embedding. Component k reads
/// tanh(h W_k + b_k); the prior is a softmax over a K-way projection of h.
class MixtureHead {
 public:
  MixtureHead(std::string name, std::size_t hidden, std::size_t vocab, std::size_t components);

  std::size_t components() const { return proj_weight.size(); }

  num::Var log_prior(num::Graph& g, num::Var hidden);
  // Per-component log distributions, each [N x V].
  std::vector<num::Var> component_log_probs(num::Graph& g, num::Var hidden);
  // Full log distribution of the mixture, [N x V].
  num::Var log_probs(num::Graph& g, num::Var hidden);
  // Mean negative log-likelihood of the targets, evaluated only at the
  // target columns.
  num::Var nll(num::Graph& g, num::Var hidden, std::span<const TokenId> targets, std::span<const double> weights);

  std::vector<num::Parameter*> parameters();

  num::Parameter prior_weight;  // [H x K]
  num::Parameter prior_bias;    // [1 x K]
  std::vector<num::Parameter> proj_weight;  // K x [H x H]
  std::vector<num::Parameter> proj_bias;    // K x [1 x H]
  num::Parameter out_weight;  // [H x V] shared across components
  num::Parameter out_bias;    // [1 x V]
};

/// Embedding table plus stacked LSTM layers.
class Encoder {
 public:
  struct Layer {
    num::Parameter w_input;   // [in x 4H]
    num::Parameter w_hidden;  // [H x 4H]
    num::Parameter bias;      // [1 x 4H]
  };

  Encoder(std::size_t vocab, std::size_t embed, std::size_t hidden, std::size_t layers);

  std::vector<num::Parameter*> parameters();

  num::Parameter embedding;  // [V x E]
  std::vector<Layer> layers;
};

// Carried recurrent state, one (h, c) pair per layer, each [batch x H].
struct RecurrentState {
  std::vector<num::Tensor> h;
  std::vector<num::Tensor> c;
};

class LanguageModel {
 public:
  LanguageModel(const ModelConfig& config, std::shared_ptr<const Vocabulary> vocab);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocabulary_ptr() const { return vocab_; }

  // Every trainable tensor, in a fixed order (encoder, primary head, aux).
  std::vector<num::Parameter*> parameters();
  std::vector<const num::Parameter*> parameters() const;

  RecurrentState initial_state(std::size_t batch) const;

  // Runs the encoder over a [batch x length] block (row-major) and returns
  // the hidden states stacked time-major: row t * batch + b. `state` is
  // read as the initial state and overwritten with the final one.
  num::Var encode(num::Graph& g, std::span<const TokenId> inputs, std::size_t batch, std::size_t length,
                  RecurrentState& state, Rng* dropout_rng);

  num::Var primary_log_probs(num::Graph& g, num::Var hidden);
  num::Var primary_nll(num::Graph& g, num::Var hidden, std::span<const TokenId> targets,
                       std::span<const double> weights = {});
  num::Var aux_nll(num::Graph& g, num::Var hidden, std::span<const TokenId> targets,
                   std::span<const double> weights = {});

  SoftmaxHead* softmax_head() { return softmax_.get(); }
  MixtureHead* mixture_head() { return mixture_.get(); }
  SoftmaxHead* aux_head() { return aux_.get(); }
  Encoder& encoder() { return encoder_; }

 private:
  ModelConfig config_;
  std::shared_ptr<const Vocabulary> vocab_;
  Encoder encoder_;
  std::unique_ptr<SoftmaxHead> softmax_;
  std::unique_ptr<MixtureHead> mixture_;
  std::unique_ptr<SoftmaxHead> aux_;
};

// Draws every parameter from uniform(-range, range), biases zero, in the
// model's parameter order.
void initialize_parameters(LanguageModel& model, std::uint64_t seed);

// lambda * word_loss + (1 - lambda) * stem_loss.
double mtl_loss(double word_loss, double stem_loss, double lambda);
num::Var mtl_loss(num::Graph& g, num::Var word_loss, num::Var stem_loss, double lambda);

// Maps each target through the stem map.
std::vector<TokenId> stem_targets(std::span<const TokenId> targets, std::span<const TokenId> stem_of);

/// Distribution over the vocabulary for the token following `context`. The
/// context is read after an implicit sentence-start (eos) token.
std::vector<double> next_word_dist(LanguageModel& model, std::span<const TokenId> context);

/// Log distributions for every position of a token stream: row t predicts
/// ids[t] from eos, ids[0..t-1]. Processed in windows of `window` tokens with
/// carried state; `sink(offset, log_probs)` receives each window.
void for_each_log_distribution(LanguageModel& model, std::span<const TokenId> ids, std::size_t window,
                               const std::function<void(std::size_t, const num::Tensor&)>& sink);

}  // namespace stemlm
