#include "stemlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "stemlm/error.hpp"

namespace stemlm {

using num::Graph;
using num::Parameter;
using num::Tensor;
using num::Var;

const char* to_string(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::mtl_w: return "mtl-w";
    case Variant::mtl_s: return "mtl-s";
    case Variant::mtl_s2w: return "mtl-s2w";
    case Variant::mix_w: return "mix-w";
    case Variant::mix_stem: return "mix-stem";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : {Variant::base, Variant::mtl_w, Variant::mtl_s, Variant::mtl_s2w, Variant::mix_w, Variant::mix_stem})
    if (name == to_string(v)) return v;
  fail(ErrorKind::usage, "unknown variant '" + name + "' (expected base, mtl-w, mtl-s, mtl-s2w, mix-w or mix-stem)");
}

Arch ModelConfig::arch() const {
  return (variant == Variant::mix_w || variant == Variant::mix_stem) ? Arch::mix : Arch::base;
}

bool ModelConfig::has_aux_head() const {
  return variant == Variant::mtl_w || variant == Variant::mtl_s || variant == Variant::mtl_s2w;
}

bool ModelConfig::needs_stem_map() const {
  return variant == Variant::mtl_s || variant == Variant::mtl_s2w || variant == Variant::mix_stem;
}

bool ModelConfig::aux_predicts_stems(std::size_t epoch) const {
  if (variant == Variant::mtl_s) return true;
  if (variant == Variant::mtl_s2w) return epoch <= s2w_switch_epoch;
  return false;
}

void ModelConfig::validate() const {
  if (vocab_size < 3) fail(ErrorKind::usage, "vocab_size must be at least 3");
  if (embed_dim == 0 || hidden_dim == 0 || num_layers == 0)
    fail(ErrorKind::usage, "embed_dim, hidden_dim and num_layers must be positive");
  if (mixtures == 0) fail(ErrorKind::usage, "mixtures (K) must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::usage, "dropout must be in [0, 1)");
  if (!(mtl_lambda >= 0.0 && mtl_lambda <= 1.0)) fail(ErrorKind::usage, "mtl_lambda must be in [0, 1]");
  if (!(init_range >= 0.0)) fail(ErrorKind::usage, "init_range must be non-negative");
  if (epochs == 0 || batch_size == 0 || bptt == 0)
    fail(ErrorKind::usage, "epochs, batch_size and bptt must be positive");
  if (variant == Variant::mtl_s2w && s2w_switch_epoch >= epochs)
    fail(ErrorKind::usage, "s2w_switch_epoch (" + std::to_string(s2w_switch_epoch) +
                               ") must be smaller than epochs (" + std::to_string(epochs) + ")");
  optimizer.validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"vocab_size", c.vocab_size},
                     {"embed_dim", c.embed_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"num_layers", c.num_layers},
                     {"mixtures", c.mixtures},
                     {"dropout", c.dropout},
                     {"init_range", c.init_range},
                     {"mtl_lambda", c.mtl_lambda},
                     {"s2w_switch_epoch", c.s2w_switch_epoch},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"bptt", c.bptt},
                     {"seed", c.seed},
                     {"optimizer", to_string(c.optimizer.kind)},
                     {"learning_rate", c.optimizer.learning_rate},
                     {"decay_factor", c.optimizer.decay_factor},
                     {"adam_beta1", c.optimizer.beta1},
                     {"adam_beta2", c.optimizer.beta2},
                     {"adam_epsilon", c.optimizer.epsilon},
                     {"clip_norm", c.optimizer.clip_norm}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) fail(ErrorKind::usage, "model config must be a JSON object");
  static const std::set<std::string> known = {
      "variant", "vocab_size", "embed_dim", "hidden_dim", "num_layers", "mixtures", "dropout",
      "init_range", "mtl_lambda", "s2w_switch_epoch", "epochs", "batch_size", "bptt", "seed",
      "optimizer", "learning_rate", "decay_factor", "adam_beta1", "adam_beta2", "adam_epsilon", "clip_norm"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) fail(ErrorKind::usage, "unknown model config field '" + key + "'");
  try {
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    read("vocab_size", c.vocab_size);
    read("embed_dim", c.embed_dim);
    read("hidden_dim", c.hidden_dim);
    read("num_layers", c.num_layers);
    read("mixtures", c.mixtures);
    read("dropout", c.dropout);
    read("init_range", c.init_range);
    read("mtl_lambda", c.mtl_lambda);
    read("s2w_switch_epoch", c.s2w_switch_epoch);
    read("epochs", c.epochs);
    read("batch_size", c.batch_size);
    read("bptt", c.bptt);
    read("seed", c.seed);
    if (j.contains("optimizer")) c.optimizer.kind = num::optimizer_kind_from_string(j.at("optimizer").get<std::string>());
    read("learning_rate", c.optimizer.learning_rate);
    read("decay_factor", c.optimizer.decay_factor);
    read("adam_beta1", c.optimizer.beta1);
    read("adam_beta2", c.optimizer.beta2);
    read("adam_epsilon", c.optimizer.epsilon);
    read("clip_norm", c.optimizer.clip_norm);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("model config: ") + e.what());
  }
}

SoftmaxHead::SoftmaxHead(std::string name, std::size_t hidden, std::size_t vocab)
    : weight(name + ".weight", Tensor(hidden, vocab)), bias(name + ".bias", Tensor(1, vocab)) {}

Var SoftmaxHead::log_probs(Graph& g, Var hidden) {
  return g.log_softmax(g.add_row(g.matmul(hidden, g.parameter(weight)), g.parameter(bias)));
}

Var SoftmaxHead::nll(Graph& g, Var hidden, std::span<const TokenId> targets, std::span<const double> weights) {
  return g.cross_entropy(log_probs(g, hidden), targets, weights);
}

std::vector<Parameter*> SoftmaxHead::parameters() { return {&weight, &bias}; }

MixtureHead::MixtureHead(std::string name, std::size_t hidden, std::size_t vocab, std::size_t components)
    : prior_weight(name + ".prior.weight", Tensor(hidden, components)),
      prior_bias(name + ".prior.bias", Tensor(1, components)),
      out_weight(name + ".out.weight", Tensor(hidden, vocab)),
      out_bias(name + ".out.bias", Tensor(1, vocab)) {
  proj_weight.reserve(components);
  proj_bias.reserve(components);
  for (std::size_t k = 0; k < components; ++k) {
    proj_weight.emplace_back(name + ".proj." + std::to_string(k) + ".weight", Tensor(hidden, hidden));
    proj_bias.emplace_back(name + ".proj." + std::to_string(k) + ".bias", Tensor(1, hidden));
  }
}

Var MixtureHead::log_prior(Graph& g, Var hidden) {
  return g.log_softmax(g.add_row(g.matmul(hidden, g.parameter(prior_weight)), g.parameter(prior_bias)));
}

std::vector<Var> MixtureHead::component_log_probs(Graph& g, Var hidden) {
  std::vector<Var> out;
  const Var W = g.parameter(out_weight);
  const Var b = g.parameter(out_bias);
  for (std::size_t k = 0; k < components(); ++k) {
    const Var ctx = g.tanh(g.add_row(g.matmul(hidden, g.parameter(proj_weight[k])), g.parameter(proj_bias[k])));
    out.push_back(g.log_softmax(g.add_row(g.matmul(ctx, W), b)));
  }
  return out;
}

Var MixtureHead::log_probs(Graph& g, Var hidden) {
  const Var prior = log_prior(g, hidden);
  const std::vector<Var> comps = component_log_probs(g, hidden);
  return g.log_mixture(prior, comps);
}

Var MixtureHead::nll(Graph& g, Var hidden, std::span<const TokenId> targets, std::span<const double> weights) {
  const Var prior = log_prior(g, hidden);
  const std::vector<Var> comps = component_log_probs(g, hidden);
  std::vector<Var> picked;
  picked.reserve(comps.size());
  for (Var c : comps) picked.push_back(g.pick(c, targets));
  const Var joint = g.add(prior, g.concat_cols(picked));
  return g.scale(g.weighted_mean(g.logsumexp_rows(joint), weights), -1.0);
}

std::vector<Parameter*> MixtureHead::parameters() {
  std::vector<Parameter*> out{&prior_weight, &prior_bias};
  for (std::size_t k = 0; k < components(); ++k) {
    out.push_back(&proj_weight[k]);
    out.push_back(&proj_bias[k]);
  }
  out.push_back(&out_weight);
  out.push_back(&out_bias);
  return out;
}

Encoder::Encoder(std::size_t vocab, std::size_t embed, std::size_t hidden, std::size_t num_layers)
    : embedding("embedding", Tensor(vocab, embed)) {
  layers.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::string prefix = "lstm." + std::to_string(l);
    const std::size_t in = l == 0 ? embed : hidden;
    layers.push_back(Layer{Parameter(prefix + ".w_input", Tensor(in, 4 * hidden)),
                           Parameter(prefix + ".w_hidden", Tensor(hidden, 4 * hidden)),
                           Parameter(prefix + ".bias", Tensor(1, 4 * hidden))});
  }
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out{&embedding};
  for (auto& layer : layers) {
    out.push_back(&layer.w_input);
    out.push_back(&layer.w_hidden);
    out.push_back(&layer.bias);
  }
  return out;
}

LanguageModel::LanguageModel(const ModelConfig& config, std::shared_ptr<const Vocabulary> vocab)
    : config_(config),
      vocab_(std::move(vocab)),
      encoder_(config.vocab_size, config.embed_dim, config.hidden_dim, config.num_layers) {
  if (!vocab_) fail(ErrorKind::usage, "model needs a vocabulary");
  if (vocab_->size() != config_.vocab_size)
    fail(ErrorKind::usage, "config vocab_size " + std::to_string(config_.vocab_size) + " does not match vocabulary size " +
                               std::to_string(vocab_->size()));
  config_.validate();
  if (config_.arch() == Arch::mix)
    mixture_ = std::make_unique<MixtureHead>("mix", config_.hidden_dim, config_.vocab_size, config_.mixtures);
  else
    softmax_ = std::make_unique<SoftmaxHead>("head", config_.hidden_dim, config_.vocab_size);
  if (config_.has_aux_head()) aux_ = std::make_unique<SoftmaxHead>("aux", config_.hidden_dim, config_.vocab_size);
}

std::vector<Parameter*> LanguageModel::parameters() {
  std::vector<Parameter*> out = encoder_.parameters();
  auto append = [&out](std::vector<Parameter*> more) { out.insert(out.end(), more.begin(), more.end()); };
  if (softmax_) append(softmax_->parameters());
  if (mixture_) append(mixture_->parameters());
  if (aux_) append(aux_->parameters());
  return out;
}

std::vector<const Parameter*> LanguageModel::parameters() const {
  auto params = const_cast<LanguageModel*>(this)->parameters();
  return {params.begin(), params.end()};
}

RecurrentState LanguageModel::initial_state(std::size_t batch) const {
  RecurrentState s;
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    s.h.emplace_back(batch, config_.hidden_dim);
    s.c.emplace_back(batch, config_.hidden_dim);
  }
  return s;
}

Var LanguageModel::encode(Graph& g, std::span<const TokenId> inputs, std::size_t batch, std::size_t length,
                          RecurrentState& state, Rng* dropout_rng) {
  if (inputs.size() != batch * length)
    fail(ErrorKind::numeric, "encode: " + std::to_string(inputs.size()) + " inputs for a " + std::to_string(batch) +
                                 "x" + std::to_string(length) + " block");
  if (state.h.size() != config_.num_layers || state.h[0].rows() != batch)
    fail(ErrorKind::numeric, "encode: recurrent state does not match batch size");
  const double rate = dropout_rng ? config_.dropout : 0.0;
  auto drop = [&](Var v) { return rate > 0.0 ? g.dropout(v, rate, *dropout_rng) : v; };

  const Var table = g.parameter(encoder_.embedding);
  std::vector<num::LstmState> layer_state;
  for (std::size_t l = 0; l < config_.num_layers; ++l)
    layer_state.push_back({g.constant(state.h[l], "h0"), g.constant(state.c[l], "c0")});
  std::vector<Var> layer_params;
  for (auto& layer : encoder_.layers) {
    layer_params.push_back(g.parameter(layer.w_input));
    layer_params.push_back(g.parameter(layer.w_hidden));
    layer_params.push_back(g.parameter(layer.bias));
  }

  std::vector<Var> outputs;
  outputs.reserve(length);
  std::vector<TokenId> ids(batch);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t b = 0; b < batch; ++b) ids[b] = inputs[b * length + t];
    Var x = drop(g.embedding(table, ids));
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
      layer_state[l] =
          g.lstm_cell(x, layer_state[l], layer_params[3 * l], layer_params[3 * l + 1], layer_params[3 * l + 2]);
      x = drop(layer_state[l].h);
    }
    outputs.push_back(x);
  }
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    state.h[l] = g.value(layer_state[l].h);
    state.c[l] = g.value(layer_state[l].c);
  }
  return g.concat_rows(outputs);
}

Var LanguageModel::primary_log_probs(Graph& g, Var hidden) {
  return mixture_ ? mixture_->log_probs(g, hidden) : softmax_->log_probs(g, hidden);
}

Var LanguageModel::primary_nll(Graph& g, Var hidden, std::span<const TokenId> targets,
                               std::span<const double> weights) {
  return mixture_ ? mixture_->nll(g, hidden, targets, weights) : softmax_->nll(g, hidden, targets, weights);
}

Var LanguageModel::aux_nll(Graph& g, Var hidden, std::span<const TokenId> targets, std::span<const double> weights) {
  if (!aux_) fail(ErrorKind::usage, std::string("variant ") + to_string(config_.variant) + " has no auxiliary head");
  return aux_->nll(g, hidden, targets, weights);
}

void initialize_parameters(LanguageModel& model, std::uint64_t seed) {
  Rng rng(seed);
  const double r = model.config().init_range;
  for (Parameter* p : model.parameters()) {
    const bool is_bias = p->name.size() >= 4 && p->name.compare(p->name.size() - 4, 4, "bias") == 0;
    for (double& x : p->value.data()) x = is_bias ? 0.0 : rng.uniform(-r, r);
    p->zero_grad();
  }
}

double mtl_loss(double word_loss, double stem_loss, double lambda) {
  return lambda * word_loss + (1.0 - lambda) * stem_loss;
}

Var mtl_loss(Graph& g, Var word_loss, Var stem_loss, double lambda) {
  return g.add(g.scale(word_loss, lambda), g.scale(stem_loss, 1.0 - lambda));
}

std::vector<TokenId> stem_targets(std::span<const TokenId> targets, std::span<const TokenId> stem_of) {
  std::vector<TokenId> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto t = static_cast<std::size_t>(targets[i]);
    if (targets[i] < 0 || t >= stem_of.size()) fail(ErrorKind::data, "target outside stem map");
    out[i] = stem_of[t];
  }
  return out;
}

void for_each_log_distribution(LanguageModel& model, std::span<const TokenId> ids, std::size_t window,
                               const std::function<void(std::size_t, const Tensor&)>& sink) {
  if (window == 0) fail(ErrorKind::usage, "window must be positive");
  const TokenId eos = model.vocabulary().eos_id();
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= model.config().vocab_size)
      fail(ErrorKind::data, "token id " + std::to_string(id) + " outside the model vocabulary");
  RecurrentState state = model.initial_state(1);
  std::vector<TokenId> inputs;
  for (std::size_t start = 0; start < ids.size(); start += window) {
    const std::size_t len = std::min(window, ids.size() - start);
    inputs.resize(len);
    for (std::size_t t = 0; t < len; ++t) inputs[t] = (start + t == 0) ? eos : ids[start + t - 1];
    Graph g;
    const Var hidden = model.encode(g, inputs, 1, len, state, nullptr);
    sink(start, g.value(model.primary_log_probs(g, hidden)));
  }
}

std::vector<double> next_word_dist(LanguageModel& model, std::span<const TokenId> context) {
  std::vector<TokenId> inputs;
  inputs.reserve(context.size() + 1);
  inputs.push_back(model.vocabulary().eos_id());
  inputs.insert(inputs.end(), context.begin(), context.end());
  for (TokenId id : inputs)
    if (id < 0 || static_cast<std::size_t>(id) >= model.config().vocab_size)
      fail(ErrorKind::data, "token id " + std::to_string(id) + " outside the model vocabulary");
  RecurrentState state = model.initial_state(1);
  Graph g;
  const Var hidden = model.encode(g, inputs, 1, inputs.size(), state, nullptr);
  const Tensor& lp = g.value(model.primary_log_probs(g, hidden));
  const auto last = lp.row(lp.rows() - 1);
  std::vector<double> dist(last.size());
  std::transform(last.begin(), last.end(), dist.begin(), [](double x) { return std::exp(x); });
  return dist;
}

}  // namespace stemlm
