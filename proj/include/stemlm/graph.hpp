#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stemlm/corpus.hpp"
#include "stemlm/random.hpp"
#include "stemlm/tensor.hpp"

namespace stemlm::num {

struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t index = kInvalid;

  bool valid() const { return index != kInvalid; }
};

struct LstmState {
  Var h;
  Var c;
};

/// Tape for reverse-mode differentiation. Every op evaluates eagerly, checks
/// its result for NaN/Inf, and records a backward closure. backward() runs
/// the closures in reverse creation order and then adds leaf gradients into
/// the bound Parameters.
///
/// Single-threaded; build a new Graph per forward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf without gradient.
  Var constant(Tensor value, std::string label = "constant");
  // Leaf that collects a gradient, readable through grad().
  Var variable(Tensor value, std::string label = "variable");
  // Leaf bound to a Parameter; each Parameter maps to one leaf per graph.
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const;
  // Zero tensor of the right shape if nothing flowed into v.
  Tensor grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // a [n x m] + bias [1 x m] broadcast over rows.
  Var add_row(Var a, Var bias);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var sum(Var a);
  Var embedding(Var table, std::span<const TokenId> ids);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var dropout(Var a, double rate, Rng& rng);

  // Standard 4-gate LSTM step. w_input is [in x 4H], w_hidden [H x 4H],
  // bias [1 x 4H]; gate blocks are ordered input, forget, candidate, output.
  LstmState lstm_cell(Var x, LstmState prev, Var w_input, Var w_hidden, Var bias);

  Var log_softmax(Var logits);
  // out[i] = logits[i, targets[i]]; shape [n x 1].
  Var pick(Var a, std::span<const TokenId> targets);
  // log sum_j exp(a[i, j]); shape [n x 1].
  Var logsumexp_rows(Var a);
  // Weighted mean of the entries of a column [n x 1]; empty weights = all 1.
  Var weighted_mean(Var column, std::span<const double> weights = {});
  // -(sum_i w_i log_probs[i, t_i]) / sum_i w_i; empty weights = all 1.
  Var cross_entropy(Var log_probs, std::span<const TokenId> targets, std::span<const double> weights = {});
  // out[i, :] = sum_k weights[i, k] * dists[k][i, :]; weights must be
  // non-negative and sum to one per row.
  Var convex_combination(Var weights, std::span<const Var> dists);
  // Same combination in log space: log sum_k exp(log_weights[i,k] + log_dists[k][i,:]).
  Var log_mixture(Var log_weights, std::span<const Var> log_dists);

  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::string op;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, std::uint32_t)> backward;
  };

  Var push(std::string op, Tensor value, bool requires_grad, std::function<void(Graph&, std::uint32_t)> backward);
  const Node& node(Var v) const;
  Node& node(Var v);
  bool needs_grad(Var v) const { return nodes_[v.index].requires_grad; }
  Tensor& grad_buffer(std::uint32_t index);
  const Tensor& out_grad(std::uint32_t self) const { return nodes_[self].grad; }
  [[noreturn]] void shape_error(const std::string& op, Var a, Var b) const;

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::uint32_t> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace stemlm::num
