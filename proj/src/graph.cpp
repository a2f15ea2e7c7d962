#include "stemlm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "eigen_util.hpp"
#include "stemlm/error.hpp"

namespace stemlm::num {

namespace {

double sigmoid_of(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var Graph::push(std::string op, Tensor value, bool requires_grad,
                std::function<void(Graph&, std::uint32_t)> backward) {
  if (!value.all_finite()) fail(ErrorKind::numeric, op + ": non-finite value in result " + value.shape_string());
  Node n;
  n.value = std::move(value);
  n.op = std::move(op);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.index >= nodes_.size()) fail(ErrorKind::usage, "variable does not belong to this graph");
  return nodes_[v.index];
}

Graph::Node& Graph::node(Var v) {
  if (!v.valid() || v.index >= nodes_.size()) fail(ErrorKind::usage, "variable does not belong to this graph");
  return nodes_[v.index];
}

Tensor& Graph::grad_buffer(std::uint32_t index) {
  Node& n = nodes_[index];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::shape_error(const std::string& op, Var a, Var b) const {
  const Node& na = node(a);
  const Node& nb = node(b);
  fail(ErrorKind::numeric, op + ": shape mismatch between " + na.op + na.value.shape_string() + " and " + nb.op +
                               nb.value.shape_string());
}

Var Graph::constant(Tensor value, std::string label) { return push(std::move(label), std::move(value), false, {}); }

Var Graph::variable(Tensor value, std::string label) {
  return push(std::move(label), std::move(value), true, [](Graph&, std::uint32_t) {});
}

Var Graph::parameter(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  Var v = push(p.name, p.value, true, [](Graph&, std::uint32_t) {});
  nodes_[v.index].param = &p;
  param_nodes_.emplace(&p, v.index);
  return v;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.rows()) shape_error("matmul", a, b);
  Tensor C(A.rows(), B.cols());
  as_matrix(C).noalias() = as_matrix(A) * as_matrix(B);
  return push("matmul", std::move(C), needs_grad(a) || needs_grad(b), [a, b](Graph& g, std::uint32_t self) {
    const auto dC = as_matrix(g.out_grad(self));
    if (g.needs_grad(a)) as_matrix(g.grad_buffer(a.index)).noalias() += dC * as_matrix(g.value(b)).transpose();
    if (g.needs_grad(b)) as_matrix(g.grad_buffer(b.index)).noalias() += as_matrix(g.value(a)).transpose() * dC;
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape() != B.shape()) shape_error("add", a, b);
  Tensor C = A;
  as_matrix(C) += as_matrix(B);
  return push("add", std::move(C), needs_grad(a) || needs_grad(b), [a, b](Graph& g, std::uint32_t self) {
    const auto dC = as_matrix(g.out_grad(self));
    if (g.needs_grad(a)) as_matrix(g.grad_buffer(a.index)) += dC;
    if (g.needs_grad(b)) as_matrix(g.grad_buffer(b.index)) += dC;
  });
}

Var Graph::add_row(Var a, Var bias) {
  const Tensor& A = value(a);
  const Tensor& B = value(bias);
  if (B.rows() != 1 || B.cols() != A.cols()) shape_error("add_row", a, bias);
  Tensor C = A;
  as_matrix(C).rowwise() += as_matrix(B).row(0);
  return push("add_row", std::move(C), needs_grad(a) || needs_grad(bias), [a, bias](Graph& g, std::uint32_t self) {
    const auto dC = as_matrix(g.out_grad(self));
    if (g.needs_grad(a)) as_matrix(g.grad_buffer(a.index)) += dC;
    if (g.needs_grad(bias)) as_matrix(g.grad_buffer(bias.index)) += dC.colwise().sum();
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape() != B.shape()) shape_error("mul", a, b);
  Tensor C = A;
  as_matrix(C).array() *= as_matrix(B).array();
  return push("mul", std::move(C), needs_grad(a) || needs_grad(b), [a, b](Graph& g, std::uint32_t self) {
    const auto dC = as_matrix(g.out_grad(self)).array();
    if (g.needs_grad(a)) as_matrix(g.grad_buffer(a.index)).array() += dC * as_matrix(g.value(b)).array();
    if (g.needs_grad(b)) as_matrix(g.grad_buffer(b.index)).array() += dC * as_matrix(g.value(a)).array();
  });
}

Var Graph::scale(Var a, double factor) {
  Tensor C = value(a);
  as_matrix(C) *= factor;
  return push("scale", std::move(C), needs_grad(a), [a, factor](Graph& g, std::uint32_t self) {
    as_matrix(g.grad_buffer(a.index)) += factor * as_matrix(g.out_grad(self));
  });
}

Var Graph::tanh(Var a) {
  Tensor Y = value(a);
  for (double& y : Y.data()) y = std::tanh(y);
  return push("tanh", std::move(Y), needs_grad(a), [a](Graph& g, std::uint32_t self) {
    const auto y = as_matrix(g.nodes_[self].value).array();
    as_matrix(g.grad_buffer(a.index)).array() += as_matrix(g.out_grad(self)).array() * (1.0 - y * y);
  });
}

Var Graph::sigmoid(Var a) {
  Tensor Y = value(a);
  for (double& y : Y.data()) y = sigmoid_of(y);
  return push("sigmoid", std::move(Y), needs_grad(a), [a](Graph& g, std::uint32_t self) {
    const auto y = as_matrix(g.nodes_[self].value).array();
    as_matrix(g.grad_buffer(a.index)).array() += as_matrix(g.out_grad(self)).array() * y * (1.0 - y);
  });
}

Var Graph::sum(Var a) {
  double total = 0.0;
  for (double x : value(a).data()) total += x;
  return push("sum", Tensor::scalar(total), needs_grad(a), [a](Graph& g, std::uint32_t self) {
    const double d = g.out_grad(self).item();
    for (double& x : g.grad_buffer(a.index).data()) x += d;
  });
}

Var Graph::embedding(Var table, std::span<const TokenId> ids) {
  const Tensor& T = value(table);
  Tensor out(ids.size(), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows())
      fail(ErrorKind::numeric, "embedding: id " + std::to_string(ids[i]) + " outside table " + T.shape_string());
    std::copy_n(T.row(static_cast<std::size_t>(ids[i])).data(), T.cols(), out.data().data() + i * T.cols());
  }
  auto saved = std::make_shared<std::vector<TokenId>>(ids.begin(), ids.end());
  return push("embedding", std::move(out), needs_grad(table), [table, saved](Graph& g, std::uint32_t self) {
    const Tensor& d = g.out_grad(self);
    Tensor& dT = g.grad_buffer(table.index);
    const std::size_t cols = d.cols();
    for (std::size_t i = 0; i < saved->size(); ++i) {
      double* dst = dT.data().data() + static_cast<std::size_t>((*saved)[i]) * cols;
      const double* src = d.data().data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
  });
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::numeric, "concat_rows: no operands");
  const std::size_t cols = value(parts[0]).cols();
  std::size_t rows = 0;
  bool grad = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) shape_error("concat_rows", parts[0], p);
    rows += value(p).rows();
    grad = grad || needs_grad(p);
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += t.size();
  }
  auto saved = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  return push("concat_rows", std::move(out), grad, [saved](Graph& g, std::uint32_t self) {
    const Tensor& d = g.out_grad(self);
    std::size_t offset = 0;
    for (Var p : *saved) {
      const std::size_t n = g.value(p).size();
      if (g.needs_grad(p)) {
        auto& dst = g.grad_buffer(p.index);
        for (std::size_t i = 0; i < n; ++i) dst[i] += d[offset + i];
      }
      offset += n;
    }
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::numeric, "concat_cols: no operands");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  bool grad = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) shape_error("concat_cols", parts[0], p);
    cols += value(p).cols();
    grad = grad || needs_grad(p);
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) out(r, offset + c) = t(r, c);
    offset += t.cols();
  }
  auto saved = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  return push("concat_cols", std::move(out), grad, [saved](Graph& g, std::uint32_t self) {
    const Tensor& d = g.out_grad(self);
    std::size_t offset = 0;
    for (Var p : *saved) {
      const std::size_t width = g.value(p).cols();
      if (g.needs_grad(p)) {
        Tensor& dst = g.grad_buffer(p.index);
        for (std::size_t r = 0; r < d.rows(); ++r)
          for (std::size_t c = 0; c < width; ++c) dst(r, c) += d(r, offset + c);
      }
      offset += width;
    }
  });
}

Var Graph::dropout(Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) fail(ErrorKind::usage, "dropout rate must be below 1");
  const Tensor& A = value(a);
  auto mask = std::make_shared<std::vector<double>>(A.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : *mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return push("dropout", std::move(out), needs_grad(a), [a, mask](Graph& g, std::uint32_t self) {
    const Tensor& d = g.out_grad(self);
    Tensor& dst = g.grad_buffer(a.index);
    for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i] * (*mask)[i];
  });
}

LstmState Graph::lstm_cell(Var x, LstmState prev, Var w_input, Var w_hidden, Var bias) {
  const std::size_t hidden = value(prev.c).cols();
  if (value(w_hidden).rows() != hidden || value(w_hidden).cols() != 4 * hidden)
    shape_error("lstm_cell", prev.c, w_hidden);
  if (value(prev.h).shape() != value(prev.c).shape()) shape_error("lstm_cell", prev.h, prev.c);
  const Var gates = add_row(add(matmul(x, w_input), matmul(prev.h, w_hidden)), bias);
  if (value(gates).rows() != value(prev.c).rows()) shape_error("lstm_cell", gates, prev.c);

  // Gate activations are recomputed in backward from the pre-activations.
  const Tensor& G = value(gates);
  const Tensor& Cp = value(prev.c);
  const std::size_t n = G.rows();
  Tensor c_new(n, hidden);
  for (std::size_t r = 0; r < n; ++r) {
    const double* gr = G.row(r).data();
    for (std::size_t j = 0; j < hidden; ++j) {
      const double i = sigmoid_of(gr[j]);
      const double f = sigmoid_of(gr[hidden + j]);
      const double cand = std::tanh(gr[2 * hidden + j]);
      c_new(r, j) = f * Cp(r, j) + i * cand;
    }
  }
  const Var c_prev = prev.c;
  const Var c = push("lstm_cell_state", std::move(c_new), needs_grad(gates) || needs_grad(c_prev),
                     [gates, c_prev, hidden](Graph& g, std::uint32_t self) {
                       const Tensor& dC = g.out_grad(self);
                       const Tensor& G = g.value(gates);
                       const Tensor& Cp = g.value(c_prev);
                       const bool want_gates = g.needs_grad(gates);
                       const bool want_prev = g.needs_grad(c_prev);
                       Tensor* dG = want_gates ? &g.grad_buffer(gates.index) : nullptr;
                       Tensor* dCp = want_prev ? &g.grad_buffer(c_prev.index) : nullptr;
                       for (std::size_t r = 0; r < G.rows(); ++r) {
                         const double* gr = G.row(r).data();
                         for (std::size_t j = 0; j < hidden; ++j) {
                           const double i = sigmoid_of(gr[j]);
                           const double f = sigmoid_of(gr[hidden + j]);
                           const double cand = std::tanh(gr[2 * hidden + j]);
                           const double d = dC(r, j);
                           if (dCp) (*dCp)(r, j) += d * f;
                           if (dG) {
                             (*dG)(r, j) += d * cand * i * (1.0 - i);
                             (*dG)(r, hidden + j) += d * Cp(r, j) * f * (1.0 - f);
                             (*dG)(r, 2 * hidden + j) += d * i * (1.0 - cand * cand);
                           }
                         }
                       }
                     });

  // push() may have reallocated the node storage.
  const Tensor& G2 = value(gates);
  const Tensor& Cn = value(c);
  Tensor h_new(n, hidden);
  for (std::size_t r = 0; r < n; ++r) {
    const double* gr = G2.row(r).data();
    for (std::size_t j = 0; j < hidden; ++j) h_new(r, j) = sigmoid_of(gr[3 * hidden + j]) * std::tanh(Cn(r, j));
  }
  const Var h = push("lstm_hidden", std::move(h_new), needs_grad(gates) || needs_grad(c),
                     [gates, c, hidden](Graph& g, std::uint32_t self) {
                       const Tensor& dH = g.out_grad(self);
                       const Tensor& G = g.value(gates);
                       const Tensor& Cn = g.value(c);
                       Tensor* dG = g.needs_grad(gates) ? &g.grad_buffer(gates.index) : nullptr;
                       Tensor* dC = g.needs_grad(c) ? &g.grad_buffer(c.index) : nullptr;
                       for (std::size_t r = 0; r < G.rows(); ++r) {
                         const double* gr = G.row(r).data();
                         for (std::size_t j = 0; j < hidden; ++j) {
                           const double o = sigmoid_of(gr[3 * hidden + j]);
                           const double tc = std::tanh(Cn(r, j));
                           const double d = dH(r, j);
                           if (dG) (*dG)(r, 3 * hidden + j) += d * tc * o * (1.0 - o);
                           if (dC) (*dC)(r, j) += d * o * (1.0 - tc * tc);
                         }
                       }
                     });
  return {h, c};
}

Var Graph::log_softmax(Var logits) {
  Tensor Y = value(logits);
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    double* row = Y.data().data() + r * Y.cols();
    const double m = *std::max_element(row, row + Y.cols());
    double total = 0.0;
    for (std::size_t j = 0; j < Y.cols(); ++j) total += std::exp(row[j] - m);
    const double lse = m + std::log(total);
    for (std::size_t j = 0; j < Y.cols(); ++j) row[j] -= lse;
  }
  return push("log_softmax", std::move(Y), needs_grad(logits), [logits](Graph& g, std::uint32_t self) {
    const Tensor& dY = g.out_grad(self);
    const Tensor& Y = g.nodes_[self].value;
    Tensor& dX = g.grad_buffer(logits.index);
    const std::size_t cols = Y.cols();
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      const double* dy = dY.data().data() + r * cols;
      const double* y = Y.data().data() + r * cols;
      double* dx = dX.data().data() + r * cols;
      double total = 0.0;
      for (std::size_t j = 0; j < cols; ++j) total += dy[j];
      if (total == 0.0) {
        for (std::size_t j = 0; j < cols; ++j) dx[j] += dy[j];
      } else {
        for (std::size_t j = 0; j < cols; ++j) dx[j] += dy[j] - std::exp(y[j]) * total;
      }
    }
  });
}

Var Graph::pick(Var a, std::span<const TokenId> targets) {
  const Tensor& A = value(a);
  if (targets.size() != A.rows())
    fail(ErrorKind::numeric, "pick: " + std::to_string(targets.size()) + " targets for " + A.shape_string());
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= A.cols())
      fail(ErrorKind::numeric, "pick: target " + std::to_string(targets[i]) + " outside " + A.shape_string());
    out[i] = A(i, static_cast<std::size_t>(targets[i]));
  }
  auto saved = std::make_shared<std::vector<TokenId>>(targets.begin(), targets.end());
  return push("pick", std::move(out), needs_grad(a), [a, saved](Graph& g, std::uint32_t self) {
    const Tensor& d = g.out_grad(self);
    Tensor& dA = g.grad_buffer(a.index);
    for (std::size_t i = 0; i < saved->size(); ++i) dA(i, static_cast<std::size_t>((*saved)[i])) += d[i];
  });
}

Var Graph::logsumexp_rows(Var a) {
  const Tensor& A = value(a);
  Tensor out(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    const auto row = A.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double x : row) total += std::exp(x - m);
    out[r] = m + std::log(total);
  }
  return push("logsumexp_rows", std::move(out), needs_grad(a), [a](Graph& g, std::uint32_t self) {
    const Tensor& d = g.out_grad(self);
    const Tensor& y = g.nodes_[self].value;
    const Tensor& A = g.value(a);
    Tensor& dA = g.grad_buffer(a.index);
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t j = 0; j < A.cols(); ++j) dA(r, j) += d[r] * std::exp(A(r, j) - y[r]);
  });
}

Var Graph::weighted_mean(Var column, std::span<const double> weights) {
  const Tensor& A = value(column);
  if (A.cols() != 1) fail(ErrorKind::numeric, "weighted_mean: expected a column, got " + A.shape_string());
  if (!weights.empty() && weights.size() != A.rows())
    fail(ErrorKind::numeric, "weighted_mean: weight count does not match " + A.shape_string());
  auto w = std::make_shared<std::vector<double>>(A.rows(), 1.0);
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w->begin());
  double total_w = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < A.rows(); ++i) {
    total_w += (*w)[i];
    total += (*w)[i] * A[i];
  }
  if (total_w <= 0.0) fail(ErrorKind::numeric, "weighted_mean: total weight is zero");
  return push("weighted_mean", Tensor::scalar(total / total_w), needs_grad(column),
              [column, w, total_w](Graph& g, std::uint32_t self) {
                const double d = g.out_grad(self).item() / total_w;
                Tensor& dA = g.grad_buffer(column.index);
                for (std::size_t i = 0; i < w->size(); ++i) dA[i] += d * (*w)[i];
              });
}

Var Graph::cross_entropy(Var log_probs, std::span<const TokenId> targets, std::span<const double> weights) {
  const Tensor& L = value(log_probs);
  if (targets.size() != L.rows())
    fail(ErrorKind::numeric, "cross_entropy: " + std::to_string(targets.size()) + " targets for " + L.shape_string());
  if (!weights.empty() && weights.size() != targets.size())
    fail(ErrorKind::numeric, "cross_entropy: weight count does not match target count");
  auto t = std::make_shared<std::vector<TokenId>>(targets.begin(), targets.end());
  auto w = std::make_shared<std::vector<double>>(targets.size(), 1.0);
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w->begin());
  double total_w = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < t->size(); ++i) {
    const TokenId y = (*t)[i];
    if (y < 0 || static_cast<std::size_t>(y) >= L.cols())
      fail(ErrorKind::numeric, "cross_entropy: target " + std::to_string(y) + " outside " + L.shape_string());
    total_w += (*w)[i];
    total -= (*w)[i] * L(i, static_cast<std::size_t>(y));
  }
  if (total_w <= 0.0) fail(ErrorKind::numeric, "cross_entropy: total weight is zero");
  return push("cross_entropy", Tensor::scalar(total / total_w), needs_grad(log_probs),
              [log_probs, t, w, total_w](Graph& g, std::uint32_t self) {
                const double d = g.out_grad(self).item() / total_w;
                Tensor& dL = g.grad_buffer(log_probs.index);
                for (std::size_t i = 0; i < t->size(); ++i)
                  dL(i, static_cast<std::size_t>((*t)[i])) -= d * (*w)[i];
              });
}

Var Graph::convex_combination(Var weights, std::span<const Var> dists) {
  const Tensor& W = value(weights);
  if (W.cols() != dists.size() || dists.empty())
    fail(ErrorKind::numeric, "convex_combination: " + std::to_string(dists.size()) + " distributions for weights " +
                                 W.shape_string());
  for (std::size_t r = 0; r < W.rows(); ++r) {
    double total = 0.0;
    for (double x : W.row(r)) {
      if (x < 0.0) fail(ErrorKind::numeric, "convex_combination: negative weight in row " + std::to_string(r));
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-9)
      fail(ErrorKind::numeric, "convex_combination: weights in row " + std::to_string(r) + " do not sum to 1");
  }
  const Tensor& first = value(dists[0]);
  if (first.rows() != W.rows()) shape_error("convex_combination", weights, dists[0]);
  bool grad = needs_grad(weights);
  Tensor out(first.rows(), first.cols());
  for (std::size_t k = 0; k < dists.size(); ++k) {
    const Tensor& D = value(dists[k]);
    if (D.shape() != first.shape()) shape_error("convex_combination", dists[0], dists[k]);
    grad = grad || needs_grad(dists[k]);
    for (std::size_t r = 0; r < D.rows(); ++r)
      for (std::size_t j = 0; j < D.cols(); ++j) out(r, j) += W(r, k) * D(r, j);
  }
  auto saved = std::make_shared<std::vector<Var>>(dists.begin(), dists.end());
  return push("convex_combination", std::move(out), grad, [weights, saved](Graph& g, std::uint32_t self) {
    const Tensor& dY = g.out_grad(self);
    const Tensor& W = g.value(weights);
    for (std::size_t k = 0; k < saved->size(); ++k) {
      const Var dk = (*saved)[k];
      const Tensor& D = g.value(dk);
      if (g.needs_grad(weights)) {
        Tensor& dW = g.grad_buffer(weights.index);
        for (std::size_t r = 0; r < D.rows(); ++r) {
          double acc = 0.0;
          for (std::size_t j = 0; j < D.cols(); ++j) acc += dY(r, j) * D(r, j);
          dW(r, k) += acc;
        }
      }
      if (g.needs_grad(dk)) {
        Tensor& dD = g.grad_buffer(dk.index);
        for (std::size_t r = 0; r < D.rows(); ++r)
          for (std::size_t j = 0; j < D.cols(); ++j) dD(r, j) += W(r, k) * dY(r, j);
      }
    }
  });
}

Var Graph::log_mixture(Var log_weights, std::span<const Var> log_dists) {
  const Tensor& LW = value(log_weights);
  if (LW.cols() != log_dists.size() || log_dists.empty())
    fail(ErrorKind::numeric, "log_mixture: " + std::to_string(log_dists.size()) + " distributions for weights " +
                                 LW.shape_string());
  const Tensor& first = value(log_dists[0]);
  if (first.rows() != LW.rows()) shape_error("log_mixture", log_weights, log_dists[0]);
  bool grad = needs_grad(log_weights);
  for (Var d : log_dists) {
    if (value(d).shape() != first.shape()) shape_error("log_mixture", log_dists[0], d);
    grad = grad || needs_grad(d);
  }
  const std::size_t K = log_dists.size();
  Tensor out(first.rows(), first.cols());
  std::vector<double> terms(K);
  for (std::size_t r = 0; r < first.rows(); ++r) {
    for (std::size_t j = 0; j < first.cols(); ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        terms[k] = LW(r, k) + value(log_dists[k])(r, j);
        m = std::max(m, terms[k]);
      }
      double total = 0.0;
      for (double t : terms) total += std::exp(t - m);
      out(r, j) = m + std::log(total);
    }
  }
  auto saved = std::make_shared<std::vector<Var>>(log_dists.begin(), log_dists.end());
  return push("log_mixture", std::move(out), grad, [log_weights, saved](Graph& g, std::uint32_t self) {
    const Tensor& dY = g.out_grad(self);
    const Tensor& Y = g.nodes_[self].value;
    const Tensor& LW = g.value(log_weights);
    for (std::size_t k = 0; k < saved->size(); ++k) {
      const Var dk = (*saved)[k];
      const Tensor& D = g.value(dk);
      Tensor* dD = g.needs_grad(dk) ? &g.grad_buffer(dk.index) : nullptr;
      Tensor* dW = g.needs_grad(log_weights) ? &g.grad_buffer(log_weights.index) : nullptr;
      for (std::size_t r = 0; r < D.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < D.cols(); ++j) {
          const double contrib = dY(r, j) * std::exp(LW(r, k) + D(r, j) - Y(r, j));
          if (dD) (*dD)(r, j) += contrib;
          acc += contrib;
        }
        if (dW) (*dW)(r, k) += acc;
      }
    }
  });
}

void Graph::backward(Var loss) {
  if (nodes_.empty()) fail(ErrorKind::usage, "backward called on an empty graph");
  const Node& root = node(loss);
  if (root.value.size() != 1)
    fail(ErrorKind::numeric, "backward needs a scalar loss, got " + root.value.shape_string());
  if (backward_done_) fail(ErrorKind::usage, "backward already ran on this graph");
  backward_done_ = true;
  if (!root.requires_grad) return;

  grad_buffer(loss.index)[0] = 1.0;
  for (std::uint32_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    Tensor& pg = n.param->grad;
    if (pg.shape() != n.value.shape()) pg = Tensor(n.value.rows(), n.value.cols());
    as_matrix(pg) += as_matrix(n.grad);
  }
}

}  // namespace stemlm::num
