#include <doctest.h>

#include <cmath>
#include <numeric>

#include "stemlm/checkpoint.hpp"
#include "stemlm/error.hpp"
#include "stemlm/grad_check.hpp"
#include "stemlm/model.hpp"
#include "stemlm/train.hpp"
#include "support/tiny_model.hpp"

using namespace stemlm;
using num::Graph;
using num::Tensor;
using num::Var;

namespace {

double row_sum_exp(const Tensor& log_probs, std::size_t row) {
  double s = 0.0;
  for (double x : log_probs.row(row)) s += std::exp(x);
  return s;
}

}  // namespace

TEST_CASE("gradient checks on tiny models") {
  const auto v = tiny::vocab();
  const auto stem_of = tiny::grouped_stems(v->size());
  Rng rng(5);
  const tiny::Block block = tiny::random_block(v->size(), rng);

  struct Case {
    Variant variant;
    std::size_t layers;
    bool aux_on_stems;
  };
  for (const Case c : {Case{Variant::base, 1, false}, Case{Variant::base, 2, false}, Case{Variant::mtl_w, 1, false},
                       Case{Variant::mtl_s, 1, true}, Case{Variant::mix_w, 1, false},
                       Case{Variant::mix_stem, 1, false}}) {
    CAPTURE(to_string(c.variant));
    CAPTURE(c.layers);
    ModelConfig cfg = tiny::config(c.variant, v->size());
    cfg.num_layers = c.layers;
    auto m = tiny::model(cfg, v, 9);
    const auto params = m->parameters();
    CHECK(num::grad_check(tiny::loss_fn(*m, block, stem_of, c.aux_on_stems), params, tiny::grad_check_options()) <
          1e-4);
  }
}

TEST_CASE("mixture head: K = 1 reduces to a single softmax over tanh features") {
  const auto v = tiny::vocab();
  ModelConfig cfg = tiny::config(Variant::mix_w, v->size(), 1);
  auto m = tiny::model(cfg, v, 2);
  MixtureHead& head = *m->mixture_head();

  Rng rng(4);
  Tensor h(3, cfg.hidden_dim);
  for (double& x : h.data()) x = rng.uniform(-1, 1);
  Graph g;
  const Var hv = g.constant(h);
  const Tensor mix = g.value(head.log_probs(g, hv));

  SoftmaxHead single("single", cfg.hidden_dim, v->size());
  single.weight.value = head.out_weight.value;
  single.bias.value = head.out_bias.value;
  const Var feat = g.tanh(g.add_row(g.matmul(hv, g.constant(head.proj_weight[0].value)),
                                    g.constant(head.proj_bias[0].value)));
  const Tensor& ref = g.value(single.log_probs(g, feat));
  for (std::size_t i = 0; i < mix.size(); ++i) CHECK(mix[i] == doctest::Approx(ref[i]).epsilon(1e-13));
}

TEST_CASE("mixture head: K = 2 output is the prior-weighted mix of components") {
  const auto v = tiny::vocab();
  ModelConfig cfg = tiny::config(Variant::mix_w, v->size(), 2);
  auto m = tiny::model(cfg, v, 6);
  MixtureHead& head = *m->mixture_head();
  Rng rng(8);
  Tensor h(4, cfg.hidden_dim);
  for (double& x : h.data()) x = rng.uniform(-1, 1);

  Graph g;
  const Var hv = g.constant(h);
  const Tensor prior = g.value(head.log_prior(g, hv));
  const auto comps = head.component_log_probs(g, hv);
  const Tensor d1 = g.value(comps[0]);
  const Tensor d2 = g.value(comps[1]);
  const Tensor& mix = g.value(head.log_probs(g, hv));
  for (std::size_t r = 0; r < h.rows(); ++r) {
    CHECK(std::exp(prior(r, 0)) + std::exp(prior(r, 1)) == doctest::Approx(1.0));
    for (std::size_t w = 0; w < v->size(); ++w) {
      const double expect = std::exp(prior(r, 0) + d1(r, w)) + std::exp(prior(r, 1) + d2(r, w));
      CHECK(std::exp(mix(r, w)) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  // Equal priors give the plain average.
  head.prior_weight.value.fill(0.0);
  head.prior_bias.value.fill(0.0);
  Graph g2;
  const Var hv2 = g2.constant(h);
  const auto c2 = head.component_log_probs(g2, hv2);
  const Tensor& m2 = g2.value(head.log_probs(g2, hv2));
  for (std::size_t w = 0; w < v->size(); ++w)
    CHECK(std::exp(m2(0, w)) ==
          doctest::Approx((std::exp(g2.value(c2[0])(0, w)) + std::exp(g2.value(c2[1])(0, w))) / 2).epsilon(1e-12));
}

TEST_CASE("next_word_dist: zero parameters give a uniform distribution") {
  const auto v = tiny::vocab();
  for (Variant var : {Variant::base, Variant::mix_w}) {
    auto m = tiny::model(tiny::config(var, v->size()), v, 1);
    for (num::Parameter* p : m->parameters()) p->value.fill(0.0);
    const std::vector<TokenId> ctx{3, 4, 5};
    for (double p : next_word_dist(*m, ctx)) CHECK(p == doctest::Approx(1.0 / 20));
  }
}

TEST_CASE("next_word_dist is normalized and causal") {
  const auto v = tiny::vocab();
  Rng rng(12);
  for (Variant var : {Variant::base, Variant::mtl_s, Variant::mix_w}) {
    CAPTURE(to_string(var));
    auto m = tiny::model(tiny::config(var, v->size(), 3), v, 21);
    for (int trial = 0; trial < 5; ++trial) {
      const auto ctx = tiny::random_ids(1 + rng.below(6), v->size(), rng);
      const auto d = next_word_dist(*m, ctx);
      CHECK(std::accumulate(d.begin(), d.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }

    const auto ids = tiny::random_ids(10, v->size(), rng);
    auto perturbed = ids;
    perturbed[7] = static_cast<TokenId>((perturbed[7] + 1) % v->size());
    std::vector<Tensor> a, b;
    for_each_log_distribution(*m, ids, 4, [&](std::size_t, const Tensor& t) { a.push_back(t); });
    for_each_log_distribution(*m, perturbed, 4, [&](std::size_t, const Tensor& t) { b.push_back(t); });
    REQUIRE(a.size() == 3);
    // Row t reads ids[0..t-1], so rows 0..7 (windows 0 and 1) never see ids[7].
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
    CHECK(a[2] != b[2]);
    for (std::size_t r = 0; r < a[2].rows(); ++r) CHECK(row_sum_exp(a[2], r) == doctest::Approx(1.0));
  }
}

TEST_CASE("windowed scoring matches one long window") {
  const auto v = tiny::vocab();
  Rng rng(30);
  auto m = tiny::model(tiny::config(Variant::base, v->size()), v, 31);
  const auto ids = tiny::random_ids(23, v->size(), rng);
  std::vector<double> windowed, whole;
  for_each_log_distribution(*m, ids, 5, [&](std::size_t off, const Tensor& t) {
    for (std::size_t r = 0; r < t.rows(); ++r) windowed.push_back(t(r, ids[off + r]));
  });
  for_each_log_distribution(*m, ids, 100, [&](std::size_t, const Tensor& t) {
    for (std::size_t r = 0; r < t.rows(); ++r) whole.push_back(t(r, ids[r]));
  });
  REQUIRE(windowed.size() == whole.size());
  for (std::size_t i = 0; i < whole.size(); ++i) CHECK(windowed[i] == doctest::Approx(whole[i]).epsilon(1e-12));
}

TEST_CASE("loss identities") {
  Graph g;
  const Var uniform = g.constant(Tensor(2, 100, std::log(0.01)));
  const std::vector<TokenId> t{3, 7};
  CHECK(g.value(g.cross_entropy(uniform, t)).item() == doctest::Approx(std::log(100.0)));

  Tensor lp(2, 3, std::log(1e-3));
  lp(0, 1) = std::log(0.5);
  lp(1, 2) = std::log(0.25);
  const std::vector<TokenId> t2{1, 2};
  CHECK(g.value(g.cross_entropy(g.constant(lp), t2)).item() ==
        doctest::Approx((std::log(2.0) + std::log(4.0)) / 2));
  Tensor certain(1, 3, -1e300);
  certain(0, 0) = 0.0;
  const std::vector<TokenId> t3{0};
  CHECK(g.value(g.cross_entropy(g.constant(certain), t3)).item() == doctest::Approx(0.0));

  CHECK(mtl_loss(2.0, 1.0, 1.0) == 2.0);
  CHECK(mtl_loss(2.0, 1.0, 0.0) == 1.0);
  CHECK(mtl_loss(2.0, 1.0, 0.25) == doctest::Approx(1.25));
}

TEST_CASE("identity stem map makes the stem loss the word loss") {
  const auto v = tiny::vocab();
  Rng rng(14);
  const tiny::Block block = tiny::random_block(v->size(), rng);
  auto m = tiny::model(tiny::config(Variant::mtl_s, v->size()), v, 15);
  const auto id_map = stem::StemMap::identity(v->size());
  CHECK(stem_targets(block.targets, id_map.stems()) == block.targets);

  Graph g;
  RecurrentState s = m->initial_state(block.batch);
  const Var h = m->encode(g, block.inputs, block.batch, block.length, s, nullptr);
  const double word = g.value(m->aux_nll(g, h, block.targets)).item();
  const double stemmed = g.value(m->aux_nll(g, h, stem_targets(block.targets, id_map.stems()))).item();
  CHECK(word == stemmed);
}

TEST_CASE("mtl-s with lambda = 1 updates the shared parts exactly like base") {
  const auto v = tiny::vocab();
  const auto stem_of = tiny::grouped_stems(v->size());
  Rng rng(16);
  const tiny::Block block = tiny::random_block(v->size(), rng);

  ModelConfig bc = tiny::config(Variant::base, v->size());
  ModelConfig mc = tiny::config(Variant::mtl_s, v->size());
  mc.mtl_lambda = 1.0;
  auto base = tiny::model(bc, v, 17);
  auto mtl = tiny::model(mc, v, 17);
  const auto bp = base->parameters();
  const auto mp = mtl->parameters();
  REQUIRE(mp.size() == bp.size() + 2);
  for (std::size_t i = 0; i < bp.size(); ++i) mp[i]->value = bp[i]->value;

  for (auto* m : {base.get(), mtl.get()}) {
    for (num::Parameter* p : m->parameters()) p->zero_grad();
    Graph g;
    g.backward(tiny::loss_fn(*m, block, stem_of, true)(g));
  }
  for (std::size_t i = 0; i < bp.size(); ++i) {
    CAPTURE(bp[i]->name);
    CHECK(bp[i]->grad == mp[i]->grad);
  }
  for (std::size_t i = bp.size(); i < mp.size(); ++i) CHECK(mp[i]->grad == Tensor(mp[i]->grad.rows(), mp[i]->grad.cols()));
}

TEST_CASE("config JSON and validation") {
  ModelConfig c;
  c.variant = Variant::mtl_s2w;
  c.vocab_size = 40;
  c.mixtures = 4;
  c.optimizer.learning_rate = 0.02;
  nlohmann::json j = c;
  ModelConfig back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);

  CHECK_THROWS_AS(nlohmann::json({{"hidden", 3}}).get<ModelConfig>(), Error);
  CHECK_THROWS_AS(variant_from_string("mix-x"), Error);

  ModelConfig bad = back;
  bad.s2w_switch_epoch = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = back;
  bad.mixtures = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = back;
  bad.mtl_lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_NOTHROW(back.validate());
}

TEST_CASE("s2w schedule: stems for the first switch epochs, words after") {
  ModelConfig c;
  c.variant = Variant::mtl_s2w;
  c.s2w_switch_epoch = 5;
  for (std::size_t e = 1; e <= 15; ++e) CHECK(c.aux_predicts_stems(e) == (e <= 5));
  c.variant = Variant::mtl_s;
  CHECK(c.aux_predicts_stems(12));
  c.variant = Variant::mtl_w;
  CHECK_FALSE(c.aux_predicts_stems(1));
}

TEST_CASE("training on a toy corpus") {
  const tiny::ToyData d = tiny::toy_data();
  for (Variant var : {Variant::base, Variant::mtl_w, Variant::mtl_s, Variant::mtl_s2w, Variant::mix_w,
                      Variant::mix_stem}) {
    CAPTURE(to_string(var));
    ModelConfig c = tiny::config(var, d.vocab->size());
    c.embed_dim = 16;
    c.hidden_dim = 16;
    c.init_range = 0.1;
    c.epochs = 2;
    c.batch_size = 4;
    c.bptt = 10;
    c.optimizer.learning_rate = 0.01;
    const TrainResult r = train(c, d.vocab, d.train, d.dev, &d.stems);
    REQUIRE(r.log.size() == 2);
    CHECK(std::isfinite(r.log.back().dev_ppl));
    CHECK(r.log.back().dev_ppl < static_cast<double>(d.vocab->size()));
    CHECK(r.log[1].lr == doctest::Approx(0.01 * 0.8));
    CHECK(r.log[0].epoch == 1);
    if (var == Variant::mtl_s2w) {
      CHECK(*r.log[0].aux_target == "stem");
      CHECK(*r.log[1].aux_target == "word");
    }
    if (!c.has_aux_head()) CHECK_FALSE(r.log[0].loss_aux.has_value());
  }
}

TEST_CASE("training is deterministic and needs a stem map where it uses one") {
  const tiny::ToyData d = tiny::toy_data();
  ModelConfig c = tiny::config(Variant::mix_w, d.vocab->size());
  c.dropout = 0.2;
  c.epochs = 1;
  c.optimizer.learning_rate = 0.01;
  const std::string a = serialize_checkpoint(train(c, d.vocab, d.train, d.dev, nullptr).checkpoint);
  const std::string b = serialize_checkpoint(train(c, d.vocab, d.train, d.dev, nullptr).checkpoint);
  CHECK(a == b);
  c.seed = 2;
  CHECK(serialize_checkpoint(train(c, d.vocab, d.train, d.dev, nullptr).checkpoint) != a);

  c.variant = Variant::mtl_s;
  try {
    train(c, d.vocab, d.train, d.dev, nullptr);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::usage);
  }
}
