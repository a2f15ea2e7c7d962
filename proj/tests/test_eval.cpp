#include <doctest.h>

#include <atomic>
#include <cmath>
#include <numeric>

#include "stemlm/error.hpp"
#include "stemlm/eval.hpp"
#include "stemlm/mixws.hpp"
#include "stemlm/train.hpp"
#include "support/tiny_model.hpp"

using namespace stemlm;
using stem::StemMap;

namespace {

std::vector<double> random_dist(std::size_t n, Rng& rng) {
  std::vector<double> d(n);
  for (double& x : d) x = rng.uniform() + 1e-3;
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  for (double& x : d) x /= s;
  return d;
}

// Random total map: every word maps to some word that maps to itself.
std::vector<TokenId> random_stem_map(std::size_t n, Rng& rng) {
  std::vector<TokenId> roots;
  std::vector<TokenId> stem_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (roots.empty() || rng.uniform() < 0.4) {
      roots.push_back(static_cast<TokenId>(i));
      stem_of[i] = static_cast<TokenId>(i);
    } else {
      stem_of[i] = roots[rng.below(roots.size())];
    }
  }
  return stem_of;
}

std::vector<TokenScore> scores_of(std::initializer_list<std::pair<TokenId, double>> probs) {
  std::vector<TokenScore> out;
  for (auto [t, p] : probs) out.push_back(TokenScore{t, std::log(p)});
  return out;
}

}  // namespace

TEST_CASE("mixws: hand example") {
  // V = {a, ab, b}; a and ab share stem a.
  const std::vector<double> p{0.5, 0.3, 0.2};
  const std::vector<double> q{0.6, 0.1, 0.3};
  const std::vector<TokenId> stem_of{0, 0, 2};
  const MixWsTerms t = mixws_terms(p, q, stem_of);
  CHECK(t.within_class[0] == doctest::Approx(0.625).epsilon(1e-14));
  CHECK(t.within_class[1] == doctest::Approx(0.375).epsilon(1e-14));
  CHECK(t.within_class[2] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(t.stem_marginal[0] == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(t.stem_marginal[2] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(t.stem_marginal[1] == 0.0);
  const std::vector<double> expect{0.4375, 0.2625, 0.3};
  const auto out = mixws_compose(p, q, stem_of);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(out[i] - expect[i]) < 1e-12);
}

TEST_CASE("mixws: identities and normalization on random instances") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(15);
    const auto p = random_dist(n, rng);
    const auto q = random_dist(n, rng);
    const auto stem_of = random_stem_map(n, rng);

    const MixWsTerms t = mixws_terms(p, q, stem_of);
    CHECK(std::accumulate(t.output.begin(), t.output.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> class_r(n, 0.0);
    for (std::size_t w = 0; w < n; ++w) class_r[static_cast<std::size_t>(stem_of[w])] += t.within_class[w];
    for (std::size_t s = 0; s < n; ++s)
      if (stem_of[s] == static_cast<TokenId>(s)) CHECK(class_r[s] == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<TokenId> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    const auto to_q = mixws_compose(p, q, identity);
    const auto to_p = mixws_compose(p, p, stem_of);
    for (std::size_t w = 0; w < n; ++w) {
      CHECK(to_q[w] == doctest::Approx(q[w]).epsilon(1e-12));
      CHECK(to_p[w] == doctest::Approx(p[w]).epsilon(1e-12));
    }

    // The log-space entry point agrees with the probability-space one.
    std::vector<double> lp(n), lq(n), out(n);
    for (std::size_t w = 0; w < n; ++w) {
      lp[w] = std::log(p[w]);
      lq[w] = std::log(q[w]);
    }
    mixws_compose_log(lp, lq, stem_of, out);
    for (std::size_t w = 0; w < n; ++w) CHECK(std::exp(out[w]) == doctest::Approx(t.output[w]).epsilon(1e-12));
  }
}

TEST_CASE("mixws: an empty stem class is an invariant error") {
  const std::vector<double> p{1.0, 0.0, 0.0};
  const std::vector<double> q{0.2, 0.3, 0.5};
  const std::vector<TokenId> stem_of{0, 1, 1};
  try {
    mixws_compose(p, q, stem_of);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invariant);
  }
  const std::vector<TokenId> short_map{0, 1};
  CHECK_THROWS_AS(mixws_compose(q, q, short_map), Error);
}

TEST_CASE("perplexity: closed forms and options") {
  std::vector<TokenScore> uniform;
  for (TokenId t = 0; t < 7; ++t) uniform.push_back(TokenScore{t, std::log(0.01)});
  CHECK(perplexity(uniform, {}).perplexity == doctest::Approx(100.0));

  const auto tenth = scores_of({{2, 0.1}, {3, 0.1}, {4, 0.1}, {2, 0.1}, {5, 0.1}});
  const PerplexityResult r = perplexity(tenth, {});
  CHECK(r.perplexity == doctest::Approx(10.0));
  CHECK(r.token_count == 5);

  // Hand-built 3-word model: p(x)=0.5, p(y)=0.25, p(eos)=0.25.
  const auto hand = scores_of({{2, 0.5}, {3, 0.25}, {1, 0.25}, {2, 0.5}});
  // -mean log p = (2 ln 2 + 2 ln 4) / 4 = 1.5 ln 2.
  CHECK(perplexity(hand, {}).perplexity == doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));
  EvalOptions no_eos;
  no_eos.include_eos = false;
  const PerplexityResult ne = perplexity(hand, no_eos);
  CHECK(ne.token_count == 3);
  CHECK(ne.perplexity == doctest::Approx(std::exp((std::log(2.0) * 2 + std::log(4.0)) / 3)));

  EvalOptions no_unk;
  no_unk.include_unk = false;
  const auto with_unk = scores_of({{0, 0.001}, {2, 0.5}});
  CHECK(perplexity(with_unk, no_unk).perplexity == doctest::Approx(2.0));
  const auto only_unk = scores_of({{0, 0.5}});
  try {
    perplexity(only_unk, no_unk);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }

  nlohmann::json j = no_eos;
  CHECK(j.get<EvalOptions>().include_eos == false);
  CHECK_THROWS(nlohmann::json({{"include_oov", true}}).get<EvalOptions>());
}

TEST_CASE("perplexity equals exp of the word loss") {
  const auto v = tiny::vocab();
  auto m = tiny::model(tiny::config(Variant::mix_w, v->size(), 3), v, 4);
  Rng rng(5);
  EncodedCorpus c;
  c.ids = tiny::random_ids(150, v->size(), rng);
  c.vocab_fingerprint = v->fingerprint();
  const auto scores = score_tokens(*m, c, 64);
  REQUIRE(scores.size() == 150);
  const double nll = stream_nll(*m, c.ids, c.ids, 64);
  const double ppl = perplexity(scores, {}).perplexity;
  CHECK(std::abs(ppl - std::exp(nll)) / ppl < 1e-9);

  EncodedCorpus other = c;
  other.vocab_fingerprint ^= 1;
  try {
    score_tokens(*m, other);
    FAIL("expected a vocabulary mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("score_tokens_mixws agrees with per-position composition") {
  const auto v = tiny::vocab();
  const StemMap stems(tiny::grouped_stems(v->size()));
  auto p = tiny::model(tiny::config(Variant::mix_w, v->size(), 2), v, 40);
  auto q = tiny::model(tiny::config(Variant::mix_stem, v->size(), 2), v, 41);
  Rng rng(42);
  EncodedCorpus c;
  c.ids = tiny::random_ids(11, v->size(), rng);
  c.vocab_fingerprint = v->fingerprint();
  const auto scores = score_tokens_mixws(*p, *q, stems, c, 4);
  REQUIRE(scores.size() == c.ids.size());
  for (std::size_t t = 0; t < c.ids.size(); ++t) {
    const std::span<const TokenId> ctx(c.ids.data(), t);
    const auto composed = mixws_compose(next_word_dist(*p, ctx), next_word_dist(*q, ctx), stems.stems());
    CHECK(scores[t].target == c.ids[t]);
    CHECK(scores[t].log_prob == doctest::Approx(std::log(composed[static_cast<std::size_t>(c.ids[t])])).epsilon(1e-11));
  }

  auto base = tiny::model(tiny::config(Variant::base, v->size()), v, 43);
  CHECK_THROWS_AS(score_tokens_mixws(*base, *q, stems, c), Error);
}

TEST_CASE("stem-target scoring of a stem mixture") {
  const auto v = tiny::vocab();
  const auto stem_of = tiny::grouped_stems(v->size());
  auto q = tiny::model(tiny::config(Variant::mix_stem, v->size(), 2), v, 50);
  Rng rng(51);
  EncodedCorpus c;
  c.ids = tiny::random_ids(20, v->size(), rng);
  c.vocab_fingerprint = v->fingerprint();
  const auto scores = score_tokens(*q, c, 64, stem_of);
  for (std::size_t t = 0; t < c.ids.size(); ++t) {
    const auto d = next_word_dist(*q, std::span<const TokenId>(c.ids.data(), t));
    CHECK(scores[t].target == c.ids[t]);
    CHECK(scores[t].log_prob ==
          doctest::Approx(std::log(d[static_cast<std::size_t>(stem_of[static_cast<std::size_t>(c.ids[t])])])).epsilon(1e-11));
  }
}

TEST_CASE("select_diverse_stems boundaries") {
  // Reserved 0, 1; stem 2 owns ids 2..11 (10 types), stem 12 owns 12..20 (9
  // types), stem 21 owns 21..32 (12 types).
  std::vector<TokenId> stem_of(33);
  for (TokenId i = 0; i < 33; ++i) stem_of[static_cast<std::size_t>(i)] = i < 2 ? i : i < 12 ? 2 : i < 21 ? 12 : 21;
  const StemMap stems(stem_of);

  std::vector<std::size_t> counts(33, 0);
  counts[0] = 100000;
  counts[1] = 100000;
  for (std::size_t i = 2; i < 12; ++i) counts[i] = 50;    // 10 types, 500 tokens
  for (std::size_t i = 12; i < 21; ++i) counts[i] = 2000;  // 9 types, 18000 tokens
  for (std::size_t i = 21; i < 33; ++i) counts[i] = 41;    // 12 types, 492 tokens
  counts[21] += 7;                                          // 499 tokens
  CHECK(select_diverse_stems(stems, counts) == std::vector<TokenId>{2});

  counts[22] += 1;  // 500
  CHECK(select_diverse_stems(stems, counts) == std::vector<TokenId>{2, 21});

  // A type that never occurs in training does not count toward min_types.
  counts[11] = 0;
  counts[10] = 100;
  CHECK(select_diverse_stems(stems, counts) == std::vector<TokenId>{21});
  CHECK(select_diverse_stems(stems, counts, 9, 500) == std::vector<TokenId>{2, 12, 21});
}

TEST_CASE("slice perplexity") {
  const std::vector<TokenId> stem_of{0, 1, 2, 2, 4, 4, 6};
  const StemMap stems(stem_of);
  const auto scores = scores_of({{2, 0.5}, {3, 0.25}, {4, 0.1}, {1, 0.2}, {6, 0.4}, {5, 0.3}, {0, 0.01}});

  const auto all = stems.stem_set();
  const SliceResult full = slice_perplexity(scores, all, stems, {});
  CHECK(full.slice_perplexity == perplexity(scores, {}).perplexity);
  CHECK(full.slice_token_count == scores.size());
  CHECK(full.stem_set_size == all.size());

  const std::vector<TokenId> set{2, 6};
  const SliceResult s = slice_perplexity(scores, set, stems, {});
  CHECK(s.slice_token_count == 3);
  CHECK(s.slice_perplexity == doctest::Approx(std::exp(-(std::log(0.5) + std::log(0.25) + std::log(0.4)) / 3)));

  const std::vector<TokenId> none{};
  CHECK_THROWS_AS(slice_perplexity(scores, none, stems, {}), Error);
  const std::vector<TokenId> absent{4};
  const auto no_four = scores_of({{2, 0.5}});
  try {
    slice_perplexity(no_four, absent, stems, {});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("unigram baseline") {
  // counts: unk 0, eos 2, x 5, y 1 -> add-one over 4 ids, denominator 12.
  const std::vector<std::size_t> counts{0, 2, 5, 1};
  const std::vector<TokenId> targets{2, 3, 1};
  const double expect = std::exp(-(std::log(6.0 / 12) + std::log(2.0 / 12) + std::log(3.0 / 12)) / 3);
  CHECK(unigram_perplexity(counts, targets, {}, 0, 1) == doctest::Approx(expect));
}

TEST_CASE("seed aggregation") {
  const std::vector<std::uint64_t> s5{1, 2, 3, 4, 5};
  const std::vector<double> tens(5, 10.0);
  const SeedAggregate a = aggregate(s5, tens);
  CHECK(a.mean == 10.0);
  CHECK(a.std == 0.0);
  CHECK(a.cell() == "10.00 ±0.00");

  const std::vector<std::uint64_t> s2{7, 3};
  const std::vector<double> v2{8.0, 12.0};
  const SeedAggregate b = aggregate(s2, v2);
  CHECK(b.mean == 10.0);
  CHECK(b.std == doctest::Approx(std::sqrt(8.0)));
  CHECK(b.seeds == std::vector<std::uint64_t>{3, 7});
  CHECK(b.values == std::vector<double>{12.0, 8.0});
  const std::vector<std::uint64_t> s2r{3, 7};
  const std::vector<double> v2r{12.0, 8.0};
  CHECK(aggregate(s2r, v2r).to_json() == b.to_json());
}

TEST_CASE("multi_seed_run") {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  auto fn = [](std::uint64_t s) { return 10.0 + static_cast<double>(s * s % 7); };
  const SeedAggregate serial = multi_seed_run(seeds, fn, 1);
  const SeedAggregate threaded = multi_seed_run(seeds, fn, 3);
  CHECK(serial.to_json() == threaded.to_json());
  CHECK(serial.values[2] == 12.0);

  const std::vector<std::uint64_t> one{4};
  CHECK_THROWS_AS(multi_seed_run(one, fn), Error);
  const std::vector<std::uint64_t> dup{4, 4};
  CHECK_THROWS_AS(multi_seed_run(dup, fn), Error);

  try {
    multi_seed_run(seeds, [](std::uint64_t s) -> double {
      if (s == 2 || s == 5) throw Error(ErrorKind::numeric, "diverged");
      return 1.0;
    }, 2);
    FAIL("expected an aggregate error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("5") != std::string::npos);
    CHECK(msg.find("diverged") != std::string::npos);
    CHECK(e.kind() == ErrorKind::numeric);
  }
}

TEST_CASE("control comparison") {
  // Every content word in one class: shuffling cannot change the map.
  std::vector<TokenId> stem_of{0, 1, 2, 2, 2, 2};
  const StemMap one_class(stem_of);
  const std::vector<std::uint64_t> seeds{1, 2};
  std::atomic<int> calls{0};
  auto fn = [&](std::uint64_t s, const StemMap& m) {
    ++calls;
    return static_cast<double>(s) + static_cast<double>(m.stem(3)) * 0.1;
  };
  const ControlComparison c = control_comparison(one_class, seeds, 9, fn);
  CHECK(calls == 4);
  CHECK(c.true_stems.to_json() == c.shuffled_stems.to_json());
  CHECK(c.to_json()["shuffle_seed"] == 9);

  const StemMap mixed(std::vector<TokenId>{0, 1, 2, 2, 4, 4, 4, 7, 7});
  const ControlComparison d = control_comparison(mixed, seeds, 9, [&](std::uint64_t, const StemMap& m) {
    return m == mixed ? 1.0 : 2.0;
  });
  CHECK(d.true_stems.mean == 1.0);
  CHECK(d.shuffled_stems.mean == (stem::shuffle_stem_map(mixed, 9) == mixed ? 1.0 : 2.0));
}
