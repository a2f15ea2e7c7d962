#pragma once

// Direct enumeration of the stem-identification algorithm over all word
// pairs. Deliberately shares no code with the library implementation: no
// tries, no rule indexing, just strings and sets.

#include <map>
#include <cstdint>
#include <string_view>
#include <unordered_set>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace brute {

using Word = std::u32string;
using Pair = std::pair<Word, Word>;

inline bool affix_less(const Word& a, const Word& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

// Support of every (s1, s2), s1 < s2, over distinct word pairs (w1, w2)
// with w1 = u + s1 and w2 = u + s2.
inline std::map<Pair, std::size_t> edge_support(const std::vector<Word>& words, std::size_t max_len) {
  std::map<Pair, std::set<std::pair<std::size_t, std::size_t>>> witnesses;
  for (std::size_t a = 0; a < words.size(); ++a) {
    for (std::size_t b = 0; b < words.size(); ++b) {
      if (a == b) continue;
      const Word& w1 = words[a];
      const Word& w2 = words[b];
      for (std::size_t k = 0; k <= w1.size() && k <= w2.size(); ++k) {
        if (k > 0 && w1[k - 1] != w2[k - 1]) break;
        const Word s1 = w1.substr(k);
        const Word s2 = w2.substr(k);
        if (s1.size() > max_len || s2.size() > max_len) continue;
        if (!affix_less(s1, s2)) continue;
        witnesses[{s1, s2}].insert({a, b});
      }
    }
  }
  std::map<Pair, std::size_t> support;
  for (const auto& [rule, pairs] : witnesses) support[rule] = pairs.size();
  return support;
}

inline std::set<Pair> suffix_rules(const std::vector<Word>& words, std::size_t delta, std::size_t max_len) {
  std::set<Pair> rules{{Word(), Word()}};
  for (const auto& [rule, n] : edge_support(words, max_len))
    if (n >= delta) rules.insert(rule);
  return rules;
}

inline std::set<Pair> prefix_rules(const std::vector<Word>& words, std::size_t delta, std::size_t max_len) {
  std::map<Pair, std::set<std::pair<std::size_t, std::size_t>>> witnesses;
  for (std::size_t a = 0; a < words.size(); ++a) {
    for (std::size_t b = 0; b < words.size(); ++b) {
      if (a == b) continue;
      const Word& w1 = words[a];
      const Word& w2 = words[b];
      for (std::size_t k = 0; k <= w1.size() && k <= w2.size(); ++k) {
        // u is the last k characters of both words.
        if (k > 0 && w1[w1.size() - k] != w2[w2.size() - k]) break;
        const Word p1 = w1.substr(0, w1.size() - k);
        const Word p2 = w2.substr(0, w2.size() - k);
        if (p1.size() > max_len || p2.size() > max_len) continue;
        if (!affix_less(p1, p2)) continue;
        witnesses[{p1, p2}].insert({a, b});
      }
    }
  }
  std::set<Pair> rules{{Word(), Word()}};
  for (const auto& [rule, pairs] : witnesses)
    if (pairs.size() >= delta) rules.insert(rule);
  return rules;
}

inline bool starts_with(const Word& w, const Word& p) { return w.size() >= p.size() && w.compare(0, p.size(), p) == 0; }
inline bool ends_with(const Word& w, const Word& s) {
  return w.size() >= s.size() && w.compare(w.size() - s.size(), s.size(), s) == 0;
}

// (v, w) related iff v = p1 + u + s1 and w = p2 + u + s2 for some rules.
inline bool related(const Word& v, const Word& w, const std::set<Pair>& prefixes, const std::set<Pair>& suffixes) {
  for (const auto& [p1, p2] : prefixes) {
    if (!starts_with(v, p1) || !starts_with(w, p2)) continue;
    for (const auto& [s1, s2] : suffixes) {
      if (!ends_with(v, s1) || !ends_with(w, s2)) continue;
      if (p1.size() + s1.size() > v.size() || p2.size() + s2.size() > w.size()) continue;
      if (v.substr(p1.size(), v.size() - p1.size() - s1.size()) == w.substr(p2.size(), w.size() - p2.size() - s2.size()))
        return true;
    }
  }
  return false;
}

// Same relation, enumerated from the splits of v instead of the rule lists;
// needed when thresholds of 1 produce thousands of rules.
inline bool related_by_splits(const Word& v, const Word& w, const std::set<Pair>& prefixes,
                              const std::set<Pair>& suffixes, std::size_t max_prefix, std::size_t max_suffix) {
  for (std::size_t i = 0; i <= v.size() && i <= max_prefix; ++i) {
    for (std::size_t j = 0; i + j <= v.size() && j <= max_suffix; ++j) {
      const Word p1 = v.substr(0, i);
      const Word u = v.substr(i, v.size() - i - j);
      const Word s1 = v.substr(v.size() - j);
      for (std::size_t i2 = 0; i2 <= max_prefix && i2 + u.size() <= w.size(); ++i2) {
        if (w.compare(i2, u.size(), u) != 0) continue;
        const Word p2 = w.substr(0, i2);
        const Word s2 = w.substr(i2 + u.size());
        if (s2.size() > max_suffix) continue;
        if (prefixes.count({p1, p2}) && suffixes.count({s1, s2})) return true;
      }
    }
  }
  return false;
}

// Full relation matrix, v-major. Same enumeration as related_by_splits, but
// affixes are interned to integers first so 500-word vocabularies stay cheap.
inline std::vector<std::vector<bool>> relation_matrix(const std::vector<Word>& words, const std::set<Pair>& prefixes,
                                                      const std::set<Pair>& suffixes, std::size_t max_prefix,
                                                      std::size_t max_suffix) {
  using View = std::u32string_view;
  std::map<Word, std::uint64_t> ids;
  auto intern = [&ids](View a) { return ids.emplace(Word(a), ids.size()).first->second; };
  const std::size_t n = words.size();
  // pre[w][i] = id of the first i characters, suf[w][j] = id of the last j.
  std::vector<std::vector<std::uint64_t>> pre(n), suf(n);
  for (std::size_t w = 0; w < n; ++w) {
    const View v = words[w];
    for (std::size_t i = 0; i <= v.size() && i <= max_prefix; ++i) pre[w].push_back(intern(v.substr(0, i)));
    for (std::size_t j = 0; j <= v.size() && j <= max_suffix; ++j) suf[w].push_back(intern(v.substr(v.size() - j)));
  }
  auto key = [](std::uint64_t x, std::uint64_t y) { return (x << 32) | y; };
  std::unordered_set<std::uint64_t> prefix_pairs, suffix_pairs, prefix_left, suffix_left;
  for (const auto& [x, y] : prefixes) {
    const auto ix = ids.find(x), iy = ids.find(y);
    if (ix == ids.end() || iy == ids.end()) continue;
    prefix_pairs.insert(key(ix->second, iy->second));
    prefix_left.insert(ix->second);
  }
  for (const auto& [x, y] : suffixes) {
    const auto ix = ids.find(x), iy = ids.find(y);
    if (ix == ids.end() || iy == ids.end()) continue;
    suffix_pairs.insert(key(ix->second, iy->second));
    suffix_left.insert(ix->second);
  }

  std::vector<std::vector<bool>> rel(n, std::vector<bool>(n, false));
  struct Split {
    std::uint64_t p1, s1;
    View u;
  };
  for (std::size_t a = 0; a < n; ++a) {
    const View v = words[a];
    std::vector<Split> splits;
    for (std::size_t i = 0; i < pre[a].size(); ++i) {
      if (!prefix_left.count(pre[a][i])) continue;
      for (std::size_t j = 0; i + j <= v.size() && j < suf[a].size(); ++j)
        if (suffix_left.count(suf[a][j])) splits.push_back({pre[a][i], suf[a][j], v.substr(i, v.size() - i - j)});
    }
    for (std::size_t b = 0; b < n; ++b) {
      const View w = words[b];
      bool found = false;
      for (const Split& sp : splits) {
        for (std::size_t i2 = 0; !found && i2 < pre[b].size() && i2 + sp.u.size() <= w.size(); ++i2) {
          if (w.substr(i2, sp.u.size()) != sp.u) continue;
          const std::size_t j2 = w.size() - i2 - sp.u.size();
          if (j2 >= suf[b].size()) continue;
          found = prefix_pairs.count(key(sp.p1, pre[b][i2])) && suffix_pairs.count(key(sp.s1, suf[b][j2]));
        }
        if (found) break;
      }
      rel[a][b] = found;
    }
  }
  return rel;
}

struct Result {
  std::set<Pair> prefixes;
  std::set<Pair> suffixes;
  std::vector<std::size_t> weight;
  std::vector<std::size_t> stem;  // index into words
};

inline Result identify(const std::vector<Word>& words, std::size_t delta_prefix, std::size_t delta_suffix,
                       std::size_t max_prefix, std::size_t max_suffix) {
  Result r;
  r.prefixes = prefix_rules(words, delta_prefix, max_prefix);
  r.suffixes = suffix_rules(words, delta_suffix, max_suffix);
  const std::size_t n = words.size();
  const auto rel = relation_matrix(words, r.prefixes, r.suffixes, max_prefix, max_suffix);
  r.weight.assign(n, 0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) r.weight[a] += rel[a][b] ? 1 : 0;
  r.stem.assign(n, 0);
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t best = n;
    for (std::size_t a = 0; a < n; ++a) {
      if (!rel[a][b]) continue;
      if (best == n || r.weight[a] > r.weight[best] ||
          (r.weight[a] == r.weight[best] && affix_less(words[a], words[best])))
        best = a;
    }
    r.stem[b] = best;
  }
  return r;
}

}  // namespace brute
