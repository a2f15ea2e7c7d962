#include "stemlm/stemmer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "stemlm/error.hpp"
#include "stemlm/random.hpp"
#include "stemlm/utf8.hpp"

namespace stemlm::stem {

std::strong_ordering affix_order(std::u32string_view a, std::u32string_view b) {
  if (a.size() != b.size()) return a.size() <=> b.size();
  return a.compare(b) <=> 0;
}

bool AffixPairLess::operator()(const AffixPair& a, const AffixPair& b) const {
  const auto first = affix_order(a.first, b.first);
  if (first != 0) return first < 0;
  return affix_order(a.second, b.second) < 0;
}

const char* to_string(AffixKind kind) { return kind == AffixKind::prefix ? "prefix" : "suffix"; }

std::size_t RuleSet::distinct_affix_count() const {
  std::set<Affix> affixes;
  for (const auto& [rule, count] : support) {
    if (!rule.first.empty()) affixes.insert(rule.first);
    if (!rule.second.empty()) affixes.insert(rule.second);
  }
  return affixes.size();
}

RuleSet AffixSupport::threshold(std::size_t delta) const {
  if (delta == 0) fail(ErrorKind::usage, "affix threshold must be at least 1");
  RuleSet rules;
  rules.kind = kind;
  rules.threshold = delta;
  rules.support.emplace(AffixPair{}, vocab_size);
  for (const auto& [pair, count] : counts)
    if (count >= delta) rules.support.emplace(pair, count);
  return rules;
}

namespace {

// Shared-prefix trie over code points. Prefix mining runs it over reversed
// words, so a node always stands for the shared part u.
class Trie {
 public:
  Trie() : depth_{0} {}

  std::uint32_t child(std::uint32_t node, char32_t c) {
    const std::uint64_t key = (static_cast<std::uint64_t>(node) << 21) | static_cast<std::uint64_t>(c);
    auto [it, inserted] = edges_.try_emplace(key, static_cast<std::uint32_t>(depth_.size()));
    if (inserted) depth_.push_back(depth_[node] + 1);
    return it->second;
  }

  std::size_t node_count() const { return depth_.size(); }

 private:
  std::unordered_map<std::uint64_t, std::uint32_t> edges_;
  std::vector<std::uint32_t> depth_;
};

}  // namespace

AffixSupport count_affix_pairs(std::span<const std::u32string> words, AffixKind kind, std::size_t max_len) {
  AffixSupport result;
  result.kind = kind;
  result.max_len = max_len;
  result.vocab_size = words.size();

  // Intern affixes so pairs can be counted by integer key.
  std::unordered_map<std::u32string, std::uint32_t> affix_ids;
  std::vector<Affix> affixes;
  auto intern = [&](std::u32string affix) {
    auto [it, inserted] = affix_ids.try_emplace(affix, static_cast<std::uint32_t>(affixes.size()));
    if (inserted) affixes.push_back(std::move(affix));
    return it->second;
  };

  // groups[node] = affixes completing the shared part at that node.
  Trie trie;
  std::vector<std::vector<std::uint32_t>> groups(1);
  for (const auto& original : words) {
    std::u32string word = original;
    if (kind == AffixKind::prefix) std::reverse(word.begin(), word.end());
    std::uint32_t node = 0;
    for (std::size_t cut = 0;; ++cut) {
      if (word.size() - cut <= max_len) {
        std::u32string affix = word.substr(cut);
        if (kind == AffixKind::prefix) std::reverse(affix.begin(), affix.end());
        groups[node].push_back(intern(std::move(affix)));
      }
      if (cut == word.size()) break;
      node = trie.child(node, word[cut]);
      if (groups.size() < trie.node_count()) groups.resize(trie.node_count());
    }
  }

  std::vector<std::uint32_t> order(affixes.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return affix_order(affixes[a], affixes[b]) < 0; });
  std::vector<std::uint32_t> rank(affixes.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) rank[order[r]] = r;

  std::unordered_map<std::uint64_t, std::size_t> pair_counts;
  for (const auto& group : groups) {
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        std::uint32_t lo = rank[group[i]];
        std::uint32_t hi = rank[group[j]];
        if (lo > hi) std::swap(lo, hi);
        ++pair_counts[(static_cast<std::uint64_t>(lo) << 32) | hi];
      }
    }
  }
  for (const auto& [key, count] : pair_counts) {
    const auto lo = order[static_cast<std::uint32_t>(key >> 32)];
    const auto hi = order[static_cast<std::uint32_t>(key & 0xffffffffu)];
    result.counts.emplace(AffixPair{affixes[lo], affixes[hi]}, count);
  }
  return result;
}

RuleSet mine_suffix_rules(std::span<const std::u32string> words, std::size_t delta, std::size_t max_len) {
  return count_affix_pairs(words, AffixKind::suffix, max_len).threshold(delta);
}

RuleSet mine_prefix_rules(std::span<const std::u32string> words, std::size_t delta, std::size_t max_len) {
  return count_affix_pairs(words, AffixKind::prefix, max_len).threshold(delta);
}

bool StemRelation::contains(std::size_t v, std::size_t w) const {
  const auto& c = candidates.at(w);
  return std::binary_search(c.begin(), c.end(), v);
}

std::size_t StemRelation::pair_count() const {
  std::size_t n = 0;
  for (const auto& c : candidates) n += c.size();
  return n;
}

StemRelation build_relation(std::span<const std::u32string> words, const RuleSet& prefix_rules,
                            const RuleSet& suffix_rules) {
  std::unordered_map<std::u32string, std::size_t> index;
  index.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) index.emplace(words[i], i);

  // Rules keyed by the affix on the w side.
  auto by_second = [](const RuleSet& rules, std::size_t& max_len) {
    std::unordered_map<std::u32string, std::vector<Affix>> out;
    max_len = 0;
    for (const auto& [rule, count] : rules.support) {
      out[rule.second].push_back(rule.first);
      max_len = std::max(max_len, rule.second.size());
    }
    return out;
  };
  std::size_t max_p2 = 0;
  std::size_t max_s2 = 0;
  const auto prefixes = by_second(prefix_rules, max_p2);
  const auto suffixes = by_second(suffix_rules, max_s2);

  StemRelation rel;
  rel.candidates.resize(words.size());
  rel.weight.assign(words.size(), 0);
  std::u32string v;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::u32string& word = words[w];
    auto& cands = rel.candidates[w];
    for (std::size_t a = 0; a <= std::min(max_p2, word.size()); ++a) {
      auto p_it = prefixes.find(word.substr(0, a));
      if (p_it == prefixes.end()) continue;
      for (std::size_t b = 0; b <= std::min(max_s2, word.size() - a); ++b) {
        auto s_it = suffixes.find(word.substr(word.size() - b));
        if (s_it == suffixes.end()) continue;
        const std::u32string_view u = std::u32string_view(word).substr(a, word.size() - a - b);
        for (const auto& p1 : p_it->second) {
          for (const auto& s1 : s_it->second) {
            v.assign(p1);
            v.append(u);
            v.append(s1);
            auto found = index.find(v);
            if (found != index.end()) cands.push_back(found->second);
          }
        }
      }
    }
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    for (std::size_t c : cands) ++rel.weight[c];
  }
  return rel;
}

std::vector<std::size_t> assign_stems(std::span<const std::u32string> words, const StemRelation& relation) {
  std::vector<std::size_t> stems(words.size());
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& cands = relation.candidates[w];
    if (cands.empty()) fail(ErrorKind::invariant, "word without stem candidate: " + utf8::encode(words[w]));
    std::size_t best = cands.front();
    for (std::size_t v : cands) {
      if (relation.weight[v] > relation.weight[best] ||
          (relation.weight[v] == relation.weight[best] && affix_order(words[v], words[best]) < 0))
        best = v;
    }
    stems[w] = best;
  }
  return stems;
}

StemMap::StemMap(std::vector<TokenId> stem_of) : stem_of_(std::move(stem_of)) {
  for (std::size_t i = 0; i < stem_of_.size(); ++i) {
    const TokenId s = stem_of_[i];
    if (s < 0 || static_cast<std::size_t>(s) >= stem_of_.size())
      fail(ErrorKind::data, "stem id " + std::to_string(s) + " outside vocabulary");
    if (Vocabulary::is_reserved(static_cast<TokenId>(i)) && s != static_cast<TokenId>(i))
      fail(ErrorKind::data, "reserved token must be its own stem");
    if (!Vocabulary::is_reserved(static_cast<TokenId>(i)) && Vocabulary::is_reserved(s))
      fail(ErrorKind::data, "reserved token used as the stem of a content word");
  }
}

StemMap StemMap::identity(std::size_t vocab_size) {
  std::vector<TokenId> ids(vocab_size);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  return StemMap(std::move(ids));
}

std::vector<TokenId> StemMap::stem_set() const {
  std::vector<TokenId> out(stem_of_.begin(), stem_of_.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

StemClasses stem_classes(const StemMap& map) {
  StemClasses classes;
  for (std::size_t w = 0; w < map.size(); ++w)
    classes[map.stems()[w]].push_back(static_cast<TokenId>(w));
  return classes;
}

StemMap shuffle_stem_map(const StemMap& map, std::uint64_t seed) {
  std::vector<TokenId> words;
  for (std::size_t w = 0; w < map.size(); ++w)
    if (!Vocabulary::is_reserved(static_cast<TokenId>(w))) words.push_back(static_cast<TokenId>(w));
  Rng rng(seed);
  rng.shuffle(words.begin(), words.end());

  std::vector<TokenId> stem_of(map.stems().begin(), map.stems().end());
  std::size_t next = 0;
  for (const auto& [stem, members] : stem_classes(map)) {
    if (Vocabulary::is_reserved(stem)) continue;
    for (std::size_t k = 0; k < members.size(); ++k) stem_of[static_cast<std::size_t>(words[next++])] = stem;
  }
  return StemMap(std::move(stem_of));
}

std::size_t default_threshold(std::size_t vocab_size) {
  if (vocab_size >= 50000) return 100;
  return std::max<std::size_t>(2, vocab_size / 500);
}

std::size_t calibrate_suffix_threshold(const AffixSupport& suffix_support, std::size_t target_suffix_count) {
  std::set<std::size_t> candidates{1};
  for (const auto& [pair, count] : suffix_support.counts) candidates.insert(count);
  std::size_t best_delta = 1;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t delta : candidates) {
    const std::size_t n = suffix_support.threshold(delta).distinct_affix_count();
    const std::size_t gap = n > target_suffix_count ? n - target_suffix_count : target_suffix_count - n;
    if (gap < best_gap) {
      best_gap = gap;
      best_delta = delta;
    }
  }
  return best_delta;
}

StemmerResult identify_stems(const Vocabulary& vocab, const StemmerParams& params) {
  if (params.max_suffix_len == 0 || params.max_prefix_len == 0)
    fail(ErrorKind::usage, "maximum affix lengths must be at least 1");
  std::vector<std::u32string> words;
  for (const auto& tok : vocab.content_tokens()) words.push_back(utf8::decode(tok));

  const std::size_t fallback = default_threshold(words.size());
  const AffixSupport suffix_support = count_affix_pairs(words, AffixKind::suffix, params.max_suffix_len);
  std::size_t delta_s = params.delta_suffix.value_or(fallback);
  if (params.target_suffix_count) delta_s = calibrate_suffix_threshold(suffix_support, *params.target_suffix_count);
  const std::size_t delta_p = params.delta_prefix.value_or(fallback);

  StemmerResult result;
  result.suffix_rules = suffix_support.threshold(delta_s);
  result.prefix_rules = count_affix_pairs(words, AffixKind::prefix, params.max_prefix_len).threshold(delta_p);
  const StemRelation relation = build_relation(words, result.prefix_rules, result.suffix_rules);
  const std::vector<std::size_t> stems = assign_stems(words, relation);

  std::vector<TokenId> stem_of(vocab.size());
  stem_of[Vocabulary::kUnkId] = Vocabulary::kUnkId;
  stem_of[Vocabulary::kEosId] = Vocabulary::kEosId;
  for (std::size_t w = 0; w < words.size(); ++w) stem_of[w + 2] = static_cast<TokenId>(stems[w] + 2);
  result.map = StemMap(std::move(stem_of));
  return result;
}

std::string format_rules(const RuleSet& rules) {
  std::string out;
  for (const auto& [rule, count] : rules.support) {
    out += to_string(rules.kind);
    out += '\t';
    out += utf8::encode(rule.first);
    out += '\t';
    out += utf8::encode(rule.second);
    out += '\t';
    out += std::to_string(count);
    out += '\n';
  }
  return out;
}

std::string format_stem_map(const StemMap& map, const Vocabulary& vocab) {
  if (map.size() != vocab.size()) fail(ErrorKind::data, "stem map size does not match vocabulary");
  std::string out;
  for (std::size_t w = 2; w < map.size(); ++w) {
    out += vocab.token_of(static_cast<TokenId>(w));
    out += '\t';
    out += vocab.token_of(map.stems()[w]);
    out += '\n';
  }
  return out;
}

StemMap parse_stem_map(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> stem_of(vocab.size(), -1);
  stem_of[Vocabulary::kUnkId] = Vocabulary::kUnkId;
  stem_of[Vocabulary::kEosId] = Vocabulary::kEosId;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::string where = "stem map line " + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos)
      fail(ErrorKind::data, where + ": expected word<TAB>stem");
    const std::string_view word = line.substr(0, tab);
    const std::string_view stem = line.substr(tab + 1);
    if (!vocab.contains(word)) fail(ErrorKind::data, where + ": unknown word '" + std::string(word) + "'");
    if (!vocab.contains(stem))
      fail(ErrorKind::data, where + ": stem '" + std::string(stem) + "' is not in the vocabulary");
    const TokenId w = vocab.id_of(word);
    const TokenId s = vocab.id_of(stem);
    if (Vocabulary::is_reserved(w)) {
      if (s != w) fail(ErrorKind::data, where + ": reserved token must be its own stem");
      continue;
    }
    if (Vocabulary::is_reserved(s)) fail(ErrorKind::data, where + ": reserved token used as a stem");
    if (stem_of[static_cast<std::size_t>(w)] != -1)
      fail(ErrorKind::data, where + ": duplicate entry for '" + std::string(word) + "'");
    stem_of[static_cast<std::size_t>(w)] = s;
  }
  for (std::size_t w = 0; w < stem_of.size(); ++w)
    if (stem_of[w] == -1)
      fail(ErrorKind::data, "stem map has no entry for '" + vocab.token_of(static_cast<TokenId>(w)) + "'");
  return StemMap(std::move(stem_of));
}

void save_stem_map(const StemMap& map, const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::usage, "cannot write stem map: " + path.string());
  out << format_stem_map(map, vocab);
  if (!out) fail(ErrorKind::data, "write failed: " + path.string());
}

StemMap load_stem_map(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in || std::filesystem::is_directory(path)) fail(ErrorKind::usage, "cannot open stem map: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_stem_map(buffer.str(), vocab);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace stemlm::stem
