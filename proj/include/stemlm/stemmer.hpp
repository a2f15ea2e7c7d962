#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stemlm/corpus.hpp"

namespace stemlm::stem {

using Affix = std::u32string;

// Shorter affixes first; equal lengths compare by code point.
std::strong_ordering affix_order(std::u32string_view a, std::u32string_view b);

struct AffixPair {
  Affix first;
  Affix second;

  bool is_identity() const { return first.empty() && second.empty(); }
  bool operator==(const AffixPair&) const = default;
};

struct AffixPairLess {
  bool operator()(const AffixPair& a, const AffixPair& b) const;
};

enum class AffixKind { prefix, suffix };

const char* to_string(AffixKind kind);

/// Mined affix rules of one kind. The identity rule (eps, eps) is always
/// present with support |V|; every other rule has support >= threshold.
struct RuleSet {
  AffixKind kind = AffixKind::suffix;
  std::size_t threshold = 1;
  std::map<AffixPair, std::size_t, AffixPairLess> support;

  bool contains(const AffixPair& rule) const { return support.count(rule) != 0; }
  std::size_t size() const { return support.size(); }
  // Distinct non-empty affix strings occurring in any rule.
  std::size_t distinct_affix_count() const;
};

/// Support of every ordered affix pair (a1 < a2, both within max_len): the
/// number of distinct word pairs (w1, w2) that differ exactly by swapping a1
/// for a2 around a shared part u (u may be empty).
struct AffixSupport {
  AffixKind kind = AffixKind::suffix;
  std::size_t max_len = 0;
  std::size_t vocab_size = 0;
  std::map<AffixPair, std::size_t, AffixPairLess> counts;

  RuleSet threshold(std::size_t delta) const;
};

AffixSupport count_affix_pairs(std::span<const std::u32string> words, AffixKind kind, std::size_t max_len);

RuleSet mine_suffix_rules(std::span<const std::u32string> words, std::size_t delta, std::size_t max_len);
RuleSet mine_prefix_rules(std::span<const std::u32string> words, std::size_t delta, std::size_t max_len);

/// (v, w) pairs with v = p1 + u + s1 and w = p2 + u + s2 for some prefix rule
/// (p1, p2), suffix rule (s1, s2) and string u. Indices refer to the word list
/// the relation was built from.
struct StemRelation {
  // candidates[w] = sorted indices v with (v, w) in the relation.
  std::vector<std::vector<std::size_t>> candidates;
  // weight[v] = |{w : (v, w) in the relation}|
  std::vector<std::size_t> weight;

  bool contains(std::size_t v, std::size_t w) const;
  std::size_t pair_count() const;
};

StemRelation build_relation(std::span<const std::u32string> words, const RuleSet& prefix_rules,
                            const RuleSet& suffix_rules);

// stem_index[w] = argmax over candidates v of weight[v]; ties go to the
// shorter candidate, then the smaller one in code-point order.
std::vector<std::size_t> assign_stems(std::span<const std::u32string> words, const StemRelation& relation);

/// Total map word -> stem over a Vocabulary. Reserved ids map to themselves.
class StemMap {
 public:
  StemMap() = default;
  explicit StemMap(std::vector<TokenId> stem_of);

  static StemMap identity(std::size_t vocab_size);

  std::size_t size() const { return stem_of_.size(); }
  TokenId stem(TokenId word) const { return stem_of_.at(static_cast<std::size_t>(word)); }
  std::span<const TokenId> stems() const { return stem_of_; }

  // Distinct stems, ascending.
  std::vector<TokenId> stem_set() const;

  bool operator==(const StemMap&) const = default;

 private:
  std::vector<TokenId> stem_of_;
};

using StemClasses = std::map<TokenId, std::vector<TokenId>>;

// Inverse image of the map; each class is sorted by id.
StemClasses stem_classes(const StemMap& map);

// Re-partitions the content words across the same stems, keeping every class
// size. Reserved ids are untouched. Deterministic for a given seed.
StemMap shuffle_stem_map(const StemMap& map, std::uint64_t seed);

struct StemmerParams {
  std::optional<std::size_t> delta_suffix;  // default_threshold(|V|) when empty
  std::optional<std::size_t> delta_prefix;
  std::size_t max_suffix_len = 6;
  std::size_t max_prefix_len = 4;
  // When set, delta_suffix is calibrated to hit this distinct-suffix count.
  std::optional<std::size_t> target_suffix_count;
};

std::size_t default_threshold(std::size_t vocab_size);

// Smallest delta whose rule set has the distinct-suffix count closest to the
// target.
std::size_t calibrate_suffix_threshold(const AffixSupport& suffix_support, std::size_t target_suffix_count);

struct StemmerResult {
  RuleSet prefix_rules;
  RuleSet suffix_rules;
  StemMap map;
};

// Full pipeline over the content tokens of the vocabulary.
StemmerResult identify_stems(const Vocabulary& vocab, const StemmerParams& params);

// Rule dump: "kind<TAB>a1<TAB>a2<TAB>support" per line, eps as empty field.
std::string format_rules(const RuleSet& rules);

// "word<TAB>stem" per content word, in id order.
std::string format_stem_map(const StemMap& map, const Vocabulary& vocab);
StemMap parse_stem_map(std::string_view text, const Vocabulary& vocab);

void save_stem_map(const StemMap& map, const Vocabulary& vocab, const std::filesystem::path& path);
StemMap load_stem_map(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace stemlm::stem
