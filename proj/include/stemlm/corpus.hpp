#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stemlm {

using TokenId = std::int32_t;

// One sentence per line, whitespace-tokenized.
struct TokenizedCorpus {
  std::vector<std::vector<std::string>> lines;

  std::size_t token_count() const;
};

std::vector<std::string> tokenize_line(std::string_view line);

TokenizedCorpus read_corpus(const std::filesystem::path& path);
TokenizedCorpus parse_corpus(std::string_view text);

/// Bidirectional token <-> id map. Ids 0 and 1 are the reserved unknown and
/// end-of-sentence tokens; content tokens follow by descending training
/// frequency, ties broken by code-point order.
class Vocabulary {
 public:
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr TokenId kUnkId = 0;
  static constexpr TokenId kEosId = 1;

  Vocabulary();

  static Vocabulary build(const TokenizedCorpus& train);
  // Content tokens in id order (reserved tokens are implicit).
  static Vocabulary from_content_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId unk_id() const { return kUnkId; }
  TokenId eos_id() const { return kEosId; }
  static bool is_reserved(TokenId id) { return id == kUnkId || id == kEosId; }

  // Out-of-vocabulary tokens map to unk_id().
  TokenId id_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token_of(TokenId id) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::string> content_tokens() const;

  // FNV-1a over the token list; equal vocabularies have equal fingerprints.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct EncodedCorpus {
  std::vector<TokenId> ids;
  std::uint64_t vocab_fingerprint = 0;

  std::size_t token_count() const { return ids.size(); }
};

// Maps every token to its id (OoV -> unk) and appends eos after each line.
EncodedCorpus encode(const TokenizedCorpus& corpus, const Vocabulary& vocab);
TokenizedCorpus decode(const EncodedCorpus& encoded, const Vocabulary& vocab);

// One truncated-BPTT window. Blocks are row-major [batch][length].
struct BatchStep {
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;

  TokenId input(std::size_t row, std::size_t col) const { return inputs[row * length + col]; }
  TokenId target(std::size_t row, std::size_t col) const { return targets[row * length + col]; }
};

struct BatchStream {
  std::size_t batch_size = 0;
  std::size_t bptt_len = 0;
  std::vector<BatchStep> steps;
};

// Splits the stream into batch_size contiguous equal-length substreams (the
// tail that does not fill a column is dropped) and walks them in parallel
// windows of bptt_len.
BatchStream batchify(std::span<const TokenId> ids, std::size_t batch_size, std::size_t bptt_len);

struct CorpusStats {
  std::size_t token_count = 0;
  std::size_t type_count = 0;
  double type_token_ratio = 0.0;
  double oov_rate = 0.0;

  std::string to_json() const;
};

// Counts exclude the reserved tokens; oov_rate is measured on eval_split.
CorpusStats corpus_stats(const TokenizedCorpus& train, const TokenizedCorpus& eval_split,
                         const Vocabulary& vocab);

// Per-id occurrence counts over an encoded stream.
std::vector<std::size_t> token_counts(const EncodedCorpus& corpus, std::size_t vocab_size);

}  // namespace stemlm
