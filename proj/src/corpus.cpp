#include "stemlm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stemlm/error.hpp"
#include "stemlm/utf8.hpp"

namespace stemlm {

std::size_t TokenizedCorpus::token_count() const {
  std::size_t n = 0;
  for (const auto& line : lines) n += line.size();
  return n;
}

std::vector<std::string> tokenize_line(std::string_view line) {
  return utf8::split_whitespace(line);
}

TokenizedCorpus parse_corpus(std::string_view text) {
  TokenizedCorpus corpus;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    try {
      corpus.lines.push_back(tokenize_line(text.substr(pos, end - pos)));
    } catch (const Error& e) {
      fail(ErrorKind::data, "line " + std::to_string(line_no) + ": " + e.what());
    }
    pos = end + 1;
  }
  return corpus;
}

TokenizedCorpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  // ifstream happily "opens" a directory and reads nothing.
  if (!in || std::filesystem::is_directory(path)) fail(ErrorKind::usage, "cannot open corpus file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_corpus(buffer.str());
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

Vocabulary::Vocabulary() {
  tokens_ = {std::string(kUnkToken), std::string(kEosToken)};
  index();
}

void Vocabulary::index() {
  ids_.clear();
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      fail(ErrorKind::data, "duplicate vocabulary token: " + tokens_[i]);
  }
}

Vocabulary Vocabulary::build(const TokenizedCorpus& train) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& line : train.lines)
    for (const auto& tok : line)
      if (tok != kUnkToken && tok != kEosToken) ++counts[tok];
  if (counts.empty()) fail(ErrorKind::data, "cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;  // byte order == code-point order for valid UTF-8
  });
  std::vector<std::string> tokens;
  tokens.reserve(sorted.size());
  for (auto& [tok, count] : sorted) tokens.push_back(std::move(tok));
  return from_content_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_content_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_.reserve(tokens.size() + 2);
  for (auto& tok : tokens) {
    if (tok.empty()) fail(ErrorKind::data, "empty vocabulary token");
    v.tokens_.push_back(std::move(tok));
  }
  v.index();
  return v;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    fail(ErrorKind::usage, "token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::content_tokens() const {
  return {tokens_.begin() + 2, tokens_.end()};
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& tok : tokens_) {
    for (unsigned char c : tok) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // separator; 0xff never occurs in UTF-8
    h *= 0x100000001b3ULL;
  }
  return h;
}

EncodedCorpus encode(const TokenizedCorpus& corpus, const Vocabulary& vocab) {
  EncodedCorpus out;
  out.vocab_fingerprint = vocab.fingerprint();
  out.ids.reserve(corpus.token_count() + corpus.lines.size());
  for (const auto& line : corpus.lines) {
    for (const auto& tok : line) out.ids.push_back(vocab.id_of(tok));
    out.ids.push_back(vocab.eos_id());
  }
  return out;
}

TokenizedCorpus decode(const EncodedCorpus& encoded, const Vocabulary& vocab) {
  TokenizedCorpus out;
  std::vector<std::string> line;
  for (TokenId id : encoded.ids) {
    if (id == vocab.eos_id()) {
      out.lines.push_back(std::move(line));
      line.clear();
    } else {
      line.push_back(vocab.token_of(id));
    }
  }
  if (!line.empty()) out.lines.push_back(std::move(line));
  return out;
}

BatchStream batchify(std::span<const TokenId> ids, std::size_t batch_size, std::size_t bptt_len) {
  if (batch_size == 0 || bptt_len == 0) fail(ErrorKind::usage, "batch size and bptt length must be positive");
  if (ids.size() < batch_size * 2)
    fail(ErrorKind::data, "corpus too small: " + std::to_string(ids.size()) + " tokens for batch size " +
                              std::to_string(batch_size));
  const std::size_t stream_len = ids.size() / batch_size;
  BatchStream stream;
  stream.batch_size = batch_size;
  stream.bptt_len = bptt_len;
  for (std::size_t start = 0; start + 1 < stream_len; start += bptt_len) {
    BatchStep step;
    step.batch_size = batch_size;
    step.length = std::min(bptt_len, stream_len - 1 - start);
    step.inputs.resize(batch_size * step.length);
    step.targets.resize(batch_size * step.length);
    for (std::size_t b = 0; b < batch_size; ++b) {
      const TokenId* sub = ids.data() + b * stream_len + start;
      for (std::size_t j = 0; j < step.length; ++j) {
        step.inputs[b * step.length + j] = sub[j];
        step.targets[b * step.length + j] = sub[j + 1];
      }
    }
    stream.steps.push_back(std::move(step));
  }
  return stream;
}

std::string CorpusStats::to_json() const {
  nlohmann::json j = {{"token_count", token_count},
                      {"type_count", type_count},
                      {"type_token_ratio", type_token_ratio},
                      {"oov_rate", oov_rate}};
  return j.dump(2);
}

CorpusStats corpus_stats(const TokenizedCorpus& train, const TokenizedCorpus& eval_split,
                         const Vocabulary& vocab) {
  CorpusStats stats;
  std::unordered_map<std::string_view, std::size_t> types;
  for (const auto& line : train.lines)
    for (const auto& tok : line) {
      if (tok == Vocabulary::kUnkToken || tok == Vocabulary::kEosToken) continue;
      ++stats.token_count;
      ++types[tok];
    }
  stats.type_count = types.size();
  stats.type_token_ratio =
      stats.token_count == 0 ? 0.0 : static_cast<double>(stats.type_count) / static_cast<double>(stats.token_count);

  std::size_t eval_tokens = 0;
  std::size_t oov = 0;
  for (const auto& line : eval_split.lines)
    for (const auto& tok : line) {
      ++eval_tokens;
      if (!vocab.contains(tok) || tok == Vocabulary::kUnkToken) ++oov;
    }
  stats.oov_rate = eval_tokens == 0 ? 0.0 : static_cast<double>(oov) / static_cast<double>(eval_tokens);
  return stats;
}

std::vector<std::size_t> token_counts(const EncodedCorpus& corpus, std::size_t vocab_size) {
  std::vector<std::size_t> counts(vocab_size, 0);
  for (TokenId id : corpus.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
      fail(ErrorKind::data, "token id " + std::to_string(id) + " outside vocabulary");
    ++counts[static_cast<std::size_t>(id)];
  }
  return counts;
}

}  // namespace stemlm
