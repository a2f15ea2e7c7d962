#include "stemlm/stemlm.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "stemlm/checkpoint.hpp"
#include "stemlm/corpus.hpp"
#include "stemlm/error.hpp"
#include "stemlm/eval.hpp"
#include "stemlm/experiment.hpp"
#include "stemlm/mixws.hpp"
#include "stemlm/model.hpp"
#include "stemlm/stemmer.hpp"
#include "stemlm/synth.hpp"
#include "stemlm/train.hpp"

using namespace stemlm;

struct stemlm_corpus {
  TokenizedCorpus corpus;
};

struct stemlm_vocab {
  std::shared_ptr<const Vocabulary> vocab;
};

struct stemlm_stem_map {
  stem::StemMap map;
  std::uint64_t vocab_fingerprint = 0;
};

struct stemlm_model {
  Checkpoint checkpoint;
  LanguageModel& model() const { return *checkpoint.model; }
};

namespace {

thread_local std::string g_last_error;

stemlm_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return STEMLM_ERR_USAGE;
    case ErrorKind::data: return STEMLM_ERR_DATA;
    case ErrorKind::numeric: return STEMLM_ERR_NUMERIC;
    case ErrorKind::invariant: return STEMLM_ERR_INVARIANT;
  }
  return STEMLM_ERR_INTERNAL;
}

template <typename F>
stemlm_status guard(F&& body) {
  try {
    body();
    g_last_error.clear();
    return STEMLM_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return STEMLM_ERR_USAGE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return STEMLM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return STEMLM_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return STEMLM_ERR_INTERNAL;
  }
}

template <typename T>
const T& need(const T* p, const char* what) {
  if (p == nullptr) fail(ErrorKind::usage, std::string(what) + " must not be NULL");
  return *p;
}

const char* need_str(const char* p, const char* what) {
  if (p == nullptr) fail(ErrorKind::usage, std::string(what) + " must not be NULL");
  return p;
}

template <typename T>
void need_out(T** out) {
  if (out == nullptr) fail(ErrorKind::usage, "output pointer must not be NULL");
  *out = nullptr;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

nlohmann::json parse_json(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::usage, std::string(what) + " is not valid JSON: " + e.what());
  }
}

void check_map_vocab(const stemlm_stem_map& map, const Vocabulary& vocab) {
  if (map.vocab_fingerprint != vocab.fingerprint())
    fail(ErrorKind::data, "stem map was built for a different vocabulary");
}

}  // namespace

extern "C" {

const char* stemlm_version(void) { return "0.1.0"; }

const char* stemlm_last_error(void) { return g_last_error.c_str(); }

const char* stemlm_status_name(stemlm_status status) {
  switch (status) {
    case STEMLM_OK: return "ok";
    case STEMLM_ERR_USAGE: return "usage";
    case STEMLM_ERR_DATA: return "data";
    case STEMLM_ERR_NUMERIC: return "numeric";
    case STEMLM_ERR_INVARIANT: return "invariant";
    case STEMLM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void stemlm_string_free(char* s) { std::free(s); }

stemlm_status stemlm_corpus_load(const char* path, stemlm_corpus** out) {
  return guard([&] {
    need_out(out);
    auto c = std::make_unique<stemlm_corpus>();
    c->corpus = read_corpus(need_str(path, "path"));
    *out = c.release();
  });
}

stemlm_status stemlm_corpus_from_text(const char* text, size_t len, stemlm_corpus** out) {
  return guard([&] {
    need_out(out);
    if (text == nullptr && len > 0) fail(ErrorKind::usage, "text must not be NULL");
    auto c = std::make_unique<stemlm_corpus>();
    c->corpus = parse_corpus(std::string_view(text == nullptr ? "" : text, len));
    *out = c.release();
  });
}

size_t stemlm_corpus_line_count(const stemlm_corpus* corpus) { return corpus ? corpus->corpus.lines.size() : 0; }

size_t stemlm_corpus_token_count(const stemlm_corpus* corpus) {
  if (corpus == nullptr) return 0;
  size_t n = 0;
  for (const auto& line : corpus->corpus.lines) n += line.size();
  return n;
}

void stemlm_corpus_free(stemlm_corpus* corpus) { delete corpus; }

stemlm_status stemlm_vocab_build(const stemlm_corpus* train, stemlm_vocab** out) {
  return guard([&] {
    need_out(out);
    auto v = std::make_unique<stemlm_vocab>();
    v->vocab = std::make_shared<const Vocabulary>(Vocabulary::build(need(train, "train").corpus));
    *out = v.release();
  });
}

size_t stemlm_vocab_size(const stemlm_vocab* vocab) { return vocab ? vocab->vocab->size() : 0; }

stemlm_status stemlm_vocab_id(const stemlm_vocab* vocab, const char* token, int32_t* out) {
  return guard([&] {
    if (out == nullptr) fail(ErrorKind::usage, "output pointer must not be NULL");
    *out = need(vocab, "vocab").vocab->id_of(need_str(token, "token"));
  });
}

stemlm_status stemlm_vocab_token(const stemlm_vocab* vocab, int32_t id, const char** out) {
  return guard([&] {
    if (out == nullptr) fail(ErrorKind::usage, "output pointer must not be NULL");
    const Vocabulary& v = *need(vocab, "vocab").vocab;
    if (id < 0 || static_cast<std::size_t>(id) >= v.size())
      fail(ErrorKind::usage, "token id " + std::to_string(id) + " outside the vocabulary");
    *out = v.token_of(id).c_str();
  });
}

void stemlm_vocab_free(stemlm_vocab* vocab) { delete vocab; }

stemlm_status stemlm_stats_json(const stemlm_corpus* train, const stemlm_corpus* eval, const stemlm_vocab* vocab,
                                char** out_json) {
  return guard([&] {
    need_out(out_json);
    const CorpusStats stats =
        corpus_stats(need(train, "train").corpus, need(eval, "eval").corpus, *need(vocab, "vocab").vocab);
    *out_json = copy_string(stats.to_json());
  });
}

stemlm_status stemlm_stem_map_mine(const stemlm_vocab* vocab, const char* params_json, stemlm_stem_map** out,
                                   char** rules_tsv) {
  return guard([&] {
    need_out(out);
    if (rules_tsv) *rules_tsv = nullptr;
    const Vocabulary& v = *need(vocab, "vocab").vocab;
    stem::StemmerParams params;
    stem::from_json(parse_json(params_json, "stemmer parameters"), params);
    stem::StemmerResult mined = stem::identify_stems(v, params);
    auto m = std::make_unique<stemlm_stem_map>();
    m->map = std::move(mined.map);
    m->vocab_fingerprint = v.fingerprint();
    if (rules_tsv) *rules_tsv = copy_string(stem::format_rules(mined.prefix_rules) + stem::format_rules(mined.suffix_rules));
    *out = m.release();
  });
}

stemlm_status stemlm_stem_map_identity(const stemlm_vocab* vocab, stemlm_stem_map** out) {
  return guard([&] {
    need_out(out);
    const Vocabulary& v = *need(vocab, "vocab").vocab;
    auto m = std::make_unique<stemlm_stem_map>();
    m->map = stem::StemMap::identity(v.size());
    m->vocab_fingerprint = v.fingerprint();
    *out = m.release();
  });
}

stemlm_status stemlm_stem_map_load(const stemlm_vocab* vocab, const char* path, stemlm_stem_map** out) {
  return guard([&] {
    need_out(out);
    const Vocabulary& v = *need(vocab, "vocab").vocab;
    auto m = std::make_unique<stemlm_stem_map>();
    m->map = stem::load_stem_map(need_str(path, "path"), v);
    m->vocab_fingerprint = v.fingerprint();
    *out = m.release();
  });
}

stemlm_status stemlm_stem_map_save(const stemlm_stem_map* map, const stemlm_vocab* vocab, const char* path) {
  return guard([&] {
    const Vocabulary& v = *need(vocab, "vocab").vocab;
    check_map_vocab(need(map, "map"), v);
    stem::save_stem_map(map->map, v, need_str(path, "path"));
  });
}

stemlm_status stemlm_stem_map_format(const stemlm_stem_map* map, const stemlm_vocab* vocab, char** out_tsv) {
  return guard([&] {
    need_out(out_tsv);
    const Vocabulary& v = *need(vocab, "vocab").vocab;
    check_map_vocab(need(map, "map"), v);
    *out_tsv = copy_string(stem::format_stem_map(map->map, v));
  });
}

stemlm_status stemlm_stem_map_shuffle(const stemlm_stem_map* map, uint64_t seed, stemlm_stem_map** out) {
  return guard([&] {
    need_out(out);
    auto m = std::make_unique<stemlm_stem_map>();
    m->map = stem::shuffle_stem_map(need(map, "map").map, seed);
    m->vocab_fingerprint = map->vocab_fingerprint;
    *out = m.release();
  });
}

size_t stemlm_stem_map_size(const stemlm_stem_map* map) { return map ? map->map.size() : 0; }

stemlm_status stemlm_stem_map_lookup(const stemlm_stem_map* map, int32_t word, int32_t* out_stem) {
  return guard([&] {
    if (out_stem == nullptr) fail(ErrorKind::usage, "output pointer must not be NULL");
    const stem::StemMap& m = need(map, "map").map;
    if (word < 0 || static_cast<std::size_t>(word) >= m.size())
      fail(ErrorKind::usage, "token id " + std::to_string(word) + " outside the stem map");
    *out_stem = m.stem(word);
  });
}

void stemlm_stem_map_free(stemlm_stem_map* map) { delete map; }

stemlm_status stemlm_synth_generate(const char* params_json, const char* out_dir) {
  return guard([&] {
    synth::SynthParams params;
    synth::from_json(parse_json(params_json, "synth parameters"), params);
    synth::write_corpus(synth::generate(params), params, need_str(out_dir, "out_dir"));
  });
}

stemlm_status stemlm_model_train(const char* config_json, const stemlm_vocab* vocab, const stemlm_corpus* train_corpus,
                                 const stemlm_corpus* dev_corpus, const stemlm_stem_map* stems, const char* log_path,
                                 stemlm_model** out) {
  return guard([&] {
    need_out(out);
    const auto vocab_ptr = need(vocab, "vocab").vocab;
    ModelConfig config;
    from_json(parse_json(config_json, "model config"), config);
    config.vocab_size = vocab_ptr->size();
    if (stems) check_map_vocab(*stems, *vocab_ptr);
    const EncodedCorpus train_ids = encode(need(train_corpus, "train").corpus, *vocab_ptr);
    const EncodedCorpus dev_ids = encode(need(dev_corpus, "dev").corpus, *vocab_ptr);

    std::ofstream log;
    if (log_path) {
      log.open(log_path, std::ios::binary | std::ios::trunc);
      if (!log) fail(ErrorKind::usage, std::string("cannot write training log ") + log_path);
    }
    TrainResult result = train(config, vocab_ptr, train_ids, dev_ids, stems ? &stems->map : nullptr,
                               [&](const EpochRecord& rec) {
                                 if (log) log << rec.to_json().dump() << '\n' << std::flush;
                               });
    auto m = std::make_unique<stemlm_model>();
    m->checkpoint = std::move(result.checkpoint);
    *out = m.release();
  });
}

stemlm_status stemlm_model_save(const stemlm_model* model, const char* path) {
  return guard([&] { save_checkpoint(need(model, "model").checkpoint, need_str(path, "path")); });
}

stemlm_status stemlm_model_load(const char* path, stemlm_model** out) {
  return guard([&] {
    need_out(out);
    auto m = std::make_unique<stemlm_model>();
    m->checkpoint = load_checkpoint(need_str(path, "path"));
    *out = m.release();
  });
}

stemlm_status stemlm_model_config_json(const stemlm_model* model, char** out_json) {
  return guard([&] {
    need_out(out_json);
    *out_json = copy_string(nlohmann::json(need(model, "model").model().config()).dump());
  });
}

stemlm_status stemlm_model_vocab(const stemlm_model* model, stemlm_vocab** out) {
  return guard([&] {
    need_out(out);
    auto v = std::make_unique<stemlm_vocab>();
    v->vocab = need(model, "model").model().vocabulary_ptr();
    *out = v.release();
  });
}

stemlm_status stemlm_model_next_word_dist(const stemlm_model* model, const int32_t* context, size_t context_len,
                                          double* out, size_t out_len) {
  return guard([&] {
    LanguageModel& m = need(model, "model").model();
    if (out == nullptr || out_len != m.config().vocab_size)
      fail(ErrorKind::usage, "output buffer must hold exactly vocab-size values");
    if (context == nullptr && context_len > 0) fail(ErrorKind::usage, "context must not be NULL");
    const std::vector<double> dist =
        next_word_dist(m, std::span<const TokenId>(context == nullptr ? nullptr : context, context_len));
    std::copy(dist.begin(), dist.end(), out);
  });
}

void stemlm_model_free(stemlm_model* model) { delete model; }

stemlm_status stemlm_evaluate(const stemlm_model* p, const stemlm_model* q, const stemlm_stem_map* stems,
                              const stemlm_corpus* corpus, const stemlm_corpus* train_corpus, const char* options_json,
                              char** out_report_json) {
  return guard([&] {
    need_out(out_report_json);
    LanguageModel& word_model = need(p, "model").model();
    const Vocabulary& vocab = word_model.vocabulary();
    const nlohmann::json options = parse_json(options_json, "eval options");

    EvalReport report;
    bool want_slice = false;
    std::size_t min_types = 10;
    std::size_t min_tokens = 500;
    nlohmann::json flags = nlohmann::json::object();
    for (const auto& [key, value] : options.items()) {
      if (key == "slice_diverse_stems") want_slice = value.get<bool>();
      else if (key == "slice_min_types") min_types = value.get<std::size_t>();
      else if (key == "slice_min_tokens") min_tokens = value.get<std::size_t>();
      else if (key == "model_id") report.model_id = value.get<std::string>();
      else if (key == "split") report.split = value.get<std::string>();
      else flags[key] = value;
    }
    from_json(flags, report.options);
    if (stems) check_map_vocab(*stems, vocab);

    const EncodedCorpus ids = encode(need(corpus, "corpus").corpus, vocab);
    std::vector<TokenScore> scores;
    if (q != nullptr) {
      LanguageModel& stem_model = q->model();
      if (stem_model.vocabulary().fingerprint() != vocab.fingerprint())
        fail(ErrorKind::data, "word and stem models were trained on different vocabularies");
      if (stems == nullptr) fail(ErrorKind::usage, "Mix-WS evaluation needs a stem map");
      scores = score_tokens_mixws(word_model, stem_model, stems->map, ids);
      if (report.model_id.empty()) report.model_id = "mix-ws";
    } else if (word_model.config().variant == Variant::mix_stem) {
      if (stems == nullptr) fail(ErrorKind::usage, "a stem-target model is evaluated against a stem map");
      scores = score_tokens(word_model, ids, 64, stems->map.stems());
    } else {
      scores = score_tokens(word_model, ids);
    }
    if (report.model_id.empty()) report.model_id = to_string(word_model.config().variant);
    if (report.split.empty()) report.split = "eval";
    const PerplexityResult full = perplexity(scores, report.options);
    report.perplexity = full.perplexity;
    report.token_count = full.token_count;

    if (want_slice) {
      if (stems == nullptr || train_corpus == nullptr)
        fail(ErrorKind::usage, "slice evaluation needs a stem map and the training corpus");
      const EncodedCorpus train_ids = encode(train_corpus->corpus, vocab);
      const std::vector<TokenId> stem_set =
          select_diverse_stems(stems->map, token_counts(train_ids, vocab.size()), min_types, min_tokens);
      if (stem_set.empty()) fail(ErrorKind::data, "no stem meets the slice thresholds");
      report.slice = slice_perplexity(scores, stem_set, stems->map, report.options);
    }
    *out_report_json = copy_string(report.to_json().dump());
  });
}

stemlm_status stemlm_mixws_compose(const double* p, const double* q, const int32_t* stem_of, size_t n, double* out) {
  return guard([&] {
    if (n == 0) fail(ErrorKind::usage, "empty distribution");
    if (!p || !q || !stem_of || !out) fail(ErrorKind::usage, "arguments must not be NULL");
    const std::vector<double> r = mixws_compose({p, n}, {q, n}, {stem_of, n});
    std::copy(r.begin(), r.end(), out);
  });
}

stemlm_status stemlm_experiment_run(const char* config_json, const char* out_dir, stemlm_progress_fn progress,
                                    void* user, char** out_report_json) {
  return guard([&] {
    if (out_report_json) *out_report_json = nullptr;
    ExperimentConfig config;
    from_json(parse_json(config_json, "experiment config"), config);
    ProgressFn fn;
    if (progress) fn = [&](const std::string& msg) { progress(msg.c_str(), user); };
    const ExperimentResult result = run_experiment(config, fn);
    if (out_dir) write_experiment(result, out_dir);
    if (out_report_json) *out_report_json = copy_string(result.report.dump(2));
  });
}

}  // extern "C"
