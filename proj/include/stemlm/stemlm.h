/* C interface to the stemlm library.
 *
 * Every function that can fail returns a stemlm_status. On failure the
 * message is available from stemlm_last_error() on the same thread until the
 * next call into the library. Strings returned through char** are owned by
 * the caller and released with stemlm_string_free(). Handles are opaque and
 * released with their matching *_free function (passing NULL is a no-op).
 */
#ifndef STEMLM_STEMLM_H
#define STEMLM_STEMLM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(STEMLM_BUILDING_LIBRARY)
#    define STEMLM_API __declspec(dllexport)
#  else
#    define STEMLM_API __declspec(dllimport)
#  endif
#else
#  define STEMLM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum stemlm_status {
  STEMLM_OK = 0,
  STEMLM_ERR_USAGE = 2,     /* bad argument or configuration, missing file */
  STEMLM_ERR_DATA = 3,      /* malformed data, vocabulary mismatch, corrupt checkpoint */
  STEMLM_ERR_NUMERIC = 4,   /* shape mismatch, non-finite value */
  STEMLM_ERR_INVARIANT = 5, /* internal consistency check failed */
  STEMLM_ERR_INTERNAL = 6   /* anything else (allocation failure, I/O) */
} stemlm_status;

typedef struct stemlm_corpus stemlm_corpus;
typedef struct stemlm_vocab stemlm_vocab;
typedef struct stemlm_stem_map stemlm_stem_map;
typedef struct stemlm_model stemlm_model;

typedef void (*stemlm_progress_fn)(const char* message, void* user);

STEMLM_API const char* stemlm_version(void);
STEMLM_API const char* stemlm_last_error(void);
STEMLM_API const char* stemlm_status_name(stemlm_status status);
STEMLM_API void stemlm_string_free(char* s);

/* Corpora: whitespace-tokenized UTF-8, one sentence per line. */
STEMLM_API stemlm_status stemlm_corpus_load(const char* path, stemlm_corpus** out);
STEMLM_API stemlm_status stemlm_corpus_from_text(const char* text, size_t len, stemlm_corpus** out);
STEMLM_API size_t stemlm_corpus_line_count(const stemlm_corpus* corpus);
/* Word tokens, sentence ends excluded. */
STEMLM_API size_t stemlm_corpus_token_count(const stemlm_corpus* corpus);
STEMLM_API void stemlm_corpus_free(stemlm_corpus* corpus);

/* Vocabularies: ids 0 and 1 are <unk> and </s>. */
STEMLM_API stemlm_status stemlm_vocab_build(const stemlm_corpus* train, stemlm_vocab** out);
STEMLM_API size_t stemlm_vocab_size(const stemlm_vocab* vocab);
/* Out-of-vocabulary tokens map to 0. */
STEMLM_API stemlm_status stemlm_vocab_id(const stemlm_vocab* vocab, const char* token, int32_t* out);
/* The returned pointer stays valid while the vocabulary lives. */
STEMLM_API stemlm_status stemlm_vocab_token(const stemlm_vocab* vocab, int32_t id, const char** out);
STEMLM_API void stemlm_vocab_free(stemlm_vocab* vocab);

/* {token_count, type_count, type_token_ratio, oov_rate} of eval against vocab. */
STEMLM_API stemlm_status stemlm_stats_json(const stemlm_corpus* train, const stemlm_corpus* eval,
                                           const stemlm_vocab* vocab, char** out_json);

/* Stem maps. params_json holds delta_suffix, delta_prefix, max_suffix_len,
 * max_prefix_len, target_suffix_count (all optional; NULL means defaults).
 * rules_tsv may be NULL. */
STEMLM_API stemlm_status stemlm_stem_map_mine(const stemlm_vocab* vocab, const char* params_json,
                                              stemlm_stem_map** out, char** rules_tsv);
STEMLM_API stemlm_status stemlm_stem_map_identity(const stemlm_vocab* vocab, stemlm_stem_map** out);
STEMLM_API stemlm_status stemlm_stem_map_load(const stemlm_vocab* vocab, const char* path, stemlm_stem_map** out);
STEMLM_API stemlm_status stemlm_stem_map_save(const stemlm_stem_map* map, const stemlm_vocab* vocab, const char* path);
STEMLM_API stemlm_status stemlm_stem_map_format(const stemlm_stem_map* map, const stemlm_vocab* vocab, char** out_tsv);
STEMLM_API stemlm_status stemlm_stem_map_shuffle(const stemlm_stem_map* map, uint64_t seed, stemlm_stem_map** out);
STEMLM_API size_t stemlm_stem_map_size(const stemlm_stem_map* map);
STEMLM_API stemlm_status stemlm_stem_map_lookup(const stemlm_stem_map* map, int32_t word, int32_t* out_stem);
STEMLM_API void stemlm_stem_map_free(stemlm_stem_map* map);

/* Writes train.txt, dev.txt, test.txt, gold_stems.tsv and params.json. */
STEMLM_API stemlm_status stemlm_synth_generate(const char* params_json, const char* out_dir);

/* Models. config_json holds model configuration fields (vocab_size is taken
 * from vocab). stems may be NULL for variants that do not need one. When
 * log_path is not NULL, one JSON record per epoch is written there. */
STEMLM_API stemlm_status stemlm_model_train(const char* config_json, const stemlm_vocab* vocab,
                                            const stemlm_corpus* train, const stemlm_corpus* dev,
                                            const stemlm_stem_map* stems, const char* log_path,
                                            stemlm_model** out);
STEMLM_API stemlm_status stemlm_model_save(const stemlm_model* model, const char* path);
STEMLM_API stemlm_status stemlm_model_load(const char* path, stemlm_model** out);
STEMLM_API stemlm_status stemlm_model_config_json(const stemlm_model* model, char** out_json);
/* A new vocabulary handle equal to the model's. */
STEMLM_API stemlm_status stemlm_model_vocab(const stemlm_model* model, stemlm_vocab** out);
/* Distribution of the token after eos + context; out must hold vocab-size doubles. */
STEMLM_API stemlm_status stemlm_model_next_word_dist(const stemlm_model* model, const int32_t* context,
                                                     size_t context_len, double* out, size_t out_len);
STEMLM_API void stemlm_model_free(stemlm_model* model);

/* Perplexity report for `corpus`. With q == NULL the word model p is
 * evaluated alone; otherwise p (word mixture) and q (stem mixture) are
 * composed through `stems`. options_json: {include_unk, include_eos,
 * slice_diverse_stems, slice_min_types, slice_min_tokens, model_id, split};
 * slicing needs stems and the training corpus. */
STEMLM_API stemlm_status stemlm_evaluate(const stemlm_model* p, const stemlm_model* q, const stemlm_stem_map* stems,
                                         const stemlm_corpus* corpus, const stemlm_corpus* train,
                                         const char* options_json, char** out_report_json);

/* r(w) * q'_{stem(w)} for probability vectors p and q of length n. */
STEMLM_API stemlm_status stemlm_mixws_compose(const double* p, const double* q, const int32_t* stem_of, size_t n,
                                              double* out);

/* Multi-seed sweep. out_dir may be NULL; progress may be NULL. */
STEMLM_API stemlm_status stemlm_experiment_run(const char* config_json, const char* out_dir,
                                               stemlm_progress_fn progress, void* user, char** out_report_json);

#ifdef __cplusplus
}
#endif

#endif /* STEMLM_STEMLM_H */
