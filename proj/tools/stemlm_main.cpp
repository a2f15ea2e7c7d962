// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stemlm/stemlm.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kRuntime = 3 };

struct CliError {
  int exit_code;
  std::string code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& message) { throw CliError{kUsage, "usage", message}; }

void check(stemlm_status status) {
  if (status == STEMLM_OK) return;
  throw CliError{status == STEMLM_ERR_USAGE ? kUsage : kRuntime, stemlm_status_name(status), stemlm_last_error()};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Corpus = Handle<stemlm_corpus, stemlm_corpus_free>;
using Vocab = Handle<stemlm_vocab, stemlm_vocab_free>;
using StemMap = Handle<stemlm_stem_map, stemlm_stem_map_free>;
using Model = Handle<stemlm_model, stemlm_model_free>;

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { stemlm_string_free(ptr); }
  char** out() { return &ptr; }
  std::string str() const { return ptr ? std::string(ptr) : std::string(); }
};

json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) usage_error("cannot read config file " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    usage_error("config file " + path + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) usage_error("cannot create directory " + path.parent_path().string());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) usage_error("cannot write " + path.string());
  f << text;
  if (!f) throw CliError{kRuntime, "data", "failed writing " + path.string()};
}

void load_corpus(const std::string& path, Corpus& c) { check(stemlm_corpus_load(path.c_str(), c.out())); }

// Config file section, overlaid with whatever flags were given.
json section(const json& config, const char* name) {
  return config.contains(name) ? config.at(name) : json::object();
}

std::string pick_path(const std::string& flag, const json& config, const char* key) {
  if (!flag.empty()) return flag;
  if (config.contains(key) && config.at(key).is_string()) return config.at(key).get<std::string>();
  return {};
}

std::string require_path(const std::string& flag, const json& config, const char* key, const char* option) {
  std::string p = pick_path(flag, config, key);
  if (p.empty()) usage_error(std::string("missing ") + option);
  return p;
}

void set_if(json& j, const char* key, const std::optional<std::size_t>& v) {
  if (v) j[key] = *v;
}
void set_if(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

struct Common {
  std::string config_path;
  json config = json::object();
  void load() {
    if (!config_path.empty()) config = read_json_file(config_path);
    if (!config.is_object()) usage_error("config file must hold a JSON object");
  }
};

// ---------------------------------------------------------------- stats
struct StatsArgs {
  Common common;
  std::string train, eval, out;
};

int cmd_stats(StatsArgs& a) {
  a.common.load();
  Corpus train, eval;
  load_corpus(require_path(a.train, a.common.config, "train", "--train"), train);
  load_corpus(require_path(a.eval, a.common.config, "test", "--eval"), eval);
  Vocab vocab;
  check(stemlm_vocab_build(train.get(), vocab.out()));
  OwnedString stats;
  check(stemlm_stats_json(train.get(), eval.get(), vocab.get(), stats.out()));
  const std::string text = json::parse(stats.str()).dump(2) + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    write_text(a.out, text);
  return kOk;
}

// ---------------------------------------------------------------- stem
struct StemArgs {
  Common common;
  std::string train, out;
  std::optional<std::size_t> delta_suffix, delta_prefix, max_suffix_len, max_prefix_len, target_suffix_count;
};

int cmd_stem(StemArgs& a) {
  a.common.load();
  Corpus train;
  load_corpus(require_path(a.train, a.common.config, "train", "--train"), train);
  if (a.out.empty()) usage_error("missing --out");
  json params = section(a.common.config, "stemmer");
  set_if(params, "delta_suffix", a.delta_suffix);
  set_if(params, "delta_prefix", a.delta_prefix);
  set_if(params, "max_suffix_len", a.max_suffix_len);
  set_if(params, "max_prefix_len", a.max_prefix_len);
  set_if(params, "target_suffix_count", a.target_suffix_count);
  Vocab vocab;
  check(stemlm_vocab_build(train.get(), vocab.out()));
  StemMap map;
  OwnedString rules;
  check(stemlm_stem_map_mine(vocab.get(), params.dump().c_str(), map.out(), rules.out()));
  OwnedString tsv;
  check(stemlm_stem_map_format(map.get(), vocab.get(), tsv.out()));
  write_text(fs::path(a.out) / "stem_map.tsv", tsv.str());
  write_text(fs::path(a.out) / "rules.tsv", rules.str());
  return kOk;
}

// ---------------------------------------------------------------- synth
struct SynthArgs {
  Common common;
  std::string out;
  std::optional<std::size_t> seed, stems, suffixes, train_tokens, dev_tokens, test_tokens;
  std::optional<double> zipf_exponent;
};

int cmd_synth(SynthArgs& a) {
  a.common.load();
  json params = a.common.config.contains("synth") ? a.common.config.at("synth") : a.common.config;
  set_if(params, "seed", a.seed);
  set_if(params, "stems", a.stems);
  set_if(params, "suffixes", a.suffixes);
  set_if(params, "train_tokens", a.train_tokens);
  set_if(params, "dev_tokens", a.dev_tokens);
  set_if(params, "test_tokens", a.test_tokens);
  set_if(params, "zipf_exponent", a.zipf_exponent);
  if (a.out.empty()) usage_error("missing --out");
  check(stemlm_synth_generate(params.dump().c_str(), a.out.c_str()));
  return kOk;
}

// ---------------------------------------------------------------- train
struct TrainArgs {
  Common common;
  std::string train, dev, stem_map, variant, out;
  std::optional<std::size_t> seed, epochs;
  std::optional<double> learning_rate;
};

int cmd_train(TrainArgs& a) {
  a.common.load();
  const json& cfg = a.common.config;
  json model = section(cfg, "model");
  if (!a.variant.empty()) model["variant"] = a.variant;
  if (a.seed)
    model["seed"] = *a.seed;
  else if (!model.contains("seed") && cfg.contains("seeds") && cfg.at("seeds").is_array() && !cfg.at("seeds").empty())
    model["seed"] = cfg.at("seeds").at(0);
  set_if(model, "epochs", a.epochs);
  set_if(model, "learning_rate", a.learning_rate);
  if (a.out.empty()) usage_error("missing --out");

  Corpus train, dev;
  load_corpus(require_path(a.train, cfg, "train", "--train"), train);
  load_corpus(require_path(a.dev, cfg, "dev", "--dev"), dev);
  Vocab vocab;
  check(stemlm_vocab_build(train.get(), vocab.out()));
  StemMap stems;
  const std::string stem_path = pick_path(a.stem_map, cfg, "stem_map");
  if (!stem_path.empty()) check(stemlm_stem_map_load(vocab.get(), stem_path.c_str(), stems.out()));

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) usage_error("cannot create directory " + a.out);
  const std::string log_path = (fs::path(a.out) / "train_log.jsonl").string();
  Model trained;
  check(stemlm_model_train(model.dump().c_str(), vocab.get(), train.get(), dev.get(), stems.get(), log_path.c_str(),
                           trained.out()));
  check(stemlm_model_save(trained.get(), (fs::path(a.out) / "model.ckpt").string().c_str()));
  return kOk;
}

// ---------------------------------------------------------------- eval
struct EvalArgs {
  Common common;
  std::string checkpoint, stem_checkpoint, test, train, stem_map, mode = "auto", out, split;
  bool slice = false;
  std::optional<bool> include_unk, include_eos;
};

int cmd_eval(EvalArgs& a) {
  a.common.load();
  const json& cfg = a.common.config;
  Model p;
  check(stemlm_model_load(require_path(a.checkpoint, cfg, "checkpoint", "--checkpoint").c_str(), p.out()));
  Model q;
  const std::string q_path = pick_path(a.stem_checkpoint, cfg, "stem_checkpoint");
  std::string mode = a.mode;
  if (mode == "auto") mode = q_path.empty() ? "word" : "mix-ws";
  if (mode == "mix-ws") {
    if (q_path.empty()) usage_error("--mode mix-ws needs --stem-checkpoint");
    check(stemlm_model_load(q_path.c_str(), q.out()));
  } else if (mode != "word") {
    usage_error("--mode must be word, mix-ws or auto");
  }

  Vocab vocab;
  check(stemlm_model_vocab(p.get(), vocab.out()));
  Corpus test, train;
  load_corpus(require_path(a.test, cfg, "test", "--test"), test);
  StemMap stems;
  const std::string stem_path = pick_path(a.stem_map, cfg, "stem_map");
  if (!stem_path.empty()) check(stemlm_stem_map_load(vocab.get(), stem_path.c_str(), stems.out()));

  json options = json::object();
  const json eval_cfg = section(cfg, "eval");
  for (const char* key : {"include_unk", "include_eos", "slice_diverse_stems", "slice_min_types", "slice_min_tokens"})
    if (eval_cfg.contains(key)) options[key] = eval_cfg.at(key);
  if (a.include_unk) options["include_unk"] = *a.include_unk;
  if (a.include_eos) options["include_eos"] = *a.include_eos;
  if (a.slice) options["slice_diverse_stems"] = true;
  if (!a.split.empty()) options["split"] = a.split;
  if (options.value("slice_diverse_stems", false))
    load_corpus(require_path(a.train, cfg, "train", "--train (needed for slicing)"), train);

  OwnedString report;
  check(stemlm_evaluate(p.get(), q.get(), stems.get(), test.get(), train.get(), options.dump().c_str(), report.out()));
  const std::string text = json::parse(report.str()).dump(2) + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    write_text(a.out, text);
  return kOk;
}

// ---------------------------------------------------------------- experiment
struct ExperimentArgs {
  Common common;
  std::string out;
  bool control = false;
  std::optional<std::size_t> seed, jobs, epochs;
  bool quiet = false;
};

int cmd_experiment(ExperimentArgs& a) {
  if (a.common.config_path.empty()) usage_error("experiment needs --config");
  a.common.load();
  json cfg = a.common.config;
  if (a.control) cfg["control"] = true;
  if (a.jobs) cfg["jobs"] = *a.jobs;
  if (a.seed) {
    // A single base seed expands to the usual five consecutive seeds.
    std::vector<std::size_t> seeds;
    for (std::size_t i = 0; i < 5; ++i) seeds.push_back(*a.seed + i);
    cfg["seeds"] = seeds;
  }
  if (a.epochs) cfg["model"]["epochs"] = *a.epochs;
  if (a.out.empty()) usage_error("missing --out");
  auto progress = [](const char* msg, void*) { std::fprintf(stderr, "%s\n", msg); };
  OwnedString report;
  check(stemlm_experiment_run(cfg.dump().c_str(), a.out.c_str(), a.quiet ? nullptr : +progress, nullptr,
                              report.out()));
  std::ifstream table(fs::path(a.out) / "table.tsv");
  std::cout << table.rdbuf();
  return kOk;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees the same large activation buffers every
  // step; keep them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"stem-driven language modeling toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(stemlm_version()));

  auto add_config = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "JSON config file; flags override its fields");
  };

  StatsArgs stats;
  auto* s_stats = app.add_subcommand("stats", "corpus statistics as JSON");
  add_config(s_stats, stats.common);
  s_stats->add_option("--train", stats.train, "training corpus");
  s_stats->add_option("--eval", stats.eval, "evaluation corpus (for the OoV rate)");
  s_stats->add_option("--out", stats.out, "output file (default stdout)");

  StemArgs stem;
  auto* s_stem = app.add_subcommand("stem", "mine affix rules and write the stem map");
  add_config(s_stem, stem.common);
  s_stem->add_option("--train", stem.train, "training corpus");
  s_stem->add_option("--delta-suffix", stem.delta_suffix, "suffix rule support threshold");
  s_stem->add_option("--delta-prefix", stem.delta_prefix, "prefix rule support threshold");
  s_stem->add_option("--max-suffix-len", stem.max_suffix_len, "longest suffix considered");
  s_stem->add_option("--max-prefix-len", stem.max_prefix_len, "longest prefix considered");
  s_stem->add_option("--target-suffix-count", stem.target_suffix_count, "calibrate delta-suffix to this many suffixes");
  s_stem->add_option("--out", stem.out, "output directory");

  SynthArgs syn;
  auto* s_synth = app.add_subcommand("synth", "generate the synthetic stem x suffix corpus");
  add_config(s_synth, syn.common);
  s_synth->add_option("--seed", syn.seed);
  s_synth->add_option("--stems", syn.stems);
  s_synth->add_option("--suffixes", syn.suffixes);
  s_synth->add_option("--train-tokens", syn.train_tokens);
  s_synth->add_option("--dev-tokens", syn.dev_tokens);
  s_synth->add_option("--test-tokens", syn.test_tokens);
  s_synth->add_option("--zipf-exponent", syn.zipf_exponent);
  s_synth->add_option("--out", syn.out, "output directory");

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "train one model variant");
  add_config(s_train, tr.common);
  s_train->add_option("--train", tr.train, "training corpus");
  s_train->add_option("--dev", tr.dev, "development corpus");
  s_train->add_option("--stem-map", tr.stem_map, "stem map TSV (mtl-s, mtl-s2w, mix-stem)");
  s_train->add_option("--variant", tr.variant, "base|mtl-w|mtl-s|mtl-s2w|mix-w|mix-stem");
  s_train->add_option("--seed", tr.seed);
  s_train->add_option("--epochs", tr.epochs);
  s_train->add_option("--learning-rate", tr.learning_rate);
  s_train->add_option("--out", tr.out, "output directory (model.ckpt, train_log.jsonl)");

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "perplexity of a model or a Mix-WS pair");
  add_config(s_eval, ev.common);
  s_eval->add_option("--checkpoint", ev.checkpoint, "word model checkpoint");
  s_eval->add_option("--stem-checkpoint", ev.stem_checkpoint, "stem-mixture checkpoint for Mix-WS");
  s_eval->add_option("--mode", ev.mode, "word|mix-ws|auto");
  s_eval->add_option("--test", ev.test, "evaluation corpus");
  s_eval->add_option("--train", ev.train, "training corpus (for slicing)");
  s_eval->add_option("--stem-map", ev.stem_map, "stem map TSV");
  s_eval->add_option("--split", ev.split, "split label for the report");
  s_eval->add_flag("--slice-diverse-stems", ev.slice, "also report the frequent/diverse-stem slice");
  s_eval->add_option("--include-unk", ev.include_unk, "count <unk> targets (true|false)");
  s_eval->add_option("--include-eos", ev.include_eos, "count </s> targets (true|false)");
  s_eval->add_option("--out", ev.out, "output file (default stdout)");

  ExperimentArgs ex;
  auto* s_exp = app.add_subcommand("experiment", "multi-seed, multi-variant sweep");
  add_config(s_exp, ex.common);
  s_exp->add_flag("--control", ex.control, "add the shuffled-stem Mix-WS arm");
  s_exp->add_option("--seed", ex.seed, "first of five consecutive seeds");
  s_exp->add_option("--jobs", ex.jobs, "worker threads");
  s_exp->add_option("--epochs", ex.epochs);
  s_exp->add_flag("--quiet", ex.quiet, "no progress on stderr");
  s_exp->add_option("--out", ex.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kUsage;
  }

  try {
    if (s_stats->parsed()) return cmd_stats(stats);
    if (s_stem->parsed()) return cmd_stem(stem);
    if (s_synth->parsed()) return cmd_synth(syn);
    if (s_train->parsed()) return cmd_train(tr);
    if (s_eval->parsed()) return cmd_eval(ev);
    if (s_exp->parsed()) return cmd_experiment(ex);
  } catch (const CliError& e) {
    print_error(e.code, e.message);
    return e.exit_code;
  } catch (const json::exception& e) {
    print_error("usage", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kRuntime;
  }
  return kUsage;
}
