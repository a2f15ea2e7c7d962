#include "stemlm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "stemlm/error.hpp"
#include "stemlm/random.hpp"
#include "stemlm/train.hpp"

namespace stemlm {

namespace stem {

void to_json(nlohmann::json& j, const StemmerParams& p) {
  j = nlohmann::json{{"max_suffix_len", p.max_suffix_len}, {"max_prefix_len", p.max_prefix_len}};
  j["delta_suffix"] = p.delta_suffix ? nlohmann::json(*p.delta_suffix) : nlohmann::json(nullptr);
  j["delta_prefix"] = p.delta_prefix ? nlohmann::json(*p.delta_prefix) : nlohmann::json(nullptr);
  j["target_suffix_count"] = p.target_suffix_count ? nlohmann::json(*p.target_suffix_count) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, StemmerParams& p) {
  if (!j.is_object()) fail(ErrorKind::usage, "stemmer parameters must be a JSON object");
  auto optional = [](const nlohmann::json& v) -> std::optional<std::size_t> {
    if (v.is_null()) return std::nullopt;
    return v.get<std::size_t>();
  };
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "delta_suffix") p.delta_suffix = optional(value);
      else if (key == "delta_prefix") p.delta_prefix = optional(value);
      else if (key == "target_suffix_count") p.target_suffix_count = optional(value);
      else if (key == "max_suffix_len") p.max_suffix_len = value.get<std::size_t>();
      else if (key == "max_prefix_len") p.max_prefix_len = value.get<std::size_t>();
      else fail(ErrorKind::usage, "unknown stemmer parameter '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("stemmer parameters: ") + e.what());
  }
}

}  // namespace stem

namespace {

const std::vector<std::string> kKnownVariants = {"base", "mtl-w", "mtl-s", "mtl-s2w", "mix-w", "mix-stem", "mix-ws"};

}  // namespace

std::uint64_t stem_model_seed(std::uint64_t seed) { return splitmix64(seed); }

void ExperimentConfig::validate() const {
  if (datasets.empty()) fail(ErrorKind::usage, "experiment needs at least one dataset");
  std::set<std::string> names;
  for (const auto& d : datasets) {
    if (d.name.empty()) fail(ErrorKind::usage, "dataset name must not be empty");
    if (!names.insert(d.name).second) fail(ErrorKind::usage, "duplicate dataset name '" + d.name + "'");
    for (const auto* p : {&d.train, &d.dev, &d.test})
      if (!std::filesystem::exists(*p)) fail(ErrorKind::usage, "no such file: " + p->string());
    if (d.stem_map && !std::filesystem::exists(*d.stem_map))
      fail(ErrorKind::usage, "no such file: " + d.stem_map->string());
  }
  if (variants.empty()) fail(ErrorKind::usage, "experiment needs at least one variant");
  std::set<std::string> seen;
  for (const auto& v : variants) {
    if (std::find(kKnownVariants.begin(), kKnownVariants.end(), v) == kKnownVariants.end())
      fail(ErrorKind::usage, "unknown variant '" + v + "'");
    if (!seen.insert(v).second) fail(ErrorKind::usage, "duplicate variant '" + v + "'");
  }
  if (control && !seen.count("mix-ws")) fail(ErrorKind::usage, "the control arm requires the mix-ws variant");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size() || seeds.size() < 2)
    fail(ErrorKind::usage, "experiment needs at least two distinct seeds");
  if (jobs == 0) fail(ErrorKind::usage, "jobs must be positive");
  for (const auto& v : variants) {
    if (v == "mix-ws") continue;
    ModelConfig m = model;
    m.variant = variant_from_string(v);
    m.vocab_size = std::max<std::size_t>(m.vocab_size, 3);  // set per dataset later
    m.validate();
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& d : c.datasets) {
    nlohmann::json e{{"name", d.name}, {"train", d.train.string()}, {"dev", d.dev.string()}, {"test", d.test.string()}};
    if (d.stem_map) e["stem_map"] = d.stem_map->string();
    datasets.push_back(e);
  }
  nlohmann::json model = c.model;
  model.erase("variant");
  model.erase("seed");
  model.erase("vocab_size");
  j = nlohmann::json{{"datasets", datasets},
                     {"model", model},
                     {"stemmer", c.stemmer},
                     {"eval",
                      {{"include_unk", c.eval.include_unk},
                       {"include_eos", c.eval.include_eos},
                       {"slice_diverse_stems", c.slice_diverse_stems},
                       {"slice_min_types", c.slice_min_types},
                       {"slice_min_tokens", c.slice_min_tokens}}},
                     {"seeds", c.seeds},
                     {"variants", c.variants},
                     {"control", c.control},
                     {"shuffle_seed", c.shuffle_seed},
                     {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) fail(ErrorKind::usage, "experiment config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "datasets") {
        c.datasets.clear();
        for (const auto& d : value) {
          DatasetSpec spec;
          for (const auto& [dk, dv] : d.items()) {
            if (dk == "name") spec.name = dv.get<std::string>();
            else if (dk == "train") spec.train = dv.get<std::string>();
            else if (dk == "dev") spec.dev = dv.get<std::string>();
            else if (dk == "test") spec.test = dv.get<std::string>();
            else if (dk == "stem_map") {
              if (!dv.is_null()) spec.stem_map = dv.get<std::string>();
            } else fail(ErrorKind::usage, "unknown dataset field '" + dk + "'");
          }
          if (spec.train.empty() || spec.dev.empty() || spec.test.empty())
            fail(ErrorKind::usage, "dataset '" + spec.name + "' needs train, dev and test paths");
          c.datasets.push_back(std::move(spec));
        }
      } else if (key == "model") {
        from_json(value, c.model);
      } else if (key == "stemmer") {
        stem::from_json(value, c.stemmer);
      } else if (key == "eval") {
        nlohmann::json flags = nlohmann::json::object();
        for (const auto& [ek, ev] : value.items()) {
          if (ek == "slice_diverse_stems") c.slice_diverse_stems = ev.get<bool>();
          else if (ek == "slice_min_types") c.slice_min_types = ev.get<std::size_t>();
          else if (ek == "slice_min_tokens") c.slice_min_tokens = ev.get<std::size_t>();
          else flags[ek] = ev;
        }
        from_json(flags, c.eval);
      } else if (key == "seeds") {
        c.seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "variants") {
        c.variants = value.get<std::vector<std::string>>();
      } else if (key == "control") {
        c.control = value.get<bool>();
      } else if (key == "shuffle_seed") {
        c.shuffle_seed = value.get<std::uint64_t>();
      } else if (key == "jobs") {
        c.jobs = value.get<std::size_t>();
      } else {
        fail(ErrorKind::usage, "unknown experiment config field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("experiment config: ") + e.what());
  }
}

namespace {

struct RunOutcome {
  double dev_ppl = 0.0;
  double test_ppl = 0.0;
  std::optional<SliceResult> slice;
  std::vector<EpochRecord> log;
};

struct DatasetData {
  std::shared_ptr<const Vocabulary> vocab;
  EncodedCorpus train, dev, test;
  stem::StemMap stems;
  stem::StemMap shuffled;
  std::vector<TokenId> slice_stems;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  config.validate();
  std::mutex progress_mutex;
  auto say = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(progress_mutex);
    progress(msg);
  };
  auto listed = [&](const std::string& v) {
    return std::find(config.variants.begin(), config.variants.end(), v) != config.variants.end();
  };
  std::vector<std::string> arms = config.variants;
  if (config.control) arms.push_back(kShuffledArm);

  ExperimentResult result;
  nlohmann::json report;
  report["config"] = config;
  report["datasets"] = nlohmann::json::array();
  std::ostringstream long_tsv;
  long_tsv << "dataset\tmodel\tseed\tsplit\tperplexity\n";
  std::map<std::string, std::map<std::string, std::string>> cells;  // arm -> dataset -> cell

  for (const DatasetSpec& spec : config.datasets) {
    say("dataset " + spec.name + ": loading");
    const TokenizedCorpus train_text = read_corpus(spec.train);
    const TokenizedCorpus dev_text = read_corpus(spec.dev);
    const TokenizedCorpus test_text = read_corpus(spec.test);
    DatasetData data;
    data.vocab = std::make_shared<const Vocabulary>(Vocabulary::build(train_text));
    const Vocabulary& vocab = *data.vocab;
    data.train = encode(train_text, vocab);
    data.dev = encode(dev_text, vocab);
    data.test = encode(test_text, vocab);

    nlohmann::json stemmer_json;
    if (spec.stem_map) {
      data.stems = stem::load_stem_map(*spec.stem_map, vocab);
      stemmer_json["source"] = spec.stem_map->string();
    } else {
      const stem::StemmerResult mined = stem::identify_stems(vocab, config.stemmer);
      data.stems = mined.map;
      stemmer_json["source"] = "mined";
      stemmer_json["delta_suffix"] = mined.suffix_rules.threshold;
      stemmer_json["delta_prefix"] = mined.prefix_rules.threshold;
      stemmer_json["suffix_rules"] = mined.suffix_rules.size();
      stemmer_json["prefix_rules"] = mined.prefix_rules.size();
      result.files[spec.name + "/rules.tsv"] = stem::format_rules(mined.prefix_rules) + stem::format_rules(mined.suffix_rules);
    }
    stemmer_json["stem_count"] = data.stems.stem_set().size();
    result.files[spec.name + "/stem_map.tsv"] = stem::format_stem_map(data.stems, vocab);
    if (config.control) data.shuffled = stem::shuffle_stem_map(data.stems, config.shuffle_seed);

    const std::vector<std::size_t> train_counts = token_counts(data.train, vocab.size());
    std::vector<std::size_t> stem_counts(vocab.size(), 0);
    for (std::size_t w = 0; w < vocab.size(); ++w)
      stem_counts[static_cast<std::size_t>(data.stems.stems()[w])] += train_counts[w];
    auto stem_ids = [&](const EncodedCorpus& c) { return stem_targets(c.ids, data.stems.stems()); };
    nlohmann::json baselines{
        {"uniform", static_cast<double>(vocab.size())},
        {"unigram_dev", unigram_perplexity(train_counts, data.dev.ids, config.eval, vocab.unk_id(), vocab.eos_id())},
        {"unigram_test", unigram_perplexity(train_counts, data.test.ids, config.eval, vocab.unk_id(), vocab.eos_id())},
        {"unigram_dev_stems",
         unigram_perplexity(stem_counts, stem_ids(data.dev), config.eval, vocab.unk_id(), vocab.eos_id())},
        {"unigram_test_stems",
         unigram_perplexity(stem_counts, stem_ids(data.test), config.eval, vocab.unk_id(), vocab.eos_id())}};

    if (config.slice_diverse_stems)
      data.slice_stems =
          select_diverse_stems(data.stems, train_counts, config.slice_min_types, config.slice_min_tokens);

    // One slot per seed; filled by whichever worker runs that seed.
    std::map<std::uint64_t, std::map<std::string, RunOutcome>> outcomes;
    for (std::uint64_t s : config.seeds) outcomes[s];

    auto run_seed = [&](std::uint64_t seed) -> double {
      std::map<std::string, RunOutcome>& slot = outcomes.at(seed);
      std::map<std::string, std::unique_ptr<LanguageModel>> models;
      auto fit = [&](const std::string& name, Variant variant, std::uint64_t model_seed, const stem::StemMap& stems) {
        say(spec.name + " seed " + std::to_string(seed) + ": training " + name);
        ModelConfig mc = config.model;
        mc.variant = variant;
        mc.seed = model_seed;
        mc.vocab_size = vocab.size();
        TrainResult tr = train(mc, data.vocab, data.train, data.dev, &stems);
        slot[name].log = std::move(tr.log);
        models[name] = std::move(tr.checkpoint.model);
      };
      auto finish = [&](const std::string& name, const std::vector<TokenScore>& dev_scores,
                        const std::vector<TokenScore>& test_scores, bool slice) {
        RunOutcome& o = slot[name];
        o.dev_ppl = perplexity(dev_scores, config.eval).perplexity;
        o.test_ppl = perplexity(test_scores, config.eval).perplexity;
        if (slice && !data.slice_stems.empty())
          o.slice = slice_perplexity(test_scores, data.slice_stems, data.stems, config.eval);
      };

      for (const char* name : {"base", "mtl-w", "mtl-s", "mtl-s2w", "mix-w"}) {
        if (!listed(name) && !(std::string(name) == "mix-w" && listed("mix-ws"))) continue;
        fit(name, variant_from_string(name), seed, data.stems);
        if (!listed(name)) continue;
        LanguageModel& m = *models.at(name);
        finish(name, score_tokens(m, data.dev), score_tokens(m, data.test), true);
      }
      if (listed("mix-stem") || listed("mix-ws")) {
        fit("mix-stem", Variant::mix_stem, stem_model_seed(seed), data.stems);
        if (listed("mix-stem")) {
          LanguageModel& m = *models.at("mix-stem");
          finish("mix-stem", score_tokens(m, data.dev, 64, data.stems.stems()),
                 score_tokens(m, data.test, 64, data.stems.stems()), false);
        }
      }
      if (listed("mix-ws")) {
        LanguageModel& p = *models.at("mix-w");
        LanguageModel& q = *models.at("mix-stem");
        finish("mix-ws", score_tokens_mixws(p, q, data.stems, data.dev),
               score_tokens_mixws(p, q, data.stems, data.test), true);
      }
      if (config.control) {
        fit("mix-stem-shuffled", Variant::mix_stem, stem_model_seed(seed), data.shuffled);
        LanguageModel& p = *models.at("mix-w");
        LanguageModel& q = *models.at("mix-stem-shuffled");
        finish(kShuffledArm, score_tokens_mixws(p, q, data.shuffled, data.dev),
               score_tokens_mixws(p, q, data.shuffled, data.test), false);
        slot[kShuffledArm].log = std::move(slot["mix-stem-shuffled"].log);
        slot.erase("mix-stem-shuffled");
      }
      // Logs of helper models that were not requested are not reported.
      for (auto it = slot.begin(); it != slot.end();)
        it = std::find(arms.begin(), arms.end(), it->first) == arms.end() ? slot.erase(it) : std::next(it);
      return 0.0;
    };
    multi_seed_run(config.seeds, run_seed, config.jobs);

    nlohmann::json runs = nlohmann::json::array();
    nlohmann::json aggregates = nlohmann::json::object();
    for (const std::string& arm : arms) {
      std::vector<std::uint64_t> seeds;
      std::vector<double> dev, test;
      for (const auto& [seed, slot] : outcomes) {
        const RunOutcome& o = slot.at(arm);
        seeds.push_back(seed);
        dev.push_back(o.dev_ppl);
        test.push_back(o.test_ppl);
        nlohmann::json run{{"model", arm}, {"seed", seed}, {"dev_ppl", o.dev_ppl}, {"test_ppl", o.test_ppl}};
        if (o.slice)
          run["slice"] = {{"stem_set_size", o.slice->stem_set_size},
                          {"slice_token_count", o.slice->slice_token_count},
                          {"slice_perplexity", o.slice->slice_perplexity}};
        nlohmann::json log = nlohmann::json::array();
        for (const auto& rec : o.log) log.push_back(rec.to_json());
        run["log"] = log;
        runs.push_back(run);
        long_tsv << spec.name << '\t' << arm << '\t' << seed << "\tdev\t" << fmt(o.dev_ppl) << '\n';
        long_tsv << spec.name << '\t' << arm << '\t' << seed << "\ttest\t" << fmt(o.test_ppl) << '\n';
      }
      const SeedAggregate dev_agg = aggregate(seeds, dev);
      const SeedAggregate test_agg = aggregate(seeds, test);
      aggregates[arm] = {{"dev", dev_agg.to_json()}, {"test", test_agg.to_json()}};
      cells[arm][spec.name] = test_agg.cell();
    }

    nlohmann::json entry{{"name", spec.name},
                         {"vocab_size", vocab.size()},
                         {"stats",
                          {{"dev", nlohmann::json::parse(corpus_stats(train_text, dev_text, vocab).to_json())},
                           {"test", nlohmann::json::parse(corpus_stats(train_text, test_text, vocab).to_json())}}},
                         {"stemmer", stemmer_json},
                         {"baselines", baselines},
                         {"runs", runs},
                         {"aggregates", aggregates}};
    if (config.slice_diverse_stems) entry["slice_stems"] = data.slice_stems.size();
    if (config.control)
      entry["control"] = {{"true_stems", aggregates["mix-ws"]["test"]},
                          {"shuffled_stems", aggregates[kShuffledArm]["test"]},
                          {"shuffle_seed", config.shuffle_seed}};
    report["datasets"].push_back(entry);
  }

  std::ostringstream table;
  table << "model";
  for (const auto& d : config.datasets) table << '\t' << d.name;
  table << '\n';
  for (const std::string& arm : arms) {
    table << arm;
    for (const auto& d : config.datasets) table << '\t' << cells[arm][d.name];
    table << '\n';
  }
  result.report = std::move(report);
  result.table_tsv = table.str();
  result.long_tsv = long_tsv.str();
  return result;
}

void write_experiment(const ExperimentResult& result, const std::filesystem::path& dir) {
  auto write = [&](const std::filesystem::path& rel, const std::string& content) {
    const auto path = dir / rel;
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::usage, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::usage, "cannot write " + path.string());
    f << content;
    if (!f) fail(ErrorKind::data, "failed writing " + path.string());
  };
  write("report.json", result.report.dump(2) + "\n");
  write("table.tsv", result.table_tsv);
  write("long.tsv", result.long_tsv);
  for (const auto& [rel, content] : result.files) write(rel, content);
}

}  // namespace stemlm
