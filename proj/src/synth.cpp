#include "stemlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "stemlm/error.hpp"
#include "stemlm/random.hpp"

namespace stemlm::synth {

namespace {

// Hand-picked so no suffix is the whole of another and forms stay readable.
const std::vector<std::string> kSuffixInventory = {"",    "a",  "en",  "ista", "lla", "ko",  "t",
                                                   "ssa", "ni", "mme", "ut",   "ine", "ro", "vek"};

constexpr std::string_view kConsonants = "ktmnprsvlh";
constexpr std::string_view kVowels = "aeiou";

class Categorical {
 public:
  explicit Categorical(std::vector<double> weights) : cumulative_(weights.size()) {
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) cumulative_[i] = (total += weights[i]);
    for (double& c : cumulative_) c /= total;
  }

  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

std::vector<double> zipf_weights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
  return w;
}

std::string random_stem(Rng& rng) {
  const std::size_t syllables = 2 + rng.below(2);
  std::string s;
  for (std::size_t i = 0; i < syllables; ++i) {
    s += kConsonants[rng.below(kConsonants.size())];
    s += kVowels[rng.below(kVowels.size())];
  }
  return s;
}

std::vector<std::string> make_suffixes(std::size_t n, Rng& rng) {
  std::vector<std::string> out(kSuffixInventory.begin(),
                               kSuffixInventory.begin() + static_cast<std::ptrdiff_t>(std::min(n, kSuffixInventory.size())));
  std::set<std::string> seen(out.begin(), out.end());
  while (out.size() < n) {
    std::string s;
    s += kConsonants[rng.below(kConsonants.size())];
    s += kVowels[rng.below(kVowels.size())];
    if (rng.below(2)) s += kConsonants[rng.below(kConsonants.size())];
    if (seen.insert(s).second) out.push_back(s);
  }
  return out;
}

// Stems are unique, no stem is a prefix of another, and no two (stem, suffix)
// pairs spell the same word.
std::vector<std::string> make_stems(std::size_t n, const std::vector<std::string>& suffixes, Rng& rng) {
  std::vector<std::string> stems;
  std::set<std::string> words;
  std::size_t attempts = 0;
  while (stems.size() < n) {
    if (++attempts > 100000) fail(ErrorKind::usage, "could not generate enough distinct stems");
    const std::string s = random_stem(rng);
    const bool clash = std::any_of(stems.begin(), stems.end(), [&](const std::string& t) {
      return s.starts_with(t) || t.starts_with(s);
    });
    if (clash) continue;
    bool collide = false;
    for (const auto& suf : suffixes) collide = collide || words.count(s + suf) > 0;
    if (collide) continue;
    for (const auto& suf : suffixes) words.insert(s + suf);
    stems.push_back(s);
  }
  return stems;
}

}  // namespace

void SynthParams::validate() const {
  if (stems < 2) fail(ErrorKind::usage, "synth: stems must be at least 2");
  if (suffixes < 1) fail(ErrorKind::usage, "synth: suffixes must be at least 1");
  if (!(zipf_exponent >= 0.0) || !std::isfinite(zipf_exponent)) fail(ErrorKind::usage, "synth: bad zipf_exponent");
  if (train_tokens == 0 || dev_tokens == 0 || test_tokens == 0)
    fail(ErrorKind::usage, "synth: every split needs a positive token count");
  if (min_sentence == 0 || max_sentence < min_sentence) fail(ErrorKind::usage, "synth: bad sentence length range");
  if (successors == 0 || successors >= stems) fail(ErrorKind::usage, "synth: successors must be in [1, stems)");
  if (!(successor_weight >= 0.0 && successor_weight <= 1.0))
    fail(ErrorKind::usage, "synth: successor_weight must be in [0, 1]");
  if (!(suffix_agreement >= 0.0 && suffix_agreement <= 1.0))
    fail(ErrorKind::usage, "synth: suffix_agreement must be in [0, 1]");
}

void to_json(nlohmann::json& j, const SynthParams& p) {
  j = nlohmann::json{{"stems", p.stems},
                     {"suffixes", p.suffixes},
                     {"zipf_exponent", p.zipf_exponent},
                     {"train_tokens", p.train_tokens},
                     {"dev_tokens", p.dev_tokens},
                     {"test_tokens", p.test_tokens},
                     {"min_sentence", p.min_sentence},
                     {"max_sentence", p.max_sentence},
                     {"successors", p.successors},
                     {"successor_weight", p.successor_weight},
                     {"suffix_agreement", p.suffix_agreement},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, SynthParams& p) {
  if (!j.is_object()) fail(ErrorKind::usage, "synth parameters must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "stems") p.stems = value.get<std::size_t>();
      else if (key == "suffixes") p.suffixes = value.get<std::size_t>();
      else if (key == "zipf_exponent") p.zipf_exponent = value.get<double>();
      else if (key == "train_tokens") p.train_tokens = value.get<std::size_t>();
      else if (key == "dev_tokens") p.dev_tokens = value.get<std::size_t>();
      else if (key == "test_tokens") p.test_tokens = value.get<std::size_t>();
      else if (key == "min_sentence") p.min_sentence = value.get<std::size_t>();
      else if (key == "max_sentence") p.max_sentence = value.get<std::size_t>();
      else if (key == "successors") p.successors = value.get<std::size_t>();
      else if (key == "successor_weight") p.successor_weight = value.get<double>();
      else if (key == "suffix_agreement") p.suffix_agreement = value.get<double>();
      else if (key == "seed") p.seed = value.get<std::uint64_t>();
      else fail(ErrorKind::usage, "unknown synth parameter '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("synth parameters: ") + e.what());
  }
}

SynthCorpus generate(const SynthParams& params) {
  params.validate();
  Rng rng(params.seed);
  SynthCorpus out;
  out.suffixes = make_suffixes(params.suffixes, rng);
  out.stems = make_stems(params.stems, out.suffixes, rng);

  const std::size_t n = params.stems;
  const Categorical stem_prior(zipf_weights(n, params.zipf_exponent));
  const Categorical suffix_prior(zipf_weights(params.suffixes, params.zipf_exponent));
  const Categorical successor_rank(zipf_weights(params.successors, params.zipf_exponent));
  std::vector<std::vector<std::size_t>> preferred(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::size_t> others;
    for (std::size_t t = 0; t < n; ++t)
      if (t != s) others.push_back(t);
    rng.shuffle(others.begin(), others.end());
    preferred[s].assign(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(params.successors));
  }

  auto sample_split = [&](std::size_t tokens) {
    std::vector<std::string> lines;
    std::size_t produced = 0;
    while (produced < tokens) {
      const std::size_t len =
          std::min(params.min_sentence + rng.below(params.max_sentence - params.min_sentence + 1), tokens - produced);
      std::string line;
      std::size_t stem = stem_prior.sample(rng);
      std::size_t suffix = suffix_prior.sample(rng);
      for (std::size_t i = 0; i < len; ++i) {
        if (i > 0) {
          stem = rng.uniform() < params.successor_weight ? preferred[stem][successor_rank.sample(rng)]
                                                         : stem_prior.sample(rng);
          if (rng.uniform() >= params.suffix_agreement) suffix = suffix_prior.sample(rng);
          line += ' ';
        }
        line += out.stems[stem] + out.suffixes[suffix];
      }
      produced += len;
      lines.push_back(std::move(line));
    }
    return lines;
  };
  out.train = sample_split(params.train_tokens);
  out.dev = sample_split(params.dev_tokens);
  out.test = sample_split(params.test_tokens);
  return out;
}

std::vector<std::pair<std::string, std::string>> SynthCorpus::gold_stems() const {
  std::map<std::string, std::string> form_to_stem;
  for (const auto& s : stems)
    for (const auto& suf : suffixes) form_to_stem.emplace(s + suf, s);
  std::set<std::string> seen;
  for (const auto* split : {&train, &dev, &test})
    for (const auto& line : *split) {
      std::size_t start = 0;
      while (start <= line.size()) {
        const std::size_t end = std::min(line.find(' ', start), line.size());
        seen.insert(line.substr(start, end - start));
        start = end + 1;
      }
    }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& w : seen) out.emplace_back(w, form_to_stem.at(w));
  return out;
}

void write_corpus(const SynthCorpus& corpus, const SynthParams& params, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::usage, "cannot create directory " + dir.string() + ": " + ec.message());
  auto write = [&](const std::string& name, const auto& emit) {
    const auto path = dir / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::usage, "cannot write " + path.string());
    emit(f);
    if (!f) fail(ErrorKind::data, "failed writing " + path.string());
  };
  auto lines = [](const std::vector<std::string>& ls) {
    return [&ls](std::ostream& f) {
      for (const auto& l : ls) f << l << '\n';
    };
  };
  write("train.txt", lines(corpus.train));
  write("dev.txt", lines(corpus.dev));
  write("test.txt", lines(corpus.test));
  write("gold_stems.tsv", [&](std::ostream& f) {
    for (const auto& [w, s] : corpus.gold_stems()) f << w << '\t' << s << '\n';
  });
  write("params.json", [&](std::ostream& f) { f << nlohmann::json(params).dump(2) << '\n'; });
}

}  // namespace stemlm::synth
