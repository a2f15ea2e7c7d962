#include "stemlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "stemlm/error.hpp"

namespace stemlm {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'E', 'M', 'L', 'M', 'C', 'K'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(const std::string& name, const num::Tensor& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name);
    u64(t.rows());
    u64(t.cols());
    for (double x : t.data()) f64(x);
  }
  std::string& str() { return out_; }

 private:
  void little_endian(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::string_view bytes(std::size_t n) {
    if (n > in_.size() - pos_) fail(ErrorKind::data, "checkpoint is truncated");
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t little_endian(int n) {
    const auto b = bytes(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  std::uint64_t u64() { return little_endian(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::pair<std::string, num::Tensor> tensor() {
    const std::uint32_t name_len = u32();
    std::string name(bytes(name_len));
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (cols != 0 && rows > (in_.size() - pos_) / 8 / cols) fail(ErrorKind::data, "checkpoint is truncated");
    std::vector<double> data(rows * cols);
    for (double& x : data) x = f64();
    return {std::move(name), num::Tensor(rows, cols, std::move(data))};
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.model) fail(ErrorKind::usage, "checkpoint has no model");
  const LanguageModel& model = *ckpt.model;
  nlohmann::json header = {{"config", model.config()},
                           {"vocab", model.vocabulary().content_tokens()},
                           {"epoch", ckpt.epoch},
                           {"optimizer", {{"learning_rate", ckpt.optimizer.learning_rate},
                                          {"steps", ckpt.optimizer.steps}}}};
  const std::string header_text = header.dump();

  const auto params = model.parameters();
  const bool has_moments = !ckpt.optimizer.first_moments.empty();
  if (has_moments && (ckpt.optimizer.first_moments.size() != params.size() ||
                      ckpt.optimizer.second_moments.size() != params.size()))
    fail(ErrorKind::invariant, "optimizer state does not match the model parameters");

  Writer w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.u32(kCheckpointFormatVersion);
  w.u64(header_text.size());
  w.bytes(header_text);
  w.u32(static_cast<std::uint32_t>(params.size() * (has_moments ? 3 : 1)));
  for (const num::Parameter* p : params) w.tensor(p->name, p->value);
  if (has_moments) {
    for (std::size_t k = 0; k < params.size(); ++k) w.tensor("adam.m." + params[k]->name, ckpt.optimizer.first_moments[k]);
    for (std::size_t k = 0; k < params.size(); ++k) w.tensor("adam.v." + params[k]->name, ckpt.optimizer.second_moments[k]);
  }
  w.u64(fnv1a(w.str()));
  return std::move(w.str());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + 4 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    fail(ErrorKind::data, "not a stemlm checkpoint (bad magic bytes)");
  Reader r(bytes);
  r.bytes(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion)
    fail(ErrorKind::data, "checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointFormatVersion) + ")");
  if (bytes.size() < 8 + 4 + 8) fail(ErrorKind::data, "checkpoint is truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  if (tail.u64() != fnv1a(body)) fail(ErrorKind::data, "checkpoint is truncated or corrupted (checksum mismatch)");

  Reader in(body);
  in.bytes(sizeof kMagic + 4);
  const std::uint64_t header_len = in.u64();
  if (header_len > in.remaining()) fail(ErrorKind::data, "checkpoint is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ModelConfig config = header.at("config").get<ModelConfig>();
    auto vocab = std::make_shared<const Vocabulary>(
        Vocabulary::from_content_tokens(header.at("vocab").get<std::vector<std::string>>()));
    ckpt.model = std::make_unique<LanguageModel>(config, std::move(vocab));
    ckpt.epoch = header.at("epoch").get<std::size_t>();
    ckpt.optimizer.learning_rate = header.at("optimizer").at("learning_rate").get<double>();
    ckpt.optimizer.steps = header.at("optimizer").at("steps").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("checkpoint header: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::data, std::string("checkpoint header: ") + e.what());
  }

  std::map<std::string, num::Tensor> blocks;
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = in.tensor();
    if (!blocks.emplace(name, std::move(tensor)).second) fail(ErrorKind::data, "duplicate checkpoint block " + name);
  }
  if (in.remaining() != 0) fail(ErrorKind::data, "trailing bytes in checkpoint");

  const auto params = ckpt.model->parameters();
  auto take = [&](const std::string& name, const num::Tensor& like) {
    auto it = blocks.find(name);
    if (it == blocks.end()) fail(ErrorKind::data, "checkpoint lacks tensor " + name);
    if (it->second.shape() != like.shape())
      fail(ErrorKind::data, "checkpoint tensor " + name + " has shape " + it->second.shape_string() + ", expected " +
                                like.shape_string());
    num::Tensor t = std::move(it->second);
    blocks.erase(it);
    return t;
  };
  for (num::Parameter* p : params) {
    p->value = take(p->name, p->value);
    p->zero_grad();
  }
  if (!blocks.empty()) {
    for (const num::Parameter* p : params) {
      ckpt.optimizer.first_moments.push_back(take("adam.m." + p->name, p->value));
      ckpt.optimizer.second_moments.push_back(take("adam.v." + p->name, p->value));
    }
  }
  if (!blocks.empty()) fail(ErrorKind::data, "unexpected checkpoint tensor " + blocks.begin()->first);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::usage, "cannot write checkpoint: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::data, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in || std::filesystem::is_directory(path)) fail(ErrorKind::usage, "cannot open checkpoint: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return deserialize_checkpoint(buffer.str());
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace stemlm
