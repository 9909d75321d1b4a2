#include "gar/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "gar/core_types.hpp"
#include "gar/errors.hpp"

namespace gar {
namespace {

constexpr char kMagic[8] = {'G', 'A', 'R', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json model_card_to_json(const ModelCard& card) {
  return {{"variant", variant_name(card.config.variant)},
          {"config", model_config_to_json(card.config)},
          {"seed", card.seed},
          {"parameter_count", card.parameter_count},
          {"manifest_hash", card.manifest_hash},
          {"training", card.training}};
}

ModelCard model_card_from_json(const nlohmann::json& j) {
  ModelCard card;
  try {
    card.config = model_config_from_json(j.at("config"));
    card.seed = j.at("seed").get<std::uint64_t>();
    card.parameter_count = j.at("parameter_count").get<std::size_t>();
    card.manifest_hash = j.value("manifest_hash", std::string());
    card.training = j.value("training", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model card: ") + e.what());
  }
  return card;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string card = model_card_to_json(ckpt.card).dump();
  put<std::uint64_t>(out, card.size());
  out += card;
  put<std::uint64_t>(out, ckpt.params.size());
  for (const auto& [name, t] : ckpt.params) {
    put<std::uint64_t>(out, name.size());
    out += name;
    put<std::uint64_t>(out, t.rank());
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto card_len = r.get<std::uint64_t>();
  try {
    ckpt.card = model_card_from_json(nlohmann::json::parse(r.get_string(card_len)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint model card: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string(r.get<std::uint64_t>());
    const auto rank = r.get<std::uint64_t>();
    if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = r.get<double>();
    ckpt.params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint tensors");
  const ParamMap expected = init_params(ckpt.card.config, 0);
  for (const auto& [name, t] : expected) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end() || it->second.shape() != t.shape()) {
      throw FormatError("checkpoint parameter '" + name +
                        "' missing or of wrong shape for its model config");
    }
  }
  if (expected.size() != ckpt.params.size()) {
    throw FormatError("checkpoint holds parameters its model config does not use");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, serialize_checkpoint(ckpt));
  write_text_file(model_card_path(path), model_card_to_json(ckpt.card).dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text_file(path));
}

std::filesystem::path model_card_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p.replace_extension(".card.json");
  return p;
}

}  // namespace gar
