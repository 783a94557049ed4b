#include "streamcodec/pipeline/model.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>

namespace streamcodec::pipeline {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'C', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

using json = nlohmann::ordered_json;

json net_to_json(const nn::CodecNetConfig& n) {
  return {{"mdct_bins", n.mdct_bins},         {"channels", n.channels},       {"latent_dim", n.latent_dim},
          {"resample", n.resample},           {"num_blocks", n.num_blocks},   {"block_kernel", n.block_kernel},
          {"expansion", n.expansion},         {"io_kernel", n.io_kernel},     {"latent_kernel", n.latent_kernel},
          {"upsample_taps", n.upsample_taps}, {"eps", n.eps}};
}

nn::CodecNetConfig net_from_json(const nlohmann::json& j) {
  nn::CodecNetConfig n;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("mdct_bins", n.mdct_bins);
  get("channels", n.channels);
  get("latent_dim", n.latent_dim);
  get("resample", n.resample);
  get("num_blocks", n.num_blocks);
  get("block_kernel", n.block_kernel);
  get("expansion", n.expansion);
  get("io_kernel", n.io_kernel);
  get("latent_kernel", n.latent_kernel);
  get("upsample_taps", n.upsample_taps);
  get("eps", n.eps);
  return n;
}

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ull;
    }
  }
  template <typename T>
  void le(T v) {
    std::uint8_t b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    bytes(b, sizeof(T));
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

template <typename T>
void put_le(std::ostream& out, T v) {
  char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>(static_cast<std::uint8_t>(v >> (8 * i)));
  out.write(b, sizeof(T));
}

class Cursor {
 public:
  explicit Cursor(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const noexcept { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw CorruptionError("checkpoint: truncated file");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

ModelConfig ModelConfig::for_profile(const std::string& profile, int sample_rate) {
  ModelConfig c;
  c.sample_rate = sample_rate;
  c.quantizer = rsvq::QuantizerConfig::profile(profile);
  c.net.latent_dim = c.quantizer.latent_dim;
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("model: sample rate must be positive");
  net.validate();
  quantizer.validate();
  if (net.latent_dim != quantizer.latent_dim)
    throw ConfigError("model: network latent_dim differs from quantizer latent_dim");
}

std::string ModelConfig::to_json() const {
  json j;
  j["sample_rate"] = sample_rate;
  j["net"] = net_to_json(net);
  j["quantizer"] = json::parse(quantizer.to_json());
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.sample_rate = j.at("sample_rate").get<int>();
    c.net = net_from_json(j.at("net"));
    c.quantizer = rsvq::QuantizerConfig::from_json(j.at("quantizer").dump());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

CodecModel::CodecModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), encoder_(cfg.net), decoder_(cfg.net) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  encoder_.init(rng);
  decoder_.init(rng);
  quantizer_ = rsvq::Quantizer<double>::random(cfg.quantizer, rng);
}

std::vector<std::pair<std::string, MatrixXd*>> CodecModel::tensors() {
  std::vector<std::pair<std::string, MatrixXd*>> out;
  for (auto* p : encoder_.parameters()) out.emplace_back(p->name, &p->value);
  for (auto* p : decoder_.parameters()) out.emplace_back(p->name, &p->value);
  for (std::size_t i = 0; i < quantizer_.sq().size(); ++i) {
    auto& s = quantizer_.sq()[i];
    const auto prefix = "rsvq.sq" + std::to_string(i);
    out.emplace_back(prefix + ".down", &s.down);
    out.emplace_back(prefix + ".up", &s.up);
  }
  for (std::size_t j = 0; j < quantizer_.ivq().size(); ++j) {
    auto& v = quantizer_.ivq()[j];
    const auto prefix = "rsvq.ivq" + std::to_string(j);
    out.emplace_back(prefix + ".down", &v.down);
    out.emplace_back(prefix + ".up", &v.up);
    out.emplace_back(prefix + ".codebook", &v.codebook);
  }
  return out;
}

std::vector<std::pair<std::string, const MatrixXd*>> CodecModel::tensors() const {
  std::vector<std::pair<std::string, const MatrixXd*>> out;
  for (auto& [name, m] : const_cast<CodecModel*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

std::uint64_t CodecModel::fingerprint() const {
  Fnv1a h;
  const auto echo = cfg_.to_json();
  h.bytes(echo.data(), echo.size());
  for (const auto& [name, m] : tensors()) {
    h.bytes(name.data(), name.size());
    for (Eigen::Index i = 0; i < m->size(); ++i) h.le(std::bit_cast<std::uint64_t>((*m)(i)));
  }
  return h.value();
}

void CodecModel::save(const std::filesystem::path& path, Precision precision) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(kMagic), 4);
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint8_t>(out, precision == Precision::Float64 ? 8 : 4);
  const auto echo = cfg_.to_json();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(echo.size()));
  out.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  const auto list = tensors();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
  for (const auto& [name, m] : list) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m->rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      if (precision == Precision::Float64) put_le(out, std::bit_cast<std::uint64_t>((*m)(i)));
      else put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>((*m)(i))));
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

CodecModel CodecModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  Cursor c(bytes);
  if (c.str(4) != "SCCK") throw CorruptionError("checkpoint: bad magic in " + path.string());
  const auto version = c.le<std::uint16_t>();
  if (version != kVersion) throw CorruptionError("checkpoint: unsupported version " + std::to_string(version));
  const auto width = c.le<std::uint8_t>();
  if (width != 8 && width != 4) throw CorruptionError("checkpoint: unknown scalar width");
  const auto cfg = ModelConfig::from_json(c.str(c.le<std::uint32_t>()));

  CodecModel model(cfg, 0);
  std::map<std::string, MatrixXd*> slots;
  for (auto& [name, m] : model.tensors()) slots.emplace(name, m);
  const auto count = c.le<std::uint32_t>();
  if (count != slots.size())
    throw ConfigError("checkpoint: " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(slots.size()));
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name = c.str(c.le<std::uint16_t>());
    const auto rows = c.le<std::uint32_t>();
    const auto cols = c.le<std::uint32_t>();
    const auto it = slots.find(name);
    if (it == slots.end()) throw ConfigError("checkpoint: unexpected tensor " + name);
    MatrixXd& m = *it->second;
    if (m.rows() != rows || m.cols() != cols) throw ConfigError("checkpoint: tensor " + name + " has wrong shape");
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m(i) = width == 8 ? std::bit_cast<double>(c.le<std::uint64_t>())
                        : static_cast<double>(std::bit_cast<float>(c.le<std::uint32_t>()));
    slots.erase(it);
  }
  if (!c.at_end()) throw CorruptionError("checkpoint: trailing bytes");
  model.quantizer().validate();
  return model;
}

}  // namespace streamcodec::pipeline
