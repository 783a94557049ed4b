#include "streamcodec/rsvq.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace streamcodec::rsvq {

namespace {

constexpr std::uint64_t kMaxCapacity = std::uint64_t{1} << 62;

std::uint64_t grid_size(int levels, OffsetRule rule) {
  return static_cast<std::uint64_t>(ScalarGrid<double>(levels, rule).size());
}

}  // namespace

void QuantizerConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("quantizer: latent_dim must be positive");
  if (sq_stages.empty() && ivq_stages.empty())
    throw ConfigError("quantizer: at least one stage is required");
  for (std::size_t i = 0; i < sq_stages.size(); ++i) {
    const auto& levels = sq_stages[i].levels;
    if (levels.empty()) throw ConfigError("quantizer: SQ stage " + std::to_string(i) + " has no levels");
    std::uint64_t capacity = 1;
    for (int l : levels) {
      if (l < 2) throw ConfigError("quantizer: SQ levels must be >= 2");
      capacity *= grid_size(l, offset_rule);
      if (capacity > kMaxCapacity) throw ConfigError("quantizer: SQ codebook too large");
    }
  }
  for (std::size_t j = 0; j < ivq_stages.size(); ++j) {
    if (ivq_stages[j].code_dim < 1) throw ConfigError("quantizer: IVQ code_dim must be positive");
    if (ivq_stages[j].codebook_size < 2)
      throw ConfigError("quantizer: IVQ codebook needs at least two codevectors");
  }
}

std::uint64_t QuantizerConfig::stage_capacity(int stage) const {
  if (stage < 0 || stage >= num_stages()) throw ConfigError("quantizer: stage index out of range");
  const auto n_sq = static_cast<int>(sq_stages.size());
  if (stage < n_sq) {
    std::uint64_t c = 1;
    for (int l : sq_stages[stage].levels) c *= grid_size(l, offset_rule);
    return c;
  }
  return static_cast<std::uint64_t>(ivq_stages[stage - n_sq].codebook_size);
}

double QuantizerConfig::stage_bits(int stage) const {
  if (stage < 0 || stage >= num_stages()) throw ConfigError("quantizer: stage index out of range");
  const auto n_sq = static_cast<int>(sq_stages.size());
  if (stage < n_sq) {
    double bits = 0.0;
    for (int l : sq_stages[stage].levels) bits += std::log2(static_cast<double>(grid_size(l, offset_rule)));
    return bits;
  }
  return std::log2(static_cast<double>(ivq_stages[stage - n_sq].codebook_size));
}

QuantizerConfig QuantizerConfig::low_profile() {
  QuantizerConfig c;
  c.latent_dim = 32;
  c.sq_stages = {SqSchedule{{4, 4, 4, 4, 4}}};
  c.ivq_stages = {IvqSchedule{32, 1024}, IvqSchedule{32, 1024}};
  return c;
}

QuantizerConfig QuantizerConfig::high_profile() {
  QuantizerConfig c = low_profile();
  c.sq_stages = {SqSchedule{{11, 11, 10, 10, 10, 9}}};
  return c;
}

QuantizerConfig QuantizerConfig::profile(const std::string& name) {
  if (name == "low") return low_profile();
  if (name == "high") return high_profile();
  throw ConfigError("unknown quantizer profile '" + name + "' (expected low or high)");
}

std::string QuantizerConfig::to_json() const {
  nlohmann::ordered_json j;
  j["latent_dim"] = latent_dim;
  j["offset_rule"] = offset_rule == OffsetRule::Parity ? "parity" : "half";
  j["sq"] = nlohmann::ordered_json::array();
  for (const auto& s : sq_stages) j["sq"].push_back({{"levels", s.levels}});
  j["ivq"] = nlohmann::ordered_json::array();
  for (const auto& v : ivq_stages)
    j["ivq"].push_back({{"code_dim", v.code_dim}, {"codebook_size", v.codebook_size}});
  return j.dump(2);
}

QuantizerConfig QuantizerConfig::from_json(const std::string& text) {
  QuantizerConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("profile")) c = profile(j.at("profile").get<std::string>());
    if (j.contains("latent_dim")) c.latent_dim = j.at("latent_dim").get<int>();
    if (j.contains("offset_rule")) {
      const auto rule = j.at("offset_rule").get<std::string>();
      if (rule == "parity") c.offset_rule = OffsetRule::Parity;
      else if (rule == "half") c.offset_rule = OffsetRule::Half;
      else throw ConfigError("quantizer: unknown offset_rule '" + rule + "'");
    }
    if (j.contains("sq")) {
      c.sq_stages.clear();
      for (const auto& s : j.at("sq")) c.sq_stages.push_back({s.at("levels").get<std::vector<int>>()});
    }
    if (j.contains("ivq")) {
      c.ivq_stages.clear();
      for (const auto& v : j.at("ivq"))
        c.ivq_stages.push_back({v.at("code_dim").get<int>(), v.at("codebook_size").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("quantizer config: ") + e.what());
  }
  c.validate();
  return c;
}

QuantizerConfig QuantizerConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open quantizer config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace streamcodec::rsvq
