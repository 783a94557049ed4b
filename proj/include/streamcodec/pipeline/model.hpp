#pragma once

// The assembled codec: encoder, residual quantizer and decoder, plus the
// checkpoint container.
//
// Checkpoint layout (little-endian):
//   "SCCK" u16 version  u8 scalar_bytes (8 or 4)
//   u32 n, n bytes of JSON config echo
//   u32 tensor_count { u16 name_len, name, u32 rows, u32 cols, rows*cols values column-major }

#include "streamcodec/nn/codec_net.hpp"
#include "streamcodec/rsvq.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace streamcodec::pipeline {

struct ModelConfig {
  int sample_rate = 16000;
  nn::CodecNetConfig net;
  rsvq::QuantizerConfig quantizer = rsvq::QuantizerConfig::low_profile();

  /// Toy-scale network with the named quantizer profile.
  static ModelConfig for_profile(const std::string& profile, int sample_rate = 16000);
  void validate() const;
  int frame_shift() const noexcept { return net.mdct_bins; }
  int group_samples() const noexcept { return net.mdct_bins * net.resample; }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Precision { Float64, Float32 };

class CodecModel {
 public:
  CodecModel() = default;
  /// Uniform fan-in initialisation from `seed`.
  CodecModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  nn::Encoder& encoder() noexcept { return encoder_; }
  const nn::Encoder& encoder() const noexcept { return encoder_; }
  nn::Decoder& decoder() noexcept { return decoder_; }
  const nn::Decoder& decoder() const noexcept { return decoder_; }
  rsvq::Quantizer<double>& quantizer() noexcept { return quantizer_; }
  const rsvq::Quantizer<double>& quantizer() const noexcept { return quantizer_; }

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, MatrixXd*>> tensors();
  std::vector<std::pair<std::string, const MatrixXd*>> tensors() const;

  /// 64-bit FNV-1a over the config echo and all tensor values.
  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path, Precision precision = Precision::Float64) const;
  /// Throws IoError if unreadable, CorruptionError if malformed, ConfigError
  /// if the tensors do not fit the echoed configuration.
  static CodecModel load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  nn::Encoder encoder_;
  nn::Decoder decoder_;
  rsvq::Quantizer<double> quantizer_;
};

}  // namespace streamcodec::pipeline
