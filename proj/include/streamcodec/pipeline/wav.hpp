#pragma once

// Mono RIFF/WAVE with 16-bit integer PCM or 32-bit float samples.

#include "streamcodec/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace streamcodec::pipeline {

enum class SampleFormat { Pcm16, Float32 };

struct Audio {
  int sample_rate = 16000;
  std::vector<double> samples;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Pcm16 clips to [-1, 1) and rounds to the nearest step.
std::vector<std::uint8_t> encode_wav(const Audio& audio, SampleFormat format = SampleFormat::Pcm16);
/// Throws IoError for malformed or unsupported data (including multi-channel).
Audio decode_wav(std::span<const std::uint8_t> bytes);

Audio read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Audio& audio, SampleFormat format = SampleFormat::Pcm16);

}  // namespace streamcodec::pipeline
