#include "streamcodec/pipeline/wav.hpp"

#include "streamcodec/bitstream.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <string>

namespace streamcodec::pipeline {

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void tag(std::vector<std::uint8_t>& out, const char* s) { out.insert(out.end(), s, s + 4); }

template <typename T>
T get(std::span<const std::uint8_t> b, std::size_t at) {
  if (at + sizeof(T) > b.size()) throw IoError("wav: truncated file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b[at + i]) << (8 * i));
  return v;
}

bool is_tag(std::span<const std::uint8_t> b, std::size_t at, const char* s) {
  return at + 4 <= b.size() && std::memcmp(b.data() + at, s, 4) == 0;
}

}  // namespace

std::vector<std::uint8_t> encode_wav(const Audio& audio, SampleFormat format) {
  const bool pcm = format == SampleFormat::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * (bits / 8));
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  tag(out, "RIFF");
  put<std::uint32_t>(out, 36 + data_bytes);
  tag(out, "WAVE");
  tag(out, "fmt ");
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, pcm ? 1 : 3);
  put<std::uint16_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate) * (bits / 8));
  put<std::uint16_t>(out, bits / 8);
  put<std::uint16_t>(out, bits);
  tag(out, "data");
  put<std::uint32_t>(out, data_bytes);
  for (double s : audio.samples) {
    if (pcm) {
      const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
      put<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
    } else {
      put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  return out;
}

Audio decode_wav(std::span<const std::uint8_t> b) {
  if (!is_tag(b, 0, "RIFF") || !is_tag(b, 8, "WAVE")) throw IoError("wav: not a RIFF/WAVE file");
  std::size_t at = 12;
  int format = 0, channels = 0, bits = 0;
  Audio audio;
  bool have_fmt = false;
  while (at + 8 <= b.size()) {
    const auto size = get<std::uint32_t>(b, at + 4);
    const std::size_t body = at + 8;
    if (is_tag(b, at, "fmt ")) {
      format = get<std::uint16_t>(b, body);
      channels = get<std::uint16_t>(b, body + 2);
      audio.sample_rate = static_cast<int>(get<std::uint32_t>(b, body + 4));
      bits = get<std::uint16_t>(b, body + 14);
      if (format == 0xFFFE && size >= 40) format = get<std::uint16_t>(b, body + 24);  // extensible
      have_fmt = true;
    } else if (is_tag(b, at, "data")) {
      if (!have_fmt) throw IoError("wav: data chunk before fmt chunk");
      if (channels != 1) throw IoError("wav: only mono is supported, got " + std::to_string(channels) + " channels");
      const std::size_t len = std::min<std::size_t>(size, b.size() - body);
      if (format == 1 && bits == 16) {
        for (std::size_t i = 0; i + 2 <= len; i += 2)
          audio.samples.push_back(static_cast<std::int16_t>(get<std::uint16_t>(b, body + i)) / 32768.0);
      } else if (format == 3 && bits == 32) {
        for (std::size_t i = 0; i + 4 <= len; i += 4)
          audio.samples.push_back(std::bit_cast<float>(get<std::uint32_t>(b, body + i)));
      } else {
        throw IoError("wav: unsupported sample format (need 16-bit PCM or 32-bit float)");
      }
      return audio;
    }
    at = body + size + (size & 1u);
  }
  throw IoError("wav: no data chunk");
}

Audio read_wav(const std::filesystem::path& path) {
  const auto bytes = bitstream::read_file(path);
  return decode_wav(bytes);
}

void write_wav(const std::filesystem::path& path, const Audio& audio, SampleFormat format) {
  bitstream::write_file(path, encode_wav(audio, format));
}

}  // namespace streamcodec::pipeline
