#pragma once

// Token bitstream: a little-endian header followed by fixed-width frames,
// bit-packed most-significant-bit first without per-frame alignment. The
// payload is zero-padded to a whole byte.
//
//   "SCBS" u16 version
//   u32 sample_rate  u32 frame_shift  u32 resample
//   u32 latent_dim   u8 offset_rule
//   u8 n_sq   { u8 B, B x u16 levels }
//   u8 n_ivq  { u32 code_dim, u32 codebook_size }
//   u32 delay_samples  u64 model_fingerprint  u64 frame_count
//   payload

#include "streamcodec/rsvq.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace streamcodec::bitstream {

inline constexpr std::uint16_t kVersion = 1;
/// frame_count value for a stream whose length was unknown when the header was written.
inline constexpr std::uint64_t kUnknownLength = std::numeric_limits<std::uint64_t>::max();

struct StreamHeader {
  std::uint32_t sample_rate = 16000;
  std::uint32_t frame_shift = 40;
  std::uint32_t resample = 8;
  rsvq::QuantizerConfig quantizer;
  /// Decoded audio trails the input by this many samples; nothing is trimmed.
  std::uint32_t delay_samples = 0;
  std::uint64_t model_fingerprint = 0;
  std::uint64_t frame_count = kUnknownLength;

  /// Token frames per second, f_s / (w_s R).
  double frame_rate() const;
  /// Input samples represented by one token frame.
  std::uint32_t samples_per_frame() const { return frame_shift * resample; }
  void validate() const;

  friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

std::vector<std::uint8_t> encode_header(const StreamHeader& h);
/// Parses a header from the front of `bytes`; `consumed` receives its size.
/// Magic and version are checked before anything else is read.
StreamHeader decode_header(std::span<const std::uint8_t> bytes, std::size_t& consumed);

/// Nominal rate f_s / (w_s R) * (sum log2 l + sum log2 K).
double theoretical_bitrate(const rsvq::QuantizerConfig& cfg, const StreamHeader& header);
double theoretical_bitrate(const StreamHeader& header);

/// Bits per stage token, ceil(log2 capacity), SQ stages first.
std::vector<int> stage_widths(const rsvq::QuantizerConfig& cfg);
int frame_width(const rsvq::QuantizerConfig& cfg);

class BitWriter {
 public:
  /// Appends the low `width` bits of `value`, most significant first.
  void put(std::uint64_t value, int width);
  std::uint64_t bit_count() const noexcept { return bits_; }
  /// Bytes written so far; a partial last byte is zero-padded.
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bits_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_limit);
  explicit BitReader(std::span<const std::uint8_t> bytes) : BitReader(bytes, bytes.size() * 8ull) {}

  /// Throws StreamError when fewer than `width` bits remain.
  std::uint64_t get(int width);
  std::uint64_t remaining() const noexcept { return limit_ - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t limit_;
  std::uint64_t pos_ = 0;
};

void pack_frame(const rsvq::TokenFrame& tokens, const rsvq::QuantizerConfig& cfg, BitWriter& out);
/// One frame as a bit string.
std::vector<bool> pack_frame(const rsvq::TokenFrame& tokens, const rsvq::QuantizerConfig& cfg);

/// Truncated input is a StreamError; an out-of-range token is a CorruptionError.
rsvq::TokenFrame unpack_frame(BitReader& in, const rsvq::QuantizerConfig& cfg);
rsvq::TokenFrame unpack_frame(const std::vector<bool>& bits, const rsvq::QuantizerConfig& cfg);

/// A complete stream held in memory.
struct Stream {
  StreamHeader header;
  std::vector<rsvq::TokenFrame> frames;

  /// Payload bits over audio duration; throws StreamError for an empty stream.
  double effective_bitrate() const;
};

double effective_bitrate(const Stream& stream);

/// Incremental writer. Frames are packed as they arrive; bytes() yields the
/// header, stamped with the frame count, followed by the padded payload.
class StreamWriter {
 public:
  explicit StreamWriter(StreamHeader header);

  void push(const rsvq::TokenFrame& tokens);
  std::uint64_t frames() const noexcept { return frames_; }
  const StreamHeader& header() const noexcept { return header_; }
  std::vector<std::uint8_t> bytes() const;

 private:
  StreamHeader header_;
  int width_;
  BitWriter payload_;
  std::uint64_t frames_ = 0;
};

/// Incremental reader over a complete byte buffer.
class StreamReader {
 public:
  explicit StreamReader(std::span<const std::uint8_t> bytes);

  const StreamHeader& header() const noexcept { return header_; }
  std::uint64_t frame_count() const noexcept { return count_; }
  bool done() const noexcept { return read_ == count_; }
  rsvq::TokenFrame next();

 private:
  StreamHeader header_;
  std::span<const std::uint8_t> payload_;
  BitReader bits_;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
};

std::vector<std::uint8_t> serialize(const Stream& stream);
Stream parse(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace streamcodec::bitstream
