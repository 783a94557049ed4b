#include "streamcodec/bitstream.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

namespace streamcodec::bitstream {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'C', 'B', 'S'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class ByteCursor {
 public:
  explicit ByteCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw StreamError("bitstream: truncated header");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t position() const noexcept { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double StreamHeader::frame_rate() const {
  return static_cast<double>(sample_rate) / (static_cast<double>(frame_shift) * resample);
}

void StreamHeader::validate() const {
  if (sample_rate == 0 || frame_shift == 0 || resample == 0)
    throw ConfigError("stream header: sample rate, frame shift and resample rate must be positive");
  quantizer.validate();
  if (quantizer.sq_stages.size() > 255 || quantizer.ivq_stages.size() > 255)
    throw ConfigError("stream header: too many stages");
  for (const auto& s : quantizer.sq_stages) {
    if (s.levels.size() > 255) throw ConfigError("stream header: too many SQ coordinates");
    for (int l : s.levels)
      if (l > 65535) throw ConfigError("stream header: SQ level count too large");
  }
}

std::vector<std::uint8_t> encode_header(const StreamHeader& h) {
  h.validate();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint32_t>(out, h.sample_rate);
  put_le<std::uint32_t>(out, h.frame_shift);
  put_le<std::uint32_t>(out, h.resample);
  const auto& q = h.quantizer;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(q.latent_dim));
  put_le<std::uint8_t>(out, q.offset_rule == rsvq::OffsetRule::Parity ? 0 : 1);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(q.sq_stages.size()));
  for (const auto& s : q.sq_stages) {
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.levels.size()));
    for (int l : s.levels) put_le<std::uint16_t>(out, static_cast<std::uint16_t>(l));
  }
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(q.ivq_stages.size()));
  for (const auto& v : q.ivq_stages) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.code_dim));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.codebook_size));
  }
  put_le<std::uint32_t>(out, h.delay_samples);
  put_le<std::uint64_t>(out, h.model_fingerprint);
  put_le<std::uint64_t>(out, h.frame_count);
  return out;
}

StreamHeader decode_header(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
  if (bytes.size() < 6) throw StreamError("bitstream: truncated header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw CorruptionError("bitstream: bad magic, not a token stream");
  ByteCursor in(bytes.subspan(4));
  const auto version = in.get<std::uint16_t>();
  if (version != kVersion)
    throw CorruptionError("bitstream: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
  StreamHeader h;
  h.sample_rate = in.get<std::uint32_t>();
  h.frame_shift = in.get<std::uint32_t>();
  h.resample = in.get<std::uint32_t>();
  auto& q = h.quantizer;
  q.latent_dim = static_cast<int>(in.get<std::uint32_t>());
  const auto rule = in.get<std::uint8_t>();
  if (rule > 1) throw CorruptionError("bitstream: unknown offset rule");
  q.offset_rule = rule == 0 ? rsvq::OffsetRule::Parity : rsvq::OffsetRule::Half;
  const auto n_sq = in.get<std::uint8_t>();
  for (int i = 0; i < n_sq; ++i) {
    rsvq::SqSchedule s;
    const auto B = in.get<std::uint8_t>();
    for (int b = 0; b < B; ++b) s.levels.push_back(in.get<std::uint16_t>());
    q.sq_stages.push_back(std::move(s));
  }
  const auto n_ivq = in.get<std::uint8_t>();
  for (int j = 0; j < n_ivq; ++j) {
    rsvq::IvqSchedule v;
    v.code_dim = static_cast<int>(in.get<std::uint32_t>());
    v.codebook_size = static_cast<int>(in.get<std::uint32_t>());
    q.ivq_stages.push_back(v);
  }
  h.delay_samples = in.get<std::uint32_t>();
  h.model_fingerprint = in.get<std::uint64_t>();
  h.frame_count = in.get<std::uint64_t>();
  try {
    h.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("bitstream: invalid header: ") + e.what());
  }
  consumed = 4 + in.position();
  return h;
}

double theoretical_bitrate(const rsvq::QuantizerConfig& cfg, const StreamHeader& header) {
  double bits = 0.0;
  for (const auto& s : cfg.sq_stages)
    for (int l : s.levels) bits += std::log2(static_cast<double>(l));
  for (const auto& v : cfg.ivq_stages) bits += std::log2(static_cast<double>(v.codebook_size));
  return header.frame_rate() * bits;
}

double theoretical_bitrate(const StreamHeader& header) { return theoretical_bitrate(header.quantizer, header); }

std::vector<int> stage_widths(const rsvq::QuantizerConfig& cfg) {
  std::vector<int> w;
  for (int s = 0; s < cfg.num_stages(); ++s)
    w.push_back(static_cast<int>(std::bit_width(cfg.stage_capacity(s) - 1)));
  return w;
}

int frame_width(const rsvq::QuantizerConfig& cfg) {
  int total = 0;
  for (int w : stage_widths(cfg)) total += w;
  return total;
}

void BitWriter::put(std::uint64_t value, int width) {
  if (width < 0 || width > 64) throw ConfigError("bit writer: width must lie in [0, 64]");
  if (width < 64 && (value >> width) != 0) throw TokenError("bit writer: value does not fit its width");
  for (int i = width - 1; i >= 0; --i) {
    if (bits_ % 8 == 0) bytes_.push_back(0);
    if ((value >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
    ++bits_;
  }
}

BitReader::BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_limit)
    : bytes_(bytes), limit_(std::min<std::uint64_t>(bit_limit, bytes.size() * 8ull)) {}

std::uint64_t BitReader::get(int width) {
  if (width < 0 || width > 64) throw ConfigError("bit reader: width must lie in [0, 64]");
  if (remaining() < static_cast<std::uint64_t>(width)) throw StreamError("bitstream: truncated frame");
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i, ++pos_) v = (v << 1) | ((bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u);
  return v;
}

void pack_frame(const rsvq::TokenFrame& tokens, const rsvq::QuantizerConfig& cfg, BitWriter& out) {
  if (tokens.sq_tokens.size() != cfg.sq_stages.size() || tokens.ivq_tokens.size() != cfg.ivq_stages.size())
    throw TokenError("pack_frame: token frame does not match the schedule");
  const auto widths = stage_widths(cfg);
  std::size_t s = 0;
  for (auto t : tokens.sq_tokens) {
    if (t >= cfg.stage_capacity(static_cast<int>(s))) throw TokenError("pack_frame: SQ token out of range");
    out.put(t, widths[s++]);
  }
  for (auto t : tokens.ivq_tokens) {
    if (t >= cfg.stage_capacity(static_cast<int>(s))) throw TokenError("pack_frame: IVQ token out of range");
    out.put(t, widths[s++]);
  }
}

std::vector<bool> pack_frame(const rsvq::TokenFrame& tokens, const rsvq::QuantizerConfig& cfg) {
  BitWriter w;
  pack_frame(tokens, cfg, w);
  std::vector<bool> bits;
  BitReader r(w.bytes(), w.bit_count());
  while (r.remaining() > 0) bits.push_back(r.get(1) != 0);
  return bits;
}

rsvq::TokenFrame unpack_frame(BitReader& in, const rsvq::QuantizerConfig& cfg) {
  const auto widths = stage_widths(cfg);
  int total = 0;
  for (int w : widths) total += w;
  if (in.remaining() < static_cast<std::uint64_t>(total)) throw StreamError("bitstream: truncated frame");
  rsvq::TokenFrame f;
  const auto n_sq = static_cast<int>(cfg.sq_stages.size());
  for (int s = 0; s < cfg.num_stages(); ++s) {
    const auto t = in.get(widths[s]);
    if (t >= cfg.stage_capacity(s))
      throw CorruptionError("bitstream: token " + std::to_string(t) + " exceeds stage " + std::to_string(s) +
                            " capacity " + std::to_string(cfg.stage_capacity(s)));
    (s < n_sq ? f.sq_tokens : f.ivq_tokens).push_back(t);
  }
  return f;
}

rsvq::TokenFrame unpack_frame(const std::vector<bool>& bits, const rsvq::QuantizerConfig& cfg) {
  if (bits.size() != static_cast<std::size_t>(frame_width(cfg)))
    throw StreamError("unpack_frame: expected exactly one frame of bits");
  BitWriter w;
  for (bool b : bits) w.put(b ? 1 : 0, 1);
  BitReader r(w.bytes(), w.bit_count());
  return unpack_frame(r, cfg);
}

double Stream::effective_bitrate() const {
  if (frames.empty()) throw StreamError("effective_bitrate: empty stream");
  const double bits = static_cast<double>(frames.size()) * frame_width(header.quantizer);
  const double seconds = static_cast<double>(frames.size()) / header.frame_rate();
  return bits / seconds;
}

double effective_bitrate(const Stream& stream) { return stream.effective_bitrate(); }

StreamWriter::StreamWriter(StreamHeader header) : header_(std::move(header)) {
  header_.validate();
  width_ = frame_width(header_.quantizer);
}

void StreamWriter::push(const rsvq::TokenFrame& tokens) {
  pack_frame(tokens, header_.quantizer, payload_);
  ++frames_;
}

std::vector<std::uint8_t> StreamWriter::bytes() const {
  StreamHeader h = header_;
  h.frame_count = frames_;
  auto out = encode_header(h);
  out.insert(out.end(), payload_.bytes().begin(), payload_.bytes().end());
  return out;
}

StreamReader::StreamReader(std::span<const std::uint8_t> bytes) : bits_(std::span<const std::uint8_t>{}) {
  std::size_t consumed = 0;
  header_ = decode_header(bytes, consumed);
  payload_ = bytes.subspan(consumed);
  const auto width = static_cast<std::uint64_t>(frame_width(header_.quantizer));
  const std::uint64_t available = payload_.size() * 8ull;
  if (header_.frame_count == kUnknownLength) {
    // Padding is under one byte, so it cannot hold a frame of 8 or more bits.
    count_ = width == 0 ? 0 : available / width;
  } else {
    count_ = header_.frame_count;
    if (width != 0 && count_ > available / width) throw StreamError("bitstream: payload shorter than frame count");
    const std::uint64_t expected_bytes = (count_ * width + 7) / 8;
    if (payload_.size() != expected_bytes) throw CorruptionError("bitstream: trailing bytes after payload");
  }
  bits_ = BitReader(payload_, count_ * width);
}

rsvq::TokenFrame StreamReader::next() {
  if (done()) throw StreamError("bitstream: read past the last frame");
  ++read_;
  return unpack_frame(bits_, header_.quantizer);
}

std::vector<std::uint8_t> serialize(const Stream& stream) {
  StreamWriter w(stream.header);
  for (const auto& f : stream.frames) w.push(f);
  return w.bytes();
}

Stream parse(std::span<const std::uint8_t> bytes) {
  StreamReader r(bytes);
  Stream s;
  s.header = r.header();
  s.header.frame_count = r.frame_count();
  while (!r.done()) s.frames.push_back(r.next());
  return s;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace streamcodec::bitstream
