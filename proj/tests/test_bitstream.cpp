#include <doctest.h>

#include "streamcodec/bitstream.hpp"

#include <random>

using namespace streamcodec;
using namespace streamcodec::bitstream;
using rsvq::QuantizerConfig;
using rsvq::TokenFrame;

namespace {

StreamHeader header_for(const QuantizerConfig& q, std::uint32_t fs = 16000) {
  StreamHeader h;
  h.sample_rate = fs;
  h.quantizer = q;
  h.delay_samples = 40;
  h.model_fingerprint = 0x0123456789abcdefull;
  return h;
}

TokenFrame random_frame(const QuantizerConfig& q, std::mt19937_64& rng) {
  TokenFrame f;
  for (int s = 0; s < q.num_stages(); ++s) {
    std::uniform_int_distribution<std::uint64_t> pick(0, q.stage_capacity(s) - 1);
    (s < static_cast<int>(q.sq_stages.size()) ? f.sq_tokens : f.ivq_tokens).push_back(pick(rng));
  }
  return f;
}

QuantizerConfig random_schedule(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> level(2, 16), count(0, 3), dims(1, 6), ksize(2, 4096);
  QuantizerConfig q;
  q.latent_dim = 8;
  const int n_sq = count(rng);
  for (int i = 0; i < n_sq; ++i) {
    rsvq::SqSchedule s;
    const int B = dims(rng);
    for (int b = 0; b < B; ++b) s.levels.push_back(level(rng));
    q.sq_stages.push_back(s);
  }
  const int n_ivq = count(rng) + (n_sq == 0 ? 1 : 0);
  for (int j = 0; j < n_ivq; ++j) q.ivq_stages.push_back({4, ksize(rng)});
  return q;
}

}  // namespace

TEST_CASE("theoretical bitrate table") {
  const auto low = QuantizerConfig::low_profile(), high = QuantizerConfig::high_profile();
  CHECK(theoretical_bitrate(low, header_for(low)) == doctest::Approx(1500.0).epsilon(1e-12));
  CHECK(theoretical_bitrate(low, header_for(low, 48000)) == doctest::Approx(4500.0).epsilon(1e-12));
  CHECK(std::abs(theoretical_bitrate(high, header_for(high)) - 2002.7) < 0.1);
  CHECK(std::abs(theoretical_bitrate(high, header_for(high, 48000)) - 6008.2) < 0.1);
}

TEST_CASE("bitrate grows with every level and codebook size") {
  const auto base = QuantizerConfig::high_profile();
  const double r0 = theoretical_bitrate(base, header_for(base));
  for (std::size_t b = 0; b < base.sq_stages[0].levels.size(); ++b) {
    auto q = base;
    ++q.sq_stages[0].levels[b];
    CHECK(theoretical_bitrate(q, header_for(q)) > r0);
  }
  for (std::size_t j = 0; j < base.ivq_stages.size(); ++j) {
    auto q = base;
    ++q.ivq_stages[j].codebook_size;
    CHECK(theoretical_bitrate(q, header_for(q)) > r0);
  }
}

TEST_CASE("frame widths and effective rates") {
  const auto low = QuantizerConfig::low_profile(), high = QuantizerConfig::high_profile();
  CHECK(frame_width(low) == 30);
  CHECK(frame_width(high) == 41);
  CHECK(stage_widths(high) == std::vector<int>{21, 10, 10});
  Stream s{header_for(low), std::vector<TokenFrame>(50, TokenFrame{{0}, {0, 0}})};
  CHECK(s.effective_bitrate() == doctest::Approx(1500.0).epsilon(1e-12));
  s.header = header_for(low, 48000);
  CHECK(s.effective_bitrate() == doctest::Approx(4500.0).epsilon(1e-12));
  s.header = header_for(high);
  CHECK(s.effective_bitrate() == doctest::Approx(2050.0).epsilon(1e-12));
  CHECK((s.effective_bitrate() / theoretical_bitrate(s.header) - 1.0) * 100 == doctest::Approx(2.36).epsilon(1e-3));
  s.header = header_for(high, 48000);
  CHECK(s.effective_bitrate() == doctest::Approx(6150.0).epsilon(1e-12));
  s.frames.clear();
  CHECK_THROWS_AS(s.effective_bitrate(), StreamError);
}

TEST_CASE("frame packing edge values") {
  const auto low = QuantizerConfig::low_profile();
  const auto zeros = pack_frame(TokenFrame{{0}, {0, 0}}, low);
  CHECK(zeros == std::vector<bool>(30, false));
  CHECK(unpack_frame(zeros, low) == TokenFrame{{0}, {0, 0}});
  CHECK(unpack_frame(std::vector<bool>(30, true), low) == TokenFrame{{1023}, {1023, 1023}});
  CHECK_THROWS_AS(unpack_frame(std::vector<bool>(29, false), low), StreamError);
  CHECK_THROWS_AS(pack_frame(TokenFrame{{1024}, {0, 0}}, low), TokenError);
  // 21 one-bits exceed the high profile's SQ capacity.
  CHECK_THROWS_AS(unpack_frame(std::vector<bool>(41, true), QuantizerConfig::high_profile()), CorruptionError);
}

TEST_CASE("pack and unpack are mutually inverse") {
  std::mt19937_64 rng(51);
  for (const auto& q : {QuantizerConfig::low_profile(), QuantizerConfig::high_profile()}) {
    for (int i = 0; i < 100000; ++i) {
      const auto f = random_frame(q, rng);
      const auto bits = pack_frame(f, q);
      REQUIRE(bits.size() == static_cast<std::size_t>(frame_width(q)));
      REQUIRE(unpack_frame(bits, q) == f);
    }
  }
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = random_schedule(rng);
    Stream s{header_for(q), {}};
    for (int i = 0; i < 17; ++i) s.frames.push_back(random_frame(q, rng));
    const auto bytes = serialize(s);
    const auto back = parse(bytes);
    CHECK(back.frames == s.frames);
    CHECK(back.header.quantizer == q);
  }
}

TEST_CASE("header round trip and validation") {
  auto h = header_for(QuantizerConfig::high_profile(), 48000);
  h.frame_count = 12345;
  h.quantizer.offset_rule = rsvq::OffsetRule::Half;
  const auto bytes = encode_header(h);
  std::size_t used = 0;
  CHECK(decode_header(bytes, used) == h);
  CHECK(used == bytes.size());
  CHECK(encode_header(decode_header(bytes, used)) == bytes);

  auto wrong_version = bytes;
  wrong_version[4] = 2;
  CHECK_THROWS_AS(decode_header(wrong_version, used), CorruptionError);
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(decode_header(wrong_magic, used), CorruptionError);
  CHECK_THROWS_AS(decode_header(std::span(bytes).first(20), used), StreamError);
}

TEST_CASE("stream framing") {
  std::mt19937_64 rng(52);
  const auto q = QuantizerConfig::high_profile();
  StreamWriter w(header_for(q));
  std::vector<TokenFrame> frames;
  for (int i = 0; i < 7; ++i) {
    frames.push_back(random_frame(q, rng));
    w.push(frames.back());
  }
  auto bytes = w.bytes();
  std::size_t head = 0;
  decode_header(bytes, head);
  CHECK(bytes.size() - head == (7 * 41 + 7) / 8);
  // Padding bits are zero.
  CHECK((bytes.back() & 0x01) == 0);

  StreamReader r(bytes);
  CHECK(r.frame_count() == 7);
  for (const auto& f : frames) CHECK(r.next() == f);
  CHECK_THROWS_AS(r.next(), StreamError);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(StreamReader{truncated}, StreamError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(StreamReader{trailing}, CorruptionError);

  const auto empty = StreamWriter(header_for(q)).bytes();
  CHECK(parse(empty).frames.empty());
}
