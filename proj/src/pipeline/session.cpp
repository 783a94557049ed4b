#include "streamcodec/pipeline/session.hpp"

#include <algorithm>
#include <chrono>
#include <random>

namespace streamcodec::pipeline {

// ---------------------------------------------------------------------------
// EncodeSession

EncodeSession::EncodeSession(const CodecModel& model)
    : model_(&model),
      mdct_(model.config().frame_shift()),
      analysis_(model.config().frame_shift()),
      state_(model.encoder().initial_state()),
      group_(model.config().frame_shift(), model.config().net.resample) {
  pending_.reserve(static_cast<std::size_t>(model.config().group_samples()));
}

rsvq::TokenFrame EncodeSession::encode_group() {
  const int ws = mdct_.frame_shift();
  for (Eigen::Index t = 0; t < group_.cols(); ++t) {
    const Eigen::Map<const VectorXd> chunk(pending_.data() + t * ws, ws);
    group_.col(t) = mdct::analysis_push<double>(analysis_, chunk, mdct_).coefficients;
  }
  pending_.clear();
  latent_ = model_->encoder().push(state_, group_);
  return model_->quantizer().quantize(latent_).tokens;
}

std::vector<rsvq::TokenFrame> EncodeSession::push(std::span<const double> samples) {
  std::vector<rsvq::TokenFrame> out;
  const auto G = static_cast<std::size_t>(model_->config().group_samples());
  for (double s : samples) {
    if (!std::isfinite(s)) throw NumericError("encode: non-finite input sample");
    pending_.push_back(s);
    if (pending_.size() == G) out.push_back(encode_group());
  }
  consumed_ += samples.size();
  return out;
}

std::vector<rsvq::TokenFrame> EncodeSession::flush() {
  if (pending_.empty()) return {};
  pending_.resize(static_cast<std::size_t>(model_->config().group_samples()), 0.0);
  return {encode_group()};
}

bitstream::StreamHeader EncodeSession::header() const {
  bitstream::StreamHeader h;
  const auto& cfg = model_->config();
  h.sample_rate = static_cast<std::uint32_t>(cfg.sample_rate);
  h.frame_shift = static_cast<std::uint32_t>(cfg.frame_shift());
  h.resample = static_cast<std::uint32_t>(cfg.net.resample);
  h.quantizer = cfg.quantizer;
  h.delay_samples = static_cast<std::uint32_t>(cfg.frame_shift());
  h.model_fingerprint = model_->fingerprint();
  return h;
}

// ---------------------------------------------------------------------------
// DecodeSession

DecodeSession::DecodeSession(const CodecModel& model, int stages)
    : model_(&model),
      stages_(stages < 0 ? model.config().quantizer.num_stages() : stages),
      mdct_(model.config().frame_shift()),
      ola_(model.config().frame_shift()),
      state_(model.decoder().initial_state()) {}

std::vector<double> DecodeSession::push(const rsvq::TokenFrame& tokens) {
  const VectorXd z_hat = model_->quantizer().dequantize(tokens, stages_);
  const MatrixXd frames = model_->decoder().push(state_, z_hat);
  if (!frames.allFinite()) throw NumericError("decode: non-finite decoder output");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(frames.size()));
  for (Eigen::Index t = 0; t < frames.cols(); ++t) {
    const mdct::MdctFrame<double> f{frames.col(t), ola_.frames_emitted};
    const VectorXd chunk = mdct::synthesis_push(ola_, f, mdct_);
    out.insert(out.end(), chunk.data(), chunk.data() + chunk.size());
  }
  produced_ += out.size();
  return out;
}

std::vector<double> CodecSession::push(std::span<const double> samples) {
  std::vector<double> out;
  for (const auto& f : encoder_.push(samples)) {
    const auto chunk = decoder_.push(f);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Buffers and files

std::vector<std::uint8_t> encode_audio(const CodecModel& model, const Audio& audio, std::size_t chunk_samples) {
  if (audio.sample_rate != model.config().sample_rate)
    throw ConfigError("encode: audio is " + std::to_string(audio.sample_rate) + " Hz, model expects " +
                      std::to_string(model.config().sample_rate) + " Hz");
  EncodeSession session(model);
  bitstream::StreamWriter writer(session.header());
  const std::span<const double> all(audio.samples);
  const std::size_t step = chunk_samples == 0 ? std::max<std::size_t>(all.size(), 1) : chunk_samples;
  for (std::size_t at = 0; at < all.size(); at += step)
    for (const auto& f : session.push(all.subspan(at, std::min(step, all.size() - at)))) writer.push(f);
  for (const auto& f : session.flush()) writer.push(f);
  return writer.bytes();
}

void check_compatible(const bitstream::StreamHeader& h, const CodecModel& model) {
  const auto& cfg = model.config();
  if (h.sample_rate != static_cast<std::uint32_t>(cfg.sample_rate) ||
      h.frame_shift != static_cast<std::uint32_t>(cfg.frame_shift()) ||
      h.resample != static_cast<std::uint32_t>(cfg.net.resample))
    throw ConfigError("stream framing (f_s, w_s, R) does not match the model");
  if (!(h.quantizer == cfg.quantizer)) throw ConfigError("stream quantizer schedule does not match the model");
  if (h.model_fingerprint != 0 && h.model_fingerprint != model.fingerprint())
    throw ConfigError("stream was encoded with different model weights (fingerprint mismatch)");
}

Audio decode_stream(const CodecModel& model, std::span<const std::uint8_t> bytes, int stages) {
  bitstream::StreamReader reader(bytes);
  check_compatible(reader.header(), model);
  DecodeSession session(model, stages);
  Audio out;
  out.sample_rate = model.config().sample_rate;
  while (!reader.done()) {
    const auto chunk = session.push(reader.next());
    out.samples.insert(out.samples.end(), chunk.begin(), chunk.end());
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

LatencyReport latency_report(std::uint64_t samples, int sample_rate) {
  return {samples, 1000.0 * static_cast<double>(samples) / sample_rate};
}

}  // namespace

PerfReport encode_file(const std::filesystem::path& wav_in, const std::filesystem::path& stream_out,
                       const CodecModel& model, std::size_t chunk_samples) {
  const Audio audio = read_wav(wav_in);
  const auto t0 = Clock::now();
  const auto bytes = encode_audio(model, audio, chunk_samples);
  const double elapsed = seconds_since(t0);
  bitstream::write_file(stream_out, bytes);
  PerfReport r;
  r.audio_seconds = audio.seconds();
  r.rtf_encode = r.audio_seconds > 0 ? elapsed / r.audio_seconds : 0.0;
  r.frames = bitstream::StreamReader(bytes).frame_count();
  const auto lat = latency_report(static_cast<std::uint64_t>(model.config().group_samples()), model.config().sample_rate);
  r.latency_samples = lat.samples;
  r.latency_ms = lat.ms;
  return r;
}

PerfReport decode_file(const std::filesystem::path& stream_in, const std::filesystem::path& wav_out,
                       const CodecModel& model, SampleFormat format) {
  const auto bytes = bitstream::read_file(stream_in);
  const auto t0 = Clock::now();
  const Audio audio = decode_stream(model, bytes);
  const double elapsed = seconds_since(t0);
  write_wav(wav_out, audio, format);
  PerfReport r;
  r.audio_seconds = audio.seconds();
  r.rtf_decode = r.audio_seconds > 0 ? elapsed / r.audio_seconds : 0.0;
  r.frames = bitstream::StreamReader(bytes).frame_count();
  const auto lat = latency_report(static_cast<std::uint64_t>(model.config().group_samples()), model.config().sample_rate);
  r.latency_samples = lat.samples;
  r.latency_ms = lat.ms;
  return r;
}

LatencyReport measure_latency(const CodecModel& model, double amplitude) {
  const auto G = static_cast<std::uint64_t>(model.config().group_samples());
  const std::uint64_t groups = 4;
  const std::uint64_t length = groups * G;

  // A quiet noise bed keeps the quantizer away from a degenerate all-silence code.
  std::vector<double> bed(length);
  std::mt19937_64 rng(0x1a7e);
  std::normal_distribution<double> dist(0.0, 0.05);
  for (auto& s : bed) s = dist(rng);

  // Output sample n together with the number of input samples consumed when it was emitted.
  struct Trace {
    std::vector<double> out;
    std::vector<std::uint64_t> emitted_at;
  };
  auto run = [&](std::int64_t impulse, double a) {
    CodecSession s(model);
    Trace tr;
    for (std::uint64_t i = 0; i < length; ++i) {
      const double x = bed[i] + (static_cast<std::int64_t>(i) == impulse ? a : 0.0);
      for (double y : s.push(std::span(&x, 1))) {
        tr.out.push_back(y);
        tr.emitted_at.push_back(i + 1);
      }
    }
    return tr;
  };
  auto first_change = [](const Trace& t, const Trace& base) -> std::uint64_t {
    for (std::size_t n = 0; n < t.out.size(); ++n)
      if (t.out[n] != base.out[n]) return t.emitted_at[n];
    return 0;
  };

  const Trace base = run(-1, 0.0);
  std::uint64_t worst = 0;
  for (std::uint64_t g = 1; g + 1 < groups; ++g) {
    for (std::uint64_t offset : {std::uint64_t{0}, std::uint64_t{1}, G / 2, G - 1}) {
      const std::uint64_t p = g * G + offset;
      // Whether a given impulse flips a token is a matter of quantization luck,
      // so take the earliest response over a sweep of amplitudes and signs.
      std::uint64_t first = 0;
      for (double a = amplitude; a <= 8192 * amplitude; a *= 2) {
        for (double sign : {1.0, -1.0}) {
          const std::uint64_t f = first_change(run(static_cast<std::int64_t>(p), sign * a), base);
          if (f != 0 && (first == 0 || f < first)) first = f;
        }
      }
      if (first == 0) throw NumericError("measure_latency: impulse produced no output change");
      worst = std::max(worst, first - p);
    }
  }
  return latency_report(worst, model.config().sample_rate);
}

PerfReport measure_rtf(const CodecModel& model, const Audio& audio, int runs) {
  if (runs < 1) throw ConfigError("measure_rtf: need at least one run");
  if (audio.samples.empty()) throw ConfigError("measure_rtf: empty audio");
  std::vector<double> enc, dec, pass;
  std::vector<rsvq::TokenFrame> frames;
  const mdct::MdctConfig<double> mcfg(model.config().frame_shift());
  for (int r = 0; r < runs; ++r) {
    auto t0 = Clock::now();
    EncodeSession es(model);
    frames = es.push(audio.samples);
    for (auto& f : es.flush()) frames.push_back(std::move(f));
    enc.push_back(seconds_since(t0));

    t0 = Clock::now();
    DecodeSession ds(model);
    std::size_t produced = 0;
    for (const auto& f : frames) produced += ds.push(f).size();
    dec.push_back(seconds_since(t0));
    if (produced == 0) throw NumericError("measure_rtf: nothing decoded");

    t0 = Clock::now();
    const auto coeffs = mdct::analyze<double>(audio.samples, mcfg);
    const auto back = mdct::synthesize(coeffs, mcfg);
    pass.push_back(seconds_since(t0));
    if (back.empty()) throw NumericError("measure_rtf: empty passthrough");
  }
  PerfReport r;
  r.audio_seconds = audio.seconds();
  r.rtf_encode = median(enc) / r.audio_seconds;
  r.rtf_decode = median(dec) / r.audio_seconds;
  r.rtf_passthrough = median(pass) / r.audio_seconds;
  r.frames = frames.size();
  const auto lat = latency_report(static_cast<std::uint64_t>(model.config().group_samples()), model.config().sample_rate);
  r.latency_samples = lat.samples;
  r.latency_ms = lat.ms;
  return r;
}

}  // namespace streamcodec::pipeline
