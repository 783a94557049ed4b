#pragma once

// Streaming encode/decode sessions and file-level entry points.
//
// Audio is processed in groups of w_s R samples (one token frame). A group's
// tokens, and the decoded audio for that group, are produced as soon as its
// last sample arrives, so the algorithmic latency is w_s R samples. Decoded
// audio is not trimmed: sample n of the output reconstructs input sample
// n - w_s, and the stream header records that offset.

#include "streamcodec/bitstream.hpp"
#include "streamcodec/mdct.hpp"
#include "streamcodec/pipeline/model.hpp"
#include "streamcodec/pipeline/wav.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace streamcodec::pipeline {

class EncodeSession {
 public:
  explicit EncodeSession(const CodecModel& model);

  /// Accepts any number of samples; returns the frames completed by them.
  std::vector<rsvq::TokenFrame> push(std::span<const double> samples);
  /// Zero-pads a pending partial group. Returns at most one frame.
  std::vector<rsvq::TokenFrame> flush();

  std::uint64_t samples_consumed() const noexcept { return consumed_; }
  /// Latent of the most recent frame, before quantization.
  const VectorXd& last_latent() const noexcept { return latent_; }
  bitstream::StreamHeader header() const;

 private:
  rsvq::TokenFrame encode_group();

  const CodecModel* model_;
  mdct::MdctConfig<double> mdct_;
  mdct::AnalysisState<double> analysis_;
  nn::StreamState state_;
  std::vector<double> pending_;
  MatrixXd group_;
  VectorXd latent_;
  std::uint64_t consumed_ = 0;
};

class DecodeSession {
 public:
  /// `stages` limits reconstruction to the first stages of the cascade
  /// (SQ stages first); -1 uses all of them.
  explicit DecodeSession(const CodecModel& model, int stages = -1);

  /// One token frame in, w_s R samples out.
  std::vector<double> push(const rsvq::TokenFrame& tokens);
  std::uint64_t samples_produced() const noexcept { return produced_; }

 private:
  const CodecModel* model_;
  int stages_;
  mdct::MdctConfig<double> mdct_;
  mdct::OlaState<double> ola_;
  nn::StreamState state_;
  std::uint64_t produced_ = 0;
};

/// Encoder and decoder back to back, as a sender and receiver would run them.
class CodecSession {
 public:
  explicit CodecSession(const CodecModel& model) : encoder_(model), decoder_(model) {}

  std::vector<double> push(std::span<const double> samples);
  std::uint64_t samples_consumed() const noexcept { return encoder_.samples_consumed(); }
  std::uint64_t samples_produced() const noexcept { return decoder_.samples_produced(); }

 private:
  EncodeSession encoder_;
  DecodeSession decoder_;
};

/// Whole-buffer encode; chunk_samples == 0 pushes everything at once.
std::vector<std::uint8_t> encode_audio(const CodecModel& model, const Audio& audio, std::size_t chunk_samples = 0);
/// Whole-stream decode; checks the header against the model first.
Audio decode_stream(const CodecModel& model, std::span<const std::uint8_t> bytes, int stages = -1);

/// Throws ConfigError when the stream was not produced by this model's schedule or weights.
void check_compatible(const bitstream::StreamHeader& header, const CodecModel& model);

struct PerfReport {
  double rtf_encode = 0.0;
  double rtf_decode = 0.0;
  double rtf_passthrough = 0.0;  // MDCT analysis and synthesis only
  double latency_ms = 0.0;
  std::uint64_t latency_samples = 0;
  std::uint64_t frames = 0;
  double audio_seconds = 0.0;
};

PerfReport encode_file(const std::filesystem::path& wav_in, const std::filesystem::path& stream_out,
                       const CodecModel& model, std::size_t chunk_samples = 0);
PerfReport decode_file(const std::filesystem::path& stream_in, const std::filesystem::path& wav_out,
                       const CodecModel& model, SampleFormat format = SampleFormat::Float32);

struct LatencyReport {
  std::uint64_t samples = 0;
  double ms = 0.0;
};

/// Feeds single samples of a fixed noise bed with an impulse added at several
/// positions, over a sweep of amplitudes and signs, and records how
/// many input samples had been consumed when the first changed output sample
/// was emitted, relative to the impulse position. Reports the worst case.
LatencyReport measure_latency(const CodecModel& model, double amplitude = 0.5);

/// Median wall-clock time over `runs` single-threaded runs divided by the audio duration.
PerfReport measure_rtf(const CodecModel& model, const Audio& audio, int runs = 5);

}  // namespace streamcodec::pipeline
