#pragma once

// Log-spectral distance and log-magnitude spectrogram export.
//
// Frames are Hann-windowed and taken every `hop` samples after padding both
// ends with (frame_length - hop) zeros, rounded up to a whole hop, so a
// shift of both inputs by a hop multiple only adds or removes all-zero
// frames. Frames that are all-zero in both inputs carry no information and
// are left out of the average.

#include "streamcodec/common.hpp"

#include <filesystem>
#include <ostream>
#include <span>

namespace streamcodec::metrics {

struct LsdConfig {
  int frame_length = 512;
  int hop = 128;
  double power_floor = 1e-10;

  /// 32 ms frames with an 8 ms hop.
  static LsdConfig for_sample_rate(int sample_rate);
  void validate() const;
  int bins() const noexcept { return frame_length / 2 + 1; }
};

/// frames x bins matrix of 0.5 log10(max(|X|^2, floor)).
MatrixXd log_spectrogram(std::span<const double> samples, const LsdConfig& cfg);

/// Mean over frames of the RMS log10-magnitude difference. Inputs must have
/// equal length; the caller removes any codec delay first.
double lsd(std::span<const double> reference, std::span<const double> estimate, const LsdConfig& cfg);

/// One CSV row per frame, one column per bin.
void write_spectrogram_csv(std::ostream& os, const MatrixXd& spectrogram);
void spectrogram_export(std::span<const double> samples, const LsdConfig& cfg, const std::filesystem::path& path);

}  // namespace streamcodec::metrics
