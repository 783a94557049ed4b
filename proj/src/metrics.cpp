#include "streamcodec/metrics.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <fstream>
#include <numbers>
#include <vector>

namespace streamcodec::metrics {

namespace {

struct Framing {
  Eigen::Index pad = 0;
  Eigen::Index frames = 0;
};

Framing framing(std::size_t n, const LsdConfig& cfg) {
  const Eigen::Index hop = cfg.hop;
  Framing f;
  f.pad = (cfg.frame_length - hop + hop - 1) / hop * hop;
  const auto padded = static_cast<Eigen::Index>(n) + 2 * f.pad;
  f.frames = padded <= cfg.frame_length ? 1 : (padded - cfg.frame_length + hop - 1) / hop + 1;
  return f;
}

// Log magnitudes of every frame; `silent[t]` is set when frame t is all zero.
MatrixXd analyse(std::span<const double> x, const LsdConfig& cfg, std::vector<bool>& silent) {
  const Framing fr = framing(x.size(), cfg);
  const int L = cfg.frame_length;
  std::vector<double> window(static_cast<std::size_t>(L));
  for (int n = 0; n < L; ++n) window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / L);

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(L));
  std::vector<std::complex<double>> spectrum;
  MatrixXd out(fr.frames, cfg.bins());
  silent.assign(static_cast<std::size_t>(fr.frames), true);
  for (Eigen::Index t = 0; t < fr.frames; ++t) {
    for (int n = 0; n < L; ++n) {
      const Eigen::Index src = t * cfg.hop + n - fr.pad;
      const double v = src >= 0 && src < static_cast<Eigen::Index>(x.size()) ? x[static_cast<std::size_t>(src)] : 0.0;
      if (v != 0.0) silent[static_cast<std::size_t>(t)] = false;
      frame[n] = v * window[n];
    }
    fft.fwd(spectrum, frame);
    for (int k = 0; k < cfg.bins(); ++k)
      out(t, k) = 0.5 * std::log10(std::max(std::norm(spectrum[k]), cfg.power_floor));
  }
  return out;
}

}  // namespace

LsdConfig LsdConfig::for_sample_rate(int sample_rate) {
  LsdConfig c;
  c.frame_length = static_cast<int>(std::lround(0.032 * sample_rate));
  c.hop = static_cast<int>(std::lround(0.008 * sample_rate));
  c.validate();
  return c;
}

void LsdConfig::validate() const {
  if (!(frame_length > hop && hop > 0)) throw ConfigError("lsd: need frame length > hop > 0");
  if (!(power_floor > 0.0)) throw ConfigError("lsd: power floor must be positive");
}

MatrixXd log_spectrogram(std::span<const double> samples, const LsdConfig& cfg) {
  cfg.validate();
  std::vector<bool> silent;
  return analyse(samples, cfg, silent);
}

double lsd(std::span<const double> reference, std::span<const double> estimate, const LsdConfig& cfg) {
  cfg.validate();
  if (reference.size() != estimate.size())
    throw MetricError("lsd: length mismatch (" + std::to_string(reference.size()) + " vs " +
                      std::to_string(estimate.size()) + ")");
  std::vector<bool> silent_ref, silent_est;
  const MatrixXd a = analyse(reference, cfg, silent_ref);
  const MatrixXd b = analyse(estimate, cfg, silent_est);
  double sum = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index t = 0; t < a.rows(); ++t) {
    if (silent_ref[static_cast<std::size_t>(t)] && silent_est[static_cast<std::size_t>(t)]) continue;
    sum += std::sqrt((a.row(t) - b.row(t)).squaredNorm() / static_cast<double>(a.cols()));
    ++used;
  }
  return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

void write_spectrogram_csv(std::ostream& os, const MatrixXd& spectrogram) {
  os.precision(10);
  for (Eigen::Index t = 0; t < spectrogram.rows(); ++t) {
    for (Eigen::Index k = 0; k < spectrogram.cols(); ++k) os << (k ? "," : "") << spectrogram(t, k);
    os << '\n';
  }
}

void spectrogram_export(std::span<const double> samples, const LsdConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_spectrogram_csv(out, log_spectrogram(samples, cfg));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace streamcodec::metrics
