#pragma once

// Lapped MDCT analysis / IMDCT synthesis with 50% overlap-add.
//
// Frame t covers input samples [(t-1)*shift, (t+1)*shift). The streaming
// analyser keeps the previous `shift` samples, so a frame is available once
// the samples up to (t+1)*shift have arrived. Synthesis emits samples
// [(t-1)*shift, t*shift) when frame t is pushed, i.e. the reconstructed
// signal trails the input by exactly one frame shift.

#include "streamcodec/common.hpp"

#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

namespace streamcodec::mdct {

template <typename Scalar>
class MdctConfig {
 public:
  /// Sine window, w[n] = sin(pi (n + 1/2) / (2 shift)).
  explicit MdctConfig(int frame_shift) : frame_shift_(frame_shift) {
    if (frame_shift < 1) throw ConfigError("mdct: frame shift must be positive");
    const int n2 = 2 * frame_shift;
    window_.resize(n2);
    for (int n = 0; n < n2; ++n) {
      window_[n] = static_cast<Scalar>(
          std::sin(std::numbers::pi * (n + 0.5) / static_cast<double>(n2)));
    }
    basis_.resize(frame_shift, n2);
    for (int k = 0; k < frame_shift; ++k) {
      for (int n = 0; n < n2; ++n) {
        const double phase = std::numbers::pi / frame_shift *
                             (n + 0.5 + frame_shift / 2.0) * (k + 0.5);
        basis_(k, n) = window_[n] * static_cast<Scalar>(std::cos(phase));
      }
    }
  }

  int frame_shift() const noexcept { return frame_shift_; }
  int frame_length() const noexcept { return 2 * frame_shift_; }
  const Vector<Scalar>& window() const noexcept { return window_; }

  /// Windowed cosine basis, shift x 2*shift. Row k is the analysis kernel for bin k.
  const Matrix<Scalar>& basis() const noexcept { return basis_; }

  /// Largest deviation from window[n]^2 + window[n + shift]^2 = 1.
  Scalar princen_bradley_error() const {
    Scalar worst = 0;
    for (int n = 0; n < frame_shift_; ++n) {
      const Scalar e = window_[n] * window_[n] +
                       window_[n + frame_shift_] * window_[n + frame_shift_] - Scalar(1);
      worst = std::max(worst, std::abs(e));
    }
    return worst;
  }

 private:
  int frame_shift_;
  Vector<Scalar> window_;
  Matrix<Scalar> basis_;
};

template <typename Scalar>
struct MdctFrame {
  Vector<Scalar> coefficients;
  std::int64_t frame_index = 0;
};

template <typename Scalar>
MdctFrame<Scalar> mdct_forward(const Eigen::Ref<const Vector<Scalar>>& samples,
                               const MdctConfig<Scalar>& cfg,
                               std::int64_t frame_index = 0) {
  if (samples.size() != cfg.frame_length()) {
    throw ConfigError("mdct_forward: expected " + std::to_string(cfg.frame_length()) +
                      " samples, got " + std::to_string(samples.size()));
  }
  MdctFrame<Scalar> frame;
  frame.coefficients.noalias() = cfg.basis() * samples;
  frame.frame_index = frame_index;
  return frame;
}

/// Windowed inverse block (2*shift samples), to be overlap-added by the caller.
template <typename Scalar>
Vector<Scalar> imdct_frame(const MdctFrame<Scalar>& frame, const MdctConfig<Scalar>& cfg) {
  if (frame.coefficients.size() != cfg.frame_shift()) {
    throw ConfigError("imdct_frame: expected " + std::to_string(cfg.frame_shift()) +
                      " coefficients, got " + std::to_string(frame.coefficients.size()));
  }
  Vector<Scalar> block = cfg.basis().transpose() * frame.coefficients;
  block *= Scalar(2) / static_cast<Scalar>(cfg.frame_shift());
  return block;
}

template <typename Scalar>
struct AnalysisState {
  Vector<Scalar> history;
  std::int64_t frames_emitted = 0;

  explicit AnalysisState(int frame_shift) : history(Vector<Scalar>::Zero(frame_shift)) {}
  void reset() {
    history.setZero();
    frames_emitted = 0;
  }
};

template <typename Scalar>
struct OlaState {
  Vector<Scalar> carry;
  std::int64_t frames_emitted = 0;

  explicit OlaState(int frame_shift) : carry(Vector<Scalar>::Zero(frame_shift)) {}
  void reset() {
    carry.setZero();
    frames_emitted = 0;
  }
};

template <typename Scalar>
MdctFrame<Scalar> analysis_push(AnalysisState<Scalar>& state,
                                const Eigen::Ref<const Vector<Scalar>>& new_samples,
                                const MdctConfig<Scalar>& cfg) {
  const int shift = cfg.frame_shift();
  if (new_samples.size() != shift || state.history.size() != shift) {
    throw StreamError("analysis_push: chunk must hold exactly " + std::to_string(shift) +
                      " samples");
  }
  Vector<Scalar> block(2 * shift);
  block << state.history, new_samples;
  auto frame = mdct_forward<Scalar>(block, cfg, state.frames_emitted);
  state.history = new_samples;
  ++state.frames_emitted;
  return frame;
}

template <typename Scalar>
Vector<Scalar> synthesis_push(OlaState<Scalar>& state, const MdctFrame<Scalar>& frame,
                              const MdctConfig<Scalar>& cfg) {
  const int shift = cfg.frame_shift();
  if (frame.frame_index != state.frames_emitted) {
    throw StreamError("synthesis_push: expected frame " + std::to_string(state.frames_emitted) +
                      ", got " + std::to_string(frame.frame_index));
  }
  const Vector<Scalar> block = imdct_frame(frame, cfg);
  Vector<Scalar> out = state.carry + block.head(shift);
  state.carry = block.tail(shift);
  ++state.frames_emitted;
  return out;
}

/// Batch analysis with zero history; the tail is zero-padded to a whole frame.
/// Identical, frame for frame, to pushing the signal in shift-sized chunks.
template <typename Scalar>
std::vector<MdctFrame<Scalar>> analyze(std::span<const Scalar> signal,
                                       const MdctConfig<Scalar>& cfg) {
  const int shift = cfg.frame_shift();
  const auto n_frames = static_cast<std::int64_t>((signal.size() + shift - 1) / shift);
  AnalysisState<Scalar> state(shift);
  std::vector<MdctFrame<Scalar>> frames;
  frames.reserve(static_cast<std::size_t>(n_frames));
  Vector<Scalar> chunk(shift);
  for (std::int64_t t = 0; t < n_frames; ++t) {
    for (int i = 0; i < shift; ++i) {
      const auto idx = static_cast<std::size_t>(t * shift + i);
      chunk[i] = idx < signal.size() ? signal[idx] : Scalar(0);
    }
    frames.push_back(analysis_push<Scalar>(state, chunk, cfg));
  }
  return frames;
}

/// Overlap-add of a complete frame sequence; output[n] reconstructs input[n - shift].
template <typename Scalar>
std::vector<Scalar> synthesize(const std::vector<MdctFrame<Scalar>>& frames,
                               const MdctConfig<Scalar>& cfg) {
  OlaState<Scalar> state(cfg.frame_shift());
  std::vector<Scalar> out;
  out.reserve(frames.size() * static_cast<std::size_t>(cfg.frame_shift()));
  for (const auto& f : frames) {
    const Vector<Scalar> chunk = synthesis_push(state, f, cfg);
    out.insert(out.end(), chunk.data(), chunk.data() + chunk.size());
  }
  return out;
}

/// Frames as a shift x T matrix, one column per frame.
template <typename Scalar>
Matrix<Scalar> stack_frames(const std::vector<MdctFrame<Scalar>>& frames, int frame_shift) {
  Matrix<Scalar> m(frame_shift, static_cast<Eigen::Index>(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) m.col(static_cast<Eigen::Index>(t)) = frames[t].coefficients;
  return m;
}

/// Debug dump: one CSV row per frame, frame index first.
template <typename Scalar>
void write_frames_csv(std::ostream& os, const std::vector<MdctFrame<Scalar>>& frames) {
  os.precision(17);
  for (const auto& f : frames) {
    os << f.frame_index;
    for (Eigen::Index k = 0; k < f.coefficients.size(); ++k) os << ',' << f.coefficients[k];
    os << '\n';
  }
}

}  // namespace streamcodec::mdct
