#pragma once

#include "streamcodec/nn/layers.hpp"

#include <random>
#include <string>
#include <vector>

namespace streamcodec::nn {

struct CodecNetConfig {
  int mdct_bins = 40;   // frame shift w_s
  int channels = 64;
  int latent_dim = 32;
  int resample = 8;     // R
  int num_blocks = 8;
  int block_kernel = 7;
  int expansion = 3;
  int io_kernel = 7;      // frame-rate input/output convolutions
  int latent_kernel = 3;  // latent-rate convolutions
  int upsample_taps = 1;  // transposed conv kernel = taps * R
  double eps = 1e-6;

  void validate() const;
  friend bool operator==(const CodecNetConfig&, const CodecNetConfig&) = default;
};

/// Per-layer left context, in layer order. Its size depends only on the
/// configuration, never on how much has been streamed.
struct StreamState {
  std::vector<MatrixXd> history;
  std::int64_t steps = 0;  // input columns consumed

  Eigen::Index element_count() const;
};

/// in conv -> MCNX2 blocks -> linear -> strided conv (R) -> out conv.
/// Latent u depends only on MDCT frames <= (u + 1) R - 1.
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const CodecNetConfig& cfg);

  const CodecNetConfig& config() const noexcept { return cfg_; }
  void init(std::mt19937_64& rng);
  ParameterList parameters();

  StreamState initial_state() const;
  /// frames: w_s x T with T a multiple of R; returns D x T/R.
  MatrixXd forward(const MatrixXd& frames) const;
  /// Consumes a whole number of frame groups, continuing from `state`.
  MatrixXd infer(StreamState& state, const MatrixXd& frames) const;
  /// One group of R frames in, one latent out.
  VectorXd push(StreamState& state, const MatrixXd& group) const;

  MatrixXd forward_train(const MatrixXd& frames);
  MatrixXd backward(const MatrixXd& d_latents);

  /// Past frames, before the last frame of a group, that can reach its latent.
  int receptive_field() const;

  CausalConv1d& input_conv() { return in_; }
  CausalConv1d& output_conv() { return out_; }
  std::vector<Mcnx2Block>& blocks() { return blocks_; }

 private:
  CodecNetConfig cfg_;
  CausalConv1d in_;
  std::vector<Mcnx2Block> blocks_;
  Linear linear_;
  CausalConv1d down_;
  CausalConv1d out_;
};

/// in conv -> transposed conv (R) -> linear -> MCNX2 blocks -> out conv.
/// MDCT frame t depends only on latents <= floor(t / R).
class Decoder {
 public:
  Decoder() = default;
  explicit Decoder(const CodecNetConfig& cfg);

  const CodecNetConfig& config() const noexcept { return cfg_; }
  void init(std::mt19937_64& rng);
  ParameterList parameters();

  StreamState initial_state() const;
  /// latents: D x U; returns w_s x U R.
  MatrixXd forward(const MatrixXd& latents) const;
  MatrixXd infer(StreamState& state, const MatrixXd& latents) const;
  /// One latent in, R MDCT frames out.
  MatrixXd push(StreamState& state, const VectorXd& latent) const;

  MatrixXd forward_train(const MatrixXd& latents);
  MatrixXd backward(const MatrixXd& d_frames);

  CausalConv1d& input_conv() { return in_; }
  CausalConv1d& output_conv() { return out_; }
  std::vector<Mcnx2Block>& blocks() { return blocks_; }

 private:
  CodecNetConfig cfg_;
  CausalConv1d in_;
  TransposedCausalConv1d up_;
  Linear linear_;
  std::vector<Mcnx2Block> blocks_;
  CausalConv1d out_;
};

}  // namespace streamcodec::nn
