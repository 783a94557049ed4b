#include "streamcodec/nn/codec_net.hpp"

namespace streamcodec::nn {

void CodecNetConfig::validate() const {
  if (mdct_bins < 1 || channels < 1 || latent_dim < 1 || resample < 1 || num_blocks < 0 ||
      block_kernel < 1 || expansion < 1 || io_kernel < 1 || latent_kernel < 1 || upsample_taps < 1)
    throw ConfigError("codec net: all sizes must be positive");
}

Eigen::Index StreamState::element_count() const {
  Eigen::Index n = 0;
  for (const auto& h : history) n += h.size();
  return n;
}

namespace {

Mcnx2Spec block_spec(const CodecNetConfig& cfg) {
  return {cfg.channels, cfg.block_kernel, cfg.expansion, cfg.eps};
}

void append(ParameterList& out, ParameterList more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(const CodecNetConfig& cfg)
    : cfg_(cfg),
      in_("encoder.input_conv", {cfg.mdct_bins, cfg.channels, cfg.io_kernel}),
      linear_("encoder.linear", cfg.channels, cfg.channels),
      down_("encoder.downsample", {cfg.channels, cfg.channels, cfg.resample, cfg.resample}),
      out_("encoder.output_conv", {cfg.channels, cfg.latent_dim, cfg.latent_kernel}) {
  cfg.validate();
  for (int b = 0; b < cfg.num_blocks; ++b)
    blocks_.emplace_back("encoder.block" + std::to_string(b), block_spec(cfg));
}

void Encoder::init(std::mt19937_64& rng) {
  in_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  linear_.init(rng);
  down_.init(rng);
  out_.init(rng);
}

ParameterList Encoder::parameters() {
  ParameterList p = in_.parameters();
  for (auto& b : blocks_) append(p, b.parameters());
  append(p, linear_.parameters());
  append(p, down_.parameters());
  append(p, out_.parameters());
  return p;
}

StreamState Encoder::initial_state() const {
  StreamState s;
  s.history.push_back(in_.zero_history());
  for (const auto& b : blocks_) s.history.push_back(b.zero_history());
  s.history.push_back(down_.zero_history());
  s.history.push_back(out_.zero_history());
  return s;
}

MatrixXd Encoder::infer(StreamState& state, const MatrixXd& frames) const {
  if (frames.rows() != cfg_.mdct_bins) throw ConfigError("encoder: frames must have w_s rows");
  if (frames.cols() % cfg_.resample != 0)
    throw StreamError("encoder: frame count must be a multiple of the resample rate");
  if (state.history.size() != blocks_.size() + 3) throw StreamError("encoder: state does not match network");
  std::size_t slot = 0;
  MatrixXd h = in_.infer(state.history[slot++], frames);
  for (const auto& b : blocks_) h = b.infer(state.history[slot++], h);
  h = linear_.infer(h);
  h = down_.infer(state.history[slot++], h);
  h = out_.infer(state.history[slot++], h);
  state.steps += frames.cols();
  return h;
}

MatrixXd Encoder::forward(const MatrixXd& frames) const {
  StreamState s = initial_state();
  return infer(s, frames);
}

VectorXd Encoder::push(StreamState& state, const MatrixXd& group) const {
  if (group.cols() != cfg_.resample) throw StreamError("encoder push: expected exactly R frames");
  return infer(state, group).col(0);
}

MatrixXd Encoder::forward_train(const MatrixXd& frames) {
  if (frames.cols() % cfg_.resample != 0)
    throw ConfigError("encoder: frame count must be a multiple of the resample rate");
  MatrixXd h = in_.forward_train(frames);
  for (auto& b : blocks_) h = b.forward_train(h);
  h = linear_.forward_train(h);
  h = down_.forward_train(h);
  return out_.forward_train(h);
}

MatrixXd Encoder::backward(const MatrixXd& d_latents) {
  MatrixXd d = out_.backward(d_latents);
  d = down_.backward(d);
  d = linear_.backward(d);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
  return in_.backward(d);
}

int Encoder::receptive_field() const {
  return (cfg_.io_kernel - 1) + cfg_.num_blocks * (cfg_.block_kernel - 1) + (cfg_.resample - 1) +
         (cfg_.latent_kernel - 1) * cfg_.resample;
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(const CodecNetConfig& cfg)
    : cfg_(cfg),
      in_("decoder.input_conv", {cfg.latent_dim, cfg.channels, cfg.latent_kernel}),
      up_("decoder.upsample", cfg.channels, cfg.channels, cfg.resample, cfg.upsample_taps),
      linear_("decoder.linear", cfg.channels, cfg.channels),
      out_("decoder.output_conv", {cfg.channels, cfg.mdct_bins, cfg.io_kernel}) {
  cfg.validate();
  for (int b = 0; b < cfg.num_blocks; ++b)
    blocks_.emplace_back("decoder.block" + std::to_string(b), block_spec(cfg));
}

void Decoder::init(std::mt19937_64& rng) {
  in_.init(rng);
  up_.init(rng);
  linear_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  out_.init(rng);
}

ParameterList Decoder::parameters() {
  ParameterList p = in_.parameters();
  append(p, up_.parameters());
  append(p, linear_.parameters());
  for (auto& b : blocks_) append(p, b.parameters());
  append(p, out_.parameters());
  return p;
}

StreamState Decoder::initial_state() const {
  StreamState s;
  s.history.push_back(in_.zero_history());
  s.history.push_back(up_.zero_history());
  for (const auto& b : blocks_) s.history.push_back(b.zero_history());
  s.history.push_back(out_.zero_history());
  return s;
}

MatrixXd Decoder::infer(StreamState& state, const MatrixXd& latents) const {
  if (latents.rows() != cfg_.latent_dim) throw ConfigError("decoder: latents must have D rows");
  if (state.history.size() != blocks_.size() + 3) throw StreamError("decoder: state does not match network");
  std::size_t slot = 0;
  MatrixXd h = in_.infer(state.history[slot++], latents);
  h = up_.infer(state.history[slot++], h);
  h = linear_.infer(h);
  for (const auto& b : blocks_) h = b.infer(state.history[slot++], h);
  h = out_.infer(state.history[slot++], h);
  state.steps += latents.cols();
  return h;
}

MatrixXd Decoder::forward(const MatrixXd& latents) const {
  StreamState s = initial_state();
  return infer(s, latents);
}

MatrixXd Decoder::push(StreamState& state, const VectorXd& latent) const {
  MatrixXd one(latent.size(), 1);
  one.col(0) = latent;
  return infer(state, one);
}

MatrixXd Decoder::forward_train(const MatrixXd& latents) {
  MatrixXd h = in_.forward_train(latents);
  h = up_.forward_train(h);
  h = linear_.forward_train(h);
  for (auto& b : blocks_) h = b.forward_train(h);
  return out_.forward_train(h);
}

MatrixXd Decoder::backward(const MatrixXd& d_frames) {
  MatrixXd d = out_.backward(d_frames);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
  d = linear_.backward(d);
  d = up_.backward(d);
  return in_.backward(d);
}

}  // namespace streamcodec::nn
