#pragma once

// The training loss with every discrete choice and stop-gradient frozen at a
// base point. Its exact derivative is what loss_gradients() should return,
// so central differences of it check the whole training graph.

#include "oracles.hpp"
#include "ste_oracle.hpp"
#include "streamcodec/codebook.hpp"
#include "streamcodec/pipeline/train.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing {

using streamcodec::pipeline::CodecModel;
using streamcodec::pipeline::ModelConfig;
using streamcodec::pipeline::TrainConfig;

/// Two blocks and a tiny quantizer; two channels by default.
inline ModelConfig micro_model_config(int channels = 2) {
  ModelConfig c;
  c.net.mdct_bins = 4;
  c.net.channels = channels;
  c.net.num_blocks = 2;
  c.net.resample = 2;
  c.net.block_kernel = 3;
  c.net.io_kernel = 3;
  c.net.latent_kernel = 2;
  c.net.expansion = 2;
  c.net.latent_dim = 4;
  c.quantizer.latent_dim = 4;
  c.quantizer.sq_stages = {streamcodec::rsvq::SqSchedule{{4, 5}}};
  c.quantizer.ivq_stages = {streamcodec::rsvq::IvqSchedule{3, 6}, streamcodec::rsvq::IvqSchedule{2, 5}};
  c.validate();
  return c;
}

struct ToyFrozen {
  Frozen quant;
  std::vector<std::vector<std::uint64_t>> tokens;
  std::vector<MatrixXd> projected;  // v' at the base point
  std::vector<MatrixXd> selected;   // c_k at the base point
};

inline ToyFrozen freeze_toy(const CodecModel& m, const TrainingForward<double>& f) {
  ToyFrozen fr;
  fr.quant = freeze(m.quantizer(), f);
  fr.tokens = f.ivq_tokens;
  fr.projected = f.ivq_projected;
  for (std::size_t j = 0; j < m.quantizer().ivq().size(); ++j)
    fr.selected.push_back(m.quantizer().ivq()[j].codebook(Eigen::all, indices(f.ivq_tokens[j])));
  return fr;
}

inline double toy_loss(const CodecModel& m, const std::vector<MatrixXd>& frames, const TrainConfig& cfg,
                       const ToyFrozen& fr) {
  const auto& q = m.quantizer();
  const Eigen::Index R = m.config().net.resample;
  Eigen::Index cols = 0;
  for (const auto& x : frames) cols += x.cols() / R;
  MatrixXd z(q.latent_dim(), cols);
  Eigen::Index at = 0;
  for (const auto& x : frames) {
    z.middleCols(at, x.cols() / R) = m.encoder().forward(x);
    at += x.cols() / R;
  }
  const auto o = surrogate(z, q, fr.quant);
  double sse = 0.0, count = 0.0;
  at = 0;
  for (const auto& x : frames) {
    sse += (m.decoder().forward(o.z_hat.middleCols(at, x.cols() / R)) - x).squaredNorm();
    count += static_cast<double>(x.size());
    at += x.cols() / R;
  }
  double loss = sse / count;
  for (std::size_t j = 0; j < q.ivq().size(); ++j) {
    const auto& p = q.ivq()[j];
    const MatrixXd now = p.codebook(Eigen::all, indices(fr.tokens[j]));
    const double n = static_cast<double>(now.cols());
    loss += (cfg.commitment_weight * (o.ivq_projected[j] - fr.selected[j]).squaredNorm() +
             (fr.projected[j] - now).squaredNorm()) / n;
    if (cfg.codebook_health)
      loss += cfg.balancing_weight *
              streamcodec::codebook::balancing_surrogate(o.ivq_projected[j], p.codebook, cfg.balancing_temperature)
                  .value;
  }
  return loss;
}

struct TensorGradient {
  std::string tensor;
  MatrixXd analytic;
  MatrixXd numeric;

  double relative_error() const { return testing::relative_error(analytic, numeric); }
};

/// Relative error of the gradient as one vector over all tensors.
inline double overall_relative_error(const std::vector<TensorGradient>& grads) {
  double diff = 0.0, scale = 1e-300;
  for (const auto& g : grads) {
    diff = std::max(diff, (g.analytic - g.numeric).cwiseAbs().maxCoeff());
    scale = std::max({scale, g.analytic.cwiseAbs().maxCoeff(), g.numeric.cwiseAbs().maxCoeff()});
  }
  return diff / scale;
}

/// loss_gradients() on `frames` next to central differences of the frozen
/// loss, for every tensor of the model.
inline std::vector<TensorGradient> check_toy_gradients(CodecModel& m, const std::vector<MatrixXd>& frames,
                                                         const TrainConfig& cfg) {
  for (auto* p : m.encoder().parameters()) p->zero_grad();
  for (auto* p : m.decoder().parameters()) p->zero_grad();
  const auto lg = streamcodec::pipeline::loss_gradients(m, frames, cfg);
  const ToyFrozen fr = freeze_toy(m, lg.forward);
  auto loss = [&] { return toy_loss(m, frames, cfg, fr); };

  std::vector<TensorGradient> out;
  auto compare = [&](const std::string& name, MatrixXd& value, const MatrixXd& analytic) {
    out.push_back({name, analytic, numeric_gradient(value, loss)});
  };
  for (auto* p : m.encoder().parameters()) compare(p->name, p->value, MatrixXd(p->grad));
  for (auto* p : m.decoder().parameters()) compare(p->name, p->value, MatrixXd(p->grad));
  auto& q = m.quantizer();
  for (std::size_t i = 0; i < q.sq().size(); ++i) {
    compare("rsvq.sq" + std::to_string(i) + ".down", q.sq()[i].down, lg.quantizer.sq[i].down);
    compare("rsvq.sq" + std::to_string(i) + ".up", q.sq()[i].up, lg.quantizer.sq[i].up);
  }
  for (std::size_t j = 0; j < q.ivq().size(); ++j) {
    compare("rsvq.ivq" + std::to_string(j) + ".down", q.ivq()[j].down, lg.quantizer.ivq[j].down);
    compare("rsvq.ivq" + std::to_string(j) + ".up", q.ivq()[j].up, lg.quantizer.ivq[j].up);
    compare("rsvq.ivq" + std::to_string(j) + ".codebook", q.ivq()[j].codebook, lg.quantizer.ivq[j].codebook);
  }
  return out;
}

/// A micro model and two segments whose base point sits at least 1e-3 away
/// from every rounding and Voronoi boundary.
inline std::pair<CodecModel, std::vector<MatrixXd>> micro_instance(std::uint64_t seed, int channels = 2) {
  const ModelConfig cfg = micro_model_config(channels);
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 rng(seed * 1000 + attempt);
    CodecModel m(cfg, seed * 1000 + attempt);
    for (auto* net : {&m.encoder().blocks(), &m.decoder().blocks()})
      for (auto& b : *net) {
        b.grn().gamma.value = random_matrix(b.grn().gamma.value.rows(), 1, rng, 0.5);
        b.grn().beta.value = random_matrix(b.grn().beta.value.rows(), 1, rng, 0.5);
      }
    for (auto& p : m.quantizer().sq()) p.down *= 3.0;
    for (auto& p : m.quantizer().ivq())
      p.codebook = random_matrix(p.codebook.rows(), p.codebook.cols(), rng, 0.5);
    std::vector<MatrixXd> frames{random_matrix(4, 6, rng), random_matrix(4, 4, rng)};
    MatrixXd z(4, 5);
    z << m.encoder().forward(frames[0]), m.encoder().forward(frames[1]);
    const auto f = streamcodec::rsvq::rsvq_forward_training<double>(z, m.quantizer());
    if (boundary_margin(m.quantizer(), f) >= 1e-3) return {std::move(m), std::move(frames)};
  }
}

}  // namespace testing
