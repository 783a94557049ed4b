#include "streamcodec/pipeline/train.hpp"

#include "streamcodec/mdct.hpp"
#include "streamcodec/metrics.hpp"
#include "streamcodec/pipeline/session.hpp"

#include <json.hpp>

#include <numbers>
#include <sstream>

namespace streamcodec::pipeline {

namespace {

constexpr std::uint64_t kHeldoutOffset = 1'000'000;

std::seed_seq seeds(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return std::seed_seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                       static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
}

std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  auto seq = seeds(a, b, c);
  return std::mt19937_64(seq);
}

MatrixXd frames_matrix(std::span<const double> samples, int frame_shift) {
  const mdct::MdctConfig<double> cfg(frame_shift);
  const auto frames = mdct::analyze<double>(samples, cfg);
  MatrixXd m(frame_shift, static_cast<Eigen::Index>(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) m.col(static_cast<Eigen::Index>(t)) = frames[t].coefficients;
  return m;
}

void add_grads(const nn::ParameterList& into, const nn::ParameterList& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i]->grad += from[i]->grad;
}

void zero_grads(const nn::ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace

// ---------------------------------------------------------------------------
// Corpus

std::vector<double> SyntheticCorpus::generate(const CorpusConfig& cfg, std::uint64_t index) {
  auto rng = seeded(cfg.seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double fs = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(cfg.clip_seconds * fs));
  const int partials =
      std::uniform_int_distribution<int>(cfg.min_partials, cfg.max_partials)(rng);
  const double log_lo = std::log(cfg.min_frequency), log_hi = std::log(cfg.max_frequency_ratio * fs);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::vector<double> x(n, 0.0);
  for (int k = 0; k < partials; ++k) {
    const double freq = std::exp(uniform(log_lo, log_hi));
    const double amp = uniform(0.2, 1.0);
    const double phase = uniform(0.0, two_pi);
    const double env_rate = uniform(0.2, 3.0);
    const double env_phase = uniform(0.0, two_pi);
    const double depth = uniform(0.0, 0.9);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double env = 1.0 - depth * (0.5 + 0.5 * std::sin(two_pi * env_rate * t + env_phase));
      x[i] += amp * env * std::sin(two_pi * freq * t + phase);
    }
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double gain = peak > 0 ? uniform(0.3, 0.8) / peak : 0.0;
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  for (auto& v : x) v = gain * v + noise(rng);
  return x;
}

SyntheticCorpus::SyntheticCorpus(const CorpusConfig& cfg) : cfg_(cfg) {
  if (cfg.clips < 1 || cfg.clip_seconds <= 0 || cfg.min_partials < 1 || cfg.max_partials < cfg.min_partials)
    throw ConfigError("corpus: invalid configuration");
  clips_.reserve(static_cast<std::size_t>(cfg.clips));
  for (int i = 0; i < cfg.clips; ++i) clips_.push_back(generate(cfg, static_cast<std::uint64_t>(i)));
}

SyntheticCorpus heldout_corpus(const CorpusConfig& train, int clips) {
  CorpusConfig c = train;
  c.clips = clips;
  c.seed = train.seed + kHeldoutOffset;
  return SyntheticCorpus(c);
}

// ---------------------------------------------------------------------------
// Trainer

void TrainConfig::validate() const {
  if (steps < 0 || batch_clips < 1 || segment_latents < 1 || steps_per_epoch < 1)
    throw ConfigError("train: steps, batch and segment sizes must be positive");
  if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
  if (reinit_window < 1 || kmeans_iterations < 0 || !(dead_fraction >= 0 && dead_fraction < 1))
    throw ConfigError("train: invalid codebook-health settings");
  if (!(usage_decay > 0 && usage_decay < 1)) throw ConfigError("train: usage decay must be in (0, 1)");
}

std::string EpochRecord::to_record() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["mse"] = mse;
  j["commitment"] = commitment;
  j["balancing"] = balancing;
  j["total"] = total;
  j["reinitialized"] = reinitialized;
  j["utilization"] = nlohmann::ordered_json::parse(utilization.to_record());
  return j.dump();
}

Trainer::Trainer(CodecModel& model, const SyntheticCorpus& corpus, const TrainConfig& cfg)
    : model_(&model), corpus_(&corpus), cfg_(cfg), rng_(seeded(cfg.seed, 0x7a11)) {
  cfg.validate();
  if (corpus.config().sample_rate != model.config().sample_rate)
    throw ConfigError("train: corpus sample rate differs from the model");
  const auto need = static_cast<std::size_t>(cfg.segment_latents) * model.config().group_samples();
  if (corpus.clip(0).size() < need) throw ConfigError("train: clips are shorter than one segment");

  auto& q = model.quantizer();
  for (std::size_t i = 0; i < q.sq().size(); ++i) {
    qparams_.emplace_back("rsvq.sq" + std::to_string(i) + ".down", q.sq()[i].down.rows(), q.sq()[i].down.cols());
    qparams_.emplace_back("rsvq.sq" + std::to_string(i) + ".up", q.sq()[i].up.rows(), q.sq()[i].up.cols());
  }
  for (std::size_t j = 0; j < q.ivq().size(); ++j) {
    const auto& p = q.ivq()[j];
    qparams_.emplace_back("rsvq.ivq" + std::to_string(j) + ".down", p.down.rows(), p.down.cols());
    qparams_.emplace_back("rsvq.ivq" + std::to_string(j) + ".up", p.up.rows(), p.up.cols());
    qparams_.emplace_back("rsvq.ivq" + std::to_string(j) + ".codebook", p.codebook.rows(), p.codebook.cols());
    usage_.emplace_back(static_cast<int>(p.size()), cfg.usage_decay);
    trackers_.emplace_back(static_cast<int>(p.size()), cfg.reinit_window, cfg.dead_fraction);
  }
  sync_from_quantizer();

  nn::ParameterList params = model.encoder().parameters();
  for (auto* p : model.decoder().parameters()) params.push_back(p);
  for (auto& p : qparams_) params.push_back(&p);
  nn::Adam::Options opt;
  opt.learning_rate = cfg.learning_rate;
  adam_ = nn::Adam(params, opt);

  if (cfg.init_segments > 0) data_init();

  auto probe_rng = seeded(cfg.seed, 0x9e0b);
  probe_ = sample_batch(probe_rng);
  epoch_tokens_.resize(static_cast<std::size_t>(model.config().quantizer.num_stages()));
}

void Trainer::data_init() {
  auto& q = model_->quantizer();
  auto rng = seeded(cfg_.seed, 0x6b6d);
  TrainConfig warm = cfg_;
  warm.batch_clips = cfg_.init_segments;
  std::swap(cfg_, warm);
  const Batch batch = sample_batch(rng);
  std::swap(cfg_, warm);
  MatrixXd z(q.latent_dim(), 0);
  for (const auto& x : batch.frames) {
    const MatrixXd zi = model_->encoder().forward(x);
    z.conservativeResize(Eigen::NoChange, z.cols() + zi.cols());
    z.rightCols(zi.cols()) = zi;
  }
  // Stage by stage, so each stage is fitted to the residual left by the ones before it.
  for (std::size_t i = 0; i < q.sq().size() && cfg_.sq_init_std > 0; ++i) {
    const auto f = rsvq::rsvq_forward_training<double>(z, q);
    const MatrixXd& p = f.sq_projected[i];
    for (Eigen::Index b = 0; b < p.rows(); ++b) {
      const double mean = p.row(b).mean();
      const double sd = std::sqrt((p.row(b).array() - mean).square().mean());
      if (sd > 0) q.sq()[i].down.row(b) *= cfg_.sq_init_std / sd;
    }
    q.sq()[i].up = rsvq::ridge_inverse<double>(q.sq()[i].down);
  }
  sync_from_quantizer();
}

Trainer::Batch Trainer::sample_batch(std::mt19937_64& rng) const {
  const auto L = static_cast<std::size_t>(cfg_.segment_latents) * model_->config().group_samples();
  Batch b;
  std::uniform_int_distribution<int> pick(0, corpus_->size() - 1);
  for (int i = 0; i < cfg_.batch_clips; ++i) {
    const auto& clip = corpus_->clip(pick(rng));
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, clip.size() - L)(rng);
    b.frames.push_back(frames_matrix(std::span(clip).subspan(start, L), model_->config().frame_shift()));
  }
  return b;
}

void Trainer::sync_from_quantizer() {
  std::size_t at = 0;
  for (const auto& p : model_->quantizer().sq()) {
    qparams_[at++].value = p.down;
    qparams_[at++].value = p.up;
  }
  for (const auto& p : model_->quantizer().ivq()) {
    qparams_[at++].value = p.down;
    qparams_[at++].value = p.up;
    qparams_[at++].value = p.codebook;
  }
}

void Trainer::sync_to_quantizer() {
  std::size_t at = 0;
  for (auto& p : model_->quantizer().sq()) {
    p.down = qparams_[at++].value;
    p.up = qparams_[at++].value;
  }
  for (auto& p : model_->quantizer().ivq()) {
    p.down = qparams_[at++].value;
    p.up = qparams_[at++].value;
    p.codebook = qparams_[at++].value;
  }
}

LossGradients loss_gradients(CodecModel& model, std::span<const MatrixXd> frames, const TrainConfig& cfg) {
  const auto& q = model.quantizer();
  const auto B = static_cast<Eigen::Index>(frames.size());
  const Eigen::Index D = q.latent_dim();
  const Eigen::Index R = model.config().net.resample;

  // Each segment gets its own copy of the networks so activation records do not collide.
  std::vector<nn::Encoder> encoders(frames.size(), model.encoder());
  std::vector<nn::Decoder> decoders(frames.size(), model.decoder());
  std::vector<Eigen::Index> offset(frames.size() + 1, 0);
  for (Eigen::Index b = 0; b < B; ++b) {
    if (frames[b].rows() != model.config().frame_shift() || frames[b].cols() % R != 0)
      throw ConfigError("train: segment shape does not fit the model");
    offset[b + 1] = offset[b] + frames[b].cols() / R;
  }

  MatrixXd z(D, offset[B]);
  for (Eigen::Index b = 0; b < B; ++b) {
    zero_grads(encoders[b].parameters());
    zero_grads(decoders[b].parameters());
    z.middleCols(offset[b], offset[b + 1] - offset[b]) = encoders[b].forward_train(frames[b]);
  }
  LossGradients out{{}, rsvq::rsvq_forward_training<double>(z, q), rsvq::QuantizerGrads<double>::zeros_like(q)};
  const auto& f = out.forward;

  double count = 0.0;
  for (const auto& x : frames) count += static_cast<double>(x.size());
  double sse = 0.0;
  MatrixXd d_z_hat(D, z.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto cols = offset[b + 1] - offset[b];
    const MatrixXd diff = decoders[b].forward_train(f.z_hat.middleCols(offset[b], cols)) - frames[b];
    sse += diff.squaredNorm();
    d_z_hat.middleCols(offset[b], cols) = decoders[b].backward((2.0 / count) * diff);
  }

  StepRecord& rec = out.record;
  rec.mse = sse / count;
  auto& grads = out.quantizer;
  std::vector<MatrixXd> d_projected(q.ivq().size());
  for (std::size_t j = 0; j < q.ivq().size(); ++j) {
    const auto& p = q.ivq()[j];
    const auto c = codebook::commitment_loss_batch(f.ivq_projected[j], p.codebook, f.ivq_tokens[j],
                                                   cfg.commitment_weight);
    rec.commitment += c.value;
    d_projected[j] = c.d_projected;
    grads.ivq[j].codebook += c.d_codebook;
    const auto s = codebook::balancing_surrogate(f.ivq_projected[j], p.codebook, cfg.balancing_temperature);
    rec.balancing += s.value;
    if (cfg.codebook_health) {
      d_projected[j] += cfg.balancing_weight * s.d_projected;
      grads.ivq[j].codebook += cfg.balancing_weight * s.d_codebook;
    }
  }
  rec.total = rec.mse + rec.commitment + (cfg.codebook_health ? cfg.balancing_weight * rec.balancing : 0.0);
  if (!std::isfinite(rec.total)) {
    std::ostringstream os;
    os << "non-finite loss (mse " << rec.mse << ", commitment " << rec.commitment << ", balancing "
       << rec.balancing << ")";
    throw TrainingError(os.str());
  }

  const MatrixXd d_z = rsvq::rsvq_backward<double>(q, f, d_z_hat, d_projected, grads);
  for (Eigen::Index b = 0; b < B; ++b) {
    encoders[b].backward(d_z.middleCols(offset[b], offset[b + 1] - offset[b]));
    add_grads(model.encoder().parameters(), encoders[b].parameters());
    add_grads(model.decoder().parameters(), decoders[b].parameters());
  }
  return out;
}

StepRecord Trainer::step() {
  auto& q = model_->quantizer();
  const Batch batch = sample_batch(rng_);
  zero_grads(adam_.parameters());
  LossGradients lg;
  try {
    lg = loss_gradients(*model_, batch.frames, cfg_);
  } catch (const TrainingError& e) {
    throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step_));
  } catch (const NumericError& e) {
    throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step_));
  }
  const auto& f = lg.forward;
  const auto& grads = lg.quantizer;
  StepRecord rec = lg.record;
  rec.step = step_;

  sync_from_quantizer();
  std::size_t at = 0;
  for (const auto& g : grads.sq) {
    qparams_[at++].grad = g.down;
    qparams_[at++].grad = g.up;
  }
  for (const auto& g : grads.ivq) {
    qparams_[at++].grad = g.down;
    qparams_[at++].grad = g.up;
    qparams_[at++].grad = g.codebook;
  }
  for (auto* p : adam_.parameters())
    if (!p->grad.allFinite()) throw TrainingError("non-finite gradient in " + p->name + " at step " + std::to_string(step_));
  adam_.step();
  sync_to_quantizer();

  for (std::size_t j = 0; j < q.ivq().size(); ++j) {
    usage_[j] = codebook::update_usage(usage_[j], f.ivq_tokens[j]);
    if (!cfg_.codebook_health) continue;
    auto krng = seeded(cfg_.seed, static_cast<std::uint64_t>(step_), j + 1);
    codebook::ReinitOptions opt;
    opt.kmeans_iterations = cfg_.kmeans_iterations;
    rec.reinitialized += static_cast<int>(
        trackers_[j].step(q.ivq()[j].codebook, usage_[j], f.ivq_projected[j], krng, opt).size());
  }

  for (std::size_t s = 0; s < f.sq_tokens.size(); ++s)
    epoch_tokens_[s].insert(epoch_tokens_[s].end(), f.sq_tokens[s].begin(), f.sq_tokens[s].end());
  for (std::size_t j = 0; j < f.ivq_tokens.size(); ++j) {
    auto& log = epoch_tokens_[f.sq_tokens.size() + j];
    log.insert(log.end(), f.ivq_tokens[j].begin(), f.ivq_tokens[j].end());
  }
  epoch_steps_.push_back(rec);
  ++step_;
  return rec;
}

std::vector<EpochRecord> Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> epochs;
  const auto& qcfg = model_->config().quantizer;
  std::vector<std::uint64_t> capacities;
  for (int s = 0; s < qcfg.num_stages(); ++s) capacities.push_back(qcfg.stage_capacity(s));

  auto close_epoch = [&] {
    EpochRecord e;
    e.epoch = static_cast<long>(epochs.size());
    e.step = step_;
    for (const auto& r : epoch_steps_) {
      e.mse += r.mse;
      e.commitment += r.commitment;
      e.balancing += r.balancing;
      e.total += r.total;
      e.reinitialized += r.reinitialized;
    }
    const auto n = static_cast<double>(epoch_steps_.size());
    e.mse /= n;
    e.commitment /= n;
    e.balancing /= n;
    e.total /= n;
    e.utilization = codebook::utilization(epoch_tokens_, capacities);
    for (auto& t : epoch_tokens_) t.clear();
    epoch_steps_.clear();
    if (on_epoch) on_epoch(e);
    epochs.push_back(std::move(e));
  };

  while (step_ < cfg_.steps) {
    step();
    if (step_ % cfg_.steps_per_epoch == 0) close_epoch();
  }
  if (!epoch_steps_.empty()) close_epoch();
  return epochs;
}

double Trainer::probe_mse() const {
  double sse = 0.0, count = 0.0;
  for (const auto& x : probe_.frames) {
    const MatrixXd z = model_->encoder().forward(x);
    MatrixXd z_hat(z.rows(), z.cols());
    for (Eigen::Index u = 0; u < z.cols(); ++u) z_hat.col(u) = model_->quantizer().quantize(z.col(u)).z_hat;
    sse += (model_->decoder().forward(z_hat) - x).squaredNorm();
    count += static_cast<double>(x.size());
  }
  return sse / count;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<std::vector<std::uint64_t>> corpus_tokens(const CodecModel& model, const SyntheticCorpus& corpus,
                                                      std::size_t max_frames) {
  const auto& qcfg = model.config().quantizer;
  const std::size_t n_sq = qcfg.sq_stages.size();
  std::vector<std::vector<std::uint64_t>> tokens(static_cast<std::size_t>(qcfg.num_stages()));
  std::size_t frames = 0;
  for (int c = 0; c < corpus.size() && (max_frames == 0 || frames < max_frames); ++c) {
    EncodeSession session(model);
    auto out = session.push(corpus.clip(c));
    for (auto& f : session.flush()) out.push_back(std::move(f));
    for (const auto& f : out) {
      if (max_frames != 0 && frames >= max_frames) break;
      for (std::size_t s = 0; s < n_sq; ++s) tokens[s].push_back(f.sq_tokens[s]);
      for (std::size_t j = 0; j < f.ivq_tokens.size(); ++j) tokens[n_sq + j].push_back(f.ivq_tokens[j]);
      ++frames;
    }
  }
  return tokens;
}

codebook::UtilizationReport evaluate_utilization(const CodecModel& model, const SyntheticCorpus& corpus,
                                                 std::size_t max_frames) {
  const auto& qcfg = model.config().quantizer;
  std::vector<std::uint64_t> capacities;
  for (int s = 0; s < qcfg.num_stages(); ++s) capacities.push_back(qcfg.stage_capacity(s));
  return codebook::utilization(corpus_tokens(model, corpus, max_frames), capacities);
}

double mean_partial_lsd(const CodecModel& model, const SyntheticCorpus& corpus, int stages) {
  const auto lcfg = metrics::LsdConfig::for_sample_rate(model.config().sample_rate);
  const auto delay = static_cast<std::size_t>(model.config().frame_shift());
  double sum = 0.0;
  for (int c = 0; c < corpus.size(); ++c) {
    const auto& x = corpus.clip(c);
    EncodeSession enc(model);
    auto frames = enc.push(x);
    for (auto& f : enc.flush()) frames.push_back(std::move(f));
    DecodeSession dec(model, stages);
    std::vector<double> y;
    for (const auto& f : frames) {
      const auto chunk = dec.push(f);
      y.insert(y.end(), chunk.begin(), chunk.end());
    }
    const std::size_t n = std::min(x.size(), y.size() - delay);
    sum += metrics::lsd(std::span(x).first(n), std::span(y).subspan(delay, n), lcfg);
  }
  return sum / corpus.size();
}

}  // namespace streamcodec::pipeline
