#pragma once

// Toy-scale training on a synthetic corpus.
//
// Loss per step: mean squared error between the MDCT of the input and the
// decoded MDCT frames, plus the commitment term for every IVQ stage, plus
// (with codebook health enabled) the balancing surrogate. Dead IVQ codes are
// re-seeded from recent projected features after a full window of disuse.

#include "streamcodec/codebook.hpp"
#include "streamcodec/nn/optim.hpp"
#include "streamcodec/pipeline/model.hpp"
#include "streamcodec/pipeline/wav.hpp"

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace streamcodec::pipeline {

struct CorpusConfig {
  int sample_rate = 16000;
  double clip_seconds = 2.0;
  int clips = 128;
  std::uint64_t seed = 7;
  int min_partials = 3;
  int max_partials = 8;
  double min_frequency = 60.0;
  double max_frequency_ratio = 0.4;  // of the sample rate
  double noise_std = 0.003;
};

/// Sums of enveloped sinusoids plus low-level noise. Clip i depends only on
/// (seed, i), so any clip can be regenerated independently.
class SyntheticCorpus {
 public:
  explicit SyntheticCorpus(const CorpusConfig& cfg);

  const CorpusConfig& config() const noexcept { return cfg_; }
  int size() const noexcept { return cfg_.clips; }
  const std::vector<double>& clip(int i) const { return clips_.at(static_cast<std::size_t>(i)); }

  static std::vector<double> generate(const CorpusConfig& cfg, std::uint64_t index);

 private:
  CorpusConfig cfg_;
  std::vector<std::vector<double>> clips_;
};

/// Held-out clips: same generator, disjoint index range.
SyntheticCorpus heldout_corpus(const CorpusConfig& train, int clips);

struct TrainConfig {
  long steps = 200;
  std::uint64_t seed = 7;
  int batch_clips = 4;
  int segment_latents = 32;
  double learning_rate = 2e-4;
  double commitment_weight = 0.25;
  double balancing_weight = 1.0;
  double balancing_temperature = 1.0;
  bool codebook_health = true;  // dead-code reinit and balancing loss
  int reinit_window = 100;
  double dead_fraction = 0.01;
  double usage_decay = 0.99;
  int kmeans_iterations = 10;
  int init_segments = 64;    // warm-up segments for data-dependent initialisation
  double sq_init_std = 1.2;  // SQ projections rescaled to this spread before step 0; 0 disables
  int steps_per_epoch = 100;

  void validate() const;
};

struct StepRecord {
  long step = 0;
  double mse = 0.0;
  double commitment = 0.0;
  double balancing = 0.0;  // batch surrogate; logged even when it is not part of the loss
  double total = 0.0;
  int reinitialized = 0;
};

struct EpochRecord {
  long epoch = 0;
  long step = 0;
  double mse = 0.0;
  double commitment = 0.0;
  double balancing = 0.0;
  double total = 0.0;
  int reinitialized = 0;
  codebook::UtilizationReport utilization;  // tokens seen during the epoch

  std::string to_record() const;
};

struct LossGradients {
  StepRecord record;  // loss terms; step is left at 0
  rsvq::TrainingForward<double> forward;
  rsvq::QuantizerGrads<double> quantizer;
};

/// Training loss over MDCT segments (w_s x T, T a multiple of R) and its
/// gradient. Network gradients are added to the model's parameter grads;
/// quantizer gradients are returned.
LossGradients loss_gradients(CodecModel& model, std::span<const MatrixXd> frames, const TrainConfig& cfg);

class Trainer {
 public:
  Trainer(CodecModel& model, const SyntheticCorpus& corpus, const TrainConfig& cfg);

  /// One optimizer step. Throws TrainingError on a non-finite loss.
  StepRecord step();
  /// Runs the remaining steps, calling `on_epoch` after every epoch.
  std::vector<EpochRecord> run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  /// MDCT MSE of the current model on a fixed batch, without updating.
  double probe_mse() const;

  long steps_done() const noexcept { return step_; }
  const std::vector<codebook::UsageStats>& usage() const noexcept { return usage_; }

 private:
  struct Batch {
    std::vector<MatrixXd> frames;  // per clip, w_s x T
  };
  Batch sample_batch(std::mt19937_64& rng) const;
  void data_init();
  void sync_from_quantizer();
  void sync_to_quantizer();

  CodecModel* model_;
  const SyntheticCorpus* corpus_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  Batch probe_;
  long step_ = 0;

  std::vector<nn::Parameter> qparams_;
  nn::Adam adam_;
  std::vector<codebook::UsageStats> usage_;
  std::vector<codebook::DeadCodeTracker> trackers_;

  std::vector<std::vector<std::uint64_t>> epoch_tokens_;
  std::vector<StepRecord> epoch_steps_;
};

/// Stage tokens of a corpus encoded with the model.
std::vector<std::vector<std::uint64_t>> corpus_tokens(const CodecModel& model, const SyntheticCorpus& corpus,
                                                      std::size_t max_frames = 0);

/// CUR and BE over the tokens of a corpus.
codebook::UtilizationReport evaluate_utilization(const CodecModel& model, const SyntheticCorpus& corpus,
                                                 std::size_t max_frames = 0);

/// Mean LSD between each clip and its decode using only the first `stages` stages.
double mean_partial_lsd(const CodecModel& model, const SyntheticCorpus& corpus, int stages);

}  // namespace streamcodec::pipeline
