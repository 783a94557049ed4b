#pragma once

// Codebook health for vector stages: usage statistics, dead-code
// reinitialisation by clustering, balancing and commitment losses, and the
// utilisation metrics (CUR, BE).

#include "streamcodec/common.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace streamcodec::codebook {

constexpr double kLogFloor = 1e-10;

/// Per-code selection counts of one batch. Merging is plain addition, so
/// batch-parallel accumulation can be folded once afterwards.
struct Histogram {
  VectorXd counts;
  double total = 0.0;

  explicit Histogram(int size) : counts(VectorXd::Zero(size)) {}
  Histogram& operator+=(const Histogram& other);
};

Histogram histogram(std::span<const std::uint64_t> tokens, int size);

/// Exponentially averaged selection frequencies.
struct UsageStats {
  VectorXd counts;
  double total = 0.0;
  double ema_decay = 0.99;

  explicit UsageStats(int size, double decay = 0.99);
  int size() const noexcept { return static_cast<int>(counts.size()); }
  /// counts / total, or uniform before the first update.
  VectorXd posterior() const;
  /// 1% of the uniform expectation by default.
  double dead_threshold(double fraction = 0.01) const { return fraction * total / size(); }
};

/// counts <- decay counts + (1 - decay) histogram. An empty batch is a no-op.
UsageStats update_usage(const UsageStats& stats, std::span<const std::uint64_t> tokens);
UsageStats fold(const UsageStats& stats, const Histogram& batch);

/// k-means++ seeding followed by `iterations` Lloyd steps. Features are
/// columns of an M x N matrix; returns M x k centroids.
MatrixXd kmeans(const MatrixXd& features, int k, int iterations, std::mt19937_64& rng);

struct ReinitOptions {
  int kmeans_iterations = 10;
  double jitter = 1e-3;  // relative to the per-dimension spread of the batch
};

/// Replaces every codevector (column) whose usage is below `threshold` with a
/// cluster representative of `features`. Live codes are untouched. Returns
/// the replaced indices.
std::vector<int> reinit_dead_codes(MatrixXd& codebook, const UsageStats& stats,
                                   const MatrixXd& features, double threshold,
                                   std::mt19937_64& rng, const ReinitOptions& options = {});

/// Applies reinit_dead_codes only to codes that stayed below threshold for
/// `window` consecutive checks, so fresh replacements get time to attract data.
class DeadCodeTracker {
 public:
  DeadCodeTracker(int size, int window, double threshold_fraction = 0.01);

  std::vector<int> step(MatrixXd& codebook, const UsageStats& stats, const MatrixXd& features,
                        std::mt19937_64& rng, const ReinitOptions& options = {});

  int window() const noexcept { return window_; }

 private:
  std::vector<int> dead_steps_;
  int window_;
  double threshold_fraction_;
};

/// Cross-entropy between the uniform prior and the usage posterior,
/// -(1/K) sum_k log(P_post[k] + eps).
double balancing_loss(const UsageStats& stats, double eps = kLogFloor);
double balancing_loss(const VectorXd& posterior, double eps = kLogFloor);

struct LossGrad {
  double value = 0.0;
  MatrixXd d_projected;  // M x N
  MatrixXd d_codebook;   // M x K
};

/// Differentiable stand-in for the balancing loss on one batch: the posterior
/// is the batch mean of softmax(-||v' - c_k||^2 / temperature).
LossGrad balancing_surrogate(const MatrixXd& projected, const MatrixXd& codebook,
                             double temperature = 1.0, double eps = kLogFloor);

/// weight ||v_pre - sg(v_sel)||^2 + ||sg(v_pre) - v_sel||^2.
double commitment_loss(const VectorXd& v_pre, const VectorXd& v_selected, double weight);

struct CommitmentGrad {
  double value = 0.0;
  VectorXd d_pre;
  VectorXd d_selected;
};

CommitmentGrad commitment_loss_grad(const VectorXd& v_pre, const VectorXd& v_selected, double weight);

/// Batch mean of the commitment loss over columns of `projected`.
LossGrad commitment_loss_batch(const MatrixXd& projected, const MatrixXd& codebook,
                               std::span<const std::uint64_t> tokens, double weight);

/// Fraction of the `capacity` codes selected at least once.
double cur(std::span<const std::uint64_t> tokens, std::uint64_t capacity);

/// Empirical entropy of the token distribution in bits.
double entropy_bits(std::span<const std::uint64_t> tokens);

/// sum_s H(stage s) / sum_s capacity_bits[s].
double bitrate_efficiency(const std::vector<std::vector<std::uint64_t>>& stage_tokens,
                          std::span<const double> capacity_bits);

struct StageMetrics {
  double cur = 0.0;
  double entropy_bits = 0.0;
  double capacity_bits = 0.0;
};

struct UtilizationReport {
  std::vector<StageMetrics> stages;
  double bitrate_efficiency = 0.0;
  std::size_t window = 0;

  /// One-line structured record.
  std::string to_record() const;
};

UtilizationReport utilization(const std::vector<std::vector<std::uint64_t>>& stage_tokens,
                              std::span<const std::uint64_t> capacities);

}  // namespace streamcodec::codebook
