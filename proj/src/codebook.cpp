#include "streamcodec/codebook.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_set>

namespace streamcodec::codebook {

Histogram& Histogram::operator+=(const Histogram& other) {
  if (other.counts.size() != counts.size()) throw ConfigError("histogram: size mismatch");
  counts += other.counts;
  total += other.total;
  return *this;
}

Histogram histogram(std::span<const std::uint64_t> tokens, int size) {
  Histogram h(size);
  for (auto t : tokens) {
    if (t >= static_cast<std::uint64_t>(size))
      throw TokenError("usage: token " + std::to_string(t) + " out of range");
    h.counts[static_cast<Eigen::Index>(t)] += 1.0;
  }
  h.total = static_cast<double>(tokens.size());
  return h;
}

UsageStats::UsageStats(int size, double decay) : counts(VectorXd::Zero(size)), ema_decay(decay) {
  if (size < 1) throw ConfigError("usage: codebook size must be positive");
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("usage: decay must lie in (0, 1)");
}

VectorXd UsageStats::posterior() const {
  if (total <= 0.0) return VectorXd::Constant(size(), 1.0 / size());
  return counts / total;
}

UsageStats fold(const UsageStats& stats, const Histogram& batch) {
  if (batch.total == 0.0) return stats;
  UsageStats out = stats;
  const double a = stats.ema_decay;
  out.counts = a * stats.counts + (1.0 - a) * batch.counts;
  out.total = a * stats.total + (1.0 - a) * batch.total;
  return out;
}

UsageStats update_usage(const UsageStats& stats, std::span<const std::uint64_t> tokens) {
  return fold(stats, histogram(tokens, stats.size()));
}

namespace {

double squared_distance(const MatrixXd& a, Eigen::Index i, const MatrixXd& b, Eigen::Index j) {
  return (a.col(i) - b.col(j)).squaredNorm();
}

}  // namespace

MatrixXd kmeans(const MatrixXd& features, int k, int iterations, std::mt19937_64& rng) {
  const auto n = features.cols();
  if (n == 0) throw ConfigError("kmeans: empty feature set");
  if (k < 1 || k > n) throw ConfigError("kmeans: k must lie in [1, n]");

  MatrixXd centroids(features.rows(), k);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.col(0) = features.col(pick(rng));
  VectorXd nearest(n);
  for (Eigen::Index i = 0; i < n; ++i) nearest[i] = squared_distance(features, i, centroids, 0);

  for (int c = 1; c < k; ++c) {
    const double mass = nearest.sum();
    Eigen::Index chosen = 0;
    if (mass > 0.0) {
      std::uniform_real_distribution<double> u(0.0, mass);
      double target = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        target -= nearest[i];
        if (target < 0.0) {
          chosen = i;
          break;
        }
      }
      // Rounding can leave the walk on an already-chosen point.
      if (nearest[chosen] <= 0.0) {
        for (Eigen::Index i = n; i-- > 0;) {
          if (nearest[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      }
    } else {
      chosen = pick(rng);
    }
    centroids.col(c) = features.col(chosen);
    for (Eigen::Index i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], squared_distance(features, i, centroids, c));
  }

  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = squared_distance(features, i, centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assignment[static_cast<std::size_t>(i)] != best) changed = true;
      assignment[static_cast<std::size_t>(i)] = best;
    }
    MatrixXd sums = MatrixXd::Zero(features.rows(), k);
    VectorXd sizes = VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.col(assignment[static_cast<std::size_t>(i)]) += features.col(i);
      sizes[assignment[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (sizes[c] > 0.0) centroids.col(c) = sums.col(c) / sizes[c];  // empty clusters keep their seed
    if (!changed) break;
  }
  return centroids;
}

std::vector<int> reinit_dead_codes(MatrixXd& codebook, const UsageStats& stats,
                                   const MatrixXd& features, double threshold,
                                   std::mt19937_64& rng, const ReinitOptions& options) {
  if (codebook.cols() != stats.size()) throw ConfigError("reinit: usage/codebook size mismatch");
  if (features.cols() == 0) throw ConfigError("reinit: empty feature batch");
  if (features.rows() != codebook.rows()) throw ConfigError("reinit: feature dimension mismatch");

  std::vector<int> dead;
  for (int k = 0; k < stats.size(); ++k)
    if (stats.counts[k] < threshold) dead.push_back(k);
  if (dead.empty()) return dead;

  const auto n_dead = static_cast<Eigen::Index>(dead.size());
  if (n_dead <= features.cols()) {
    const MatrixXd centroids = kmeans(features, static_cast<int>(n_dead), options.kmeans_iterations, rng);
    for (Eigen::Index c = 0; c < n_dead; ++c) codebook.col(dead[static_cast<std::size_t>(c)]) = centroids.col(c);
    return dead;
  }

  // More dead codes than features: resample with replacement and jitter so
  // duplicates can separate.
  const VectorXd mean = features.rowwise().mean();
  VectorXd spread = ((features.colwise() - mean).array().square().rowwise().mean()).sqrt();
  for (Eigen::Index m = 0; m < spread.size(); ++m)
    if (!(spread[m] > 0.0)) spread[m] = 1.0;
  std::uniform_int_distribution<Eigen::Index> pick(0, features.cols() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int k : dead) {
    VectorXd v = features.col(pick(rng));
    for (Eigen::Index m = 0; m < v.size(); ++m) v[m] += options.jitter * spread[m] * noise(rng);
    codebook.col(k) = v;
  }
  return dead;
}

DeadCodeTracker::DeadCodeTracker(int size, int window, double threshold_fraction)
    : dead_steps_(static_cast<std::size_t>(size), 0),
      window_(window),
      threshold_fraction_(threshold_fraction) {
  if (window < 1) throw ConfigError("dead-code window must be positive");
}

std::vector<int> DeadCodeTracker::step(MatrixXd& codebook, const UsageStats& stats,
                                       const MatrixXd& features, std::mt19937_64& rng,
                                       const ReinitOptions& options) {
  const double threshold = stats.dead_threshold(threshold_fraction_);
  UsageStats expired = stats;
  bool any = false;
  for (int k = 0; k < stats.size(); ++k) {
    auto& steps = dead_steps_[static_cast<std::size_t>(k)];
    steps = stats.counts[k] < threshold ? steps + 1 : 0;
    if (steps >= window_) {
      expired.counts[k] = -1.0;  // below any threshold
      any = true;
    } else {
      expired.counts[k] = std::numeric_limits<double>::infinity();
    }
  }
  if (!any) return {};
  auto replaced = reinit_dead_codes(codebook, expired, features, 0.0, rng, options);
  for (int k : replaced) dead_steps_[static_cast<std::size_t>(k)] = 0;
  return replaced;
}

double balancing_loss(const VectorXd& posterior, double eps) {
  const auto K = static_cast<double>(posterior.size());
  double sum = 0.0;
  for (Eigen::Index k = 0; k < posterior.size(); ++k) sum += std::log(posterior[k] + eps);
  return -sum / K;
}

double balancing_loss(const UsageStats& stats, double eps) { return balancing_loss(stats.posterior(), eps); }

LossGrad balancing_surrogate(const MatrixXd& projected, const MatrixXd& codebook, double temperature,
                             double eps) {
  const auto N = projected.cols();
  const auto K = codebook.cols();
  if (N == 0) throw ConfigError("balancing_surrogate: empty batch");
  // Soft assignments, one column per sample.
  MatrixXd probs(K, N);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index k = 0; k < K; ++k)
      probs(k, n) = -(projected.col(n) - codebook.col(k)).squaredNorm() / temperature;
    const double top = probs.col(n).maxCoeff();
    probs.col(n) = (probs.col(n).array() - top).exp();
    probs.col(n) /= probs.col(n).sum();
  }
  const VectorXd posterior = probs.rowwise().mean();

  LossGrad out;
  out.value = balancing_loss(posterior, eps);
  // dL/dP_k = -1 / (K (P_k + eps))
  const VectorXd g = (-1.0 / (static_cast<double>(K) * (posterior.array() + eps))).matrix();
  out.d_projected = MatrixXd::Zero(projected.rows(), N);
  out.d_codebook = MatrixXd::Zero(codebook.rows(), K);
  for (Eigen::Index n = 0; n < N; ++n) {
    const double mean_g = probs.col(n).dot(g);
    for (Eigen::Index k = 0; k < K; ++k) {
      // dL/dlogit_nk, with logit = -d_nk / temperature
      const double d_logit = probs(k, n) * (g[k] - mean_g) / static_cast<double>(N);
      if (d_logit == 0.0) continue;
      const double w = -2.0 * d_logit / temperature;
      out.d_projected.col(n) += w * (projected.col(n) - codebook.col(k));
      out.d_codebook.col(k) -= w * (projected.col(n) - codebook.col(k));
    }
  }
  return out;
}

double commitment_loss(const VectorXd& v_pre, const VectorXd& v_selected, double weight) {
  return commitment_loss_grad(v_pre, v_selected, weight).value;
}

CommitmentGrad commitment_loss_grad(const VectorXd& v_pre, const VectorXd& v_selected, double weight) {
  if (v_pre.size() != v_selected.size()) throw ConfigError("commitment_loss: dimension mismatch");
  const VectorXd diff = v_pre - v_selected;
  const double sq = diff.squaredNorm();
  return {weight * sq + sq, 2.0 * weight * diff, -2.0 * diff};
}

LossGrad commitment_loss_batch(const MatrixXd& projected, const MatrixXd& codebook,
                               std::span<const std::uint64_t> tokens, double weight) {
  const auto N = projected.cols();
  if (static_cast<std::size_t>(N) != tokens.size()) throw ConfigError("commitment_loss: token count mismatch");
  LossGrad out;
  out.d_projected = MatrixXd::Zero(projected.rows(), N);
  out.d_codebook = MatrixXd::Zero(codebook.rows(), codebook.cols());
  if (N == 0) return out;
  const double scale = 1.0 / static_cast<double>(N);
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto k = static_cast<Eigen::Index>(tokens[static_cast<std::size_t>(n)]);
    const auto g = commitment_loss_grad(projected.col(n), codebook.col(k), weight);
    out.value += scale * g.value;
    out.d_projected.col(n) = scale * g.d_pre;
    out.d_codebook.col(k) += scale * g.d_selected;
  }
  return out;
}

double cur(std::span<const std::uint64_t> tokens, std::uint64_t capacity) {
  if (tokens.empty()) throw MetricError("cur: empty token log");
  if (capacity == 0) throw MetricError("cur: zero capacity");
  std::unordered_set<std::uint64_t> seen(tokens.begin(), tokens.end());
  for (auto t : seen)
    if (t >= capacity) throw TokenError("cur: token " + std::to_string(t) + " out of range");
  return static_cast<double>(seen.size()) / static_cast<double>(capacity);
}

double entropy_bits(std::span<const std::uint64_t> tokens) {
  if (tokens.empty()) throw MetricError("entropy: empty token log");
  std::map<std::uint64_t, std::size_t> counts;  // ordered, so the sum is order-independent
  for (auto t : tokens) ++counts[t];
  const auto n = static_cast<double>(tokens.size());
  double h = 0.0;
  for (const auto& [token, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

double bitrate_efficiency(const std::vector<std::vector<std::uint64_t>>& stage_tokens,
                          std::span<const double> capacity_bits) {
  if (stage_tokens.empty() || stage_tokens.size() != capacity_bits.size())
    throw MetricError("bitrate_efficiency: need one token log per stage");
  double h = 0.0;
  double cap = 0.0;
  for (std::size_t s = 0; s < stage_tokens.size(); ++s) {
    h += entropy_bits(stage_tokens[s]);
    cap += capacity_bits[s];
  }
  if (cap <= 0.0) throw MetricError("bitrate_efficiency: zero capacity");
  return h / cap;
}

UtilizationReport utilization(const std::vector<std::vector<std::uint64_t>>& stage_tokens,
                              std::span<const std::uint64_t> capacities) {
  if (stage_tokens.size() != capacities.size()) throw MetricError("utilization: stage count mismatch");
  UtilizationReport r;
  std::vector<double> bits;
  for (std::size_t s = 0; s < stage_tokens.size(); ++s) {
    StageMetrics m;
    m.cur = cur(stage_tokens[s], capacities[s]);
    m.entropy_bits = entropy_bits(stage_tokens[s]);
    m.capacity_bits = std::log2(static_cast<double>(capacities[s]));
    bits.push_back(m.capacity_bits);
    r.stages.push_back(m);
  }
  r.bitrate_efficiency = bitrate_efficiency(stage_tokens, bits);
  r.window = stage_tokens.empty() ? 0 : stage_tokens.front().size();
  return r;
}

std::string UtilizationReport::to_record() const {
  nlohmann::ordered_json j;
  j["window"] = window;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : stages)
    j["stages"].push_back({{"cur", s.cur}, {"entropy_bits", s.entropy_bits}, {"capacity_bits", s.capacity_bits}});
  j["be"] = bitrate_efficiency;
  return j.dump();
}

}  // namespace streamcodec::codebook
