#pragma once

// Residual scalar-vector quantization.
//
// A quantizer is a cascade of scalar stages (bounded rounding on a projected
// latent, Cartesian-product grid) followed by vector stages (nearest
// codevector on a projected latent). Every stage consumes the running
// residual and its output is added to the reconstruction.

#include "streamcodec/common.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace streamcodec::rsvq {

/// How the per-coordinate offset o_b is derived from the level count.
///
/// `Parity` uses 1/2 for even and 0 for odd l_b, giving l_b symmetric levels.
/// `Half` evaluates o_b = |l_b mod 2 - 1/2|, which is 1/2 for both parities;
/// for odd l_b that gives l_b + 1 reachable levels and an asymmetric grid.
enum class OffsetRule { Parity, Half };

struct SqSchedule {
  std::vector<int> levels;
};

struct IvqSchedule {
  int code_dim = 0;
  int codebook_size = 0;
};

struct QuantizerConfig {
  int latent_dim = 0;
  std::vector<SqSchedule> sq_stages;
  std::vector<IvqSchedule> ivq_stages;
  OffsetRule offset_rule = OffsetRule::Parity;

  int num_stages() const noexcept {
    return static_cast<int>(sq_stages.size() + ivq_stages.size());
  }

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Stage capacity in bits, log2 of the codebook cardinality.
  double stage_bits(int stage) const;
  /// Codebook cardinality of stage `stage` (SQ stages first).
  std::uint64_t stage_capacity(int stage) const;

  /// One SQ with l = (4,4,4,4,4) and two 32-dim IVQs with 1024 codes, D = 32.
  static QuantizerConfig low_profile();
  /// Same, with l = (11,11,10,10,10,9).
  static QuantizerConfig high_profile();
  /// "low" or "high".
  static QuantizerConfig profile(const std::string& name);

  std::string to_json() const;
  static QuantizerConfig from_json(const std::string& text);
  static QuantizerConfig load(const std::filesystem::path& path);

  friend bool operator==(const QuantizerConfig& a, const QuantizerConfig& b);
};

inline bool operator==(const SqSchedule& a, const SqSchedule& b) { return a.levels == b.levels; }
inline bool operator==(const IvqSchedule& a, const IvqSchedule& b) {
  return a.code_dim == b.code_dim && a.codebook_size == b.codebook_size;
}
inline bool operator==(const QuantizerConfig& a, const QuantizerConfig& b) {
  return a.latent_dim == b.latent_dim && a.sq_stages == b.sq_stages &&
         a.ivq_stages == b.ivq_stages && a.offset_rule == b.offset_rule;
}

struct TokenFrame {
  std::vector<std::uint64_t> sq_tokens;
  std::vector<std::uint64_t> ivq_tokens;

  friend bool operator==(const TokenFrame&, const TokenFrame&) = default;
};

// ---------------------------------------------------------------------------
// Scalar grids

inline double half_width(int levels) { return 1.001 * (levels - 1) / 2.0; }

inline double level_offset(int levels, OffsetRule rule) {
  if (rule == OffsetRule::Half) return std::abs(levels % 2 - 0.5);
  return levels % 2 == 0 ? 0.5 : 0.0;
}

template <typename Scalar>
Scalar level_value(long q, int levels) {
  return Scalar(2) * static_cast<Scalar>(q) / static_cast<Scalar>(levels);
}

template <typename Scalar>
Scalar bounded(Scalar x, Scalar h, Scalar o) {
  return std::tanh(x + std::atanh(o / h)) * h - o;
}

/// 2 round(tanh(x + atanh(o/h)) h - o) / l. A non-decreasing step function of x.
template <typename Scalar>
Scalar sq_bound_round(Scalar x, int levels, Scalar h, Scalar o) {
  if (!std::isfinite(x)) throw NumericError("sq_bound_round: non-finite input");
  if (levels < 2) throw ConfigError("sq_bound_round: need at least two levels");
  const Scalar q = std::round(bounded(x, h, o));
  return level_value<Scalar>(static_cast<long>(q), levels);
}

/// Precomputed image of sq_bound_round for one coordinate. Digits index
/// `values`, so the encoder and decoder share the grid by construction.
template <typename Scalar>
struct ScalarGrid {
  int levels = 0;
  Scalar h = 0;
  Scalar o = 0;
  Scalar shift = 0;  // atanh(o / h)
  long q_min = 0;
  std::vector<Scalar> values;

  ScalarGrid() = default;
  ScalarGrid(int l, OffsetRule rule)
      : levels(l),
        h(static_cast<Scalar>(half_width(l))),
        o(static_cast<Scalar>(level_offset(l, rule))),
        shift(std::atanh(o / h)) {
    if (l < 2) throw ConfigError("scalar grid: need at least two levels");
    // tanh saturates to exactly +-1 in floating point, so the closed interval
    // endpoints are reachable.
    q_min = static_cast<long>(std::round(-h - o));
    const long q_max = static_cast<long>(std::round(h - o));
    for (long q = q_min; q <= q_max; ++q) values.push_back(level_value<Scalar>(q, l));
  }

  int size() const noexcept { return static_cast<int>(values.size()); }

  int digit(Scalar x) const {
    if (!std::isfinite(x)) throw NumericError("scalar quantizer: non-finite input");
    const long q = static_cast<long>(std::round(std::tanh(x + shift) * h - o));
    return static_cast<int>(q - q_min);
  }

  /// d/dx of the bounded (pre-rounding) value scaled onto the grid spacing.
  Scalar ste_slope(Scalar x) const {
    const Scalar t = std::tanh(x + shift);
    return Scalar(2) / static_cast<Scalar>(levels) * h * (Scalar(1) - t * t);
  }
};

// ---------------------------------------------------------------------------
// Mixed-radix tokens

/// T = sum_b d_b prod_{b' < b} l_b'.
inline std::uint64_t sq_tokenize(std::span<const int> digits, std::span<const int> radices) {
  if (digits.size() != radices.size()) throw TokenError("sq_tokenize: digit/radix count mismatch");
  std::uint64_t token = 0;
  std::uint64_t place = 1;
  for (std::size_t b = 0; b < digits.size(); ++b) {
    if (digits[b] < 0 || digits[b] >= radices[b]) {
      throw TokenError("sq_tokenize: digit " + std::to_string(digits[b]) + " out of range [0, " +
                       std::to_string(radices[b]) + ")");
    }
    token += static_cast<std::uint64_t>(digits[b]) * place;
    place *= static_cast<std::uint64_t>(radices[b]);
  }
  return token;
}

inline std::vector<int> sq_detokenize(std::uint64_t token, std::span<const int> radices) {
  std::uint64_t capacity = 1;
  for (int r : radices) capacity *= static_cast<std::uint64_t>(r);
  if (token >= capacity) {
    throw TokenError("sq_detokenize: token " + std::to_string(token) + " >= capacity " +
                     std::to_string(capacity));
  }
  std::vector<int> digits(radices.size());
  for (std::size_t b = 0; b < radices.size(); ++b) {
    const auto r = static_cast<std::uint64_t>(radices[b]);
    digits[b] = static_cast<int>(token % r);
    token /= r;
  }
  return digits;
}

// ---------------------------------------------------------------------------
// Stage parameters

template <typename Scalar>
struct SqParams {
  std::vector<ScalarGrid<Scalar>> grids;
  Matrix<Scalar> down;  // B x D
  Matrix<Scalar> up;    // D x B

  int dim() const noexcept { return static_cast<int>(grids.size()); }

  std::vector<int> radices() const {
    std::vector<int> r;
    r.reserve(grids.size());
    for (const auto& g : grids) r.push_back(g.size());
    return r;
  }

  std::uint64_t capacity() const {
    std::uint64_t c = 1;
    for (const auto& g : grids) c *= static_cast<std::uint64_t>(g.size());
    return c;
  }
};

template <typename Scalar>
struct IvqParams {
  Matrix<Scalar> down;      // M x D
  Matrix<Scalar> up;        // D x M
  Matrix<Scalar> codebook;  // M x K, one codevector per column

  int code_dim() const noexcept { return static_cast<int>(codebook.rows()); }
  int size() const noexcept { return static_cast<int>(codebook.cols()); }
};

template <typename Scalar>
struct SqResult {
  Vector<Scalar> output;      // U_s s_hat'
  Vector<Scalar> grid_point;  // s_hat'
  std::vector<int> digits;
  std::uint64_t token = 0;
};

template <typename Scalar>
SqResult<Scalar> sq_quantize(const Eigen::Ref<const Vector<Scalar>>& s, const SqParams<Scalar>& p) {
  const Vector<Scalar> projected = p.down * s;
  SqResult<Scalar> r;
  r.grid_point.resize(p.dim());
  r.digits.resize(static_cast<std::size_t>(p.dim()));
  for (int b = 0; b < p.dim(); ++b) {
    const int d = p.grids[b].digit(projected[b]);
    r.digits[b] = d;
    r.grid_point[b] = p.grids[b].values[d];
  }
  const auto radices = p.radices();
  r.token = sq_tokenize(r.digits, radices);
  r.output.noalias() = p.up * r.grid_point;
  return r;
}

/// Exhaustive nearest codevector; ties go to the lowest index.
template <typename Scalar>
std::uint64_t nearest_codevector(const Eigen::Ref<const Vector<Scalar>>& v,
                                 const Matrix<Scalar>& codebook) {
  std::uint64_t best = 0;
  Scalar best_d = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index k = 0; k < codebook.cols(); ++k) {
    Scalar d = 0;
    for (Eigen::Index m = 0; m < codebook.rows(); ++m) {
      const Scalar diff = v[m] - codebook(m, k);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint64_t>(k);
    }
  }
  return best;
}

template <typename Scalar>
struct IvqResult {
  Vector<Scalar> output;  // U_v v_k
  std::uint64_t token = 0;
};

template <typename Scalar>
IvqResult<Scalar> ivq_quantize(const Eigen::Ref<const Vector<Scalar>>& v, const IvqParams<Scalar>& p) {
  if (!v.allFinite()) throw NumericError("ivq_quantize: non-finite input");
  const Vector<Scalar> projected = p.down * v;
  IvqResult<Scalar> r;
  r.token = nearest_codevector<Scalar>(projected, p.codebook);
  r.output.noalias() = p.up * p.codebook.col(static_cast<Eigen::Index>(r.token));
  return r;
}

// ---------------------------------------------------------------------------
// Residual cascade

template <typename Scalar>
struct QuantizeResult {
  Vector<Scalar> z_hat;
  TokenFrame tokens;
  std::vector<Vector<Scalar>> stage_outputs;  // SQ stages, then IVQ stages
  std::vector<Vector<Scalar>> residuals;      // residual after each stage
};

/// Ridge right-inverse m^T (m m^T + lambda I)^-1, lambda = ridge * mean squared
/// singular value of m. U W then has eigenvalues in [0, 1), and the norm of U
/// stays bounded when m is close to singular.
template <typename Scalar>
Matrix<Scalar> ridge_inverse(const Matrix<Scalar>& m, double ridge = 0.1) {
  const auto rows = m.rows();
  const Scalar lambda = static_cast<Scalar>(ridge) * m.squaredNorm() / static_cast<Scalar>(rows);
  Matrix<Scalar> gram = m * m.transpose();
  gram.diagonal().array() += lambda;
  return gram.ldlt().solve(m).transpose();
}

template <typename Scalar>
class Quantizer {
 public:
  Quantizer() = default;

  /// Down projections uniform in +-1/sqrt(fan_in), up projections their
  /// ridge inverse (so no stage can grow the residual); codebooks uniform
  /// in +-1/K.
  template <typename Rng>
  static Quantizer random(const QuantizerConfig& cfg, Rng& rng) {
    cfg.validate();
    Quantizer q;
    q.config_ = cfg;
    const int D = cfg.latent_dim;
    auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double bound) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      Matrix<Scalar> m(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
      return m;
    };
    for (const auto& s : cfg.sq_stages) {
      SqParams<Scalar> p;
      for (int l : s.levels) p.grids.emplace_back(l, cfg.offset_rule);
      const auto B = static_cast<Eigen::Index>(s.levels.size());
      p.down = uniform(B, D, 1.0 / std::sqrt(static_cast<double>(D)));
      p.up = ridge_inverse(p.down);
      q.sq_.push_back(std::move(p));
    }
    for (const auto& v : cfg.ivq_stages) {
      IvqParams<Scalar> p;
      p.down = uniform(v.code_dim, D, 1.0 / std::sqrt(static_cast<double>(D)));
      p.up = ridge_inverse(p.down);
      p.codebook = uniform(v.code_dim, v.codebook_size, 1.0 / v.codebook_size);
      q.ivq_.push_back(std::move(p));
    }
    return q;
  }

  const QuantizerConfig& config() const noexcept { return config_; }
  int latent_dim() const noexcept { return config_.latent_dim; }

  std::vector<SqParams<Scalar>>& sq() noexcept { return sq_; }
  const std::vector<SqParams<Scalar>>& sq() const noexcept { return sq_; }
  std::vector<IvqParams<Scalar>>& ivq() noexcept { return ivq_; }
  const std::vector<IvqParams<Scalar>>& ivq() const noexcept { return ivq_; }

  /// Checks matrix shapes and finiteness against the schedule.
  void validate() const {
    config_.validate();
    const auto D = static_cast<Eigen::Index>(config_.latent_dim);
    if (sq_.size() != config_.sq_stages.size() || ivq_.size() != config_.ivq_stages.size())
      throw ConfigError("quantizer: stage count does not match schedule");
    for (std::size_t i = 0; i < sq_.size(); ++i) {
      const auto B = static_cast<Eigen::Index>(config_.sq_stages[i].levels.size());
      if (sq_[i].down.rows() != B || sq_[i].down.cols() != D || sq_[i].up.rows() != D ||
          sq_[i].up.cols() != B || static_cast<Eigen::Index>(sq_[i].grids.size()) != B)
        throw ConfigError("quantizer: SQ stage " + std::to_string(i) + " has wrong shape");
    }
    for (std::size_t j = 0; j < ivq_.size(); ++j) {
      const auto M = static_cast<Eigen::Index>(config_.ivq_stages[j].code_dim);
      const auto K = static_cast<Eigen::Index>(config_.ivq_stages[j].codebook_size);
      if (ivq_[j].down.rows() != M || ivq_[j].down.cols() != D || ivq_[j].up.rows() != D ||
          ivq_[j].up.cols() != M || ivq_[j].codebook.rows() != M || ivq_[j].codebook.cols() != K)
        throw ConfigError("quantizer: IVQ stage " + std::to_string(j) + " has wrong shape");
      if (!ivq_[j].codebook.allFinite())
        throw NumericError("quantizer: IVQ stage " + std::to_string(j) + " has non-finite codevectors");
    }
  }

  QuantizeResult<Scalar> quantize(const Eigen::Ref<const Vector<Scalar>>& z) const {
    if (z.size() != config_.latent_dim) throw ConfigError("rsvq_quantize: latent has wrong dimension");
    if (!z.allFinite()) throw NumericError("rsvq_quantize: non-finite latent");
    QuantizeResult<Scalar> r;
    r.z_hat = Vector<Scalar>::Zero(z.size());
    Vector<Scalar> residual = z;
    for (const auto& p : sq_) {
      auto s = sq_quantize<Scalar>(residual, p);
      r.z_hat += s.output;
      residual -= s.output;
      r.tokens.sq_tokens.push_back(s.token);
      r.stage_outputs.push_back(std::move(s.output));
      r.residuals.push_back(residual);
    }
    for (const auto& p : ivq_) {
      auto v = ivq_quantize<Scalar>(residual, p);
      r.z_hat += v.output;
      residual -= v.output;
      r.tokens.ivq_tokens.push_back(v.token);
      r.stage_outputs.push_back(std::move(v.output));
      r.residuals.push_back(residual);
    }
    return r;
  }

  /// Reconstruction from tokens, restricted to the first `stages` stages
  /// (SQ stages count first). Accumulation order matches quantize().
  Vector<Scalar> dequantize(const TokenFrame& tokens, int stages) const {
    check_tokens(tokens);
    Vector<Scalar> z_hat = Vector<Scalar>::Zero(config_.latent_dim);
    int used = 0;
    for (std::size_t i = 0; i < sq_.size() && used < stages; ++i, ++used) {
      const auto& p = sq_[i];
      const auto digits = sq_detokenize(tokens.sq_tokens[i], p.radices());
      Vector<Scalar> point(p.dim());
      for (int b = 0; b < p.dim(); ++b) point[b] = p.grids[b].values[digits[b]];
      Vector<Scalar> out;
      out.noalias() = p.up * point;
      z_hat += out;
    }
    for (std::size_t j = 0; j < ivq_.size() && used < stages; ++j, ++used) {
      const auto& p = ivq_[j];
      Vector<Scalar> out;
      out.noalias() = p.up * p.codebook.col(static_cast<Eigen::Index>(tokens.ivq_tokens[j]));
      z_hat += out;
    }
    return z_hat;
  }

  Vector<Scalar> dequantize(const TokenFrame& tokens) const {
    return dequantize(tokens, config_.num_stages());
  }

  void check_tokens(const TokenFrame& tokens) const {
    if (tokens.sq_tokens.size() != sq_.size() || tokens.ivq_tokens.size() != ivq_.size())
      throw TokenError("token frame does not match the quantizer schedule");
    for (std::size_t i = 0; i < sq_.size(); ++i)
      if (tokens.sq_tokens[i] >= sq_[i].capacity())
        throw TokenError("SQ token " + std::to_string(tokens.sq_tokens[i]) + " out of range");
    for (std::size_t j = 0; j < ivq_.size(); ++j)
      if (tokens.ivq_tokens[j] >= static_cast<std::uint64_t>(ivq_[j].size()))
        throw TokenError("IVQ token " + std::to_string(tokens.ivq_tokens[j]) + " out of range");
  }

  template <typename Other>
  Quantizer<Other> cast() const {
    Quantizer<Other> q;
    q.config_ = config_;
    for (const auto& p : sq_) {
      SqParams<Other> o;
      for (const auto& g : p.grids) o.grids.emplace_back(g.levels, config_.offset_rule);
      o.down = p.down.template cast<Other>();
      o.up = p.up.template cast<Other>();
      q.sq_.push_back(std::move(o));
    }
    for (const auto& p : ivq_) {
      IvqParams<Other> o;
      o.down = p.down.template cast<Other>();
      o.up = p.up.template cast<Other>();
      o.codebook = p.codebook.template cast<Other>();
      q.ivq_.push_back(std::move(o));
    }
    return q;
  }

  /// Assembles a quantizer from explicit parameters; grids are rebuilt from the schedule.
  static Quantizer from_parts(const QuantizerConfig& cfg, std::vector<SqParams<Scalar>> sq,
                              std::vector<IvqParams<Scalar>> ivq) {
    Quantizer q;
    q.config_ = cfg;
    q.sq_ = std::move(sq);
    for (std::size_t i = 0; i < q.sq_.size() && i < cfg.sq_stages.size(); ++i) {
      q.sq_[i].grids.clear();
      for (int l : cfg.sq_stages[i].levels) q.sq_[i].grids.emplace_back(l, cfg.offset_rule);
    }
    q.ivq_ = std::move(ivq);
    q.validate();
    return q;
  }

 private:
  template <typename>
  friend class Quantizer;

  QuantizerConfig config_;
  std::vector<SqParams<Scalar>> sq_;
  std::vector<IvqParams<Scalar>> ivq_;
};

template <typename Scalar>
QuantizeResult<Scalar> rsvq_quantize(const Eigen::Ref<const Vector<Scalar>>& z, const Quantizer<Scalar>& q) {
  return q.quantize(z);
}

template <typename Scalar>
Vector<Scalar> rsvq_dequantize(const TokenFrame& tokens, const Quantizer<Scalar>& q) {
  return q.dequantize(tokens);
}

// ---------------------------------------------------------------------------
// Training-time pass with straight-through gradients.
//
// Rounding and codevector selection are treated as identity in the backward
// pass; tanh bounding, projections and the residual arithmetic are exact.

/// Column index list for gathering codevectors.
inline std::vector<Eigen::Index> indices(const std::vector<std::uint64_t>& tokens) {
  return {tokens.begin(), tokens.end()};
}

template <typename Scalar>
struct TrainingForward {
  Matrix<Scalar> z_hat;                       // D x N
  std::vector<Matrix<Scalar>> stage_inputs;   // residual entering each stage
  std::vector<Matrix<Scalar>> stage_outputs;  // D x N per stage
  std::vector<Matrix<Scalar>> sq_projected;   // B x N, W_s r
  std::vector<Matrix<Scalar>> sq_points;      // B x N, s_hat'
  std::vector<Matrix<Scalar>> ivq_projected;  // M x N, W_v r
  std::vector<std::vector<std::uint64_t>> sq_tokens;
  std::vector<std::vector<std::uint64_t>> ivq_tokens;
  Matrix<Scalar> final_residual;
};

template <typename Scalar>
struct SqGrad {
  Matrix<Scalar> down, up;
};

template <typename Scalar>
struct IvqGrad {
  Matrix<Scalar> down, up, codebook;
};

template <typename Scalar>
struct QuantizerGrads {
  std::vector<SqGrad<Scalar>> sq;
  std::vector<IvqGrad<Scalar>> ivq;

  static QuantizerGrads zeros_like(const Quantizer<Scalar>& q) {
    QuantizerGrads g;
    for (const auto& p : q.sq())
      g.sq.push_back({Matrix<Scalar>::Zero(p.down.rows(), p.down.cols()),
                      Matrix<Scalar>::Zero(p.up.rows(), p.up.cols())});
    for (const auto& p : q.ivq())
      g.ivq.push_back({Matrix<Scalar>::Zero(p.down.rows(), p.down.cols()),
                       Matrix<Scalar>::Zero(p.up.rows(), p.up.cols()),
                       Matrix<Scalar>::Zero(p.codebook.rows(), p.codebook.cols())});
    return g;
  }
};

/// Forward pass over a D x N batch of latents; values equal quantize() column by column.
/// a * b one column at a time, so every column rounds exactly as the
/// single-vector inference path does.
template <typename Scalar>
Matrix<Scalar> columnwise_product(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  Matrix<Scalar> out(a.rows(), b.cols());
  Vector<Scalar> col;
  for (Eigen::Index n = 0; n < b.cols(); ++n) {
    col.noalias() = a * b.col(n);
    out.col(n) = col;
  }
  return out;
}

template <typename Scalar>
TrainingForward<Scalar> rsvq_forward_training(const Matrix<Scalar>& z, const Quantizer<Scalar>& q) {
  const auto N = z.cols();
  if (z.rows() != q.latent_dim()) throw ConfigError("rsvq_forward_training: latent has wrong dimension");
  if (!z.allFinite()) throw NumericError("rsvq_forward_training: non-finite latent");
  TrainingForward<Scalar> f;
  f.z_hat = Matrix<Scalar>::Zero(z.rows(), N);
  Matrix<Scalar> residual = z;
  for (const auto& p : q.sq()) {
    f.stage_inputs.push_back(residual);
    Matrix<Scalar> projected = columnwise_product(p.down, residual);
    Matrix<Scalar> points(p.dim(), N);
    std::vector<std::uint64_t> tokens(static_cast<std::size_t>(N));
    const auto radices = p.radices();
    std::vector<int> digits(static_cast<std::size_t>(p.dim()));
    for (Eigen::Index n = 0; n < N; ++n) {
      for (int b = 0; b < p.dim(); ++b) {
        digits[b] = p.grids[b].digit(projected(b, n));
        points(b, n) = p.grids[b].values[digits[b]];
      }
      tokens[static_cast<std::size_t>(n)] = sq_tokenize(digits, radices);
    }
    Matrix<Scalar> out = columnwise_product(p.up, points);
    f.z_hat += out;
    residual -= out;
    f.stage_outputs.push_back(std::move(out));
    f.sq_projected.push_back(std::move(projected));
    f.sq_points.push_back(std::move(points));
    f.sq_tokens.push_back(std::move(tokens));
  }
  for (const auto& p : q.ivq()) {
    f.stage_inputs.push_back(residual);
    Matrix<Scalar> projected = columnwise_product(p.down, residual);
    Matrix<Scalar> selected(p.code_dim(), N);
    std::vector<std::uint64_t> tokens(static_cast<std::size_t>(N));
    for (Eigen::Index n = 0; n < N; ++n) {
      const auto k = nearest_codevector<Scalar>(projected.col(n), p.codebook);
      tokens[static_cast<std::size_t>(n)] = k;
      selected.col(n) = p.codebook.col(static_cast<Eigen::Index>(k));
    }
    Matrix<Scalar> out = columnwise_product(p.up, selected);
    f.z_hat += out;
    residual -= out;
    f.stage_outputs.push_back(std::move(out));
    f.ivq_projected.push_back(std::move(projected));
    f.ivq_tokens.push_back(std::move(tokens));
  }
  f.final_residual = std::move(residual);
  return f;
}

/// Reverse pass. `d_z_hat` is dL/dz_hat (D x N); `d_ivq_projected[j]`, when
/// non-empty, adds dL/dv'_j from losses defined on the projected IVQ input.
/// Parameter gradients accumulate into `grads`; returns dL/dz.
template <typename Scalar>
Matrix<Scalar> rsvq_backward(const Quantizer<Scalar>& q, const TrainingForward<Scalar>& f,
                             const Matrix<Scalar>& d_z_hat,
                             const std::vector<Matrix<Scalar>>& d_ivq_projected,
                             QuantizerGrads<Scalar>& grads) {
  const auto N = d_z_hat.cols();
  const auto n_sq = q.sq().size();
  Matrix<Scalar> d_residual = Matrix<Scalar>::Zero(d_z_hat.rows(), N);
  for (std::size_t jj = q.ivq().size(); jj-- > 0;) {
    const auto& p = q.ivq()[jj];
    const Matrix<Scalar> d_out = d_z_hat - d_residual;
    const Matrix<Scalar> selected = p.codebook(Eigen::all, indices(f.ivq_tokens[jj]));
    grads.ivq[jj].up.noalias() += d_out * selected.transpose();
    Matrix<Scalar> d_proj = p.up.transpose() * d_out;
    if (jj < d_ivq_projected.size() && d_ivq_projected[jj].size() > 0) d_proj += d_ivq_projected[jj];
    grads.ivq[jj].down.noalias() += d_proj * f.stage_inputs[n_sq + jj].transpose();
    d_residual.noalias() += p.down.transpose() * d_proj;
  }
  for (std::size_t ii = n_sq; ii-- > 0;) {
    const auto& p = q.sq()[ii];
    const Matrix<Scalar> d_out = d_z_hat - d_residual;
    grads.sq[ii].up.noalias() += d_out * f.sq_points[ii].transpose();
    Matrix<Scalar> d_proj = p.up.transpose() * d_out;
    for (Eigen::Index n = 0; n < N; ++n)
      for (int b = 0; b < p.dim(); ++b) d_proj(b, n) *= p.grids[b].ste_slope(f.sq_projected[ii](b, n));
    grads.sq[ii].down.noalias() += d_proj * f.stage_inputs[ii].transpose();
    d_residual.noalias() += p.down.transpose() * d_proj;
  }
  return d_residual;
}

}  // namespace streamcodec::rsvq
