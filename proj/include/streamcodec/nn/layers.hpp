#pragma once

// Causal sequence layers on channels x time matrices (one column per step).
//
// Every layer offers two paths:
//  * infer(): column-by-column evaluation used for both batch and streaming
//    inference. A column's value never depends on how many columns are
//    processed together, which makes chunked and whole-input runs bit-identical.
//  * forward_train()/backward(): matrix-at-a-time evaluation with a cached
//    activation record for the reverse pass.

#include "streamcodec/common.hpp"

#include <random>
#include <string>
#include <vector>

namespace streamcodec::nn {

struct Parameter {
  std::string name;
  MatrixXd value;
  MatrixXd grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(MatrixXd::Zero(rows, cols)), grad(MatrixXd::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

using ParameterList = std::vector<Parameter*>;

void init_uniform(MatrixXd& m, double bound, std::mt19937_64& rng);

// ---------------------------------------------------------------------------

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  int in_channels() const noexcept { return static_cast<int>(weight.value.cols()); }
  int out_channels() const noexcept { return static_cast<int>(weight.value.rows()); }

  void init(std::mt19937_64& rng);
  MatrixXd infer(const MatrixXd& x) const;
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);
  ParameterList parameters() { return {&weight, &bias}; }

  Parameter weight, bias;

 private:
  MatrixXd x_;
};

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_size = 1;
  int stride = 1;
  int dilation = 1;

  /// Input columns preceding a chunk that the chunk's outputs may read.
  int history() const;
};

/// y[t] = b + sum_k W_k x[t*s + s - 1 - (K - 1 - k) d]; zero left padding.
class CausalConv1d {
 public:
  CausalConv1d() = default;
  CausalConv1d(const std::string& name, const ConvSpec& spec);

  const ConvSpec& spec() const noexcept { return spec_; }
  MatrixXd zero_history() const;

  void init(std::mt19937_64& rng);
  /// `history` holds the input columns preceding `x` and is advanced past `x`.
  /// x.cols() must be a multiple of the stride.
  MatrixXd infer(MatrixXd& history, const MatrixXd& x) const;
  MatrixXd infer(const MatrixXd& x) const {
    MatrixXd h = zero_history();
    return infer(h, x);
  }
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);
  ParameterList parameters() { return {&weight, &bias}; }

  Parameter weight;  // out x (K * in), tap-major blocks
  Parameter bias;

 private:
  void gather(const MatrixXd& padded, Eigen::Index t, double* column) const;

  ConvSpec spec_;
  MatrixXd columns_;  // (K * in) x T_out
  Eigen::Index input_cols_ = 0;
};

/// Upsampling by `factor`: latent u feeds output steps [uR, uR + R) plus
/// (taps - 1) later groups. Output step t reads only latents <= floor(t / R).
class TransposedCausalConv1d {
 public:
  TransposedCausalConv1d() = default;
  TransposedCausalConv1d(const std::string& name, int in, int out, int factor, int taps = 1);

  int factor() const noexcept { return factor_; }
  int taps() const noexcept { return taps_; }
  MatrixXd zero_history() const;

  void init(std::mt19937_64& rng);
  MatrixXd infer(MatrixXd& history, const MatrixXd& x) const;
  MatrixXd infer(const MatrixXd& x) const {
    MatrixXd h = zero_history();
    return infer(h, x);
  }
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);
  ParameterList parameters() { return {&weight, &bias}; }

  Parameter weight;  // (R * out) x (taps * in); row block r is output phase r
  Parameter bias;    // out x 1

 private:
  int in_ = 0, out_ = 0, factor_ = 1, taps_ = 1;
  MatrixXd columns_;
  Eigen::Index input_cols_ = 0;
};

class DepthwiseCausalConv1d {
 public:
  DepthwiseCausalConv1d() = default;
  DepthwiseCausalConv1d(const std::string& name, int channels, int kernel_size);

  int kernel_size() const noexcept { return static_cast<int>(weight.value.cols()); }
  MatrixXd zero_history() const;

  void init(std::mt19937_64& rng);
  MatrixXd infer(MatrixXd& history, const MatrixXd& x) const;
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);
  ParameterList parameters() { return {&weight, &bias}; }

  Parameter weight;  // C x K
  Parameter bias;

 private:
  MatrixXd padded_;
};

/// Normalises each column over channels.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int channels, double eps = 1e-6);

  void init();
  MatrixXd infer(const MatrixXd& x) const;
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);
  ParameterList parameters() { return {&gamma, &beta}; }

  Parameter gamma, beta;

 private:
  double eps_ = 1e-6;
  MatrixXd normed_;
  VectorXd inv_std_;
};

/// Exact (erf) GELU.
class Gelu {
 public:
  static double value(double x);
  static double slope(double x);

  MatrixXd infer(const MatrixXd& x) const;
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);

 private:
  MatrixXd x_;
};

/// Global response normalisation with per-step statistics:
/// y_c = gamma_c x_c |x_c| / (mean_c |x_c| + eps) + beta_c + x_c.
class Grn {
 public:
  Grn() = default;
  Grn(const std::string& name, int channels, double eps = 1e-6);

  MatrixXd infer(const MatrixXd& x) const;
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);
  ParameterList parameters() { return {&gamma, &beta}; }

  Parameter gamma, beta;

 private:
  double eps_ = 1e-6;
  MatrixXd x_;
  VectorXd denom_;
};

struct Mcnx2Spec {
  int channels = 64;
  int kernel_size = 7;
  int expansion = 3;
  double eps = 1e-6;
};

/// x + pw2(GRN(GELU(pw1(LN(dwconv(x)))))), all causal.
class Mcnx2Block {
 public:
  Mcnx2Block() = default;
  Mcnx2Block(const std::string& name, const Mcnx2Spec& spec);

  MatrixXd zero_history() const { return dw_.zero_history(); }

  void init(std::mt19937_64& rng);
  MatrixXd infer(MatrixXd& history, const MatrixXd& x) const;
  MatrixXd forward_train(const MatrixXd& x);
  MatrixXd backward(const MatrixXd& dy);
  ParameterList parameters();

  DepthwiseCausalConv1d& dwconv() { return dw_; }
  Linear& expand() { return pw1_; }
  Linear& project() { return pw2_; }
  Grn& grn() { return grn_; }
  LayerNorm& norm() { return ln_; }

 private:
  DepthwiseCausalConv1d dw_;
  LayerNorm ln_;
  Linear pw1_;
  Gelu act_;
  Grn grn_;
  Linear pw2_;
};

}  // namespace streamcodec::nn
