#include "streamcodec/nn/layers.hpp"

#include <cmath>
#include <numbers>

namespace streamcodec::nn {

void init_uniform(MatrixXd& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// y = W x + b for a single column, always through freshly allocated (aligned)
// vectors so the result cannot depend on where the column sits in memory.
VectorXd affine_column(const MatrixXd& w, const MatrixXd& b, const VectorXd& x) {
  VectorXd y(w.rows());
  y.noalias() = w * x;
  y += b.col(0);
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {}

void Linear::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels()));
  init_uniform(weight.value, bound, rng);
  init_uniform(bias.value, bound, rng);
}

MatrixXd Linear::infer(const MatrixXd& x) const {
  require(x.rows() == in_channels(), weight.name + ": input has wrong channel count");
  MatrixXd y(out_channels(), x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) y.col(t) = affine_column(weight.value, bias.value, x.col(t));
  return y;
}

MatrixXd Linear::forward_train(const MatrixXd& x) {
  require(x.rows() == in_channels(), weight.name + ": input has wrong channel count");
  x_ = x;
  MatrixXd y = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

MatrixXd Linear::backward(const MatrixXd& dy) {
  weight.grad.noalias() += dy * x_.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  return weight.value.transpose() * dy;
}

// ---------------------------------------------------------------------------
// CausalConv1d

int ConvSpec::history() const {
  return std::max(0, (kernel_size - 1) * dilation - (stride - 1));
}

CausalConv1d::CausalConv1d(const std::string& name, const ConvSpec& spec)
    : weight(name + ".weight", spec.out_channels, spec.kernel_size * spec.in_channels),
      bias(name + ".bias", spec.out_channels, 1),
      spec_(spec) {
  require(spec.in_channels > 0 && spec.out_channels > 0, name + ": channel counts must be positive");
  require(spec.kernel_size > 0 && spec.stride > 0 && spec.dilation > 0,
          name + ": kernel, stride and dilation must be positive");
}

MatrixXd CausalConv1d::zero_history() const { return MatrixXd::Zero(spec_.in_channels, spec_.history()); }

void CausalConv1d::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.kernel_size * spec_.in_channels));
  init_uniform(weight.value, bound, rng);
  init_uniform(bias.value, bound, rng);
}

void CausalConv1d::gather(const MatrixXd& padded, Eigen::Index t, double* column) const {
  const Eigen::Index h = spec_.history();
  const Eigen::Index anchor = t * spec_.stride + spec_.stride - 1;
  const Eigen::Index in = spec_.in_channels;
  for (int k = 0; k < spec_.kernel_size; ++k) {
    const Eigen::Index src = h + anchor - static_cast<Eigen::Index>(spec_.kernel_size - 1 - k) * spec_.dilation;
    Eigen::Map<VectorXd>(column + k * in, in) = padded.col(src);
  }
}

MatrixXd CausalConv1d::infer(MatrixXd& history, const MatrixXd& x) const {
  require(x.rows() == spec_.in_channels, weight.name + ": input has wrong channel count");
  require(x.cols() % spec_.stride == 0, weight.name + ": chunk length must be a multiple of the stride");
  require(history.rows() == spec_.in_channels && history.cols() == spec_.history(),
          weight.name + ": history has wrong shape");
  MatrixXd padded(x.rows(), history.cols() + x.cols());
  padded << history, x;
  const Eigen::Index t_out = x.cols() / spec_.stride;
  MatrixXd y(spec_.out_channels, t_out);
  VectorXd column(static_cast<Eigen::Index>(spec_.kernel_size) * spec_.in_channels);
  for (Eigen::Index t = 0; t < t_out; ++t) {
    gather(padded, t, column.data());
    y.col(t) = affine_column(weight.value, bias.value, column);
  }
  history = padded.rightCols(history.cols());
  return y;
}

MatrixXd CausalConv1d::forward_train(const MatrixXd& x) {
  require(x.rows() == spec_.in_channels, weight.name + ": input has wrong channel count");
  require(x.cols() % spec_.stride == 0, weight.name + ": length must be a multiple of the stride");
  MatrixXd padded(x.rows(), spec_.history() + x.cols());
  padded << zero_history(), x;
  const Eigen::Index t_out = x.cols() / spec_.stride;
  columns_.resize(static_cast<Eigen::Index>(spec_.kernel_size) * spec_.in_channels, t_out);
  for (Eigen::Index t = 0; t < t_out; ++t) gather(padded, t, columns_.col(t).data());
  input_cols_ = x.cols();
  MatrixXd y = weight.value * columns_;
  y.colwise() += bias.value.col(0);
  return y;
}

MatrixXd CausalConv1d::backward(const MatrixXd& dy) {
  weight.grad.noalias() += dy * columns_.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  const MatrixXd d_columns = weight.value.transpose() * dy;
  const Eigen::Index h = spec_.history();
  const Eigen::Index in = spec_.in_channels;
  MatrixXd d_padded = MatrixXd::Zero(in, h + input_cols_);
  for (Eigen::Index t = 0; t < dy.cols(); ++t) {
    const Eigen::Index anchor = t * spec_.stride + spec_.stride - 1;
    for (int k = 0; k < spec_.kernel_size; ++k) {
      const Eigen::Index src = h + anchor - static_cast<Eigen::Index>(spec_.kernel_size - 1 - k) * spec_.dilation;
      d_padded.col(src) += d_columns.col(t).segment(k * in, in);
    }
  }
  return d_padded.rightCols(input_cols_);
}

// ---------------------------------------------------------------------------
// TransposedCausalConv1d

TransposedCausalConv1d::TransposedCausalConv1d(const std::string& name, int in, int out, int factor, int taps)
    : weight(name + ".weight", static_cast<Eigen::Index>(factor) * out, static_cast<Eigen::Index>(taps) * in),
      bias(name + ".bias", out, 1),
      in_(in),
      out_(out),
      factor_(factor),
      taps_(taps) {
  require(in > 0 && out > 0 && factor > 0 && taps > 0, name + ": invalid transposed conv shape");
}

MatrixXd TransposedCausalConv1d::zero_history() const { return MatrixXd::Zero(in_, taps_ - 1); }

void TransposedCausalConv1d::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(taps_ * in_));
  init_uniform(weight.value, bound, rng);
  init_uniform(bias.value, bound, rng);
}

MatrixXd TransposedCausalConv1d::infer(MatrixXd& history, const MatrixXd& x) const {
  require(x.rows() == in_, weight.name + ": input has wrong channel count");
  require(history.rows() == in_ && history.cols() == taps_ - 1, weight.name + ": history has wrong shape");
  MatrixXd padded(in_, history.cols() + x.cols());
  padded << history, x;
  MatrixXd y(out_, x.cols() * factor_);
  VectorXd column(static_cast<Eigen::Index>(taps_) * in_);
  VectorXd phases(weight.value.rows());
  for (Eigen::Index u = 0; u < x.cols(); ++u) {
    for (int j = 0; j < taps_; ++j) column.segment(j * in_, in_) = padded.col(taps_ - 1 + u - j);
    phases.noalias() = weight.value * column;
    for (int r = 0; r < factor_; ++r) {
      VectorXd step = phases.segment(r * out_, out_);
      step += bias.value.col(0);
      y.col(u * factor_ + r) = step;
    }
  }
  history = padded.rightCols(history.cols());
  return y;
}

MatrixXd TransposedCausalConv1d::forward_train(const MatrixXd& x) {
  require(x.rows() == in_, weight.name + ": input has wrong channel count");
  MatrixXd padded(in_, taps_ - 1 + x.cols());
  padded << zero_history(), x;
  columns_.resize(static_cast<Eigen::Index>(taps_) * in_, x.cols());
  for (Eigen::Index u = 0; u < x.cols(); ++u)
    for (int j = 0; j < taps_; ++j) columns_.col(u).segment(j * in_, in_) = padded.col(taps_ - 1 + u - j);
  input_cols_ = x.cols();
  const MatrixXd phases = weight.value * columns_;
  MatrixXd y(out_, x.cols() * factor_);
  for (Eigen::Index u = 0; u < x.cols(); ++u)
    for (int r = 0; r < factor_; ++r) y.col(u * factor_ + r) = phases.col(u).segment(r * out_, out_) + bias.value.col(0);
  return y;
}

MatrixXd TransposedCausalConv1d::backward(const MatrixXd& dy) {
  MatrixXd d_phases(weight.value.rows(), input_cols_);
  for (Eigen::Index u = 0; u < input_cols_; ++u)
    for (int r = 0; r < factor_; ++r) d_phases.col(u).segment(r * out_, out_) = dy.col(u * factor_ + r);
  weight.grad.noalias() += d_phases * columns_.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  const MatrixXd d_columns = weight.value.transpose() * d_phases;
  MatrixXd d_padded = MatrixXd::Zero(in_, taps_ - 1 + input_cols_);
  for (Eigen::Index u = 0; u < input_cols_; ++u)
    for (int j = 0; j < taps_; ++j) d_padded.col(taps_ - 1 + u - j) += d_columns.col(u).segment(j * in_, in_);
  return d_padded.rightCols(input_cols_);
}

// ---------------------------------------------------------------------------
// DepthwiseCausalConv1d

DepthwiseCausalConv1d::DepthwiseCausalConv1d(const std::string& name, int channels, int kernel_size)
    : weight(name + ".weight", channels, kernel_size), bias(name + ".bias", channels, 1) {
  require(channels > 0 && kernel_size > 0, name + ": invalid depthwise shape");
}

MatrixXd DepthwiseCausalConv1d::zero_history() const {
  return MatrixXd::Zero(weight.value.rows(), kernel_size() - 1);
}

void DepthwiseCausalConv1d::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel_size()));
  init_uniform(weight.value, bound, rng);
  init_uniform(bias.value, bound, rng);
}

MatrixXd DepthwiseCausalConv1d::infer(MatrixXd& history, const MatrixXd& x) const {
  const auto C = weight.value.rows();
  require(x.rows() == C, weight.name + ": input has wrong channel count");
  require(history.rows() == C && history.cols() == kernel_size() - 1, weight.name + ": history has wrong shape");
  MatrixXd padded(C, history.cols() + x.cols());
  padded << history, x;
  MatrixXd y(C, x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    VectorXd acc = bias.value.col(0);
    for (int k = 0; k < kernel_size(); ++k) acc.array() += weight.value.col(k).array() * padded.col(t + k).array();
    y.col(t) = acc;
  }
  history = padded.rightCols(history.cols());
  return y;
}

MatrixXd DepthwiseCausalConv1d::forward_train(const MatrixXd& x) {
  const auto C = weight.value.rows();
  require(x.rows() == C, weight.name + ": input has wrong channel count");
  padded_.resize(C, kernel_size() - 1 + x.cols());
  padded_ << zero_history(), x;
  MatrixXd y = bias.value.col(0).replicate(1, x.cols());
  for (int k = 0; k < kernel_size(); ++k)
    y.array() += padded_.middleCols(k, x.cols()).array().colwise() * weight.value.col(k).array();
  return y;
}

MatrixXd DepthwiseCausalConv1d::backward(const MatrixXd& dy) {
  const auto T = dy.cols();
  MatrixXd d_padded = MatrixXd::Zero(padded_.rows(), padded_.cols());
  for (int k = 0; k < kernel_size(); ++k) {
    weight.grad.col(k) += (dy.array() * padded_.middleCols(k, T).array()).rowwise().sum().matrix();
    d_padded.middleCols(k, T).array() += dy.array().colwise() * weight.value.col(k).array();
  }
  bias.grad.col(0) += dy.rowwise().sum();
  return d_padded.rightCols(T);
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(const std::string& name, int channels, double eps)
    : gamma(name + ".gamma", channels, 1), beta(name + ".beta", channels, 1), eps_(eps) {
  init();
}

void LayerNorm::init() {
  gamma.value.setOnes();
  beta.value.setZero();
}

MatrixXd LayerNorm::infer(const MatrixXd& x) const {
  const auto C = static_cast<double>(x.rows());
  MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const VectorXd col = x.col(t);
    const double mean = col.sum() / C;
    const VectorXd centered = col.array() - mean;
    const double inv = 1.0 / std::sqrt(centered.squaredNorm() / C + eps_);
    y.col(t) = (centered * inv).cwiseProduct(gamma.value.col(0)) + beta.value.col(0);
  }
  return y;
}

MatrixXd LayerNorm::forward_train(const MatrixXd& x) {
  const auto C = static_cast<double>(x.rows());
  normed_.resize(x.rows(), x.cols());
  inv_std_.resize(x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const double mean = x.col(t).sum() / C;
    const VectorXd centered = x.col(t).array() - mean;
    inv_std_[t] = 1.0 / std::sqrt(centered.squaredNorm() / C + eps_);
    normed_.col(t) = centered * inv_std_[t];
  }
  MatrixXd y = normed_.array().colwise() * gamma.value.col(0).array();
  y.colwise() += beta.value.col(0);
  return y;
}

MatrixXd LayerNorm::backward(const MatrixXd& dy) {
  const auto C = static_cast<double>(dy.rows());
  gamma.grad.col(0) += (dy.array() * normed_.array()).rowwise().sum().matrix();
  beta.grad.col(0) += dy.rowwise().sum();
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.cols(); ++t) {
    const VectorXd d_normed = dy.col(t).cwiseProduct(gamma.value.col(0));
    const double mean_d = d_normed.sum() / C;
    const double mean_dx = d_normed.dot(normed_.col(t)) / C;
    dx.col(t) = inv_std_[t] * (d_normed.array() - mean_d - normed_.col(t).array() * mean_dx).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GELU

double Gelu::value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double Gelu::slope(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

MatrixXd Gelu::infer(const MatrixXd& x) const { return x.unaryExpr(&Gelu::value); }

MatrixXd Gelu::forward_train(const MatrixXd& x) {
  x_ = x;
  return x.unaryExpr(&Gelu::value);
}

MatrixXd Gelu::backward(const MatrixXd& dy) { return dy.cwiseProduct(x_.unaryExpr(&Gelu::slope)); }

// ---------------------------------------------------------------------------
// GRN

Grn::Grn(const std::string& name, int channels, double eps)
    : gamma(name + ".gamma", channels, 1), beta(name + ".beta", channels, 1), eps_(eps) {}

MatrixXd Grn::infer(const MatrixXd& x) const {
  const auto C = static_cast<double>(x.rows());
  MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const VectorXd col = x.col(t);
    const VectorXd mag = col.cwiseAbs();
    const double denom = mag.sum() / C + eps_;
    y.col(t) = gamma.value.col(0).cwiseProduct(col.cwiseProduct(mag)) / denom + beta.value.col(0) + col;
  }
  return y;
}

MatrixXd Grn::forward_train(const MatrixXd& x) {
  x_ = x;
  const auto C = static_cast<double>(x.rows());
  denom_ = (x.cwiseAbs().colwise().sum().transpose() / C).array() + eps_;
  MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t)
    y.col(t) = gamma.value.col(0).cwiseProduct(x.col(t).cwiseProduct(x.col(t).cwiseAbs())) / denom_[t] +
               beta.value.col(0) + x.col(t);
  return y;
}

MatrixXd Grn::backward(const MatrixXd& dy) {
  const auto C = static_cast<double>(dy.rows());
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.cols(); ++t) {
    const auto x = x_.col(t).array();
    const VectorXd f = (x * x.abs()).matrix();
    const double g = denom_[t];
    gamma.grad.col(0) += dy.col(t).cwiseProduct(f) / g;
    const double coupled = dy.col(t).cwiseProduct(gamma.value.col(0)).dot(f);
    const VectorXd sign = x.sign().matrix();
    dx.col(t) = (dy.col(t).array() * gamma.value.col(0).array() * 2.0 * x.abs() / g).matrix() -
                sign * (coupled / (C * g * g)) + dy.col(t);
  }
  beta.grad.col(0) += dy.rowwise().sum();
  return dx;
}

// ---------------------------------------------------------------------------
// MCNX2 block

Mcnx2Block::Mcnx2Block(const std::string& name, const Mcnx2Spec& spec)
    : dw_(name + ".dwconv", spec.channels, spec.kernel_size),
      ln_(name + ".norm", spec.channels, spec.eps),
      pw1_(name + ".expand", spec.channels, spec.channels * spec.expansion),
      grn_(name + ".grn", spec.channels * spec.expansion, spec.eps),
      pw2_(name + ".project", spec.channels * spec.expansion, spec.channels) {}

void Mcnx2Block::init(std::mt19937_64& rng) {
  dw_.init(rng);
  ln_.init();
  pw1_.init(rng);
  pw2_.init(rng);
}

MatrixXd Mcnx2Block::infer(MatrixXd& history, const MatrixXd& x) const {
  MatrixXd h = dw_.infer(history, x);
  h = ln_.infer(h);
  h = pw1_.infer(h);
  h = act_.infer(h);
  h = grn_.infer(h);
  h = pw2_.infer(h);
  return x + h;
}

MatrixXd Mcnx2Block::forward_train(const MatrixXd& x) {
  MatrixXd h = dw_.forward_train(x);
  h = ln_.forward_train(h);
  h = pw1_.forward_train(h);
  h = act_.forward_train(h);
  h = grn_.forward_train(h);
  h = pw2_.forward_train(h);
  return x + h;
}

MatrixXd Mcnx2Block::backward(const MatrixXd& dy) {
  MatrixXd d = pw2_.backward(dy);
  d = grn_.backward(d);
  d = act_.backward(d);
  d = pw1_.backward(d);
  d = ln_.backward(d);
  d = dw_.backward(d);
  return dy + d;
}

ParameterList Mcnx2Block::parameters() {
  ParameterList out;
  for (auto* list : {&dw_.weight, &dw_.bias, &ln_.gamma, &ln_.beta, &pw1_.weight, &pw1_.bias, &grn_.gamma,
                     &grn_.beta, &pw2_.weight, &pw2_.bias})
    out.push_back(list);
  return out;
}

}  // namespace streamcodec::nn
