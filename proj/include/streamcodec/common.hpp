#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace streamcodec {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  Config,
  Stream,
  Token,
  Numeric,
  Io,
  Corruption,
  Metric,
  Training,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define STREAMCODEC_DEFINE_ERROR(Name, Kind)                              \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

STREAMCODEC_DEFINE_ERROR(ConfigError, Config)
STREAMCODEC_DEFINE_ERROR(StreamError, Stream)
STREAMCODEC_DEFINE_ERROR(TokenError, Token)
STREAMCODEC_DEFINE_ERROR(NumericError, Numeric)
STREAMCODEC_DEFINE_ERROR(IoError, Io)
STREAMCODEC_DEFINE_ERROR(CorruptionError, Corruption)
STREAMCODEC_DEFINE_ERROR(MetricError, Metric)
STREAMCODEC_DEFINE_ERROR(TrainingError, Training)

#undef STREAMCODEC_DEFINE_ERROR

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace streamcodec
