#pragma once

#include "streamcodec/nn/layers.hpp"

#include <vector>

namespace streamcodec::nn {

/// Adaptive moment estimation over a fixed parameter list.
class Adam {
 public:
  struct Options {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(ParameterList params, Options options);

  /// Applies one update from the accumulated gradients. Gradients are not cleared.
  void step();
  void zero_grad();

  long steps() const noexcept { return t_; }
  const Options& options() const noexcept { return opt_; }
  ParameterList& parameters() noexcept { return params_; }

 private:
  ParameterList params_;
  Options opt_;
  std::vector<MatrixXd> m_, v_;
  long t_ = 0;
};

}  // namespace streamcodec::nn
