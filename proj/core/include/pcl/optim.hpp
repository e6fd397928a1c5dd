#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pcl {

// Adam with bias correction over one flat parameter vector.
class Adam {
 public:
  Adam(std::size_t size, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(learning_rate),
        beta1_(beta1),
        beta2_(beta2),
        eps_(epsilon),
        m_(size, 0.0),
        v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// Global L2 norm over several gradient vectors.
double global_norm(std::span<const std::span<const double>> grads);

// Scales all vectors by clip_norm / norm when norm exceeds clip_norm.
// Returns the pre-clip norm.
double clip_by_global_norm(std::span<std::span<double>> grads, double clip_norm);

}  // namespace pcl
