#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pcl/lm_adapter.hpp"

namespace pcl {

// Per-token binary mask over a training program. Bit 1 marks the changed
// (security-sensitive) region; the complement is the neutral region.
struct MaskVector {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const;
  void validate() const;  // entries must be exactly 0 or 1

  static MaskVector ones(std::size_t n);
  static MaskVector zeros(std::size_t n);
};

struct LossWeights {
  double ct = 0.0;
  double kl = 0.0;

  void validate() const;  // finite and nonnegative
};

struct LossBreakdown {
  double lm = 0.0;
  double ct = 0.0;
  double kl = 0.0;
  double total = 0.0;
  bool non_finite = false;  // set when any component hit a zero probability

  LossBreakdown& operator+=(const LossBreakdown& other);
  LossBreakdown& operator/=(double divisor);
};

// -sum_t m_t * log p_t over the realized-token probabilities. A zero
// probability at a masked position yields +infinity; training avoids that by
// passing a positive prob_floor (applied inside the log only).
double masked_lm_loss(std::span<const double> realized_probs,
                      const MaskVector& mask, double prob_floor = 0.0);

// -sum_t m_t * log[ p_c,t / (p_c,t + p_notc,t) ]. Both probabilities zero at
// a masked position leaves the ratio undefined and is a contract error.
double contrastive_loss(std::span<const double> realized_probs_c,
                        std::span<const double> realized_probs_not_c,
                        const MaskVector& mask, double prob_floor = 0.0);

// sum_t (1 - m_t) * KL(cond_t || base_t), natural log, exact full-vocabulary
// summation. Acts exactly on the complement of the mask.
double kl_region_loss(std::span<const NextTokenDistribution> cond,
                      std::span<const NextTokenDistribution> base,
                      const MaskVector& mask, double prob_floor = 0.0);

LossBreakdown total_loss(double lm, double ct, double kl, const LossWeights& weights);

// Everything total_loss needs for one example with property c: realized
// probabilities under both prefixes plus the full conditional and base
// distributions at every position.
struct PairedDistributions {
  std::vector<double> realized_cond;       // P(x_t | h_<t, c)
  std::vector<double> realized_opposite;   // P(x_t | h_<t, not c)
  std::vector<NextTokenDistribution> cond_full;
  std::vector<NextTokenDistribution> base_full;
};

LossBreakdown total_loss(const PairedDistributions& dists, const MaskVector& mask,
                         const LossWeights& weights, double prob_floor = 0.0);

}  // namespace pcl
