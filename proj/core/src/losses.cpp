#include "pcl/losses.hpp"

#include <cmath>
#include <limits>

#include "pcl/errors.hpp"

namespace pcl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double floored_log(double p, double floor) {
  if (floor > 0.0 && p < floor) p = floor;
  return std::log(p);
}

}  // namespace

std::size_t MaskVector::popcount() const {
  std::size_t n = 0;
  for (std::uint8_t b : bits) n += b;
  return n;
}

void MaskVector::validate() const {
  for (std::uint8_t b : bits) {
    if (b != 0 && b != 1) throw ContractError("mask entries must be 0 or 1");
  }
}

MaskVector MaskVector::ones(std::size_t n) {
  MaskVector m;
  m.bits.assign(n, 1);
  return m;
}

MaskVector MaskVector::zeros(std::size_t n) {
  MaskVector m;
  m.bits.assign(n, 0);
  return m;
}

void LossWeights::validate() const {
  if (!std::isfinite(ct) || !std::isfinite(kl) || ct < 0.0 || kl < 0.0) {
    throw ConfigError("loss weights must be finite and nonnegative");
  }
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& other) {
  lm += other.lm;
  ct += other.ct;
  kl += other.kl;
  total += other.total;
  non_finite = non_finite || other.non_finite;
  return *this;
}

LossBreakdown& LossBreakdown::operator/=(double divisor) {
  lm /= divisor;
  ct /= divisor;
  kl /= divisor;
  total /= divisor;
  return *this;
}

double masked_lm_loss(std::span<const double> realized_probs,
                      const MaskVector& mask, double prob_floor) {
  if (realized_probs.size() != mask.size()) {
    throw ContractError("masked_lm_loss: probability list and mask lengths differ");
  }
  mask.validate();
  double loss = 0.0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask.bits[t] == 0) continue;
    const double p = realized_probs[t];
    if (p < 0.0 || p > 1.0 + 1e-12) {
      throw ContractError("masked_lm_loss: probability outside [0, 1]");
    }
    if (p == 0.0 && prob_floor <= 0.0) return kInf;
    loss -= floored_log(p, prob_floor);
  }
  return loss;
}

double contrastive_loss(std::span<const double> realized_probs_c,
                        std::span<const double> realized_probs_not_c,
                        const MaskVector& mask, double prob_floor) {
  if (realized_probs_c.size() != mask.size() ||
      realized_probs_not_c.size() != mask.size()) {
    throw ContractError("contrastive_loss: probability list and mask lengths differ");
  }
  mask.validate();
  double loss = 0.0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask.bits[t] == 0) continue;
    const double pc = realized_probs_c[t];
    const double pn = realized_probs_not_c[t];
    if (pc < 0.0 || pn < 0.0) {
      throw ContractError("contrastive_loss: negative probability");
    }
    if (pc + pn == 0.0) {
      throw ContractError("contrastive_loss: both probabilities zero at a masked position");
    }
    // log(pc / (pc + pn)) in log space.
    if (pc == 0.0 && prob_floor <= 0.0) return kInf;
    loss -= floored_log(pc, prob_floor) - std::log(pc + pn);
  }
  return loss;
}

double kl_region_loss(std::span<const NextTokenDistribution> cond,
                      std::span<const NextTokenDistribution> base,
                      const MaskVector& mask, double prob_floor) {
  if (cond.size() != mask.size() || base.size() != mask.size()) {
    throw ContractError("kl_region_loss: distribution list and mask lengths differ");
  }
  mask.validate();
  double loss = 0.0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask.bits[t] == 1) continue;  // the KL term acts on the complement
    const auto& q = cond[t].probs;
    const auto& b = base[t].probs;
    if (q.size() != b.size()) {
      throw ContractError("kl_region_loss: vocabulary sizes differ at position " +
                          std::to_string(t));
    }
    for (std::size_t j = 0; j < q.size(); ++j) {
      if (q[j] == 0.0) continue;  // 0 * log(0 / b) = 0
      if (b[j] == 0.0 && prob_floor <= 0.0) return kInf;
      loss += q[j] * (floored_log(q[j], prob_floor) - floored_log(b[j], prob_floor));
    }
  }
  return loss;
}

LossBreakdown total_loss(double lm, double ct, double kl, const LossWeights& weights) {
  weights.validate();
  LossBreakdown b;
  b.lm = lm;
  b.ct = ct;
  b.kl = kl;
  b.total = lm + weights.ct * ct + weights.kl * kl;
  b.non_finite = !std::isfinite(b.total);
  return b;
}

LossBreakdown total_loss(const PairedDistributions& dists, const MaskVector& mask,
                         const LossWeights& weights, double prob_floor) {
  const double lm = masked_lm_loss(dists.realized_cond, mask, prob_floor);
  const double ct =
      contrastive_loss(dists.realized_cond, dists.realized_opposite, mask, prob_floor);
  const double kl = kl_region_loss(dists.cond_full, dists.base_full, mask, prob_floor);
  return total_loss(lm, ct, kl, weights);
}

}  // namespace pcl
