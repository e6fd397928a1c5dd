#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pcl/dataset.hpp"
#include "pcl/lm_adapter.hpp"
#include "pcl/losses.hpp"
#include "pcl/prefix.hpp"

namespace pcl {

struct TrainConfig {
  std::size_t prefix_length = 5;
  LossWeights weights{4.0, 1.6};
  double learning_rate = 1e-2;
  std::size_t epochs = 5;
  std::size_t batch_pairs = 4;
  std::size_t max_tokens = 1024;
  std::uint64_t seed = 1;
  MaskStrategy strategy = MaskStrategy::kMix;
  double grad_clip_norm = 1.0;
  double prob_floor = 1e-12;
  // Ablation parity only: also updates the LM weights and skips the frozen
  // fingerprint assertion. Off everywhere by default.
  bool unfreeze_lm = false;

  void validate(const LMDescriptor& descriptor) const;
};

struct EpochStats {
  std::size_t epoch = 0;
  LossBreakdown train;
  LossBreakdown validation;
  double mean_grad_norm = 0.0;
  std::size_t clipped_batches = 0;
};

struct TrainResult {
  PrefixBank bank;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epochs ran
  std::string model_fingerprint;
};

// Scales for the three terms of the overall loss. The standard objective is
// {1, w_ct, w_kl}; per-term gradient checks isolate one term at a time.
struct TermWeights {
  double lm = 1.0;
  double ct = 0.0;
  double kl = 0.0;
};

// Loss and gradients for a single example with property c. Gradients are
// with respect to the injected states of the conditioning prefix and the
// opposite prefix (the contrastive term reaches both).
struct ExampleGrads {
  LossBreakdown loss;
  KVState d_cond;
  KVState d_opposite;
};

// weight_grads, when non-null, additionally accumulates gradients w.r.t. the
// LM weights from both conditional passes (the unfrozen-LM ablation).
ExampleGrads example_loss_and_grads(const ModelHandle& model, const PrefixBank& bank,
                                    const TrainingExample& example,
                                    const TermWeights& term_weights,
                                    double prob_floor = 0.0,
                                    ToyParams* weight_grads = nullptr);

// Optimizes only the prefix bank against the weighted objective over paired
// examples; every example contributes conditional passes under both prefixes
// plus the bare LM. The LM fingerprint is asserted unchanged every epoch.
// Returns the best-validation-total checkpoint (the input bank when epochs
// is zero).
TrainResult train(ModelHandle& model, PrefixBank bank, const SplitResult& dataset,
                  const TrainConfig& config);

// Deterministic aggregate (mean of per-example totals) without any mutation.
LossBreakdown evaluate_loss(const ModelHandle& model, const PrefixBank& bank,
                            std::span<const TrainingExample> examples,
                            const LossWeights& weights, double prob_floor = 0.0);

// History serialization: one JSON object per epoch and split.
void write_history(const std::vector<EpochStats>& history,
                   const std::filesystem::path& file);

}  // namespace pcl
