#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcl/kv_state.hpp"
#include "pcl/tokenizer.hpp"
#include "pcl/toy_model.hpp"

namespace pcl {

// Shape metadata for a loaded model; everything downstream (prefix shapes,
// budget accounting, context limits) is expressed against this rather than
// against model internals.
struct LMDescriptor {
  std::size_t num_layers = 0;      // L
  std::size_t hidden_kv_width = 0; // H, per key or value vector
  std::size_t vocab_size = 0;
  std::size_t total_params = 0;
  std::size_t max_context = 0;

  void validate() const;
};

// A dense next-token distribution.
struct NextTokenDistribution {
  std::vector<double> probs;

  // Nonnegative entries summing to 1 within `tol`.
  bool is_normalized(double tol = 1e-6) const;
};

// A loaded, frozen autoregressive LM. Read-only inference is safe from
// concurrent callers; anything that mutates the weights (the pretrainer, the
// unfrozen-LM ablation) requires exclusive access.
class ModelHandle {
 public:
  static ModelHandle load(const std::filesystem::path& checkpoint_dir);
  static ModelHandle from_toy(ToyTransformer model,
                              std::unique_ptr<Tokenizer> tokenizer);

  LMDescriptor describe() const;

  // One distribution per input position; row t conditions on the injected
  // state and tokens 0..t. An empty or null initial state is the identity:
  // the result equals the unconditioned call.
  std::vector<NextTokenDistribution> forward_distributions(
      std::span<const TokenId> tokens, const KVState* initial_state = nullptr) const;

  // Log-space variant used by losses and training.
  std::vector<std::vector<double>> forward_logprobs(
      std::span<const TokenId> tokens, const KVState* initial_state = nullptr,
      ToyTransformer::Tape* tape = nullptr) const;

  // Deterministic digest over every LM parameter; injected prefixes are not
  // part of the model and never contribute.
  std::string weights_fingerprint() const;

  const Tokenizer& tokenizer() const { return *tokenizer_; }
  const ToyTransformer& model() const { return *model_; }
  // Mutable access for the pretrainer and the unfrozen-LM ablation only.
  ToyTransformer& mutable_model() { return *model_; }

  void save(const std::filesystem::path& checkpoint_dir) const;

 private:
  ModelHandle(std::unique_ptr<ToyTransformer> model,
              std::unique_ptr<Tokenizer> tokenizer);

  std::unique_ptr<ToyTransformer> model_;
  std::unique_ptr<Tokenizer> tokenizer_;
};

}  // namespace pcl
