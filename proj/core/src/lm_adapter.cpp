#include "pcl/lm_adapter.hpp"

#include <cmath>

#include "pcl/errors.hpp"

namespace pcl {

void LMDescriptor::validate() const {
  if (num_layers == 0 || hidden_kv_width == 0 || vocab_size == 0 ||
      total_params == 0 || max_context == 0) {
    throw ConfigError("descriptor: all fields must be strictly positive");
  }
}

bool NextTokenDistribution::is_normalized(double tol) const {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0 || !std::isfinite(p)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

ModelHandle::ModelHandle(std::unique_ptr<ToyTransformer> model,
                         std::unique_ptr<Tokenizer> tokenizer)
    : model_(std::move(model)), tokenizer_(std::move(tokenizer)) {
  if (tokenizer_->vocab_size() > model_->config().vocab_size) {
    throw ConfigError("tokenizer vocabulary exceeds model vocabulary");
  }
}

ModelHandle ModelHandle::load(const std::filesystem::path& dir) {
  ToyTransformer model = ToyTransformer::load(dir);
  auto tokenizer = load_tokenizer(dir);
  return ModelHandle(std::make_unique<ToyTransformer>(std::move(model)),
                     std::move(tokenizer));
}

ModelHandle ModelHandle::from_toy(ToyTransformer model,
                                  std::unique_ptr<Tokenizer> tokenizer) {
  return ModelHandle(std::make_unique<ToyTransformer>(std::move(model)),
                     std::move(tokenizer));
}

LMDescriptor ModelHandle::describe() const {
  const ToyConfig& cfg = model_->config();
  LMDescriptor d;
  d.num_layers = cfg.num_layers;
  d.hidden_kv_width = cfg.width;
  d.vocab_size = cfg.vocab_size;
  d.total_params = model_->total_params();
  d.max_context = cfg.max_context;
  d.validate();
  return d;
}

std::vector<std::vector<double>> ModelHandle::forward_logprobs(
    std::span<const TokenId> tokens, const KVState* initial_state,
    ToyTransformer::Tape* tape) const {
  return model_->forward(tokens, initial_state, tape);
}

std::vector<NextTokenDistribution> ModelHandle::forward_distributions(
    std::span<const TokenId> tokens, const KVState* initial_state) const {
  const auto logprobs = forward_logprobs(tokens, initial_state);
  std::vector<NextTokenDistribution> out(logprobs.size());
  for (std::size_t t = 0; t < logprobs.size(); ++t) {
    out[t].probs.resize(logprobs[t].size());
    for (std::size_t j = 0; j < logprobs[t].size(); ++j) {
      out[t].probs[j] = std::exp(logprobs[t][j]);
    }
  }
  return out;
}

std::string ModelHandle::weights_fingerprint() const {
  return model_->fingerprint();
}

void ModelHandle::save(const std::filesystem::path& dir) const {
  model_->save(dir);
  if (const auto* words = dynamic_cast<const WordTokenizer*>(tokenizer_.get())) {
    words->save(dir / "tokenizer.json");
  }
}

}  // namespace pcl
