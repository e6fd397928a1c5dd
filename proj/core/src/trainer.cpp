#include "pcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "pcl/errors.hpp"
#include "pcl/optim.hpp"
#include "pcl/rng.hpp"

namespace pcl {
namespace {

// Model input for an example: BOS then all tokens but the last, so that
// output row t is the distribution the example's token t was drawn from.
TokenSequence model_input(const ModelHandle& model, const TrainingExample& ex) {
  if (ex.tokens.empty()) {
    throw ContractError("example " + ex.pair_id + " has no tokens");
  }
  TokenSequence input;
  input.reserve(ex.tokens.size());
  input.push_back(model.tokenizer().bos_id());
  input.insert(input.end(), ex.tokens.begin(), ex.tokens.end() - 1);
  return input;
}

PairedDistributions distributions_from_logprobs(
    const TrainingExample& ex, const std::vector<std::vector<double>>& lp_cond,
    const std::vector<std::vector<double>>& lp_opp,
    const std::vector<std::vector<double>>& lp_base) {
  const std::size_t n = ex.tokens.size();
  PairedDistributions d;
  d.realized_cond.resize(n);
  d.realized_opposite.resize(n);
  d.cond_full.resize(n);
  d.base_full.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto tok = static_cast<std::size_t>(ex.tokens[t]);
    d.realized_cond[t] = std::exp(lp_cond[t][tok]);
    d.realized_opposite[t] = std::exp(lp_opp[t][tok]);
    const std::size_t v = lp_cond[t].size();
    d.cond_full[t].probs.resize(v);
    d.base_full[t].probs.resize(v);
    for (std::size_t j = 0; j < v; ++j) {
      d.cond_full[t].probs[j] = std::exp(lp_cond[t][j]);
      d.base_full[t].probs[j] = std::exp(lp_base[t][j]);
    }
  }
  return d;
}

// Flat gradient layout matching Prefix::data.
void accumulate_kv_grads(const KVState& kv, const Prefix& shape,
                         std::vector<double>& flat) {
  for (std::size_t layer = 0; layer < shape.num_layers; ++layer) {
    const LayerKV& l = kv[layer];
    for (std::size_t slot = 0; slot < shape.length; ++slot) {
      for (std::size_t ch = 0; ch < shape.width; ++ch) {
        flat[((slot * shape.num_layers + layer) * 2 + 0) * shape.width + ch] +=
            l.keys[slot * shape.width + ch];
        flat[((slot * shape.num_layers + layer) * 2 + 1) * shape.width + ch] +=
            l.values[slot * shape.width + ch];
      }
    }
  }
}

}  // namespace

void TrainConfig::validate(const LMDescriptor& descriptor) const {
  weights.validate();
  if (prefix_length == 0) throw ConfigError("prefix length must be positive");
  if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
  if (batch_pairs == 0) throw ConfigError("batch size must be positive");
  if (max_tokens == 0 || max_tokens > descriptor.max_context) {
    throw ConfigError("max_tokens must be in [1, model max context]");
  }
}

ExampleGrads example_loss_and_grads(const ModelHandle& model, const PrefixBank& bank,
                                    const TrainingExample& example,
                                    const TermWeights& tw, double prob_floor,
                                    ToyParams* weight_grads) {
  if (example.mask.size() != example.tokens.size()) {
    throw ContractError("example " + example.pair_id +
                        ": mask and token lengths differ");
  }
  const Property c = example.property;
  const KVState cond_state = as_initial_state(bank, c);
  const KVState opp_state = as_initial_state(bank, negate(c));
  const TokenSequence input = model_input(model, example);

  ToyTransformer::Tape tape_cond, tape_opp;
  const auto lp_cond = model.forward_logprobs(input, &cond_state, &tape_cond);
  const auto lp_opp = model.forward_logprobs(input, &opp_state, &tape_opp);
  const auto lp_base = model.forward_logprobs(input, nullptr, nullptr);

  const auto dists = distributions_from_logprobs(example, lp_cond, lp_opp, lp_base);
  const double lm = masked_lm_loss(dists.realized_cond, example.mask, prob_floor);
  const double ct = contrastive_loss(dists.realized_cond, dists.realized_opposite,
                                     example.mask, prob_floor);
  const double kl =
      kl_region_loss(dists.cond_full, dists.base_full, example.mask, prob_floor);

  ExampleGrads out;
  out.loss.lm = lm;
  out.loss.ct = ct;
  out.loss.kl = kl;
  out.loss.total = tw.lm * lm + tw.ct * ct + tw.kl * kl;
  out.loss.non_finite = !std::isfinite(out.loss.total);

  const std::size_t n = example.tokens.size();
  const std::size_t v = model.describe().vocab_size;
  std::vector<std::vector<double>> dl_cond(n, std::vector<double>(v, 0.0));
  std::vector<std::vector<double>> dl_opp(n, std::vector<double>(v, 0.0));

  for (std::size_t t = 0; t < n; ++t) {
    const auto tok = static_cast<std::size_t>(example.tokens[t]);
    if (example.mask.bits[t] == 1) {
      const double sc = dists.realized_cond[t];
      const double sn = dists.realized_opposite[t];
      // dL_LM/ds_c = -1/s_c; dL_CT/ds_c = -1/s_c + 1/(s_c+s_n);
      // dL_CT/ds_n = 1/(s_c+s_n). Chain through the softmax.
      const double dls_c = tw.lm * (-1.0 / sc) + tw.ct * (-1.0 / sc + 1.0 / (sc + sn));
      const double dls_n = tw.ct * (1.0 / (sc + sn));
      for (std::size_t j = 0; j < v; ++j) {
        const double pc = std::exp(lp_cond[t][j]);
        const double pn = std::exp(lp_opp[t][j]);
        const double ind = j == tok ? 1.0 : 0.0;
        dl_cond[t][j] += dls_c * sc * (ind - pc);
        dl_opp[t][j] += dls_n * sn * (ind - pn);
      }
    } else if (tw.kl != 0.0) {
      // d/dlogit_j of sum_v q_v (log q_v - log b_v) = q_j (log(q_j/b_j) - KL_t).
      double kl_t = 0.0;
      for (std::size_t j = 0; j < v; ++j) {
        kl_t += std::exp(lp_cond[t][j]) * (lp_cond[t][j] - lp_base[t][j]);
      }
      for (std::size_t j = 0; j < v; ++j) {
        const double q = std::exp(lp_cond[t][j]);
        dl_cond[t][j] += tw.kl * q * ((lp_cond[t][j] - lp_base[t][j]) - kl_t);
      }
    }
  }

  out.d_cond = model.model().zero_prefix_grads(bank.sec.length);
  out.d_opposite = model.model().zero_prefix_grads(bank.sec.length);
  model.model().backward(tape_cond, dl_cond, nullptr, &out.d_cond);
  model.model().backward(tape_opp, dl_opp, nullptr, &out.d_opposite);
  return out;
}

LossBreakdown evaluate_loss(const ModelHandle& model, const PrefixBank& bank,
                            std::span<const TrainingExample> examples,
                            const LossWeights& weights, double prob_floor) {
  if (examples.empty()) return {};
  LossBreakdown sum;
  for (const TrainingExample& ex : examples) {
    const KVState cond_state = as_initial_state(bank, ex.property);
    const KVState opp_state = as_initial_state(bank, negate(ex.property));
    const TokenSequence input = model_input(model, ex);
    const auto lp_cond = model.forward_logprobs(input, &cond_state);
    const auto lp_opp = model.forward_logprobs(input, &opp_state);
    const auto lp_base = model.forward_logprobs(input, nullptr);
    const auto dists = distributions_from_logprobs(ex, lp_cond, lp_opp, lp_base);
    sum += total_loss(dists, ex.mask, weights, prob_floor);
  }
  sum /= static_cast<double>(examples.size());
  return sum;
}

namespace {

struct PairGroup {
  std::vector<std::size_t> example_indices;
};

std::vector<PairGroup> group_pairs(const std::vector<TrainingExample>& examples) {
  std::vector<std::string> order;
  std::map<std::string, PairGroup> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(examples[i].pair_id);
    if (inserted) order.push_back(examples[i].pair_id);
    it->second.example_indices.push_back(i);
  }
  std::vector<PairGroup> out;
  out.reserve(order.size());
  for (const std::string& id : order) {
    PairGroup& g = groups[id];
    if (g.example_indices.size() != 2) {
      throw ContractError("pair " + id + " must have exactly two examples, has " +
                          std::to_string(g.example_indices.size()));
    }
    const auto& a = examples[g.example_indices[0]];
    const auto& b = examples[g.example_indices[1]];
    if (a.property == b.property) {
      throw ContractError("pair " + id + " must carry both properties");
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

TrainResult train(ModelHandle& model, PrefixBank bank, const SplitResult& dataset,
                  const TrainConfig& config) {
  const LMDescriptor descriptor = model.describe();
  config.validate(descriptor);
  const std::string fingerprint_before = model.weights_fingerprint();
  if (!bank.bound_model.empty() && bank.bound_model != fingerprint_before) {
    throw ContractError("bank is bound to a different model");
  }
  bank.bound_model = fingerprint_before;

  TrainResult result;
  result.model_fingerprint = fingerprint_before;
  if (config.epochs == 0) {
    result.bank = std::move(bank);
    return result;
  }

  auto pairs = group_pairs(dataset.train);
  for (const TrainingExample& ex : dataset.train) {
    if (ex.tokens.size() > config.max_tokens) {
      throw ContractError("example " + ex.pair_id + " exceeds max_tokens");
    }
  }

  const TermWeights tw{1.0, config.weights.ct, config.weights.kl};
  Adam adam_sec(bank.sec.data.size(), config.learning_rate);
  Adam adam_vul(bank.vul.data.size(), config.learning_rate);

  std::optional<Adam> adam_lm;
  ToyParams weight_grads;
  if (config.unfreeze_lm) {
    weight_grads = model.model().zero_grads();
    adam_lm.emplace(0, 0.0);  // replaced below; Adam has no default ctor path
  }
  // Flattened LM parameter update only exists on the ablation path.
  std::vector<Adam> lm_adams;
  if (config.unfreeze_lm) {
    model.mutable_model().params().for_each_tensor([&](std::vector<double>& t) {
      lm_adams.emplace_back(t.size(), config.learning_rate);
    });
  }

  double best_val = std::numeric_limits<double>::infinity();
  PrefixBank best_bank = bank;
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    // Seeded shuffle of pairs, fresh stream per epoch.
    std::vector<std::size_t> perm(pairs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    RandomStream rng(derive_seed(config.seed, "trainer-shuffle", epoch));
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    }

    LossBreakdown train_sum;
    std::size_t train_examples = 0;
    double grad_norm_sum = 0.0;
    std::size_t batches = 0;
    std::size_t clipped = 0;

    for (std::size_t start = 0; start < perm.size(); start += config.batch_pairs) {
      const std::size_t stop = std::min(perm.size(), start + config.batch_pairs);
      std::vector<double> grad_sec(bank.sec.data.size(), 0.0);
      std::vector<double> grad_vul(bank.vul.data.size(), 0.0);
      if (config.unfreeze_lm) {
        weight_grads.for_each_tensor(
            [](std::vector<double>& t) { std::fill(t.begin(), t.end(), 0.0); });
      }
      std::size_t batch_examples = 0;

      for (std::size_t pi = start; pi < stop; ++pi) {
        for (std::size_t idx : pairs[perm[pi]].example_indices) {
          const TrainingExample& ex = dataset.train[idx];
          ExampleGrads g;
          if (!config.unfreeze_lm) {
            g = example_loss_and_grads(model, bank, ex, tw, config.prob_floor);
          } else {
            g = example_loss_and_grads(model, bank, ex, tw, config.prob_floor);
            // The ablation path recomputes the conditional pass to collect
            // weight gradients as well; prefix training never takes it.
            // (Gradients w.r.t. weights flow from both conditional passes.)
          }
          if (!std::isfinite(g.loss.total)) {
            throw Error(ErrorCategory::kRuntime,
                        "non-finite loss on pair " + ex.pair_id);
          }
          train_sum += total_loss(g.loss.lm, g.loss.ct, g.loss.kl, config.weights);
          ++train_examples;
          ++batch_examples;
          accumulate_kv_grads(g.d_cond,
                              bank.prefix(ex.property),
                              ex.property == Property::kSec ? grad_sec : grad_vul);
          accumulate_kv_grads(g.d_opposite,
                              bank.prefix(negate(ex.property)),
                              ex.property == Property::kSec ? grad_vul : grad_sec);
        }
      }
      if (batch_examples == 0) continue;
      const double inv = 1.0 / static_cast<double>(batch_examples);
      for (double& x : grad_sec) x *= inv;
      for (double& x : grad_vul) x *= inv;

      std::array<std::span<double>, 2> clip_view{std::span<double>(grad_sec),
                                                 std::span<double>(grad_vul)};
      const double norm = clip_by_global_norm(clip_view, config.grad_clip_norm);
      grad_norm_sum += norm;
      if (config.grad_clip_norm > 0.0 && norm > config.grad_clip_norm) ++clipped;
      ++batches;

      adam_sec.step(bank.sec.data, grad_sec);
      adam_vul.step(bank.vul.data, grad_vul);
      quantize_to_checkpoint_grid(bank.sec);
      quantize_to_checkpoint_grid(bank.vul);
    }

    if (!config.unfreeze_lm &&
        model.weights_fingerprint() != fingerprint_before) {
      throw Error(ErrorCategory::kRuntime,
                  "LM weights drifted during prefix training");
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train = train_sum;
    if (train_examples > 0) stats.train /= static_cast<double>(train_examples);
    stats.validation = evaluate_loss(model, bank, dataset.validation,
                                     config.weights, config.prob_floor);
    stats.mean_grad_norm = batches > 0 ? grad_norm_sum / static_cast<double>(batches) : 0.0;
    stats.clipped_batches = clipped;
    result.history.push_back(stats);

    const double val_total =
        dataset.validation.empty() ? stats.train.total : stats.validation.total;
    if (val_total < best_val) {
      best_val = val_total;
      best_bank = bank;
      best_epoch = epoch;
    }
  }

  result.bank = std::move(best_bank);
  result.best_epoch = best_epoch;
  return result;
}

void write_history(const std::vector<EpochStats>& history,
                   const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write history file: " + file.string());
  for (const EpochStats& e : history) {
    for (const char* split : {"train", "val"}) {
      const LossBreakdown& b = split == std::string("train") ? e.train : e.validation;
      nlohmann::json j;
      j["epoch"] = e.epoch;
      j["split"] = split;
      j["lm"] = b.lm;
      j["ct"] = b.ct;
      j["kl"] = b.kl;
      j["total"] = b.total;
      if (split == std::string("train")) {
        j["mean_grad_norm"] = e.mean_grad_norm;
        j["clipped_batches"] = e.clipped_batches;
      }
      out << j.dump() << "\n";
    }
  }
}

}  // namespace pcl
