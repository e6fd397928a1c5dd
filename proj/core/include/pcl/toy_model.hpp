#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pcl/kv_state.hpp"
#include "pcl/tokenizer.hpp"

namespace pcl {

// Whether injected state occupies positions of its own. In kFree mode the
// prefix carries no positional information and token t keeps position t; in
// kShifted mode token positions start after the prefix slots.
enum class PrefixPositionMode { kFree, kShifted };

const char* to_string(PrefixPositionMode mode);
PrefixPositionMode prefix_position_mode_from_string(std::string_view name);

struct ToyConfig {
  std::size_t num_layers = 2;
  std::size_t width = 32;      // embedding width; also the per-key/value width
  std::size_t ffn_width = 64;
  std::size_t vocab_size = 64;
  std::size_t max_context = 256;
  PrefixPositionMode prefix_positions = PrefixPositionMode::kFree;

  void validate() const;
};

// All trainable tensors of the toy LM. Row-major, (input, output) layout for
// weight matrices.
struct ToyParams {
  struct Layer {
    std::vector<double> ln1_gain, ln1_bias;
    std::vector<double> wq, wk, wv, wo;
    std::vector<double> ln2_gain, ln2_bias;
    std::vector<double> w1, b1, w2, b2;
  };

  std::vector<double> tok_embed;  // V x E
  std::vector<double> pos_embed;  // P x E
  std::vector<Layer> layers;
  std::vector<double> lnf_gain, lnf_bias;
  std::vector<double> unembed;  // E x V

  std::size_t total() const;
  void for_each_tensor(const std::function<void(std::vector<double>&)>& fn);
  void for_each_tensor(const std::function<void(const std::vector<double>&)>& fn) const;
};

// A deterministic decoder-only transformer small enough to train from
// scratch on a CPU in minutes: single-head pre-norm attention blocks with a
// GELU feed-forward, double precision throughout. Injected initial state is
// consumed as extra key/value slots visible to every query position.
class ToyTransformer {
 public:
  ToyTransformer(ToyConfig config, std::uint64_t seed);

  const ToyConfig& config() const { return config_; }
  ToyParams& params() { return params_; }
  const ToyParams& params() const { return params_; }
  std::size_t total_params() const { return params_.total(); }
  std::string fingerprint() const;

  // Activation record from one forward pass; consumed by backward().
  struct Tape {
    std::vector<TokenId> tokens;
    KVState prefix;  // copy of the injected state (may be empty)
    std::size_t prefix_len = 0;
    std::vector<double> x0;  // T x E

    struct LayerTape {
      std::vector<double> x_in;                 // T x E
      std::vector<double> ln1_hat;              // T x E (normalized, pre-affine)
      std::vector<double> ln1_rstd;             // T
      std::vector<double> q, k, v;              // T x E
      std::vector<std::vector<double>> att;     // per query: N + t + 1 weights
      std::vector<double> ctx;                  // T x E
      std::vector<double> x_mid;                // T x E (after attention residual)
      std::vector<double> ln2_hat;              // T x E
      std::vector<double> ln2_rstd;             // T
      std::vector<double> mlp_pre;              // T x F
      std::vector<double> mlp_act;              // T x F
    };
    std::vector<LayerTape> layers;

    std::vector<double> x_final;  // T x E (residual stream into final norm)
    std::vector<double> lnf_hat;  // T x E
    std::vector<double> lnf_rstd; // T
    std::vector<double> f;        // T x E (input to the unembedding)
  };

  // Next-token log-probabilities at every position (T rows of V entries).
  // Row t conditions on the injected state and tokens 0..t. Pass a tape to
  // record activations for backward().
  std::vector<std::vector<double>> forward(std::span<const TokenId> tokens,
                                           const KVState* initial_state = nullptr,
                                           Tape* tape = nullptr) const;

  // Backpropagates dL/dlogits through the recorded pass. Either gradient
  // sink may be null; both accumulate (callers zero them).
  void backward(const Tape& tape, const std::vector<std::vector<double>>& dlogits,
                ToyParams* weight_grads, KVState* prefix_grads) const;

  ToyParams zero_grads() const;
  KVState zero_prefix_grads(std::size_t prefix_len) const;

  void save(const std::filesystem::path& dir) const;
  static ToyTransformer load(const std::filesystem::path& dir);

 private:
  ToyConfig config_;
  ToyParams params_;

  void check_initial_state(const KVState* state) const;
};

}  // namespace pcl
