#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcl/kv_state.hpp"
#include "pcl/lm_adapter.hpp"

namespace pcl {

// The binary conditioning property.
enum class Property { kSec, kVul };

Property negate(Property p);
const char* to_string(Property p);
Property property_from_string(std::string_view name);

// One property's trained vectors: `length` slots, each with a key and a
// value vector per layer. Flat layout (slot, layer, key|value, channel);
// 2 * length * num_layers * width parameters in total.
//
// Values are kept on the float32 grid (the checkpoint element type) so that
// save/load round-trips are bit-exact.
struct Prefix {
  std::size_t length = 0;
  std::size_t num_layers = 0;
  std::size_t width = 0;
  std::vector<double> data;

  std::size_t param_count() const { return data.size(); }
  double& at(std::size_t slot, std::size_t layer, std::size_t kv, std::size_t ch);
  double at(std::size_t slot, std::size_t layer, std::size_t kv, std::size_t ch) const;
};

// The pair of prefixes, bound to the fingerprint of the LM they were
// initialized or trained against. The two prefixes are trained jointly but
// are independent at inference: reading one never touches the other.
struct PrefixBank {
  Prefix sec;
  Prefix vul;
  std::string bound_model;

  Prefix& prefix(Property p) { return p == Property::kSec ? sec : vul; }
  const Prefix& prefix(Property p) const { return p == Property::kSec ? sec : vul; }

  std::size_t trainable_params() const { return sec.param_count() + vul.param_count(); }
  std::string digest() const;
};

// Seeded zero-mean uniform init with configurable scale; sec and vul are
// independent draws.
PrefixBank init_bank(const LMDescriptor& descriptor, std::size_t length,
                     std::uint64_t seed, double init_scale = 0.02,
                     std::string bound_model = "");

// (trainable prefix parameters, both properties) / LM total parameters.
double budget_ratio(const PrefixBank& bank, const LMDescriptor& descriptor);

// The selected property's vectors in the layout forward passes expect.
KVState as_initial_state(const PrefixBank& bank, Property p);

// Checkpoint directory: bank.json header plus bank.bin, little-endian
// float32 in (property, slot, layer, key|value, channel) order, sec first.
void save_bank(const PrefixBank& bank, const std::filesystem::path& dir);

struct LoadBankOptions {
  bool strict = false;  // fingerprint mismatch: warning by default, error when set
};

PrefixBank load_bank(const std::filesystem::path& dir,
                     const LMDescriptor& descriptor,
                     const std::string& model_fingerprint,
                     const LoadBankOptions& options = {},
                     std::string* warning = nullptr);

// Snaps every element to the nearest float32; the trainer applies this after
// each update to keep the bank on the checkpoint grid.
void quantize_to_checkpoint_grid(Prefix& prefix);

}  // namespace pcl
