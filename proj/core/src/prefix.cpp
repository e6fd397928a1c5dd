#include "pcl/prefix.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pcl/digest.hpp"
#include "pcl/errors.hpp"
#include "pcl/rng.hpp"

namespace pcl {

Property negate(Property p) {
  return p == Property::kSec ? Property::kVul : Property::kSec;
}

const char* to_string(Property p) { return p == Property::kSec ? "sec" : "vul"; }

Property property_from_string(std::string_view name) {
  if (name == "sec") return Property::kSec;
  if (name == "vul") return Property::kVul;
  throw ConfigError("unknown property (expected sec or vul): " + std::string(name));
}

double& Prefix::at(std::size_t slot, std::size_t layer, std::size_t kv,
                   std::size_t ch) {
  return data[((slot * num_layers + layer) * 2 + kv) * width + ch];
}

double Prefix::at(std::size_t slot, std::size_t layer, std::size_t kv,
                  std::size_t ch) const {
  return data[((slot * num_layers + layer) * 2 + kv) * width + ch];
}

std::string PrefixBank::digest() const {
  Digest d;
  d.update_string("pcl-prefix-bank-v1");
  d.update_u64(sec.length);
  d.update_u64(sec.num_layers);
  d.update_u64(sec.width);
  d.update_doubles(sec.data);
  d.update_doubles(vul.data);
  d.update_string(bound_model);
  return d.hex();
}

void quantize_to_checkpoint_grid(Prefix& prefix) {
  for (double& x : prefix.data) x = static_cast<double>(static_cast<float>(x));
}

namespace {

Prefix make_prefix(const LMDescriptor& d, std::size_t length, RandomStream& rng,
                   double scale) {
  Prefix p;
  p.length = length;
  p.num_layers = d.num_layers;
  p.width = d.hidden_kv_width;
  p.data.resize(2 * length * d.num_layers * d.hidden_kv_width);
  for (double& x : p.data) x = rng.uniform(-scale, scale);
  quantize_to_checkpoint_grid(p);
  return p;
}

void check_shape(const Prefix& p, const LMDescriptor& d, const char* which) {
  if (p.num_layers != d.num_layers || p.width != d.hidden_kv_width) {
    throw ContractError(std::string("prefix '") + which +
                        "' shape does not match the model descriptor");
  }
  if (p.data.size() != 2 * p.length * p.num_layers * p.width) {
    throw ContractError(std::string("prefix '") + which + "' data size mismatch");
  }
}

}  // namespace

PrefixBank init_bank(const LMDescriptor& descriptor, std::size_t length,
                     std::uint64_t seed, double init_scale,
                     std::string bound_model) {
  descriptor.validate();
  if (length == 0) throw ConfigError("prefix length must be at least 1");
  PrefixBank bank;
  RandomStream sec_rng(derive_seed(seed, "prefix-init-sec"));
  RandomStream vul_rng(derive_seed(seed, "prefix-init-vul"));
  bank.sec = make_prefix(descriptor, length, sec_rng, init_scale);
  bank.vul = make_prefix(descriptor, length, vul_rng, init_scale);
  bank.bound_model = std::move(bound_model);
  return bank;
}

double budget_ratio(const PrefixBank& bank, const LMDescriptor& descriptor) {
  descriptor.validate();
  check_shape(bank.sec, descriptor, "sec");
  check_shape(bank.vul, descriptor, "vul");
  return static_cast<double>(bank.trainable_params()) /
         static_cast<double>(descriptor.total_params);
}

KVState as_initial_state(const PrefixBank& bank, Property p) {
  const Prefix& prefix = bank.prefix(p);
  if (prefix.length == 0 || prefix.num_layers == 0 || prefix.width == 0) {
    throw ContractError("as_initial_state: prefix is empty");
  }
  KVState state(prefix.num_layers);
  for (std::size_t layer = 0; layer < prefix.num_layers; ++layer) {
    LayerKV& kv = state[layer];
    kv.width = prefix.width;
    kv.keys.resize(prefix.length * prefix.width);
    kv.values.resize(prefix.length * prefix.width);
    for (std::size_t slot = 0; slot < prefix.length; ++slot) {
      for (std::size_t ch = 0; ch < prefix.width; ++ch) {
        kv.keys[slot * prefix.width + ch] = prefix.at(slot, layer, 0, ch);
        kv.values[slot * prefix.width + ch] = prefix.at(slot, layer, 1, ch);
      }
    }
  }
  return state;
}

namespace {

void write_f32_le(std::ofstream& out, double x) {
  const float f = static_cast<float>(x);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof(bits));
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

double read_f32_le(std::ifstream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw FormatError("bank.bin truncated");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  float f = 0.0f;
  std::memcpy(&f, &bits, sizeof(f));
  return static_cast<double>(f);
}

}  // namespace

void save_bank(const PrefixBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "pcl-prefix-bank-v1";
  j["properties"] = {"sec", "vul"};
  j["length"] = bank.sec.length;
  j["num_layers"] = bank.sec.num_layers;
  j["hidden_kv_width"] = bank.sec.width;
  j["bound_model"] = bank.bound_model;
  j["element_type"] = "f32le";
  j["order"] = "(property, slot, layer, key|value, channel)";
  {
    std::ofstream out(dir / "bank.json");
    if (!out) throw FormatError("cannot write " + (dir / "bank.json").string());
    out << j.dump(2) << "\n";
  }
  std::ofstream bin(dir / "bank.bin", std::ios::binary);
  if (!bin) throw FormatError("cannot write " + (dir / "bank.bin").string());
  for (const Prefix* p : {&bank.sec, &bank.vul}) {
    for (double x : p->data) write_f32_le(bin, x);
  }
}

PrefixBank load_bank(const std::filesystem::path& dir,
                     const LMDescriptor& descriptor,
                     const std::string& model_fingerprint,
                     const LoadBankOptions& options, std::string* warning) {
  std::ifstream in(dir / "bank.json");
  if (!in) throw FormatError("bank checkpoint missing " + (dir / "bank.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed bank.json: " + std::string(e.what()));
  }
  if (j.value("format", "") != "pcl-prefix-bank-v1") {
    throw FormatError("bank.json: unsupported format tag");
  }

  PrefixBank bank;
  std::size_t length = 0;
  try {
    length = j.at("length").get<std::size_t>();
    bank.bound_model = j.at("bound_model").get<std::string>();
    const auto layers = j.at("num_layers").get<std::size_t>();
    const auto width = j.at("hidden_kv_width").get<std::size_t>();
    bank.sec.length = bank.vul.length = length;
    bank.sec.num_layers = bank.vul.num_layers = layers;
    bank.sec.width = bank.vul.width = width;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bank.json missing field: " + std::string(e.what()));
  }

  if (bank.sec.num_layers != descriptor.num_layers ||
      bank.sec.width != descriptor.hidden_kv_width) {
    throw ContractError("bank shape (" + std::to_string(bank.sec.num_layers) +
                        " layers, width " + std::to_string(bank.sec.width) +
                        ") does not match descriptor (" +
                        std::to_string(descriptor.num_layers) + ", " +
                        std::to_string(descriptor.hidden_kv_width) + ")");
  }

  const std::size_t per_prefix = 2 * length * descriptor.num_layers *
                                 descriptor.hidden_kv_width;
  std::ifstream bin(dir / "bank.bin", std::ios::binary);
  if (!bin) throw FormatError("bank checkpoint missing " + (dir / "bank.bin").string());
  for (Prefix* p : {&bank.sec, &bank.vul}) {
    p->data.resize(per_prefix);
    for (double& x : p->data) x = read_f32_le(bin);
  }
  bin.peek();
  if (!bin.eof()) throw FormatError("bank.bin has trailing bytes");

  if (!bank.bound_model.empty() && bank.bound_model != model_fingerprint) {
    const std::string msg = "bank was trained against model " + bank.bound_model +
                            " but the loaded model is " + model_fingerprint;
    if (options.strict) throw ContractError(msg);
    if (warning != nullptr) *warning = msg;
  }
  return bank;
}

}  // namespace pcl
