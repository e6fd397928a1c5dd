#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace pcl {

// Incremental FNV-1a (64-bit) over a canonical little-endian byte stream.
// Used for model/bank fingerprints; deterministic across runs and platforms.
class Digest {
 public:
  Digest& update(const void* data, std::size_t size);
  Digest& update_u64(std::uint64_t value);
  Digest& update_doubles(std::span<const double> values);
  Digest& update_string(std::string_view text);

  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex_digest_of_doubles(std::span<const double> values);

}  // namespace pcl
