#include "pcl/digest.hpp"

#include <cstring>

namespace pcl {
namespace {

constexpr std::uint64_t kPrime = 0x100000001b3ULL;

}  // namespace

Digest& Digest::update(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= bytes[i];
    state_ *= kPrime;
  }
  return *this;
}

Digest& Digest::update_u64(std::uint64_t value) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  return update(bytes, sizeof(bytes));
}

Digest& Digest::update_doubles(std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(bits));
    update_u64(bits);
  }
  return *this;
}

Digest& Digest::update_string(std::string_view text) {
  update_u64(text.size());
  return update(text.data(), text.size());
}

std::string Digest::hex() const {
  static const char* kHex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) {
    out[15 - i] = kHex[(state_ >> (4 * i)) & 0xf];
  }
  return out;
}

std::string hex_digest_of_doubles(std::span<const double> values) {
  Digest d;
  d.update_doubles(values);
  return d.hex();
}

}  // namespace pcl
