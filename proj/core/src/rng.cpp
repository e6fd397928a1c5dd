#include "pcl/rng.hpp"

#include "pcl/digest.hpp"

namespace pcl {

std::uint64_t derive_seed(std::uint64_t root, std::string_view component,
                          std::uint64_t index) {
  Digest d;
  d.update_u64(root);
  d.update_string(component);
  d.update_u64(index);
  // Avoid the all-zero state, which splitmix handles but is a poor seed by
  // convention.
  const std::uint64_t v = d.value();
  return v == 0 ? 0x9e3779b97f4a7c15ULL : v;
}

}  // namespace pcl
