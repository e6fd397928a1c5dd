#pragma once

#include <cstddef>
#include <vector>

namespace pcl {

// Injected attention state for one layer: `length()` slots, each a key
// vector and a value vector of `width` channels. Layout is slot-major
// (slot 0 channels, slot 1 channels, ...).
struct LayerKV {
  std::size_t width = 0;
  std::vector<double> keys;
  std::vector<double> values;

  std::size_t length() const { return width == 0 ? 0 : keys.size() / width; }
};

// One entry per transformer layer, outermost first.
using KVState = std::vector<LayerKV>;

inline std::size_t kv_state_length(const KVState& state) {
  return state.empty() ? 0 : state.front().length();
}

}  // namespace pcl
