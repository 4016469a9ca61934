#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace subpop {

// Binary indicator over a collection (corpus examples or representation
// rows). bits.size() must equal the size of the collection it indexes.
struct AttributeMask {
  std::string attribute_id;
  std::vector<std::uint8_t> bits;

  std::size_t count_selected() const {
    std::size_t n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
  }

  static AttributeMask all_true(std::string attribute_id, std::size_t n) {
    return {std::move(attribute_id), std::vector<std::uint8_t>(n, 1)};
  }
};

}  // namespace subpop
