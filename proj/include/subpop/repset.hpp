#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subpop/matrix.hpp"

namespace subpop {

// Provenance of one representation row: which example, which token position
// inside it, and the token id the model saw there.
struct RepRow {
  std::string example_id;
  std::int32_t position = 0;
  std::int32_t token_id = 0;

  bool operator==(const RepRow& other) const = default;
};

// Per-token latent representations for one layer of one model. rows[i]
// describes matrix row i; (example_id, position) pairs are unique.
struct RepSet {
  std::int32_t layer = 0;
  std::string model_id;
  Matrix matrix;
  std::vector<RepRow> rows;

  std::size_t n_rows() const { return rows.size(); }
  std::size_t dim() const { return matrix.cols(); }
};

// Throws DataError if row count and matrix shape disagree or if
// (example_id, position) keys repeat.
void validate_repset(const RepSet& reps);

// Throws AlignmentError unless a and b have the same (example_id, position)
// keys in the same order.
void require_aligned(const RepSet& a, const RepSet& b);

}  // namespace subpop
