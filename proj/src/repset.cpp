#include "subpop/repset.hpp"

#include <set>
#include <string>
#include <utility>

#include "subpop/errors.hpp"

namespace subpop {

void validate_repset(const RepSet& reps) {
  if (reps.rows.size() != reps.matrix.rows()) {
    throw DataError("repset '" + reps.model_id + "': row index has " +
                    std::to_string(reps.rows.size()) + " entries but matrix has " +
                    std::to_string(reps.matrix.rows()) + " rows");
  }
  std::set<std::pair<std::string, std::int32_t>> seen;
  for (const RepRow& row : reps.rows) {
    if (!seen.emplace(row.example_id, row.position).second) {
      throw DataError("repset '" + reps.model_id + "': duplicate row key (" +
                      row.example_id + ", " + std::to_string(row.position) + ")");
    }
  }
}

void require_aligned(const RepSet& a, const RepSet& b) {
  if (a.rows.size() != b.rows.size()) {
    throw AlignmentError("repsets '" + a.model_id + "' and '" + b.model_id +
                         "' have different row counts: " +
                         std::to_string(a.rows.size()) + " vs " +
                         std::to_string(b.rows.size()));
  }
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    if (a.rows[i].example_id != b.rows[i].example_id ||
        a.rows[i].position != b.rows[i].position) {
      throw AlignmentError(
          "repsets '" + a.model_id + "' and '" + b.model_id +
          "' disagree at row " + std::to_string(i) + ": (" +
          a.rows[i].example_id + ", " + std::to_string(a.rows[i].position) +
          ") vs (" + b.rows[i].example_id + ", " +
          std::to_string(b.rows[i].position) + ")");
    }
  }
}

}  // namespace subpop
