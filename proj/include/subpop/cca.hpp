#pragma once

#include <cstdint>
#include <vector>

#include "subpop/attribute_mask.hpp"
#include "subpop/matrix.hpp"
#include "subpop/repset.hpp"

namespace subpop {

// Canonical correlations between two row-aligned samples, plus the
// projection matrices mapping the centered inputs to maximally correlated
// coordinates.
struct CanonicalCorrelations {
  std::vector<double> rho;  // length min(p, q), descending, in [0, 1]
  Matrix u_proj;            // p x min(p, q)
  Matrix v_proj;            // q x min(p, q)
};

struct SvccaReport {
  double rho_mean = 0.0;
  std::size_t dirs_kept_x = 0;
  std::size_t dirs_kept_y = 0;
  std::size_t n_rows = 0;
  CanonicalCorrelations correlations;
};

struct VarianceTruncation {
  double tau = 0.0;
  Matrix projected;  // n x k
  std::size_t k = 0;
  double variance_captured = 0.0;
};

// Keeps the minimum number k of principal directions of the column-centered
// input whose cumulative squared-singular-value fraction reaches tau, and
// projects the centered input onto them. Requires 0 < tau <= 1 and n >= 2;
// an all-zero (degenerate) input is rejected.
VarianceTruncation truncate_by_variance(const Matrix& m, double tau);

// Canonical correlation analysis of two row-aligned samples: whitens both
// sides with the inverse square root of their ridge-regularized covariances
// and takes the SVD of the whitened cross-covariance. ridge < 0 selects the
// default of 1e-12 * (mean covariance diagonal) per side; ridge >= 0 is
// added verbatim to both diagonals. Rank deficiency is handled by the
// pseudo-inverse floor inside the whitening step regardless of the ridge.
CanonicalCorrelations cca(const Matrix& x, const Matrix& z,
                          double ridge = -1.0);

// Two-step similarity: per-side variance truncation at tau, then CCA on the
// projections; rho_mean is the average canonical correlation. Inputs must
// share (example_id, position) row keys unless check_alignment is false
// (test hook for deliberately broken correspondences).
SvccaReport svcca_score(const RepSet& hx, const RepSet& hz, double tau = 0.99,
                        bool check_alignment = true);

// Variant for token subsets: truncation directions come from ALL rows of
// each side; the CCA stage sees only the mask-selected rows of the
// projections. The mask must select at least 3 rows.
SvccaReport svcca_subset(const RepSet& hx, const RepSet& hz,
                         const AttributeMask& mask, double tau = 0.99,
                         bool check_alignment = true);

}  // namespace subpop
