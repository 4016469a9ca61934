#pragma once

#include <utility>
#include <vector>

#include "subpop/matrix.hpp"

namespace subpop {

// Thin SVD m = u * diag(s) * vt with r = min(rows, cols) retained pairs.
// Singular values are sorted descending; each singular-vector pair is
// sign-fixed so the largest-magnitude entry of the right singular vector
// is positive, making results reproducible across runs.
struct SvdResult {
  Matrix u;               // n x r
  std::vector<double> s;  // length r, descending, >= 0
  Matrix vt;              // r x d
};

SvdResult svd(const Matrix& m);

// Subtracts each column's mean. Returns the centered matrix and the means.
std::pair<Matrix, std::vector<double>> center_columns(const Matrix& m);

// Inverse square root of a symmetric PSD matrix via eigendecomposition,
// with pseudo-inverse convention: eigenvalues <= eigen_floor contribute 0.
// eigen_floor < 0 selects the default floor of 1e-12 * (largest eigenvalue).
// Throws ArgumentError if the input is not symmetric within 1e-10.
Matrix inv_sqrt_psd(const Matrix& s, double eigen_floor = -1.0);

struct PcaProjection {
  Matrix coords;                          // n x k
  std::vector<double> explained_variance_ratio;  // length k, descending
};

// Projects the column-centered input onto its top-k principal directions.
// Requires 1 <= k <= min(n - 1, d).
PcaProjection pca_project(const Matrix& m, std::size_t k);

}  // namespace subpop
