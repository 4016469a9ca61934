#include "subpop/cca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "subpop/errors.hpp"
#include "subpop/log.hpp"
#include "subpop/tensor_core.hpp"

namespace subpop {

namespace {

Eigen::MatrixXd centered(const Matrix& m) {
  Eigen::MatrixXd a = m.eigen();
  Eigen::RowVectorXd means = a.colwise().mean();
  a.rowwise() -= means;
  return a;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m,
                            const std::vector<std::uint8_t>& bits) {
  Eigen::Index n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  Eigen::MatrixXd out(n, m.cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out.row(r++) = m.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

SvccaReport svcca_impl(const RepSet& hx, const RepSet& hz, double tau,
                       bool check_alignment,
                       const AttributeMask* mask) {
  validate_repset(hx);
  validate_repset(hz);
  if (check_alignment) {
    require_aligned(hx, hz);
  } else if (hx.n_rows() != hz.n_rows()) {
    throw AlignmentError("svcca: row counts differ: " +
                         std::to_string(hx.n_rows()) + " vs " +
                         std::to_string(hz.n_rows()));
  }

  VarianceTruncation tx = truncate_by_variance(hx.matrix, tau);
  VarianceTruncation tz = truncate_by_variance(hz.matrix, tau);

  Matrix px = tx.projected;
  Matrix pz = tz.projected;
  std::size_t rows_used = hx.n_rows();
  if (mask != nullptr) {
    if (mask->bits.size() != hx.n_rows()) {
      throw ArgumentError("svcca_subset: mask length " +
                          std::to_string(mask->bits.size()) +
                          " does not match row count " +
                          std::to_string(hx.n_rows()));
    }
    std::size_t selected = mask->count_selected();
    if (selected < 3) {
      throw InsufficientDataError("svcca_subset: mask selects only " +
                                  std::to_string(selected) + " rows (need >= 3)");
    }
    std::size_t dirs = std::max(tx.k, tz.k);
    if (selected < dirs) {
      warn("svcca_subset: mask selects " + std::to_string(selected) +
           " rows, fewer than the " + std::to_string(dirs) +
           " truncation directions");
    }
    px = Matrix::from_eigen(select_rows(tx.projected.eigen(), mask->bits));
    pz = Matrix::from_eigen(select_rows(tz.projected.eigen(), mask->bits));
    rows_used = selected;
  }

  SvccaReport report;
  report.correlations = cca(px, pz);
  report.dirs_kept_x = tx.k;
  report.dirs_kept_y = tz.k;
  report.n_rows = rows_used;
  double sum = 0.0;
  for (double r : report.correlations.rho) sum += r;
  report.rho_mean =
      report.correlations.rho.empty() ? 0.0 : sum / report.correlations.rho.size();
  return report;
}

}  // namespace

VarianceTruncation truncate_by_variance(const Matrix& m, double tau) {
  if (m.empty()) throw ArgumentError("truncate_by_variance: empty matrix");
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw ArgumentError("truncate_by_variance: tau must be in (0, 1], got " +
                        std::to_string(tau));
  }
  if (m.rows() < 2) {
    throw ArgumentError("truncate_by_variance: need at least 2 rows, got " +
                        std::to_string(m.rows()));
  }
  Eigen::MatrixXd c = centered(m);
  SvdResult dec = svd(Matrix::from_eigen(c));

  std::vector<double> cumulative(dec.s.size());
  double running = 0.0;
  for (std::size_t i = 0; i < dec.s.size(); ++i) {
    running += dec.s[i] * dec.s[i];
    cumulative[i] = running;
  }
  double total = cumulative.empty() ? 0.0 : cumulative.back();
  if (total <= 0.0) {
    throw DataError("truncate_by_variance: input has zero variance "
                    "(all rows identical or all-zero matrix)");
  }

  std::size_t k = dec.s.size();
  for (std::size_t i = 0; i < cumulative.size(); ++i) {
    if (cumulative[i] >= tau * total) {
      k = i + 1;
      break;
    }
  }

  VarianceTruncation out;
  out.tau = tau;
  out.k = k;
  out.variance_captured = cumulative[k - 1] / total;
  Eigen::MatrixXd vk =
      dec.vt.eigen().topRows(static_cast<Eigen::Index>(k)).transpose();
  out.projected = Matrix::from_eigen(c * vk);
  return out;
}

CanonicalCorrelations cca(const Matrix& x, const Matrix& z, double ridge) {
  if (x.empty() || z.empty()) throw ArgumentError("cca: empty input");
  if (x.rows() != z.rows()) {
    throw AlignmentError("cca: row counts differ: " + std::to_string(x.rows()) +
                         " vs " + std::to_string(z.rows()));
  }
  std::size_t n = x.rows();
  if (n < 3) {
    throw InsufficientDataError("cca: need at least 3 rows, got " +
                                std::to_string(n));
  }
  std::size_t p = x.cols();
  std::size_t q = z.cols();
  if (n <= std::max(p, q)) {
    warn("cca: sample count " + std::to_string(n) +
         " does not exceed max dimension " + std::to_string(std::max(p, q)) +
         "; correlations may be degenerate");
  }

  Eigen::MatrixXd xc = centered(x);
  Eigen::MatrixXd zc = centered(z);
  double denom = static_cast<double>(n - 1);
  Eigen::MatrixXd sxx = (xc.transpose() * xc) / denom;
  Eigen::MatrixXd szz = (zc.transpose() * zc) / denom;
  Eigen::MatrixXd sxz = (xc.transpose() * zc) / denom;

  double ridge_x = ridge >= 0.0 ? ridge : 1e-12 * sxx.diagonal().mean();
  double ridge_z = ridge >= 0.0 ? ridge : 1e-12 * szz.diagonal().mean();
  sxx.diagonal().array() += ridge_x;
  szz.diagonal().array() += ridge_z;

  Matrix wx = inv_sqrt_psd(Matrix::from_eigen(sxx));
  Matrix wz = inv_sqrt_psd(Matrix::from_eigen(szz));

  Eigen::MatrixXd t = wx.eigen() * sxz * wz.eigen();
  SvdResult dec = svd(Matrix::from_eigen(t));

  std::size_t d = std::min(p, q);
  CanonicalCorrelations out;
  out.rho.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    double r = dec.s[i];
    if (r > 1.0 + 1e-6) {
      throw NumericalError("cca: correlation " + std::to_string(r) +
                           " exceeds 1 beyond tolerance; whitening failed");
    }
    out.rho[i] = std::clamp(r, 0.0, 1.0);
  }
  Eigen::MatrixXd u = dec.u.eigen().leftCols(static_cast<Eigen::Index>(d));
  Eigen::MatrixXd v =
      dec.vt.eigen().topRows(static_cast<Eigen::Index>(d)).transpose();
  out.u_proj = Matrix::from_eigen(wx.eigen() * u);
  out.v_proj = Matrix::from_eigen(wz.eigen() * v);
  return out;
}

SvccaReport svcca_score(const RepSet& hx, const RepSet& hz, double tau,
                        bool check_alignment) {
  return svcca_impl(hx, hz, tau, check_alignment, nullptr);
}

SvccaReport svcca_subset(const RepSet& hx, const RepSet& hz,
                         const AttributeMask& mask, double tau,
                         bool check_alignment) {
  return svcca_impl(hx, hz, tau, check_alignment, &mask);
}

}  // namespace subpop
