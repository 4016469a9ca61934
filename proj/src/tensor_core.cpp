#include "subpop/tensor_core.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <string>

#include "subpop/errors.hpp"

namespace subpop {

namespace {

void require_nonempty(const Matrix& m, const char* op) {
  if (m.empty()) {
    throw ArgumentError(std::string(op) + ": empty matrix");
  }
}

// Flip sign of singular pairs so that the largest-magnitude entry of each
// right singular vector is positive (first index wins ties).
void canonicalize_signs(Eigen::MatrixXd& u, Eigen::MatrixXd& v) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    Eigen::Index imax = 0;
    double best = std::abs(v(0, j));
    for (Eigen::Index i = 1; i < v.rows(); ++i) {
      double a = std::abs(v(i, j));
      if (a > best) {
        best = a;
        imax = i;
      }
    }
    if (v(imax, j) < 0.0) {
      v.col(j) = -v.col(j);
      if (j < u.cols()) u.col(j) = -u.col(j);
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& m) {
  require_nonempty(m, "svd");
  Eigen::MatrixXd a = m.eigen();
  Eigen::BDCSVD<Eigen::MatrixXd> solver(a,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("svd failed to converge for " +
                         std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " input");
  }
  Eigen::MatrixXd u = solver.matrixU();
  Eigen::MatrixXd v = solver.matrixV();
  Eigen::VectorXd s = solver.singularValues();
  canonicalize_signs(u, v);

  SvdResult out;
  out.u = Matrix::from_eigen(u);
  out.s.assign(s.data(), s.data() + s.size());
  out.vt = Matrix::from_eigen(v.transpose());
  return out;
}

std::pair<Matrix, std::vector<double>> center_columns(const Matrix& m) {
  require_nonempty(m, "center_columns");
  Eigen::MatrixXd a = m.eigen();
  Eigen::RowVectorXd means = a.colwise().mean();
  a.rowwise() -= means;
  std::vector<double> mean_vec(means.data(), means.data() + means.size());
  return {Matrix::from_eigen(a), std::move(mean_vec)};
}

Matrix inv_sqrt_psd(const Matrix& s, double eigen_floor) {
  require_nonempty(s, "inv_sqrt_psd");
  if (s.rows() != s.cols()) {
    throw ArgumentError("inv_sqrt_psd: matrix must be square, got " +
                        std::to_string(s.rows()) + "x" +
                        std::to_string(s.cols()));
  }
  Eigen::MatrixXd a = s.eigen();
  double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale) {
    throw ArgumentError("inv_sqrt_psd: matrix not symmetric (max asymmetry " +
                        std::to_string(asym) + ")");
  }
  Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("inv_sqrt_psd: eigendecomposition failed");
  }
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  double lambda_max = lambda.maxCoeff();
  double floor = eigen_floor >= 0.0 ? eigen_floor
                                    : 1e-12 * std::max(lambda_max, 0.0);
  Eigen::VectorXd inv_sqrt = Eigen::VectorXd::Zero(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) > floor) inv_sqrt(i) = 1.0 / std::sqrt(lambda(i));
  }
  Eigen::MatrixXd r =
      eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  return Matrix::from_eigen(r);
}

PcaProjection pca_project(const Matrix& m, std::size_t k) {
  require_nonempty(m, "pca_project");
  std::size_t limit = std::min(m.rows() - 1, m.cols());
  if (k < 1 || k > limit) {
    throw ArgumentError("pca_project: k=" + std::to_string(k) +
                        " out of range [1, " + std::to_string(limit) +
                        "] for " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + " input");
  }
  auto [centered, means] = center_columns(m);
  SvdResult dec = svd(centered);

  double total = 0.0;
  for (double sv : dec.s) total += sv * sv;

  Eigen::MatrixXd vk = dec.vt.eigen().topRows(static_cast<Eigen::Index>(k)).transpose();
  Eigen::MatrixXd coords = centered.eigen() * vk;

  PcaProjection out;
  out.coords = Matrix::from_eigen(coords);
  out.explained_variance_ratio.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.explained_variance_ratio[i] =
        total > 0.0 ? (dec.s[i] * dec.s[i]) / total : 0.0;
  }
  return out;
}

}  // namespace subpop
