#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "slowfast/types.hpp"

namespace slowfast {

/// Largest real part among the eigenvalues of M.
[[nodiscard]] inline double spectral_abscissa(const Matrix &M) {
  require(M.rows() == M.cols() && M.rows() > 0, "spectral_abscissa: square matrix required");
  Eigen::EigenSolver<Matrix> es(M, /*computeEigenvectors=*/false);
  return es.eigenvalues().real().maxCoeff();
}

[[nodiscard]] inline bool is_hurwitz(const Matrix &M) { return spectral_abscissa(M) < 0.0; }

/// Symmetric PSD square root via eigendecomposition; eigenvalues down to
/// -negative_tol are clipped at zero.
[[nodiscard]] inline Matrix matrix_sqrt_psd(const Matrix &M, double negative_tol = 1e-10) {
  require(M.rows() == M.cols(), "matrix_sqrt_psd: square matrix required");
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidArgument("matrix_sqrt_psd: input is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  Vector lambda = es.eigenvalues();
  if (lambda.size() > 0 && lambda.minCoeff() < -negative_tol * scale) {
    throw InvalidArgument("matrix_sqrt_psd: matrix has a negative eigenvalue " +
                          std::to_string(lambda.minCoeff()));
  }
  lambda = lambda.cwiseMax(0.0).cwiseSqrt();
  const Matrix &V = es.eigenvectors();
  Matrix S = V * lambda.asDiagonal() * V.transpose();
  return 0.5 * (S + S.transpose());
}

/// Symmetrizes and clips negative eigenvalues at zero.
[[nodiscard]] inline Matrix project_psd(const Matrix &M) {
  const Matrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const Vector lambda = es.eigenvalues().cwiseMax(0.0);
  Matrix out = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

[[nodiscard]] inline Matrix expm(const Matrix &M) { return M.exp(); }

/// Propagator pair for the linear flow x' = M x over one step h:
/// E = exp(M h) and Phi = \int_0^h exp(M r) dr.
struct Propagator {
  Matrix E;
  Matrix Phi;
};

[[nodiscard]] inline Propagator make_propagator(const Matrix &M, double h) {
  const Index n = M.rows();
  Matrix aug = Matrix::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = M * h;
  aug.topRightCorner(n, n) = Matrix::Identity(n, n) * h;
  const Matrix ex = aug.exp();
  return {ex.topLeftCorner(n, n), ex.topRightCorner(n, n)};
}

} // namespace slowfast
