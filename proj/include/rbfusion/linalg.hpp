#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace rbfusion {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown on non-finite inputs, failed factorizations and degenerate weights.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_dims(bool ok, const char* what) {
  if (!ok) throw DimensionError(std::string("dimension mismatch: ") + what);
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite input: ") + what);
}

}  // namespace detail

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Smallest eigenvalue of the symmetric part of `m`.
inline double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

/// Largest singular value.
inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-9) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1.0);
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline bool is_psd(const Matrix& m, double rel_tol = 1e-9) {
  if (!is_symmetric(m, rel_tol)) return false;
  const double scale = std::max(spectral_norm(m), 1.0);
  return min_eigenvalue(m) >= -rel_tol * scale;
}

/// Cholesky factorization of a symmetric positive-definite matrix. A single
/// relative jitter retry is attempted before giving up.
inline Eigen::LLT<Matrix> cholesky(const Matrix& spd, const char* what) {
  detail::require_dims(spd.rows() == spd.cols(), what);
  detail::require_finite(spd, what);
  const Matrix sym = symmetrize(spd);
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-12 * sym.diagonal().cwiseAbs().maxCoeff();
  if (!(jitter > 0.0)) throw NumericalError(std::string("matrix not positive definite: ") + what);
  llt.compute(sym + jitter * Matrix::Identity(sym.rows(), sym.cols()));
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string("matrix not positive definite: ") + what);
  return llt;
}

inline Matrix spd_inverse(const Matrix& spd, const char* what) {
  auto llt = cholesky(spd, what);
  return symmetrize(llt.solve(Matrix::Identity(spd.rows(), spd.cols())));
}

}  // namespace rbfusion
