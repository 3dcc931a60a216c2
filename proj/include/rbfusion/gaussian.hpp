#pragma once

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/MatrixFunctions>

#include "rbfusion/linalg.hpp"

namespace rbfusion {

/// Mean and covariance of a Gaussian state estimate.
struct GaussianEstimate {
  Vector mean;
  Matrix cov;

  [[nodiscard]] Eigen::Index dim() const { return mean.size(); }
};

/// Discrete linear dynamics x_k = A x_{k-1} + q, q ~ N(0, Q).
struct MotionModel {
  Matrix A;
  Matrix Q;
};

/// Linear measurement y = H x + r, r ~ N(0, R).
struct MeasurementModel {
  Matrix H;
  Matrix R;
};

/// Continuous-time dynamics dx/dt = F x + L w, with w white noise of
/// spectral density Qc.
struct ContinuousMotionModel {
  Matrix F;
  Matrix L;
  Matrix Qc;
};

inline void validate(const GaussianEstimate& est) {
  detail::require_dims(est.cov.rows() == est.mean.size() && est.cov.cols() == est.mean.size(),
                       "estimate mean/covariance");
}

inline void validate(const MotionModel& m) {
  detail::require_dims(m.A.rows() == m.A.cols(), "transition matrix is not square");
  detail::require_dims(m.Q.rows() == m.A.rows() && m.Q.cols() == m.A.cols(),
                       "process noise vs transition matrix");
}

inline void validate(const MeasurementModel& m) {
  detail::require_dims(m.R.rows() == m.H.rows() && m.R.cols() == m.H.rows(),
                       "measurement noise vs measurement matrix");
}

inline GaussianEstimate kf_predict(const GaussianEstimate& est, const MotionModel& model) {
  validate(est);
  validate(model);
  detail::require_dims(model.A.cols() == est.mean.size(), "kf_predict state size");
  return {model.A * est.mean, symmetrize(model.A * est.cov * model.A.transpose() + model.Q)};
}

namespace detail {

struct Innovation {
  Vector v;
  Eigen::LLT<Matrix> S_llt;
};

inline Innovation innovation(const GaussianEstimate& prior, const Vector& y,
                             const MeasurementModel& model) {
  validate(prior);
  validate(model);
  require_dims(model.H.cols() == prior.mean.size(), "measurement matrix vs state");
  require_dims(y.size() == model.H.rows(), "measurement vector");
  require_finite(prior.mean, "prior mean");
  require_finite(prior.cov, "prior covariance");
  require_finite(y, "measurement");
  Matrix S = model.H * prior.cov * model.H.transpose() + model.R;
  return {y - model.H * prior.mean, cholesky(S, "innovation covariance")};
}

}  // namespace detail

/// Kalman measurement update. The posterior covariance is re-symmetrized.
inline GaussianEstimate kf_update(const GaussianEstimate& prior, const Vector& y,
                                  const MeasurementModel& model) {
  auto inn = detail::innovation(prior, y, model);
  // K = P H^T S^{-1}, computed as (S^{-1} H P)^T since S is symmetric.
  const Matrix PHt = prior.cov * model.H.transpose();
  const Matrix K = inn.S_llt.solve(PHt.transpose()).transpose();
  GaussianEstimate post;
  post.mean = prior.mean + K * inn.v;
  post.cov = symmetrize(prior.cov - K * PHt.transpose());
  return post;
}

/// log N(y; H m, H P H^T + R).
inline double kf_log_likelihood(const GaussianEstimate& prior, const Vector& y,
                                const MeasurementModel& model) {
  auto inn = detail::innovation(prior, y, model);
  const Matrix& Lc = inn.S_llt.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < Lc.rows(); ++i) log_det += 2.0 * std::log(Lc(i, i));
  const Vector z = inn.S_llt.matrixL().solve(inn.v);
  const double d = static_cast<double>(y.size());
  return -0.5 * (z.squaredNorm() + log_det + d * std::log(2.0 * std::numbers::pi));
}

inline double kf_likelihood(const GaussianEstimate& prior, const Vector& y,
                            const MeasurementModel& model) {
  return std::exp(kf_log_likelihood(prior, y, model));
}

/// Exact discretization via the matrix-fraction (Van Loan) construction:
/// A = exp(F dt), Q = int_0^dt exp(F s) L Qc L^T exp(F^T s) ds.
inline MotionModel discretize_ct_model(const ContinuousMotionModel& ct, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("discretize_ct_model: dt must be > 0");
  const auto n = ct.F.rows();
  detail::require_dims(ct.F.cols() == n, "drift matrix is not square");
  detail::require_dims(ct.L.rows() == n, "noise-input matrix rows");
  detail::require_dims(ct.Qc.rows() == ct.L.cols() && ct.Qc.cols() == ct.L.cols(),
                       "diffusion density vs noise-input matrix");

  Matrix M = Matrix::Zero(2 * n, 2 * n);
  M.topLeftCorner(n, n) = -ct.F;
  M.topRightCorner(n, n) = ct.L * ct.Qc * ct.L.transpose();
  M.bottomRightCorner(n, n) = ct.F.transpose();
  const Matrix C = (M * dt).exp();

  MotionModel out;
  out.A = C.bottomRightCorner(n, n).transpose();
  out.Q = symmetrize(out.A * C.topRightCorner(n, n));
  return out;
}

/// Planar coordinated-turn style model on state [x, y, vx, vy]: the velocity
/// rotates at rate `turn_rate` and is driven by white noise of density q.
inline ContinuousMotionModel turn_rate_model(double turn_rate, double q) {
  ContinuousMotionModel ct;
  ct.F = Matrix::Zero(4, 4);
  ct.F(0, 2) = 1.0;
  ct.F(1, 3) = 1.0;
  ct.F(2, 3) = turn_rate;
  ct.F(3, 2) = -turn_rate;
  ct.L = Matrix::Zero(4, 2);
  ct.L(2, 0) = 1.0;
  ct.L(3, 1) = 1.0;
  ct.Qc = q * Matrix::Identity(2, 2);
  return ct;
}

/// Position-only measurement of a [x, y, vx, vy] state.
inline MeasurementModel position_measurement(double r) {
  MeasurementModel mm;
  mm.H = Matrix::Zero(2, 4);
  mm.H(0, 0) = 1.0;
  mm.H(1, 1) = 1.0;
  mm.R = r * Matrix::Identity(2, 2);
  return mm;
}

}  // namespace rbfusion
