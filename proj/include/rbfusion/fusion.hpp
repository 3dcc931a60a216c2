#pragma once

// Track-to-track fusion under unknown cross-correlation: covariance
// intersection (pairwise and batch) and its detection-aware variants, where
// each input precision is discounted by the expected utility of a mixed game
// in which every node either detects or misses the target.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "rbfusion/gaussian.hpp"

namespace rbfusion {

/// Detection characteristics of a monitoring node. `chi` in (0, 1]; its
/// inverse is the covariance growth over a miss-detection interval.
struct NodeProfile {
  double p_detect = 1.0;
  double chi = 1.0;
  double clutter_density = 0.0;

  void validate() const {
    if (!(p_detect >= 0.0 && p_detect <= 1.0)) throw std::invalid_argument("p_detect must lie in [0,1]");
    if (!(chi > 0.0 && chi <= 1.0)) throw std::invalid_argument("chi must lie in (0,1]");
    if (!(clutter_density >= 0.0)) throw std::invalid_argument("clutter_density must be >= 0");
  }
};

/// Convex mixing weights.
struct MixingWeights {
  Vector omega;

  static MixingWeights pair(double w) {
    MixingWeights m;
    m.omega = Vector(2);
    m.omega << w, 1.0 - w;
    return m;
  }

  static MixingWeights centroid(Eigen::Index n) {
    return {Vector::Constant(n, 1.0 / static_cast<double>(n))};
  }

  void validate() const {
    if (omega.size() < 1) throw std::invalid_argument("mixing weights are empty");
    for (Eigen::Index i = 0; i < omega.size(); ++i)
      if (!(omega(i) >= 0.0 && omega(i) <= 1.0))
        throw std::invalid_argument("mixing weight outside [0,1]");
    if (std::abs(omega.sum() - 1.0) > 1e-9) throw std::invalid_argument("mixing weights do not sum to 1");
  }
};

enum class FusionObjective { Trace, Determinant };

/// Fused estimate together with the mixing weights that produced it.
struct FusionResult {
  GaussianEstimate estimate;
  MixingWeights weights;
};

namespace detail {

/// Fused precision sum_i w_i Pi_i.
inline Matrix mix_precisions(std::span<const Matrix> precisions, const Vector& w) {
  Matrix m = Matrix::Zero(precisions[0].rows(), precisions[0].cols());
  for (std::size_t i = 0; i < precisions.size(); ++i) m += w(static_cast<Eigen::Index>(i)) * precisions[i];
  return m;
}

inline double fusion_objective(std::span<const Matrix> precisions, const Vector& w,
                               FusionObjective objective) {
  const Matrix m = symmetrize(mix_precisions(precisions, w));
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  if (objective == FusionObjective::Determinant) {
    // det(P) = 1 / det(M); compare in log space.
    double log_det = 0.0;
    const Matrix& L = llt.matrixLLT();
    for (Eigen::Index i = 0; i < L.rows(); ++i) log_det += 2.0 * std::log(L(i, i));
    return -log_det;
  }
  return llt.solve(Matrix::Identity(m.rows(), m.cols())).trace();
}

/// Combines means with (already scaled) precisions and the given weights.
inline GaussianEstimate fuse_with_precisions(std::span<const Vector> means,
                                             std::span<const Matrix> precisions, const Vector& w) {
  const Matrix info = symmetrize(mix_precisions(precisions, w));
  Vector info_mean = Vector::Zero(means[0].size());
  for (std::size_t i = 0; i < means.size(); ++i)
    info_mean += w(static_cast<Eigen::Index>(i)) * (precisions[i] * means[i]);
  auto llt = cholesky(info, "fused precision");
  GaussianEstimate out;
  out.cov = symmetrize(llt.solve(Matrix::Identity(info.rows(), info.cols())));
  out.mean = llt.solve(info_mean);
  return out;
}

inline void check_inputs(std::span<const GaussianEstimate> inputs, std::size_t min_count) {
  if (inputs.size() < min_count) throw std::invalid_argument("fusion needs at least two inputs");
  const auto n = inputs[0].mean.size();
  for (const auto& e : inputs) {
    validate(e);
    require_dims(e.mean.size() == n, "fusion inputs of different dimension");
  }
}

}  // namespace detail

/// Covariance intersection of two estimates with weight w.omega = (w, 1-w).
inline GaussianEstimate ci_fuse(const GaussianEstimate& a, const GaussianEstimate& b,
                                const MixingWeights& w) {
  w.validate();
  if (w.omega.size() != 2) throw std::invalid_argument("ci_fuse needs two mixing weights");
  const std::array<GaussianEstimate, 2> in = {a, b};
  detail::check_inputs(in, 2);
  const std::array<Matrix, 2> prec = {spd_inverse(a.cov, "ci_fuse input a"),
                                      spd_inverse(b.cov, "ci_fuse input b")};
  const std::array<Vector, 2> means = {a.mean, b.mean};
  return detail::fuse_with_precisions(means, prec, w.omega);
}

inline GaussianEstimate ci_fuse(const GaussianEstimate& a, const GaussianEstimate& b, double w) {
  return ci_fuse(a, b, MixingWeights::pair(w));
}

/// Minimizes trace (or determinant) of (w Pi_a + (1-w) Pi_b)^{-1} over
/// w in [0, 1]: 64-interval grid, then golden-section refinement in the
/// bracket around the best grid point. A flat objective returns 0.5.
inline double optimize_omega_pair(const Matrix& precision_a, const Matrix& precision_b,
                                  FusionObjective objective = FusionObjective::Trace) {
  detail::require_dims(precision_a.rows() == precision_b.rows() && precision_a.cols() == precision_b.cols(),
                       "optimize_omega_pair precisions");
  const std::array<Matrix, 2> prec = {precision_a, precision_b};
  auto f = [&](double w) {
    Vector ww(2);
    ww << w, 1.0 - w;
    return detail::fusion_objective(prec, ww, objective);
  };

  constexpr int kGrid = 64;
  std::array<double, kGrid + 1> fg{};
  for (int i = 0; i <= kGrid; ++i) fg[i] = f(static_cast<double>(i) / kGrid);
  const auto [lo_it, hi_it] = std::minmax_element(fg.begin(), fg.end());
  const double scale = std::max(std::abs(*lo_it), 1e-300);
  if (*hi_it - *lo_it <= 1e-12 * scale) return 0.5;

  int best = 0;
  for (int i = 1; i <= kGrid; ++i) {
    const bool better = fg[i] < fg[best] - 1e-15 * scale;
    const bool tie_closer = std::abs(fg[i] - fg[best]) <= 1e-15 * scale &&
                            std::abs(i - kGrid / 2) < std::abs(best - kGrid / 2);
    if (better || tie_closer) best = i;
  }

  double a = static_cast<double>(std::max(best - 1, 0)) / kGrid;
  double b = static_cast<double>(std::min(best + 1, kGrid)) / kGrid;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-12) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double w_gs = 0.5 * (a + b);
  const double w_grid = static_cast<double>(best) / kGrid;
  return f(w_gs) < fg[best] ? w_gs : w_grid;
}

/// Scale factors p_i + (1 - p_i) chi_i prod_{j != i} (p_j + (1 - p_j) chi_j)
/// applied to each node's precision. For two nodes these are the pairwise
/// modified-CI factors.
inline std::vector<double> modified_scale_factors(std::span<const NodeProfile> profiles) {
  std::vector<double> out(profiles.size());
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    profiles[i].validate();
    double others = 1.0;
    for (std::size_t j = 0; j < profiles.size(); ++j)
      if (j != i) others *= profiles[j].p_detect + (1.0 - profiles[j].p_detect) * profiles[j].chi;
    out[i] = profiles[i].p_detect + (1.0 - profiles[i].p_detect) * profiles[i].chi * others;
  }
  return out;
}

/// Detection-discounted precisions of two nodes.
inline std::pair<Matrix, Matrix> modified_precisions(const Matrix& Pa, const Matrix& Pb,
                                                     const NodeProfile& prof_a,
                                                     const NodeProfile& prof_b) {
  const std::array<NodeProfile, 2> profs = {prof_a, prof_b};
  const auto f = modified_scale_factors(profs);
  return {f[0] * spd_inverse(Pa, "modified_precisions a"), f[1] * spd_inverse(Pb, "modified_precisions b")};
}

namespace detail {

inline Vector softmax(const Vector& theta) {
  const double mx = theta.maxCoeff();
  Vector e = (theta.array() - mx).exp();
  return e / e.sum();
}

/// Nelder-Mead minimization of g over R^d.
template <class F>
std::pair<Vector, double> nelder_mead(F&& g, const Vector& start, double step, int max_iter) {
  const auto d = start.size();
  std::vector<Vector> simplex(d + 1, start);
  std::vector<double> val(d + 1);
  for (Eigen::Index i = 0; i < d; ++i) simplex[i + 1](i) += step;
  for (Eigen::Index i = 0; i <= d; ++i) val[i] = g(simplex[i]);

  std::vector<std::size_t> order(d + 1);
  for (int it = 0; it < max_iter; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return val[x] < val[y]; });
    const auto best = order.front(), worst = order.back(), second = order[d - 1];
    if (std::abs(val[worst] - val[best]) <= 1e-15 * std::max(std::abs(val[best]), 1e-300)) {
      double spread = 0.0;
      for (const auto& v : simplex) spread = std::max(spread, (v - simplex[best]).cwiseAbs().maxCoeff());
      if (spread < 1e-10) break;
    }

    Vector centroid = Vector::Zero(d);
    for (auto k : order)
      if (k != worst) centroid += simplex[k];
    centroid /= static_cast<double>(d);

    const Vector xr = centroid + (centroid - simplex[worst]);
    const double fr = g(xr);
    if (fr < val[best]) {
      const Vector xe = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = g(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        val[worst] = fe;
      } else {
        simplex[worst] = xr;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      simplex[worst] = xr;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                              : Vector(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = g(xc);
    if (fc < (outside ? fr : val[worst])) {
      simplex[worst] = xc;
      val[worst] = fc;
      continue;
    }
    for (auto k : order) {
      if (k == best) continue;
      simplex[k] = simplex[best] + 0.5 * (simplex[k] - simplex[best]);
      val[k] = g(simplex[k]);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(val.begin(), val.end()) - val.begin());
  return {simplex[best], val[best]};
}

}  // namespace detail

/// Simplex search by Nelder-Mead over softmax logits, multi-started from
/// the centroid and every vertex, followed by a face-snapping polish. Flat
/// objectives resolve to the centroid.
inline MixingWeights nelder_mead_simplex_weights(std::span<const Matrix> precisions,
                                                 FusionObjective objective = FusionObjective::Trace) {
  const auto n = static_cast<Eigen::Index>(precisions.size());
  auto f = [&](const Vector& w) { return detail::fusion_objective(precisions, w, objective); };
  // Logits for the first n-1 weights, the last one pinned at zero.
  auto to_w = [n](const Vector& theta) {
    Vector full = Vector::Zero(n);
    full.head(n - 1) = theta;
    return detail::softmax(full);
  };
  auto g = [&](const Vector& theta) { return f(to_w(theta)); };

  std::vector<std::pair<Vector, double>> cands;
  const Vector centre = Vector::Constant(n, 1.0 / static_cast<double>(n));
  cands.emplace_back(centre, f(centre));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector e = Vector::Zero(n);
    e(i) = 1.0;
    cands.emplace_back(e, f(e));
  }

  constexpr double kVertexLogit = 6.0;
  std::vector<Vector> starts;
  starts.emplace_back(Vector::Zero(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector t = (i == n - 1) ? Vector::Constant(n - 1, -kVertexLogit) : Vector::Zero(n - 1);
    if (i < n - 1) t(i) = kVertexLogit;
    starts.push_back(t);
  }
  for (const auto& s : starts) {
    // Two passes: the restart recovers from simplex collapse.
    auto [theta, val] = detail::nelder_mead(g, s, 1.0, 4000);
    std::tie(theta, val) = detail::nelder_mead(g, theta, 0.5, 4000);
    Vector w = to_w(theta);
    cands.emplace_back(w, val);
    // Snap near-zero weights onto the face they approach.
    Vector snapped = (w.array() < 1e-6).select(0.0, w);
    snapped /= snapped.sum();
    cands.emplace_back(snapped, f(snapped));
  }

  double fmin = std::numeric_limits<double>::infinity();
  for (const auto& c : cands) fmin = std::min(fmin, c.second);
  const double tol = 1e-12 * std::max(std::abs(fmin), 1e-300);
  const Vector* pick = nullptr;
  double pick_dist = 0.0;
  for (const auto& c : cands) {
    if (c.second > fmin + tol) continue;
    const double dist = (c.first - centre).norm();
    if (!pick || dist < pick_dist) {
      pick = &c.first;
      pick_dist = dist;
    }
  }
  return {*pick};
}

/// Mixing weights on the simplex minimizing the fused covariance norm. Two
/// inputs reduce to the exact one-dimensional search.
inline MixingWeights optimize_omega_simplex(std::span<const Matrix> precisions,
                                            FusionObjective objective = FusionObjective::Trace) {
  if (precisions.size() < 2) throw std::invalid_argument("optimize_omega_simplex needs N >= 2");
  for (const auto& p : precisions)
    detail::require_dims(p.rows() == precisions[0].rows() && p.cols() == precisions[0].cols(),
                         "optimize_omega_simplex precisions");
  if (precisions.size() == 2)
    return MixingWeights::pair(optimize_omega_pair(precisions[0], precisions[1], objective));
  return nelder_mead_simplex_weights(precisions, objective);
}

/// CI with the norm-minimizing weight.
inline FusionResult ci_fuse_optimal(const GaussianEstimate& a, const GaussianEstimate& b,
                                    FusionObjective objective = FusionObjective::Trace) {
  const Matrix pa = spd_inverse(a.cov, "ci_fuse input a");
  const Matrix pb = spd_inverse(b.cov, "ci_fuse input b");
  auto w = MixingWeights::pair(optimize_omega_pair(pa, pb, objective));
  return {ci_fuse(a, b, w), w};
}

inline FusionResult modified_ci_fuse(const GaussianEstimate& a, const GaussianEstimate& b,
                                     const NodeProfile& prof_a, const NodeProfile& prof_b,
                                     FusionObjective objective = FusionObjective::Trace) {
  const std::array<GaussianEstimate, 2> in = {a, b};
  detail::check_inputs(in, 2);
  auto [pa, pb] = modified_precisions(a.cov, b.cov, prof_a, prof_b);
  auto w = MixingWeights::pair(optimize_omega_pair(pa, pb, objective));
  const std::array<Matrix, 2> prec = {std::move(pa), std::move(pb)};
  const std::array<Vector, 2> means = {a.mean, b.mean};
  return {detail::fuse_with_precisions(means, prec, w.omega), w};
}

/// Batch CI: sum_i w_i P_i^{-1} with weights on the simplex.
inline GaussianEstimate bci_fuse(std::span<const GaussianEstimate> inputs, const MixingWeights& w) {
  detail::check_inputs(inputs, 2);
  w.validate();
  if (static_cast<std::size_t>(w.omega.size()) != inputs.size())
    throw std::invalid_argument("bci_fuse: one weight per input required");
  std::vector<Matrix> prec;
  std::vector<Vector> means;
  for (const auto& e : inputs) {
    prec.push_back(spd_inverse(e.cov, "bci_fuse input"));
    means.push_back(e.mean);
  }
  return detail::fuse_with_precisions(means, prec, w.omega);
}

inline FusionResult bci_fuse_optimal(std::span<const GaussianEstimate> inputs,
                                     FusionObjective objective = FusionObjective::Trace) {
  detail::check_inputs(inputs, 2);
  std::vector<Matrix> prec;
  for (const auto& e : inputs) prec.push_back(spd_inverse(e.cov, "bci_fuse input"));
  auto w = optimize_omega_simplex(prec, objective);
  return {bci_fuse(inputs, w), w};
}

/// Batch fusion with every precision discounted by its node's scale factor.
inline FusionResult mbci_fuse(std::span<const GaussianEstimate> inputs,
                              std::span<const NodeProfile> profiles,
                              FusionObjective objective = FusionObjective::Trace) {
  detail::check_inputs(inputs, 2);
  if (profiles.size() != inputs.size()) throw std::invalid_argument("mbci_fuse: one profile per input required");
  const auto factors = modified_scale_factors(profiles);
  std::vector<Matrix> prec;
  std::vector<Vector> means;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    prec.push_back(factors[i] * spd_inverse(inputs[i].cov, "mbci_fuse input"));
    means.push_back(inputs[i].mean);
  }
  auto w = optimize_omega_simplex(prec, objective);
  return {detail::fuse_with_precisions(means, prec, w.omega), w};
}

/// Expected utility of node a in the two-node detect/miss game: the four
/// payoff cells weighted by their joint detection probabilities.
inline double expected_payoff(const Matrix& Pa, const Matrix& Pb, const NodeProfile& prof_a,
                              const NodeProfile& prof_b, double omega) {
  prof_a.validate();
  prof_b.validate();
  const Matrix ia = spd_inverse(Pa, "expected_payoff a");
  const Matrix ib = spd_inverse(Pb, "expected_payoff b");
  const double p = prof_a.p_detect, q = prof_b.p_detect;
  const double xa = prof_a.chi, xb = prof_b.chi;
  const double both = (omega * ia + (1.0 - omega) * ib).trace();
  const double a_only = (omega * ia + (1.0 - omega) * xb * ib).trace();
  const double b_only = (omega * xa * ia + (1.0 - omega) * ib).trace();
  const double none = (xa * xb * (omega * ia + (1.0 - omega) * ib)).trace();
  return p * q * both + p * (1.0 - q) * a_only + (1.0 - p) * q * b_only + (1.0 - p) * (1.0 - q) * none;
}

}  // namespace rbfusion
