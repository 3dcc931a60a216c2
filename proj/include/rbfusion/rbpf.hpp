#pragma once

// Single-target detection and tracking in clutter with a Rao-Blackwellized
// particle filter: associations are sampled, the target state conditioned on
// the association history is handled in closed form by a Kalman filter.

#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "rbfusion/gaussian.hpp"
#include "rbfusion/random.hpp"

namespace rbfusion {

/// Association indicator: 0 = clutter, 1 = the target.
using Assoc = std::uint8_t;

struct Particle {
  std::vector<Assoc> assoc_history;  // oldest first, at most `order` entries
  GaussianEstimate est;
  double weight = 1.0;
};

struct ParticleSet {
  std::vector<Particle> particles;
  std::size_t order = 1;

  [[nodiscard]] std::size_t size() const { return particles.size(); }
};

/// Uniform clutter over a measurement-space region of volume V.
struct ClutterModel {
  double volume = 1.0;
  double clutter_rate = 0.0;

  [[nodiscard]] double density() const { return 1.0 / volume; }
};

/// m-th order Markov prior P(c_k = 1 | c_{k-m:k-1}) over {clutter, target}.
/// The table is indexed by the history read as a binary number, oldest bit
/// most significant. Histories shorter than the order use `initial`.
class AssociationPrior {
 public:
  AssociationPrior() : AssociationPrior(1, {0.5, 0.5}, 0.5) {}

  AssociationPrior(std::size_t order, std::vector<double> p_target_table, double initial)
      : order_(order), table_(std::move(p_target_table)), initial_(initial) {
    if (order_ > 16) throw std::invalid_argument("AssociationPrior: order too large");
    if (table_.size() != (std::size_t{1} << order_))
      throw std::invalid_argument("AssociationPrior: table must have 2^order entries");
    for (double p : table_)
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("AssociationPrior: probability outside [0,1]");
    if (!(initial_ >= 0.0 && initial_ <= 1.0))
      throw std::invalid_argument("AssociationPrior: probability outside [0,1]");
  }

  /// Time-homogeneous prior that ignores the history.
  static AssociationPrior constant(double p_target, std::size_t order = 1) {
    return {order, std::vector<double>(std::size_t{1} << order, p_target), p_target};
  }

  /// Every measurement belongs to the target.
  static AssociationPrior forced_target() { return constant(1.0); }

  [[nodiscard]] std::size_t order() const { return order_; }

  [[nodiscard]] double p_target(std::span<const Assoc> history) const {
    if (history.size() < order_) return initial_;
    std::size_t idx = 0;
    for (auto c : history.last(order_)) idx = (idx << 1) | (c ? 1u : 0u);
    return table_[idx];
  }

  /// (P(c=0|history), P(c=1|history)).
  [[nodiscard]] std::array<double, 2> operator()(std::span<const Assoc> history) const {
    const double p1 = p_target(history);
    return {1.0 - p1, p1};
  }

 private:
  std::size_t order_;
  std::vector<double> table_;
  double initial_;
};

/// Posterior association probabilities (pi_0, pi_1) for one particle whose
/// estimate holds the predicted Gaussian.
inline std::array<double, 2> association_posterior(const Particle& particle, const Vector& y,
                                                   const MeasurementModel& meas,
                                                   const ClutterModel& clutter,
                                                   const AssociationPrior& prior) {
  const auto p = prior(particle.assoc_history);
  const double u0 = clutter.density() * p[0];
  const double u1 = p[1] > 0.0 ? kf_likelihood(particle.est, y, meas) * p[1] : 0.0;
  const double z = u0 + u1;
  if (!(z > 0.0) || !std::isfinite(z))
    throw NumericalError("association_posterior: degenerate likelihoods");
  return {u0 / z, u1 / z};
}

namespace detail {

inline void push_history(std::vector<Assoc>& hist, Assoc c, std::size_t order) {
  if (order == 0) return;
  hist.push_back(c);
  if (hist.size() > order) hist.erase(hist.begin(), hist.begin() + (hist.size() - order));
}

template <class P>
void normalize_weights(std::vector<P>& particles) {
  double total = 0.0;
  for (const auto& p : particles) total += p.weight;
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericalError("particle weights underflowed or became non-finite");
  for (auto& p : particles) p.weight /= total;
}

}  // namespace detail

/// Kalman prediction of every particle (scan without measurements).
inline ParticleSet rbpf_predict(ParticleSet set, const MotionModel& motion) {
  for (auto& p : set.particles) p.est = kf_predict(p.est, motion);
  return set;
}

/// One filtering step for measurement y: predict, sample the association
/// from the optimal importance distribution, reweight, update.
inline ParticleSet rbpf_step(ParticleSet set, const Vector& y, const MotionModel& motion,
                             const MeasurementModel& meas, const ClutterModel& clutter,
                             const AssociationPrior& prior, std::uint64_t rng_seed) {
  if (set.particles.empty()) throw std::invalid_argument("rbpf_step: empty particle set");
  for (std::size_t i = 0; i < set.particles.size(); ++i) {
    auto& part = set.particles[i];
    Engine eng(derive_seed(rng_seed, {i}));
    part.est = kf_predict(part.est, motion);

    const auto p_prior = prior(part.assoc_history);
    const std::array<double, 2> lik = {
        clutter.density(), p_prior[1] > 0.0 ? kf_likelihood(part.est, y, meas) : 0.0};
    const std::array<double, 2> unnorm = {lik[0] * p_prior[0], lik[1] * p_prior[1]};
    const double z = unnorm[0] + unnorm[1];
    if (!(z > 0.0) || !std::isfinite(z))
      throw NumericalError("rbpf_step: degenerate likelihoods");
    const std::array<double, 2> proposal = {unnorm[0] / z, unnorm[1] / z};

    const Assoc c = uniform01(eng) < proposal[1] ? 1 : 0;
    // General importance ratio; equals z for the optimal proposal.
    part.weight *= unnorm[c] / proposal[c];
    if (c == 1) part.est = kf_update(part.est, y, meas);
    detail::push_history(part.assoc_history, c, set.order);
  }
  detail::normalize_weights(set.particles);
  return set;
}

template <class P>
double effective_sample_size(const std::vector<P>& particles) {
  double s = 0.0;
  for (const auto& p : particles) s += p.weight * p.weight;
  return 1.0 / s;
}

inline double effective_sample_size(const ParticleSet& set) {
  return effective_sample_size(set.particles);
}

/// Systematic resampling indices for normalized weights and an offset in
/// [0, 1): sample j sits at (offset + j) / N on the weight CDF.
inline std::vector<std::size_t> systematic_indices(std::span<const double> weights, double offset) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> idx(n);
  double cdf = weights.empty() ? 0.0 : weights[0];
  std::size_t i = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double u = (offset + static_cast<double>(j)) / static_cast<double>(n);
    while (u >= cdf && i + 1 < n) cdf += weights[++i];
    idx[j] = i;
  }
  return idx;
}

/// Systematic resampling when ESS drops below threshold_fraction * N;
/// otherwise the input is returned unchanged.
template <class P>
std::vector<P> resample_particles(std::vector<P> particles, double threshold_fraction,
                                  std::uint64_t rng_seed) {
  const auto n = particles.size();
  if (n == 0) return particles;
  if (!(effective_sample_size(particles) < threshold_fraction * static_cast<double>(n)))
    return particles;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = particles[i].weight;
  Engine eng(rng_seed);
  const auto idx = systematic_indices(w, uniform01(eng));
  std::vector<P> out;
  out.reserve(n);
  for (auto i : idx) {
    out.push_back(particles[i]);
    out.back().weight = 1.0 / static_cast<double>(n);
  }
  return out;
}

inline ParticleSet resample(ParticleSet set, double threshold_fraction, std::uint64_t rng_seed) {
  set.particles = resample_particles(std::move(set.particles), threshold_fraction, rng_seed);
  return set;
}

/// Moment-matched Gaussian of a weighted mixture. Weights are renormalized
/// over the given components.
template <class Range, class GetWeight, class GetEst>
GaussianEstimate moment_match(const Range& items, GetWeight weight_of, GetEst est_of) {
  double total = 0.0;
  Eigen::Index n = -1;
  for (const auto& it : items) {
    total += weight_of(it);
    n = est_of(it).mean.size();
  }
  if (n < 0 || !(total > 0.0)) throw NumericalError("moment_match: no weighted components");
  Vector mean = Vector::Zero(n);
  for (const auto& it : items) mean += (weight_of(it) / total) * est_of(it).mean;
  Matrix cov = Matrix::Zero(n, n);
  for (const auto& it : items) {
    const auto& e = est_of(it);
    const Vector d = e.mean - mean;
    cov += (weight_of(it) / total) * (e.cov + d * d.transpose());
  }
  return {mean, symmetrize(cov)};
}

inline GaussianEstimate point_estimate(const ParticleSet& set) {
  return moment_match(
      set.particles, [](const Particle& p) { return p.weight; },
      [](const Particle& p) -> const GaussianEstimate& { return p.est; });
}

/// N identical particles with uniform weights.
inline ParticleSet make_particle_set(std::size_t n, const GaussianEstimate& initial,
                                     std::size_t order = 1) {
  if (n == 0) throw std::invalid_argument("particle count must be >= 1");
  ParticleSet set;
  set.order = order;
  set.particles.assign(n, Particle{{}, initial, 1.0 / static_cast<double>(n)});
  return set;
}

}  // namespace rbfusion
