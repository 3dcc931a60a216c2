#pragma once

// Rao-Blackwellized Monte Carlo data association for an unknown, varying
// number of targets. Each particle carries a fixed pool of target slots; the
// visible ones form a prefix of the pool. Births activate the first invisible
// slot, deaths reset a slot to the birth prior and move it to the end.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "rbfusion/rbpf.hpp"

namespace rbfusion {

struct TargetSlot {
  GaussianEstimate est;
  bool visible = false;
  double tau = 0.0;       // time of the last associated measurement
  std::uint64_t id = 0;   // assigned at birth, unique within a run
};

/// Association label: 0 = clutter, j >= 1 = visible slot j-1.
using TargetAssoc = std::int32_t;

struct MultiTargetParticle {
  std::vector<TargetAssoc> assoc_history;
  std::vector<TargetSlot> slots;
  double weight = 1.0;
  std::size_t target_count = 0;

  [[nodiscard]] std::vector<bool> visibility() const {
    std::vector<bool> e(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) e[i] = slots[i].visible;
    return e;
  }
};

struct MultiTargetSet {
  std::vector<MultiTargetParticle> particles;
  std::size_t order = 1;
  std::uint64_t next_id = 1;
};

/// Birth/death dynamics. The target lifetime after its last association is
/// gamma distributed with shape alpha and scale beta.
struct BirthDeathModel {
  double p_birth = 0.01;
  double lifetime_shape = 2.0;
  double lifetime_scale = 0.5;
  std::size_t max_targets = 20;

  void validate() const {
    if (!(p_birth >= 0.0 && p_birth <= 1.0)) throw std::invalid_argument("p_birth must lie in [0,1]");
    if (!(lifetime_shape > 0.0)) throw std::invalid_argument("lifetime_shape must be > 0");
    if (!(lifetime_scale > 0.0)) throw std::invalid_argument("lifetime_scale must be > 0");
    if (max_targets < 1) throw std::invalid_argument("max_targets must be >= 1");
  }
};

/// No-birth association prior over {clutter, target 1..T}. Without a clutter
/// probability the mass is uniform over {0..T}; otherwise clutter gets the
/// fixed probability and the rest is split evenly over the targets.
struct MultiAssociationPrior {
  std::optional<double> clutter_probability;

  [[nodiscard]] std::vector<double> operator()(std::span<const TargetAssoc> /*history*/,
                                               std::size_t T) const {
    std::vector<double> p(T + 1);
    if (!clutter_probability || T == 0) {
      if (T == 0) {
        p[0] = 1.0;
      } else {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(T + 1));
      }
      return p;
    }
    p[0] = *clutter_probability;
    for (std::size_t j = 1; j <= T; ++j) p[j] = (1.0 - p[0]) / static_cast<double>(T);
    return p;
  }
};

/// Joint prior of (birth event, association): `birth` is the mass on
/// (birth, c = T+1); `no_birth[j]` the mass on (no birth, c = j).
struct BirthAssocDistribution {
  double birth = 0.0;
  std::vector<double> no_birth;

  [[nodiscard]] double total() const {
    double s = birth;
    for (double p : no_birth) s += p;
    return s;
  }
};

inline BirthAssocDistribution birth_assoc_prior(std::span<const TargetAssoc> history, std::size_t T,
                                                const BirthDeathModel& model,
                                                const MultiAssociationPrior& assoc_prior) {
  BirthAssocDistribution d;
  d.no_birth = assoc_prior(history, T);
  if (T >= model.max_targets) {
    // Birth inadmissible at the cap; the remaining mass is renormalized.
    double s = 0.0;
    for (double p : d.no_birth) s += p;
    for (double& p : d.no_birth) p /= s;
    return d;
  }
  d.birth = model.p_birth;
  for (double& p : d.no_birth) p *= 1.0 - model.p_birth;
  return d;
}

/// Probability that a target last associated at `tau_last`, alive at
/// `t_prev`, dies before `t_now`.
inline double death_probability(double t_now, double t_prev, double tau_last,
                                const BirthDeathModel& model) {
  if (t_now < t_prev) throw std::invalid_argument("death_probability: t_now < t_prev");
  if (tau_last > t_prev) throw std::invalid_argument("death_probability: tau_last > t_prev");
  if (t_now == t_prev) return 0.0;
  const double a = model.lifetime_shape;
  const double b = model.lifetime_scale;
  // Survival functions via the upper regularized gamma for accuracy in the tail.
  const double surv_prev = boost::math::gamma_q(a, (t_prev - tau_last) / b);
  if (!(surv_prev > 0.0)) return 1.0;
  const double surv_now = boost::math::gamma_q(a, (t_now - tau_last) / b);
  return std::clamp((surv_prev - surv_now) / surv_prev, 0.0, 1.0);
}

/// Everything a monitoring node needs to run the multi-target filter.
struct RbmcdaModel {
  MotionModel motion;          // discretized for the nominal scan interval
  MeasurementModel meas;
  ClutterModel clutter;
  BirthDeathModel birth_death;
  GaussianEstimate birth_prior;
  MultiAssociationPrior assoc_prior;
  double resample_threshold = 0.5;  // fraction of N; <= 0 disables
};

namespace detail {

inline void check_particle(const MultiTargetParticle& p) {
  std::size_t visible = 0;
  for (std::size_t i = 0; i < p.slots.size(); ++i) {
    if (p.slots[i].visible) {
      if (i != visible) throw std::logic_error("visible slots are not a prefix");
      ++visible;
    }
  }
  if (visible != p.target_count) throw std::logic_error("target_count disagrees with visibility");
  if (!std::isfinite(p.weight)) throw std::logic_error("non-finite particle weight");
}

inline void push_history(std::vector<TargetAssoc>& hist, TargetAssoc c, std::size_t order) {
  if (order == 0) return;
  hist.push_back(c);
  if (hist.size() > order) hist.erase(hist.begin(), hist.begin() + (hist.size() - order));
}

}  // namespace detail

/// Asserts the particle invariants (visible prefix, count, finite weight).
inline void check_invariants(const MultiTargetSet& set) {
  std::map<std::uint64_t, int> seen;
  for (const auto& p : set.particles) {
    detail::check_particle(p);
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < p.target_count; ++i) {
      if (p.slots[i].id == 0 || p.slots[i].id >= set.next_id)
        throw std::logic_error("visible target without a valid id");
      ids.push_back(p.slots[i].id);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw std::logic_error("duplicate target id within a particle");
  }
}

inline MultiTargetSet make_multi_target_set(std::size_t n, const RbmcdaModel& model,
                                            std::size_t order = 1) {
  if (n == 0) throw std::invalid_argument("particle count must be >= 1");
  model.birth_death.validate();
  MultiTargetParticle proto;
  proto.slots.assign(model.birth_death.max_targets, TargetSlot{model.birth_prior, false, 0.0, 0});
  proto.weight = 1.0 / static_cast<double>(n);
  MultiTargetSet set;
  set.order = order;
  set.particles.assign(n, proto);
  return set;
}

/// Activates a slot with the given estimate in every particle; used to seed
/// known targets (e.g. in tests and reductions).
inline std::uint64_t add_target(MultiTargetSet& set, const GaussianEstimate& est, double tau) {
  const auto id = set.next_id++;
  for (auto& p : set.particles) {
    if (p.target_count >= p.slots.size()) throw std::logic_error("add_target: slot pool exhausted");
    p.slots[p.target_count] = TargetSlot{est, true, tau, id};
    ++p.target_count;
  }
  return id;
}

/// Independently kills each visible target with its death probability.
inline MultiTargetParticle apply_deaths(MultiTargetParticle particle, double t_now, double t_prev,
                                        const RbmcdaModel& model, std::uint64_t rng_seed) {
  if (particle.target_count == 0) return particle;
  Engine eng(rng_seed);
  const std::size_t t_old = particle.target_count;
  std::vector<bool> dies(t_old);
  std::size_t n_dead = 0;
  for (std::size_t i = 0; i < t_old; ++i) {
    const double pd = death_probability(t_now, t_prev, particle.slots[i].tau, model.birth_death);
    dies[i] = uniform01(eng) < pd;
    n_dead += dies[i];
  }
  if (n_dead == 0) return particle;
  std::vector<TargetSlot> slots;
  slots.reserve(particle.slots.size());
  for (std::size_t i = 0; i < t_old; ++i)
    if (!dies[i]) slots.push_back(std::move(particle.slots[i]));
  // Invisible slots keep their order, dead ones go to the very end.
  for (std::size_t i = t_old; i < particle.slots.size(); ++i) slots.push_back(std::move(particle.slots[i]));
  for (std::size_t i = 0; i < n_dead; ++i) slots.push_back(TargetSlot{model.birth_prior, false, 0.0, 0});
  particle.slots = std::move(slots);
  particle.target_count = t_old - n_dead;
  return particle;
}

/// Seed of the resampling draw that closes a step with seed `rng_seed`.
inline std::uint64_t resample_seed(std::uint64_t rng_seed) {
  return derive_seed(rng_seed, {0x7265736dULL});
}

/// Seed of the death draws for particle `i` in a step with seed `rng_seed`.
inline std::uint64_t death_seed(std::uint64_t rng_seed, std::size_t i) {
  return derive_seed(rng_seed, {i, 0x64656174ULL});
}

/// One epoch of the multi-target filter at time t_now. Prediction and death
/// sampling happen only when t_now > t_prev; `motion` in the model must be
/// discretized for that interval. Without a measurement only those happen.
inline MultiTargetSet rbmcda_step(MultiTargetSet set, const std::optional<Vector>& y, double t_now,
                                  double t_prev, const RbmcdaModel& model, std::uint64_t rng_seed) {
  if (set.particles.empty()) throw std::invalid_argument("rbmcda_step: empty particle set");
  if (y) detail::require_dims(y->size() == model.meas.H.rows(), "rbmcda_step measurement");
  const bool advance = t_now > t_prev;

  for (std::size_t i = 0; i < set.particles.size(); ++i) {
    auto& part = set.particles[i];
    if (advance) {
      for (std::size_t j = 0; j < part.target_count; ++j)
        part.slots[j].est = kf_predict(part.slots[j].est, model.motion);
      part = apply_deaths(std::move(part), t_now, t_prev, model, death_seed(rng_seed, i));
    }
    if (!y) continue;

    const std::size_t T = part.target_count;
    const auto prior = birth_assoc_prior(part.assoc_history, T, model.birth_death, model.assoc_prior);
    // Candidates in sampling order: targets 1..T, clutter, birth.
    std::vector<double> unnorm(T + 2, 0.0);
    for (std::size_t j = 1; j <= T; ++j)
      if (prior.no_birth[j] > 0.0)
        unnorm[j - 1] = prior.no_birth[j] * kf_likelihood(part.slots[j - 1].est, *y, model.meas);
    unnorm[T] = prior.no_birth[0] * model.clutter.density();
    if (prior.birth > 0.0) unnorm[T + 1] = prior.birth * kf_likelihood(model.birth_prior, *y, model.meas);

    double z = 0.0;
    for (double u : unnorm) z += u;
    if (!(z > 0.0) || !std::isfinite(z)) throw NumericalError("rbmcda_step: degenerate likelihoods");

    Engine eng(derive_seed(rng_seed, {i}));
    const double u = uniform01(eng);
    std::size_t pick = unnorm.size() - 1;
    double cdf = 0.0;
    for (std::size_t k = 0; k < unnorm.size(); ++k) {
      cdf += unnorm[k] / z;
      if (u < cdf) {
        pick = k;
        break;
      }
    }
    while (unnorm[pick] == 0.0) --pick;  // guard against round-off past the end

    part.weight *= z;
    TargetAssoc c = 0;
    if (pick < T) {
      auto& s = part.slots[pick];
      s.est = kf_update(s.est, *y, model.meas);
      s.tau = t_now;
      c = static_cast<TargetAssoc>(pick + 1);
    } else if (pick == T + 1) {
      auto& s = part.slots[T];
      s = TargetSlot{kf_update(model.birth_prior, *y, model.meas), true, t_now, set.next_id++};
      ++part.target_count;
      c = static_cast<TargetAssoc>(T + 1);
    }
    detail::push_history(part.assoc_history, c, set.order);
  }

  if (y) detail::normalize_weights(set.particles);
  if (model.resample_threshold > 0.0)
    set.particles = resample_particles(std::move(set.particles), model.resample_threshold,
                                       resample_seed(rng_seed));
  check_invariants(set);
  return set;
}

enum class CountEstimator { HighestWeight, WeightedMode };

/// Estimated count and per-id moment-matched estimates at one instant.
struct TrackSnapshot {
  std::size_t count = 0;
  std::vector<std::pair<std::uint64_t, GaussianEstimate>> tracks;  // sorted by id
};

inline TrackSnapshot snapshot(const MultiTargetSet& set,
                              CountEstimator estimator = CountEstimator::HighestWeight) {
  TrackSnapshot snap;
  if (set.particles.empty()) return snap;

  std::size_t best = 0;
  if (estimator == CountEstimator::HighestWeight) {
    for (std::size_t i = 1; i < set.particles.size(); ++i)
      if (set.particles[i].weight > set.particles[best].weight) best = i;
  } else {
    std::map<std::size_t, double> mass;
    for (const auto& p : set.particles) mass[p.target_count] += p.weight;
    const auto mode = std::max_element(mass.begin(), mass.end(), [](const auto& a, const auto& b) {
                        return a.second < b.second;
                      })->first;
    bool found = false;
    for (std::size_t i = 0; i < set.particles.size(); ++i) {
      const auto& p = set.particles[i];
      if (p.target_count == mode && (!found || p.weight > set.particles[best].weight)) {
        best = i;
        found = true;
      }
    }
  }

  const auto& lead = set.particles[best];
  snap.count = lead.target_count;
  for (std::size_t j = 0; j < lead.target_count; ++j) {
    const auto id = lead.slots[j].id;
    std::vector<std::pair<double, const GaussianEstimate*>> comps;
    for (const auto& p : set.particles)
      for (std::size_t k = 0; k < p.target_count; ++k)
        if (p.slots[k].id == id) comps.emplace_back(p.weight, &p.slots[k].est);
    snap.tracks.emplace_back(
        id, moment_match(
                comps, [](const auto& c) { return c.first; },
                [](const auto& c) -> const GaussianEstimate& { return *c.second; }));
  }
  std::sort(snap.tracks.begin(), snap.tracks.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return snap;
}

/// Time-indexed tracks keyed by target id plus the count stream.
struct TrackHistory {
  std::map<std::uint64_t, std::vector<std::pair<std::size_t, GaussianEstimate>>> tracks;
  std::vector<std::size_t> counts;
};

inline void record_snapshot(TrackHistory& history, std::size_t step, const TrackSnapshot& snap) {
  if (history.counts.size() <= step) history.counts.resize(step + 1, 0);
  history.counts[step] = snap.count;
  for (const auto& [id, est] : snap.tracks) history.tracks[id].emplace_back(step, est);
}

inline TrackHistory extract_tracks(std::span<const MultiTargetSet> sets,
                                   CountEstimator estimator = CountEstimator::HighestWeight) {
  TrackHistory h;
  for (std::size_t k = 0; k < sets.size(); ++k) record_snapshot(h, k, snapshot(sets[k], estimator));
  return h;
}

}  // namespace rbfusion
