#pragma once

// Scoring of estimate streams against ground truth, tables across seeds and
// the head-to-head comparison of the two fusion families.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "rbfusion/network.hpp"

namespace rbfusion {

/// One track of one source: time-indexed estimates, steps strictly increasing.
struct TrackRecord {
  std::string source;
  std::string algorithm;
  std::string track;
  std::vector<std::pair<std::size_t, GaussianEstimate>> entries;
};

inline std::vector<TrackRecord> track_records(const NodeStream& s) {
  std::map<std::string, TrackRecord> by_track;
  for (std::size_t k = 0; k < s.steps.size(); ++k)
    for (const auto& e : s.steps[k]) {
      auto& tr = by_track[e.track];
      tr.source = s.source;
      tr.algorithm = s.algorithm;
      tr.track = e.track;
      tr.entries.emplace_back(k, e.est);
    }
  std::vector<TrackRecord> out;
  for (auto& [_, tr] : by_track) out.push_back(std::move(tr));
  return out;
}

/// Fused outputs keyed by group key. Passthrough singletons are left out
/// unless `include_passthrough`.
inline std::vector<TrackRecord> track_records(const ProcessorStream& s, bool include_passthrough = false) {
  std::map<std::string, TrackRecord> by_track;
  for (std::size_t k = 0; k < s.steps.size(); ++k)
    for (const auto& e : s.steps[k]) {
      if (!e.fused && !include_passthrough) continue;
      auto& tr = by_track[e.key];
      tr.source = s.processor;
      tr.algorithm = s.algorithm;
      tr.track = e.key;
      if (!tr.entries.empty() && tr.entries.back().first == k) continue;  // one entry per step
      tr.entries.emplace_back(k, e.est);
    }
  std::vector<TrackRecord> out;
  for (auto& [_, tr] : by_track) out.push_back(std::move(tr));
  return out;
}

namespace detail {

/// Index of the truth target closest to the record on average over their
/// common steps (position components), or -1 when nothing overlaps.
inline int nearest_truth(const TrackRecord& rec, const GroundTruth& truth) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < truth.targets.size(); ++t) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [k, est] : rec.entries)
      if (truth.targets[t].alive(k)) {
        sum += (est.mean.head(2) - truth.targets[t].at(k).head(2)).norm();
        ++n;
      }
    if (n > 0 && sum / static_cast<double>(n) < best_d) {
      best_d = sum / static_cast<double>(n);
      best = static_cast<int>(t);
    }
  }
  return best;
}

}  // namespace detail

/// Mean squared error of a track against its nearest truth target over their
/// common steps. Full state by default.
inline double mse(const TrackRecord& rec, const GroundTruth& truth, bool position_only = false) {
  const int t = detail::nearest_truth(rec, truth);
  if (t < 0) throw std::invalid_argument("mse: record and truth do not overlap in time");
  const auto& target = truth.targets[static_cast<std::size_t>(t)];
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [k, est] : rec.entries) {
    if (!target.alive(k)) continue;
    detail::require_dims(est.mean.size() == target.at(k).size(), "mse state");
    const Vector err = est.mean - target.at(k);
    sum += position_only ? err.head(2).squaredNorm() : err.squaredNorm();
    ++n;
  }
  return sum / static_cast<double>(n);
}

/// Sum of per-track MSEs; tracks that overlap no truth target are skipped.
inline double mse(std::span<const TrackRecord> recs, const GroundTruth& truth, bool position_only = false) {
  double total = 0.0;
  bool any = false;
  for (const auto& r : recs) {
    if (detail::nearest_truth(r, truth) < 0) continue;
    total += mse(r, truth, position_only);
    any = true;
  }
  if (!any) throw std::invalid_argument("mse: record and truth do not overlap in time");
  return total;
}

/// Mean over entries of the spectral norm of the covariance.
inline double mncm(std::span<const TrackRecord> recs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : recs)
    for (const auto& [_, est] : r.entries) {
      sum += spectral_norm(est.cov);
      ++n;
    }
  if (n == 0) throw std::invalid_argument("mncm: empty record");
  return sum / static_cast<double>(n);
}

inline double mncm(const TrackRecord& rec) { return mncm(std::span<const TrackRecord>(&rec, 1)); }

/// Alternative reading: spectral norm of the time-averaged covariance.
inline double norm_of_mean_covariance(std::span<const TrackRecord> recs) {
  Matrix acc;
  std::size_t n = 0;
  for (const auto& r : recs)
    for (const auto& [_, est] : r.entries) {
      if (n == 0) acc = Matrix::Zero(est.cov.rows(), est.cov.cols());
      acc += est.cov;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("norm_of_mean_covariance: empty record");
  return spectral_norm(acc / static_cast<double>(n));
}

struct CountAccuracy {
  double exact = 0.0;
  double within_one = 0.0;
};

inline CountAccuracy count_accuracy(std::span<const std::size_t> estimated, std::span<const std::size_t> truth) {
  if (estimated.size() != truth.size()) throw std::invalid_argument("count_accuracy: misaligned streams");
  if (estimated.empty()) return {1.0, 1.0};
  std::size_t exact = 0, near = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const auto d = estimated[k] > truth[k] ? estimated[k] - truth[k] : truth[k] - estimated[k];
    exact += d == 0;
    near += d <= 1;
  }
  const auto n = static_cast<double>(truth.size());
  return {static_cast<double>(exact) / n, static_cast<double>(near) / n};
}

inline std::vector<std::size_t> true_counts(const GroundTruth& truth) {
  std::vector<std::size_t> c(truth.steps);
  for (std::size_t k = 0; k < truth.steps; ++k) c[k] = truth.count(k);
  return c;
}

// ---------------------------------------------------------------------------
// Tables

struct MetricsRow {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string source;
  std::string algorithm;
  double mse = NAN;
  double mncm = NAN;
  double count_exact = NAN;
  double count_within_one = NAN;
};

/// One row per node stream, KF baseline and fused stream. Fused streams are
/// scored on fused outputs only; a stream without any scores NaN.
inline std::vector<MetricsRow> compute_metrics(const RunRecord& rec) {
  std::vector<MetricsRow> rows;
  const auto score = [&](const std::vector<TrackRecord>& tracks, MetricsRow row) {
    bool overlap = false;
    for (const auto& t : tracks) overlap = overlap || detail::nearest_truth(t, rec.truth) >= 0;
    if (overlap) row.mse = mse(tracks, rec.truth);
    if (!tracks.empty()) row.mncm = mncm(tracks);
    rows.push_back(row);
  };
  const auto counts = true_counts(rec.truth);
  for (const auto& s : rec.nodes) {
    MetricsRow row{rec.config.name, rec.seed, s.source, s.algorithm};
    if (!s.counts.empty()) {
      const auto acc = count_accuracy(s.counts, counts);
      row.count_exact = acc.exact;
      row.count_within_one = acc.within_one;
    }
    score(track_records(s), row);
  }
  for (const auto& s : rec.baselines) score(track_records(s), {rec.config.name, rec.seed, s.source, s.algorithm});
  for (const auto& s : rec.fused) score(track_records(s), {rec.config.name, rec.seed, s.processor, s.algorithm});
  return rows;
}

namespace detail {

inline void write_number(std::ostream& os, double v) {
  if (std::isnan(v)) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  os << buf;
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << "scenario,seed,source,algorithm,mse,mncm,count_exact,count_within1\n";
  for (const auto& r : rows) {
    os << r.scenario << ',' << r.seed << ',' << r.source << ',' << r.algorithm << ',';
    detail::write_number(os, r.mse);
    os << ',';
    detail::write_number(os, r.mncm);
    os << ',';
    detail::write_number(os, r.count_exact);
    os << ',';
    detail::write_number(os, r.count_within_one);
    os << '\n';
  }
}

/// Linear-interpolation quantile of a sample (NaNs dropped).
inline double quantile(std::vector<double> v, double q) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }
inline double iqr(const std::vector<double>& v) { return quantile(v, 0.75) - quantile(v, 0.25); }

struct AggregateRow {
  std::string source, algorithm;
  std::size_t runs = 0;
  double mse_median = NAN, mse_iqr = NAN, mncm_median = NAN, mncm_iqr = NAN;
  double count_within_one_median = NAN;
};

inline std::vector<AggregateRow> aggregate(std::span<const MetricsRow> rows) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.source, r.algorithm);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    std::vector<double> m, c, w;
    for (const auto* r : groups[key]) {
      m.push_back(r->mse);
      c.push_back(r->mncm);
      w.push_back(r->count_within_one);
    }
    out.push_back({key.first, key.second, groups[key].size(), median(m), iqr(m), median(c), iqr(c), median(w)});
  }
  return out;
}

inline void write_aggregate_csv(std::ostream& os, std::span<const AggregateRow> rows) {
  os << "source,algorithm,runs,mse_median,mse_iqr,mncm_median,mncm_iqr,count_within1_median\n";
  for (const auto& r : rows) {
    os << r.source << ',' << r.algorithm << ',' << r.runs << ',';
    for (double v : {r.mse_median, r.mse_iqr, r.mncm_median, r.mncm_iqr}) {
      detail::write_number(os, v);
      os << ',';
    }
    detail::write_number(os, r.count_within_one_median);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// CI vs modified CI

enum class Outcome { Win, Loss, Tie };  // from the modified family's side: lower is better

inline Outcome compare_values(double modified, double traditional) {
  if (modified < traditional) return Outcome::Win;
  if (modified > traditional) return Outcome::Loss;
  return Outcome::Tie;
}

struct PairedResult {
  std::uint64_t seed = 0;
  std::string processor;
  double mse_ci = NAN, mse_modci = NAN, mncm_ci = NAN, mncm_modci = NAN;
};

struct SignTest {
  std::size_t wins = 0, losses = 0, ties = 0;
  double p_value = 1.0;  // two-sided, ties dropped
};

inline SignTest sign_test(std::span<const Outcome> outcomes) {
  SignTest s;
  for (auto o : outcomes) {
    if (o == Outcome::Win) ++s.wins;
    else if (o == Outcome::Loss) ++s.losses;
    else ++s.ties;
  }
  const auto n = s.wins + s.losses;
  if (n == 0) return s;
  boost::math::binomial_distribution<double> d(static_cast<double>(n), 0.5);
  s.p_value = std::min(1.0, 2.0 * boost::math::cdf(d, static_cast<double>(std::min(s.wins, s.losses))));
  return s;
}

struct CompareReport {
  std::vector<PairedResult> pairs;
  SignTest mse, mncm;
};

/// Pairs the ci and modci rows of every processor in every record.
inline CompareReport compare_fusion(std::span<const MetricsRow> rows) {
  std::map<std::pair<std::uint64_t, std::string>, PairedResult> by_key;
  std::vector<std::pair<std::uint64_t, std::string>> order;
  std::map<std::pair<std::uint64_t, std::string>, int> seen;
  for (const auto& r : rows) {
    if (r.algorithm != "ci" && r.algorithm != "modci") continue;
    const auto key = std::make_pair(r.seed, r.source);
    if (!by_key.count(key)) order.push_back(key);
    auto& p = by_key[key];
    p.seed = r.seed;
    p.processor = r.source;
    if (r.algorithm == "ci") {
      p.mse_ci = r.mse, p.mncm_ci = r.mncm, seen[key] |= 1;
    } else {
      p.mse_modci = r.mse, p.mncm_modci = r.mncm, seen[key] |= 2;
    }
  }
  CompareReport rep;
  std::vector<Outcome> om, oc;
  for (const auto& key : order) {
    if (seen[key] != 3)
      throw std::invalid_argument("compare: processor '" + key.second + "' of seed " + std::to_string(key.first) +
                                  " lacks one of the two fusion families; run with method 'both'");
    const auto& p = by_key[key];
    rep.pairs.push_back(p);
    om.push_back(compare_values(p.mse_modci, p.mse_ci));
    oc.push_back(compare_values(p.mncm_modci, p.mncm_ci));
  }
  if (rep.pairs.empty()) throw std::invalid_argument("compare: no fused streams to compare");
  rep.mse = sign_test(om);
  rep.mncm = sign_test(oc);
  return rep;
}

inline const char* outcome_name(Outcome o) {
  return o == Outcome::Win ? "win" : o == Outcome::Loss ? "loss" : "tie";
}

inline void write_compare_report(std::ostream& os, const CompareReport& rep) {
  os << "seed,processor,mse_ci,mse_modci,mse_outcome,mncm_ci,mncm_modci,mncm_outcome\n";
  for (const auto& p : rep.pairs) {
    os << p.seed << ',' << p.processor << ',';
    detail::write_number(os, p.mse_ci);
    os << ',';
    detail::write_number(os, p.mse_modci);
    os << ',' << outcome_name(compare_values(p.mse_modci, p.mse_ci)) << ',';
    detail::write_number(os, p.mncm_ci);
    os << ',';
    detail::write_number(os, p.mncm_modci);
    os << ',' << outcome_name(compare_values(p.mncm_modci, p.mncm_ci)) << '\n';
  }
  const auto line = [&](const char* name, const SignTest& s) {
    os << "# " << name << ": modci wins " << s.wins << ", losses " << s.losses << ", ties " << s.ties
       << ", sign-test p = ";
    detail::write_number(os, s.p_value);
    os << '\n';
  };
  line("mse", rep.mse);
  line("mncm", rep.mncm);
}

}  // namespace rbfusion
