#pragma once

// Monitoring nodes (particle-filter trackers), processing nodes (min-distance
// association + covariance-intersection fusion) and the end-to-end run.

#include <algorithm>
#include <string>
#include <vector>

#include "rbfusion/fusion.hpp"
#include "rbfusion/rbmcda.hpp"
#include "rbfusion/rbpf.hpp"
#include "rbfusion/scenario.hpp"

namespace rbfusion {

struct EstimateEntry {
  std::string track;
  GaussianEstimate est;
};

/// Per-step estimates of one source. `counts` is filled in multi-target mode.
struct NodeStream {
  std::string source;
  std::string algorithm;  // "rbpf", "rbmcda" or "kf"
  std::vector<std::vector<EstimateEntry>> steps;
  std::vector<std::size_t> counts;
};

/// A run aborted in one of its stages.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

namespace detail {

inline MotionModel identity_motion(Eigen::Index n) { return {Matrix::Identity(n, n), Matrix::Zero(n, n)}; }

inline ClutterModel tracker_clutter(const ScenarioConfig& config, const NodeProfile& node, const Box& region) {
  return {region.volume(), clutter_mean(node, region, config.clutter_unit)};
}

inline GaussianEstimate birth_prior(const ScenarioConfig& config, const Box& region) {
  GaussianEstimate b;
  b.mean = Vector::Zero(4);
  b.mean.head(2) = region.center();
  Vector var(4);
  const Vector span = region.span();
  const double v2 = config.tracker.birth_velocity_std * config.tracker.birth_velocity_std;
  var << span(0) * span(0) / 4.0, span(1) * span(1) / 4.0, v2, v2;
  b.cov = var.asDiagonal();
  return b;
}

inline NodeStream run_rbpf_node(const ScanData& scans, const ScenarioConfig& config, const Box& region,
                                const NodeProfile& node, std::uint64_t seed) {
  const auto motion = config.motion();
  const auto still = identity_motion(4);
  const auto meas = config.measurement();
  const auto clutter = tracker_clutter(config, node, region);
  const auto prior = AssociationPrior::constant(config.tracker.association_prior, 1);
  const GaussianEstimate init{config.targets.front().initial, config.tracker.initial_cov * Matrix::Identity(4, 4)};

  NodeStream out;
  out.algorithm = "rbpf";
  auto set = make_particle_set(config.particles, init);
  for (std::size_t k = 0; k < scans.scans.size(); ++k) {
    const auto& scan = scans.scans[k];
    if (scan.empty()) {
      if (k > 0) set = rbpf_predict(std::move(set), motion);
    } else {
      for (std::size_t j = 0; j < scan.size(); ++j)
        set = rbpf_step(std::move(set), scan[j], (j == 0 && k > 0) ? motion : still, meas, clutter, prior,
                        derive_seed(seed, {k, j}));
      set = resample(std::move(set), config.tracker.resample_threshold, derive_seed(seed, {k, 0xffffULL}));
    }
    out.steps.push_back({EstimateEntry{"1", point_estimate(set)}});
  }
  return out;
}

inline NodeStream run_rbmcda_node(const ScanData& scans, const ScenarioConfig& config, const Box& region,
                                  const NodeProfile& node, std::uint64_t seed) {
  RbmcdaModel model;
  model.motion = config.motion();
  model.meas = config.measurement();
  model.clutter = tracker_clutter(config, node, region);
  model.birth_death = config.tracker.birth_death;
  model.birth_prior = birth_prior(config, region);
  model.assoc_prior.clutter_probability = config.tracker.clutter_probability;
  model.resample_threshold = config.tracker.resample_threshold;

  NodeStream out;
  out.algorithm = "rbmcda";
  auto set = make_multi_target_set(config.particles, model);
  for (std::size_t k = 0; k < scans.scans.size(); ++k) {
    const auto& scan = scans.scans[k];
    const double t_now = config.time(k);
    const double t_prev = k == 0 ? t_now : config.time(k - 1);
    if (scan.empty()) {
      set = rbmcda_step(std::move(set), std::nullopt, t_now, t_prev, model, derive_seed(seed, {k, 0}));
    } else {
      // Later measurements of the same scan see no elapsed time.
      for (std::size_t j = 0; j < scan.size(); ++j)
        set = rbmcda_step(std::move(set), scan[j], t_now, j == 0 ? t_prev : t_now, model, derive_seed(seed, {k, j}));
    }
    const auto snap = snapshot(set, config.tracker.count_estimator);
    std::vector<EstimateEntry> entries;
    for (const auto& [id, est] : snap.tracks) entries.push_back({std::to_string(id), est});
    out.steps.push_back(std::move(entries));
    out.counts.push_back(snap.count);
  }
  return out;
}

}  // namespace detail

/// Runs the node's tracker over its scans. `node` indexes the topology.
inline NodeStream run_monitoring_node(const ScanData& scans, const ScenarioConfig& config, const Box& region,
                                      std::size_t node, std::uint64_t seed) {
  const auto& mn = config.topology.nodes.at(node);
  auto out = config.mode == TrackingMode::SingleTarget
                 ? detail::run_rbpf_node(scans, config, region, mn.profile, seed)
                 : detail::run_rbmcda_node(scans, config, region, mn.profile, seed);
  out.source = mn.id;
  return out;
}

/// Plain Kalman filter fed with every measurement, clutter included.
inline NodeStream run_kf_baseline(const ScanData& scans, const ScenarioConfig& config, std::size_t node) {
  const auto motion = config.motion();
  const auto meas = config.measurement();
  GaussianEstimate est{config.targets.empty() ? Vector::Zero(4) : config.targets.front().initial,
                       config.tracker.initial_cov * Matrix::Identity(4, 4)};
  NodeStream out;
  out.source = config.topology.nodes.at(node).id;
  out.algorithm = "kf";
  for (std::size_t k = 0; k < scans.scans.size(); ++k) {
    if (k > 0) est = kf_predict(est, motion);
    for (const auto& y : scans.scans[k]) est = kf_update(est, y, meas);
    out.steps.push_back({EstimateEntry{"1", est}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Processing nodes

/// An estimate as received by a processing node.
struct Received {
  std::size_t node = 0;  // index into the topology's monitoring nodes
  std::string track;
  GaussianEstimate est;
};

/// Greedy agglomerative grouping on the distance between position components
/// (the first `position_dims` entries of each mean). The closest pair of
/// groups, by single linkage, is merged while that distance is within the
/// threshold and the two groups share no node. Groups, and members within a
/// group, are ordered by received index.
inline std::vector<std::vector<std::size_t>> associate_estimates(std::span<const Received> received, double threshold,
                                                                 Eigen::Index position_dims = 2) {
  const std::size_t n = received.size();
  for (const auto& r : received) detail::require_dims(r.est.mean.size() >= position_dims, "associate_estimates");
  Matrix dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          (received[a].est.mean.head(position_dims) - received[b].est.mean.head(position_dims)).norm();

  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups.push_back({i});

  const auto linkage = [&](const auto& ga, const auto& gb) {
    double d = std::numeric_limits<double>::infinity();
    for (auto a : ga)
      for (auto b : gb) {
        if (received[a].node == received[b].node) return std::numeric_limits<double>::infinity();
        d = std::min(d, dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
      }
    return d;
  };

  while (true) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < groups.size(); ++a)
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        const double d = linkage(groups[a], groups[b]);
        if (d < best) best = d, ba = a, bb = b;
      }
    if (!(best <= threshold)) break;
    groups[ba].insert(groups[ba].end(), groups[bb].begin(), groups[bb].end());
    std::sort(groups[ba].begin(), groups[ba].end());
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  return groups;
}

struct FusedEntry {
  std::string key;                   // label of the group's first member
  std::vector<std::string> members;  // "node:track"
  bool fused = false;                // false: singleton passed through
  GaussianEstimate est;
  Vector weights;                    // mixing weights; empty for passthrough
};

struct ProcessorStream {
  std::string processor;
  std::string algorithm;  // "ci" or "modci"
  std::vector<std::vector<FusedEntry>> steps;
};

/// Fuses each group with the selected family (`Traditional` or `Modified`):
/// pairs pairwise, larger groups in batch. `profiles` is indexed by node.
inline std::vector<FusedEntry> run_processing_node(std::span<const Received> received,
                                                   const std::vector<std::vector<std::size_t>>& groups,
                                                   std::span<const NodeProfile> profiles,
                                                   const std::vector<std::string>& node_ids, FusionMethod method) {
  if (method == FusionMethod::Both) throw std::invalid_argument("run_processing_node: pick one fusion family");
  std::vector<FusedEntry> out;
  for (const auto& g : groups) {
    FusedEntry e;
    for (auto i : g) e.members.push_back(node_ids.at(received[i].node) + ":" + received[i].track);
    e.key = e.members.front();
    if (g.size() == 1) {
      e.est = received[g[0]].est;
      out.push_back(std::move(e));
      continue;
    }
    std::vector<GaussianEstimate> in;
    std::vector<NodeProfile> prof;
    for (auto i : g) {
      in.push_back(received[i].est);
      prof.push_back(profiles[received[i].node]);
    }
    FusionResult r;
    if (method == FusionMethod::Traditional)
      r = g.size() == 2 ? ci_fuse_optimal(in[0], in[1]) : bci_fuse_optimal(in);
    else
      r = g.size() == 2 ? modified_ci_fuse(in[0], in[1], prof[0], prof[1]) : mbci_fuse(in, prof);
    e.fused = true;
    e.est = r.estimate;
    e.weights = r.weights.omega;
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end run

struct RunRecord {
  ScenarioConfig config;
  std::uint64_t seed = 0;
  Box region;
  GroundTruth truth;
  std::vector<ScanData> scans;           // per monitoring node
  std::vector<NodeStream> nodes;         // per monitoring node
  std::vector<NodeStream> baselines;     // KF baseline per node, if enabled
  std::vector<ProcessorStream> fused;    // per processor and algorithm
};

inline std::vector<FusionMethod> families(FusionMethod m) {
  if (m == FusionMethod::Both) return {FusionMethod::Traditional, FusionMethod::Modified};
  return {m};
}

inline RunRecord run_network(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  RunRecord rec;
  rec.config = config;
  rec.seed = seed;
  const auto& topo = config.topology;

  try {
    rec.truth = simulate_truth(config, seed);
    rec.region = surveillance_region(config, rec.truth);
  } catch (const std::exception& e) {
    throw StageError("truth", e.what());
  }
  const auto meas = config.measurement();
  for (std::size_t i = 0; i < topo.nodes.size(); ++i) {
    const auto& id = topo.nodes[i].id;
    try {
      rec.scans.push_back(generate_measurements(rec.truth, topo.nodes[i].profile, meas, rec.region,
                                                config.clutter_unit, derive_seed(seed, {1, i})));
    } catch (const std::exception& e) {
      throw StageError("measurements of node '" + id + "'", e.what());
    }
    try {
      rec.nodes.push_back(run_monitoring_node(rec.scans[i], config, rec.region, i, derive_seed(seed, {2, i})));
      if (config.baseline_kf) rec.baselines.push_back(run_kf_baseline(rec.scans[i], config, i));
    } catch (const std::exception& e) {
      throw StageError("monitoring node '" + id + "'", e.what());
    }
  }

  std::vector<NodeProfile> profiles;
  std::vector<std::string> ids;
  for (const auto& n : topo.nodes) {
    profiles.push_back(n.profile);
    ids.push_back(n.id);
  }
  for (const auto& proc : topo.processors) {
    try {
      std::vector<ProcessorStream> streams;
      for (auto fam : families(config.method)) streams.push_back({proc.id, to_string(fam), {}});
      for (std::size_t k = 0; k < config.steps(); ++k) {
        std::vector<Received> received;
        for (const auto& in : proc.inputs) {
          const auto idx = topo.node_index(in);
          for (const auto& entry : rec.nodes[idx].steps[k]) received.push_back({idx, entry.track, entry.est});
        }
        const auto groups = associate_estimates(received, config.threshold());
        for (auto& s : streams)
          s.steps.push_back(run_processing_node(received, groups, profiles, ids, parse_method(s.algorithm)));
      }
      for (auto& s : streams) rec.fused.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw StageError("processing node '" + proc.id + "'", e.what());
    }
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Run-record JSON

namespace detail {

inline json estimate_json(const GaussianEstimate& e) {
  const Matrix rowmajor = e.cov.transpose();  // column-major storage of the transpose = row-major of cov
  return {{"mean", to_std(e.mean)}, {"cov", std::vector<double>(rowmajor.data(), rowmajor.data() + rowmajor.size())}};
}

inline GaussianEstimate estimate_from_json(const json& j) {
  GaussianEstimate e;
  e.mean = to_vector(j.at("mean").get<std::vector<double>>());
  const auto flat = j.at("cov").get<std::vector<double>>();
  const auto n = e.mean.size();
  if (static_cast<Eigen::Index>(flat.size()) != n * n) throw std::runtime_error("record: covariance size mismatch");
  e.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), n, n);
  return e;
}

inline json stream_json(const NodeStream& s) {
  json steps = json::array();
  for (const auto& step : s.steps) {
    json row = json::array();
    for (const auto& e : step) {
      auto j = estimate_json(e.est);
      j["track"] = e.track;
      row.push_back(std::move(j));
    }
    steps.push_back(std::move(row));
  }
  json j = {{"source", s.source}, {"algorithm", s.algorithm}, {"steps", std::move(steps)}};
  if (!s.counts.empty()) j["counts"] = s.counts;
  return j;
}

inline NodeStream stream_from_json(const json& j) {
  NodeStream s;
  s.source = j.at("source").get<std::string>();
  s.algorithm = j.at("algorithm").get<std::string>();
  for (const auto& row : j.at("steps")) {
    std::vector<EstimateEntry> step;
    for (const auto& e : row) step.push_back({e.at("track").get<std::string>(), estimate_from_json(e)});
    s.steps.push_back(std::move(step));
  }
  if (j.contains("counts")) s.counts = j["counts"].get<std::vector<std::size_t>>();
  return s;
}

}  // namespace detail

inline json record_to_json(const RunRecord& r) {
  using detail::to_std;
  json j;
  j["format"] = "rbfusion-run/1";
  j["config"] = config_to_json(r.config);
  j["seed"] = r.seed;
  j["region"] = {{"lo", to_std(r.region.lo)}, {"hi", to_std(r.region.hi)}, {"volume", r.region.volume()}};

  json truth = {{"steps", r.truth.steps}, {"dt", r.truth.dt}, {"targets", json::array()}};
  for (const auto& t : r.truth.targets) {
    json states = json::array();
    for (const auto& x : t.states) states.push_back(to_std(x));
    truth["targets"].push_back(
        {{"birth", t.birth}, {"death", t.death}, {"first_step", t.first_step}, {"states", std::move(states)}});
  }
  j["truth"] = std::move(truth);

  j["scans"] = json::array();
  for (std::size_t i = 0; i < r.scans.size(); ++i) {
    json steps = json::array();
    for (const auto& scan : r.scans[i].scans) {
      json row = json::array();
      for (const auto& y : scan) row.push_back(to_std(y));
      steps.push_back(std::move(row));
    }
    j["scans"].push_back({{"node", r.config.topology.nodes[i].id}, {"steps", std::move(steps)}});
  }
  j["nodes"] = json::array();
  for (const auto& s : r.nodes) j["nodes"].push_back(detail::stream_json(s));
  j["baselines"] = json::array();
  for (const auto& s : r.baselines) j["baselines"].push_back(detail::stream_json(s));
  j["fused"] = json::array();
  for (const auto& p : r.fused) {
    json steps = json::array();
    for (const auto& step : p.steps) {
      json row = json::array();
      for (const auto& e : step) {
        auto je = detail::estimate_json(e.est);
        je["key"] = e.key;
        je["members"] = e.members;
        je["fused"] = e.fused;
        je["weights"] = to_std(e.weights);
        row.push_back(std::move(je));
      }
      steps.push_back(std::move(row));
    }
    j["fused"].push_back({{"processor", p.processor}, {"algorithm", p.algorithm}, {"steps", std::move(steps)}});
  }
  return j;
}

inline RunRecord record_from_json(const json& j) {
  if (j.value("format", "") != "rbfusion-run/1") throw std::runtime_error("not a run record");
  RunRecord r;
  r.config = config_from_json(j.at("config"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.region = {detail::to_vector(j.at("region").at("lo").get<std::vector<double>>()),
              detail::to_vector(j.at("region").at("hi").get<std::vector<double>>())};
  const auto& t = j.at("truth");
  r.truth.steps = t.at("steps").get<std::size_t>();
  r.truth.dt = t.at("dt").get<double>();
  for (const auto& jt : t.at("targets")) {
    TargetTrack tt;
    tt.birth = jt.at("birth").get<double>();
    tt.death = jt.at("death").get<double>();
    tt.first_step = jt.at("first_step").get<std::size_t>();
    for (const auto& x : jt.at("states")) tt.states.push_back(detail::to_vector(x.get<std::vector<double>>()));
    r.truth.targets.push_back(std::move(tt));
  }
  for (const auto& js : j.at("scans")) {
    ScanData sd;
    for (const auto& row : js.at("steps")) {
      std::vector<Vector> scan;
      for (const auto& y : row) scan.push_back(detail::to_vector(y.get<std::vector<double>>()));
      sd.scans.push_back(std::move(scan));
    }
    r.scans.push_back(std::move(sd));
  }
  for (const auto& s : j.at("nodes")) r.nodes.push_back(detail::stream_from_json(s));
  for (const auto& s : j.at("baselines")) r.baselines.push_back(detail::stream_from_json(s));
  for (const auto& jp : j.at("fused")) {
    ProcessorStream p;
    p.processor = jp.at("processor").get<std::string>();
    p.algorithm = jp.at("algorithm").get<std::string>();
    for (const auto& row : jp.at("steps")) {
      std::vector<FusedEntry> step;
      for (const auto& je : row) {
        FusedEntry e;
        e.est = detail::estimate_from_json(je);
        e.key = je.at("key").get<std::string>();
        e.members = je.at("members").get<std::vector<std::string>>();
        e.fused = je.at("fused").get<bool>();
        e.weights = detail::to_vector(je.at("weights").get<std::vector<double>>());
        step.push_back(std::move(e));
      }
      p.steps.push_back(std::move(step));
    }
    r.fused.push_back(std::move(p));
  }
  return r;
}

}  // namespace rbfusion
