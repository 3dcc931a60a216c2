#pragma once

// Scenario description, ground-truth trajectories and per-node measurement
// simulation. Configs are JSON; every field has a default except the
// topology and the target schedule.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rbfusion/fusion.hpp"
#include "rbfusion/random.hpp"
#include "rbfusion/rbmcda.hpp"

namespace rbfusion {

using nlohmann::json;

/// A config value is missing, malformed or out of range. `field` is the
/// dotted path of the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& msg)
      : std::invalid_argument(field.empty() ? msg : "field '" + field + "': " + msg), field_(std::move(field)) {}
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class TrackingMode { SingleTarget, MultiTarget };

/// Which fusion family a processing node runs. Pairs use CI / modified CI,
/// larger groups the batch forms; `Both` runs the two side by side.
enum class FusionMethod { Traditional, Modified, Both };

/// How a node's clutter_density is turned into a Poisson mean per scan.
enum class ClutterUnit { PerScan, PerVolume };

inline FusionMethod parse_method(const std::string& s) {
  if (s == "ci" || s == "bci") return FusionMethod::Traditional;
  if (s == "modci" || s == "mbci") return FusionMethod::Modified;
  if (s == "both") return FusionMethod::Both;
  throw ConfigError("method", "expected one of ci|bci|modci|mbci|both, got '" + s + "'");
}

inline std::string to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::Traditional: return "ci";
    case FusionMethod::Modified: return "modci";
    case FusionMethod::Both: return "both";
  }
  return "?";
}

struct Box {
  Vector lo, hi;

  [[nodiscard]] double volume() const { return (hi - lo).prod(); }
  [[nodiscard]] Vector center() const { return 0.5 * (lo + hi); }
  [[nodiscard]] Vector span() const { return hi - lo; }
};

struct TargetSpec {
  double birth = 0.0;
  double death = 0.0;
  Vector initial;  // state at the first step on or after `birth`
};

struct MonitoringNode {
  std::string id;
  NodeProfile profile;
};

struct ProcessingNode {
  std::string id;
  std::vector<std::string> inputs;  // monitoring node ids
};

struct NetworkTopology {
  std::vector<MonitoringNode> nodes;
  std::vector<ProcessingNode> processors;

  [[nodiscard]] std::size_t node_index(const std::string& id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].id == id) return i;
    throw std::out_of_range("unknown monitoring node '" + id + "'");
  }

  void validate() const {
    if (nodes.empty()) throw ConfigError("nodes", "at least one monitoring node is required");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto field = "nodes[" + std::to_string(i) + "]";
      if (nodes[i].id.empty()) throw ConfigError(field + ".id", "must be non-empty");
      if (!ids.insert(nodes[i].id).second) throw ConfigError(field + ".id", "duplicate id '" + nodes[i].id + "'");
      try {
        nodes[i].profile.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(field, e.what());
      }
    }
    for (std::size_t j = 0; j < processors.size(); ++j) {
      const auto field = "processors[" + std::to_string(j) + "]";
      const auto& p = processors[j];
      if (p.id.empty()) throw ConfigError(field + ".id", "must be non-empty");
      if (!ids.insert(p.id).second) throw ConfigError(field + ".id", "duplicate id '" + p.id + "'");
      std::set<std::string> in(p.inputs.begin(), p.inputs.end());
      if (in.size() != p.inputs.size()) throw ConfigError(field + ".inputs", "duplicate input");
      if (in.size() < 2) throw ConfigError(field + ".inputs", "a processing node needs >= 2 monitoring inputs");
      for (const auto& s : p.inputs) {
        const bool known = std::any_of(nodes.begin(), nodes.end(), [&](const auto& n) { return n.id == s; });
        if (!known) throw ConfigError(field + ".inputs", "'" + s + "' is not a monitoring node");
      }
    }
  }
};

struct RegionSpec {
  std::optional<Box> bounds;  // explicit box; otherwise derived from the truth
  double padding = 0.2;       // total fractional enlargement of the truth bounding box
  double min_span = 1.0;
};

struct TrackerSettings {
  double association_prior = 0.5;   // single-target: P(target) for every history
  double initial_cov = 1.0;         // single-target: prior covariance scale
  double resample_threshold = 0.5;  // fraction of N
  BirthDeathModel birth_death;
  double birth_velocity_std = 2.0;
  std::optional<double> clutter_probability;  // multi-target no-birth prior
  CountEstimator count_estimator = CountEstimator::HighestWeight;
};

struct ScenarioConfig {
  std::string name = "scenario";
  TrackingMode mode = TrackingMode::SingleTarget;
  double dt = 0.025;
  double duration = 15.0;
  double turn_rate = 0.3;
  double diffusion = 0.1;
  double measurement_noise = 0.05;
  ClutterUnit clutter_unit = ClutterUnit::PerScan;
  NetworkTopology topology;
  RegionSpec region;
  std::vector<TargetSpec> targets;
  std::size_t particles = 20;
  std::uint64_t seed = 1;
  FusionMethod method = FusionMethod::Both;
  std::optional<double> association_threshold;
  TrackerSettings tracker;
  bool baseline_kf = false;

  [[nodiscard]] std::size_t steps() const {
    return static_cast<std::size_t>(std::floor(duration / dt + 1e-9)) + 1;
  }
  [[nodiscard]] double time(std::size_t k) const { return static_cast<double>(k) * dt; }
  [[nodiscard]] MotionModel motion() const {
    return discretize_ct_model(turn_rate_model(turn_rate, diffusion), dt);
  }
  [[nodiscard]] MeasurementModel measurement() const { return position_measurement(measurement_noise); }
  [[nodiscard]] double threshold() const {
    return association_threshold.value_or(3.0 * std::sqrt(measurement_noise));
  }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt", "must be > 0");
    if (!(duration >= 0.0) || !std::isfinite(duration)) throw ConfigError("duration", "must be >= 0");
    if (!std::isfinite(turn_rate)) throw ConfigError("motion.turn_rate", "must be finite");
    if (!(diffusion >= 0.0)) throw ConfigError("motion.diffusion", "must be >= 0");
    if (!(measurement_noise > 0.0)) throw ConfigError("measurement_noise", "must be > 0");
    topology.validate();
    if (particles < 1) throw ConfigError("particles", "must be >= 1");
    if (association_threshold && !(*association_threshold >= 0.0))
      throw ConfigError("association_threshold", "must be >= 0");
    if (region.bounds) {
      const auto& b = *region.bounds;
      if (b.lo.size() != 2 || b.hi.size() != 2) throw ConfigError("region.bounds", "must be 2-dimensional");
      if (!((b.hi - b.lo).minCoeff() > 0.0)) throw ConfigError("region.bounds", "volume must be > 0");
    }
    if (!(region.padding >= 0.0)) throw ConfigError("region.padding", "must be >= 0");
    if (!(region.min_span > 0.0)) throw ConfigError("region.min_span", "must be > 0");
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto field = "targets[" + std::to_string(i) + "]";
      const auto& t = targets[i];
      if (t.initial.size() != 4 || !t.initial.allFinite())
        throw ConfigError(field + ".initial", "must be 4 finite numbers [x, y, vx, vy]");
      if (!(t.birth >= 0.0 && t.birth <= duration)) throw ConfigError(field + ".birth", "must lie within [0, duration]");
      if (!(t.death > t.birth && t.death <= duration + dt))
        throw ConfigError(field + ".death", "must lie in (birth, duration]");
    }
    if (mode == TrackingMode::SingleTarget && targets.size() != 1)
      throw ConfigError("targets", "single-target mode needs exactly one target");
    const auto& tr = tracker;
    if (!(tr.association_prior > 0.0 && tr.association_prior <= 1.0))
      throw ConfigError("tracker.association_prior", "must lie in (0,1]");
    if (!(tr.initial_cov > 0.0)) throw ConfigError("tracker.initial_cov", "must be > 0");
    if (!(tr.resample_threshold >= 0.0 && tr.resample_threshold <= 1.0))
      throw ConfigError("tracker.resample_threshold", "must lie in [0,1]");
    try {
      tr.birth_death.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("tracker.birth_death", e.what());
    }
    if (!(tr.birth_velocity_std > 0.0)) throw ConfigError("tracker.birth_velocity_std", "must be > 0");
    if (tr.clutter_probability && !(*tr.clutter_probability > 0.0 && *tr.clutter_probability < 1.0))
      throw ConfigError("tracker.clutter_probability", "must lie in (0,1)");
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

/// Reads optional key `key` of object `j` into `out`, with field-anchored errors.
template <class T>
void read(const json& j, const char* key, T& out, const std::string& prefix) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError(prefix + key, "has the wrong type");
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "" : prefix.substr(0, prefix.size() - 1), "must be an object");
  for (const auto& [k, v] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; });
    if (!ok) throw ConfigError(prefix + k, "unknown field");
  }
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline ScenarioConfig config_from_json(const json& j) {
  using detail::read;
  detail::reject_unknown(j, {"name", "mode", "dt", "duration", "motion", "measurement_noise", "clutter_unit",
                             "nodes", "processors", "region", "targets", "particles", "seed", "method",
                             "association_threshold", "tracker", "baseline_kf"},
                         "");
  ScenarioConfig c;
  read(j, "name", c.name, "");
  std::string mode = "single";
  read(j, "mode", mode, "");
  if (mode == "single") c.mode = TrackingMode::SingleTarget;
  else if (mode == "multi") c.mode = TrackingMode::MultiTarget;
  else throw ConfigError("mode", "expected 'single' or 'multi'");
  read(j, "dt", c.dt, "");
  read(j, "duration", c.duration, "");
  if (j.contains("motion")) {
    const auto& m = j["motion"];
    detail::reject_unknown(m, {"turn_rate", "diffusion"}, "motion.");
    read(m, "turn_rate", c.turn_rate, "motion.");
    read(m, "diffusion", c.diffusion, "motion.");
  }
  read(j, "measurement_noise", c.measurement_noise, "");
  std::string unit = "per_scan";
  read(j, "clutter_unit", unit, "");
  if (unit == "per_scan") c.clutter_unit = ClutterUnit::PerScan;
  else if (unit == "per_volume") c.clutter_unit = ClutterUnit::PerVolume;
  else throw ConfigError("clutter_unit", "expected 'per_scan' or 'per_volume'");

  const double default_chi = c.dt > 0.0 ? 1.0 / (1.0 + c.dt) : 1.0;
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw ConfigError("nodes", "must be an array");
  for (std::size_t i = 0; i < j["nodes"].size(); ++i) {
    const auto& n = j["nodes"][i];
    const auto prefix = "nodes[" + std::to_string(i) + "].";
    detail::reject_unknown(n, {"id", "p_detect", "chi", "clutter_density"}, prefix);
    MonitoringNode node;
    node.profile.chi = default_chi;
    read(n, "id", node.id, prefix);
    read(n, "p_detect", node.profile.p_detect, prefix);
    read(n, "chi", node.profile.chi, prefix);
    read(n, "clutter_density", node.profile.clutter_density, prefix);
    c.topology.nodes.push_back(node);
  }
  if (j.contains("processors")) {
    if (!j["processors"].is_array()) throw ConfigError("processors", "must be an array");
    for (std::size_t i = 0; i < j["processors"].size(); ++i) {
      const auto& p = j["processors"][i];
      const auto prefix = "processors[" + std::to_string(i) + "].";
      detail::reject_unknown(p, {"id", "inputs"}, prefix);
      ProcessingNode proc;
      read(p, "id", proc.id, prefix);
      read(p, "inputs", proc.inputs, prefix);
      c.topology.processors.push_back(proc);
    }
  }
  if (j.contains("region")) {
    const auto& r = j["region"];
    detail::reject_unknown(r, {"bounds", "padding", "min_span"}, "region.");
    if (r.contains("bounds") && !r["bounds"].is_null()) {
      std::vector<std::vector<double>> b;
      read(r, "bounds", b, "region.");
      if (b.size() != 2 || b[0].size() != 2 || b[1].size() != 2)
        throw ConfigError("region.bounds", "expected [[xmin, ymin], [xmax, ymax]]");
      c.region.bounds = Box{detail::to_vector(b[0]), detail::to_vector(b[1])};
    }
    read(r, "padding", c.region.padding, "region.");
    read(r, "min_span", c.region.min_span, "region.");
  }
  if (!j.contains("targets") || !j["targets"].is_array()) throw ConfigError("targets", "must be an array");
  for (std::size_t i = 0; i < j["targets"].size(); ++i) {
    const auto& t = j["targets"][i];
    const auto prefix = "targets[" + std::to_string(i) + "].";
    detail::reject_unknown(t, {"birth", "death", "initial"}, prefix);
    TargetSpec spec;
    spec.death = c.duration;
    std::vector<double> init;
    read(t, "birth", spec.birth, prefix);
    read(t, "death", spec.death, prefix);
    read(t, "initial", init, prefix);
    spec.initial = detail::to_vector(init);
    c.targets.push_back(spec);
  }
  read(j, "particles", c.particles, "");
  read(j, "seed", c.seed, "");
  std::string method = "both";
  read(j, "method", method, "");
  c.method = parse_method(method);
  if (j.contains("association_threshold") && !j["association_threshold"].is_null()) {
    double v = 0.0;
    read(j, "association_threshold", v, "");
    c.association_threshold = v;
  }
  if (j.contains("tracker")) {
    const auto& t = j["tracker"];
    const std::string p = "tracker.";
    detail::reject_unknown(t, {"association_prior", "initial_cov", "resample_threshold", "p_birth",
                               "lifetime_shape", "lifetime_scale", "max_targets", "birth_velocity_std",
                               "clutter_probability", "count_estimator"},
                           p);
    auto& tr = c.tracker;
    read(t, "association_prior", tr.association_prior, p);
    read(t, "initial_cov", tr.initial_cov, p);
    read(t, "resample_threshold", tr.resample_threshold, p);
    read(t, "p_birth", tr.birth_death.p_birth, p);
    read(t, "lifetime_shape", tr.birth_death.lifetime_shape, p);
    read(t, "lifetime_scale", tr.birth_death.lifetime_scale, p);
    read(t, "max_targets", tr.birth_death.max_targets, p);
    read(t, "birth_velocity_std", tr.birth_velocity_std, p);
    if (t.contains("clutter_probability") && !t["clutter_probability"].is_null()) {
      double v = 0.0;
      read(t, "clutter_probability", v, p);
      tr.clutter_probability = v;
    }
    std::string est = "highest_weight";
    read(t, "count_estimator", est, p);
    if (est == "highest_weight") tr.count_estimator = CountEstimator::HighestWeight;
    else if (est == "weighted_mode") tr.count_estimator = CountEstimator::WeightedMode;
    else throw ConfigError("tracker.count_estimator", "expected 'highest_weight' or 'weighted_mode'");
  }
  read(j, "baseline_kf", c.baseline_kf, "");
  c.validate();
  return c;
}

inline json config_to_json(const ScenarioConfig& c) {
  json j;
  j["name"] = c.name;
  j["mode"] = c.mode == TrackingMode::SingleTarget ? "single" : "multi";
  j["dt"] = c.dt;
  j["duration"] = c.duration;
  j["motion"] = {{"turn_rate", c.turn_rate}, {"diffusion", c.diffusion}};
  j["measurement_noise"] = c.measurement_noise;
  j["clutter_unit"] = c.clutter_unit == ClutterUnit::PerScan ? "per_scan" : "per_volume";
  j["nodes"] = json::array();
  for (const auto& n : c.topology.nodes)
    j["nodes"].push_back({{"id", n.id},
                          {"p_detect", n.profile.p_detect},
                          {"chi", n.profile.chi},
                          {"clutter_density", n.profile.clutter_density}});
  j["processors"] = json::array();
  for (const auto& p : c.topology.processors) j["processors"].push_back({{"id", p.id}, {"inputs", p.inputs}});
  json region = {{"padding", c.region.padding}, {"min_span", c.region.min_span}};
  if (c.region.bounds)
    region["bounds"] = {detail::to_std(c.region.bounds->lo), detail::to_std(c.region.bounds->hi)};
  j["region"] = region;
  j["targets"] = json::array();
  for (const auto& t : c.targets)
    j["targets"].push_back({{"birth", t.birth}, {"death", t.death}, {"initial", detail::to_std(t.initial)}});
  j["particles"] = c.particles;
  j["seed"] = c.seed;
  j["method"] = to_string(c.method);
  j["association_threshold"] = c.association_threshold ? json(*c.association_threshold) : json(nullptr);
  const auto& tr = c.tracker;
  j["tracker"] = {{"association_prior", tr.association_prior},
                  {"initial_cov", tr.initial_cov},
                  {"resample_threshold", tr.resample_threshold},
                  {"p_birth", tr.birth_death.p_birth},
                  {"lifetime_shape", tr.birth_death.lifetime_shape},
                  {"lifetime_scale", tr.birth_death.lifetime_scale},
                  {"max_targets", tr.birth_death.max_targets},
                  {"birth_velocity_std", tr.birth_velocity_std},
                  {"clutter_probability", tr.clutter_probability ? json(*tr.clutter_probability) : json(nullptr)},
                  {"count_estimator",
                   tr.count_estimator == CountEstimator::HighestWeight ? "highest_weight" : "weighted_mode"}};
  j["baseline_kf"] = c.baseline_kf;
  return j;
}

/// Parses config text; syntax errors carry "line:column".
inline ScenarioConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') ++line, col = 1;
      else ++col;
    }
    throw ConfigError("", origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
  return config_from_json(j);
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Ground truth

struct TargetTrack {
  double birth = 0.0, death = 0.0;
  std::size_t first_step = 0;
  std::vector<Vector> states;  // one per alive step, starting at first_step

  [[nodiscard]] bool alive(std::size_t k) const { return k >= first_step && k < first_step + states.size(); }
  [[nodiscard]] const Vector& at(std::size_t k) const { return states.at(k - first_step); }
};

struct GroundTruth {
  std::size_t steps = 0;
  double dt = 0.0;
  std::vector<TargetTrack> targets;

  [[nodiscard]] std::size_t count(std::size_t k) const {
    std::size_t n = 0;
    for (const auto& t : targets) n += t.alive(k) ? 1 : 0;
    return n;
  }
};

/// Alive on step k iff birth <= t_k < death (with a tolerance against grid round-off).
inline bool scheduled_alive(const TargetSpec& t, double time) {
  constexpr double eps = 1e-9;
  return time >= t.birth - eps && time < t.death - eps;
}

inline GroundTruth simulate_truth(const ScenarioConfig& config, std::uint64_t seed) {
  const auto motion = config.motion();
  GroundTruth truth;
  truth.steps = config.steps();
  truth.dt = config.dt;
  for (std::size_t i = 0; i < config.targets.size(); ++i) {
    const auto& spec = config.targets[i];
    TargetTrack track{spec.birth, spec.death, 0, {}};
    Engine eng(derive_seed(seed, {0x7472757468ULL, i}));
    bool started = false;
    for (std::size_t k = 0; k < truth.steps; ++k) {
      if (!scheduled_alive(spec, config.time(k))) {
        if (started) break;
        continue;
      }
      if (!started) {
        track.first_step = k;
        track.states.push_back(spec.initial);
        started = true;
      } else {
        track.states.push_back(motion.A * track.states.back() + sample_gaussian(eng, motion.Q));
      }
    }
    truth.targets.push_back(std::move(track));
  }
  return truth;
}

/// Surveillance box: explicit, or the truth's position bounding box enlarged
/// by `padding` (split evenly between both sides) with a minimum span.
inline Box surveillance_region(const ScenarioConfig& config, const GroundTruth& truth) {
  if (config.region.bounds) return *config.region.bounds;
  Vector lo = Vector::Constant(2, std::numeric_limits<double>::infinity());
  Vector hi = -lo;
  for (const auto& t : truth.targets)
    for (const auto& x : t.states) {
      lo = lo.cwiseMin(x.head(2));
      hi = hi.cwiseMax(x.head(2));
    }
  if (!lo.allFinite()) {  // no targets at all
    lo = Vector::Zero(2);
    hi = Vector::Zero(2);
  }
  const Vector center = 0.5 * (lo + hi);
  Vector span = ((hi - lo) * (1.0 + config.region.padding)).cwiseMax(config.region.min_span);
  return {center - 0.5 * span, center + 0.5 * span};
}

// ---------------------------------------------------------------------------
// Measurements

/// Per-step unlabeled measurement sets of one monitoring node.
struct ScanData {
  std::vector<std::vector<Vector>> scans;
};

inline double clutter_mean(const NodeProfile& node, const Box& region, ClutterUnit unit) {
  return unit == ClutterUnit::PerScan ? node.clutter_density : node.clutter_density * region.volume();
}

inline ScanData generate_measurements(const GroundTruth& truth, const NodeProfile& node,
                                      const MeasurementModel& meas, const Box& region, ClutterUnit unit,
                                      std::uint64_t seed) {
  detail::require_dims(meas.H.rows() == region.lo.size(), "generate_measurements region");
  const double lambda = clutter_mean(node, region, unit);
  ScanData out;
  out.scans.resize(truth.steps);
  for (std::size_t k = 0; k < truth.steps; ++k) {
    Engine eng(derive_seed(seed, {k}));
    auto& scan = out.scans[k];
    for (const auto& t : truth.targets) {
      if (!t.alive(k)) continue;
      if (uniform01(eng) < node.p_detect) scan.push_back(meas.H * t.at(k) + sample_gaussian(eng, meas.R));
    }
    const auto n_clutter = lambda > 0.0 ? std::poisson_distribution<int>(lambda)(eng) : 0;
    for (int c = 0; c < n_clutter; ++c) {
      Vector y(region.lo.size());
      for (Eigen::Index d = 0; d < y.size(); ++d) y(d) = region.lo(d) + uniform01(eng) * (region.hi(d) - region.lo(d));
      scan.push_back(y);
    }
    // Hide the target-first ordering from the trackers.
    std::shuffle(scan.begin(), scan.end(), eng);
  }
  return out;
}

}  // namespace rbfusion
