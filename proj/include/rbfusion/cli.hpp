#pragma once

// Command-line driver: simulate scenarios over seed ranges, score run
// records, compare the two fusion families. Needs CLI11 on the include path.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rbfusion/metrics.hpp"

namespace rbfusion::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3 };

/// "a..b" (inclusive), "a,b,c" or a single seed.
inline std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  std::vector<std::uint64_t> out;
  const auto number = [&](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') throw ConfigError("--seeds", "bad seed '" + s + "'");
    return v;
  };
  if (const auto dots = spec.find(".."); dots != std::string::npos) {
    const auto a = number(spec.substr(0, dots)), b = number(spec.substr(dots + 2));
    if (b < a) throw ConfigError("--seeds", "empty range '" + spec + "'");
    if (b - a >= 1000000) throw ConfigError("--seeds", "range too large");
    for (auto s = a; s <= b; ++s) out.push_back(s);
  } else {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(number(item));
  }
  if (out.empty()) throw ConfigError("--seeds", "no seeds given");
  return out;
}

inline std::string record_name(const ScenarioConfig& c, std::uint64_t seed) {
  return c.name + "_seed" + std::to_string(seed);
}

/// Writes via a temporary file and a rename so readers never see partial files.
inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

/// Plot-ready long-format dump of truth, measurements and estimates.
inline std::string trajectory_csv(const RunRecord& r) {
  std::ostringstream os;
  os.precision(9);
  os << "kind,source,algorithm,track,step,time,x,y,vx,vy\n";
  const auto row = [&](const char* kind, const std::string& src, const std::string& alg, const std::string& track,
                       std::size_t k, const Vector& v) {
    os << kind << ',' << src << ',' << alg << ',' << track << ',' << k << ',' << r.config.time(k);
    for (Eigen::Index i = 0; i < 4; ++i) {
      os << ',';
      if (i < v.size()) os << v(i);
    }
    os << '\n';
  };
  for (std::size_t t = 0; t < r.truth.targets.size(); ++t) {
    const auto& tr = r.truth.targets[t];
    for (std::size_t i = 0; i < tr.states.size(); ++i)
      row("truth", "", "", std::to_string(t), tr.first_step + i, tr.states[i]);
  }
  for (std::size_t n = 0; n < r.scans.size(); ++n)
    for (std::size_t k = 0; k < r.scans[n].scans.size(); ++k)
      for (const auto& y : r.scans[n].scans[k]) row("measurement", r.config.topology.nodes[n].id, "", "", k, y);
  const auto streams = [&](const std::vector<NodeStream>& ss) {
    for (const auto& s : ss)
      for (std::size_t k = 0; k < s.steps.size(); ++k)
        for (const auto& e : s.steps[k]) row("estimate", s.source, s.algorithm, e.track, k, e.est.mean);
  };
  streams(r.nodes);
  streams(r.baselines);
  for (const auto& p : r.fused)
    for (std::size_t k = 0; k < p.steps.size(); ++k)
      for (const auto& e : p.steps[k])
        if (e.fused) row("fused", p.processor, p.algorithm, e.key, k, e.est.mean);
  return os.str();
}

inline RunRecord read_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open record '" + path + "'");
  try {
    return record_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw std::runtime_error("'" + path + "' is not a valid run record: " + e.what());
  }
}

/// All records must come from the same scenario (configs equal up to the seed).
inline std::vector<MetricsRow> metrics_of(const std::vector<std::string>& files) {
  if (files.empty()) throw std::invalid_argument("no record files given");
  std::vector<MetricsRow> rows;
  json reference;
  for (const auto& f : files) {
    const auto rec = read_record(f);
    auto cfg = config_to_json(rec.config);
    cfg.erase("seed");
    if (reference.is_null()) reference = cfg;
    else if (cfg != reference)
      throw std::invalid_argument("'" + f + "' comes from a different scenario than '" + files.front() + "'");
    const auto r = compute_metrics(rec);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

struct Options {
  std::string config, seeds, method, out = ".", metrics_out;
  bool baseline_kf = false, dump_csv = false;
  std::vector<std::string> records;
};

inline int cmd_simulate(const Options& o, std::ostream& out) {
  auto config = load_config(o.config);
  if (!o.method.empty()) config.method = parse_method(o.method);
  if (o.baseline_kf) config.baseline_kf = true;
  config.validate();
  const auto seeds = o.seeds.empty() ? std::vector<std::uint64_t>{config.seed} : parse_seeds(o.seeds);
  std::filesystem::create_directories(o.out);
  for (auto seed : seeds) {
    const auto rec = run_network(config, seed);
    const auto base = std::filesystem::path(o.out) / record_name(config, seed);
    auto path = base;
    path += ".json";
    write_atomically(path, record_to_json(rec).dump() + "\n");
    if (o.dump_csv) {
      auto csv = base;
      csv += "_trajectories.csv";
      write_atomically(csv, trajectory_csv(rec));
    }
    out << path.string() << '\n';
  }
  return kOk;
}

inline int cmd_metrics(const Options& o, std::ostream& out) {
  const auto rows = metrics_of(o.records);
  const auto agg = aggregate(rows);
  if (o.metrics_out.empty()) {
    write_metrics_csv(out, rows);
    out << '\n';
    write_aggregate_csv(out, agg);
    return kOk;
  }
  std::filesystem::create_directories(o.metrics_out);
  std::ostringstream a, b;
  write_metrics_csv(a, rows);
  write_aggregate_csv(b, agg);
  write_atomically(std::filesystem::path(o.metrics_out) / "metrics.csv", a.str());
  write_atomically(std::filesystem::path(o.metrics_out) / "aggregate.csv", b.str());
  return kOk;
}

inline int cmd_compare(const Options& o, std::ostream& out) {
  write_compare_report(out, compare_fusion(metrics_of(o.records)));
  return kOk;
}

/// Entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-sensor tracking and covariance-intersection fusion simulator"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "run a scenario for each seed and write run records");
  sim->add_option("--config", o.config, "scenario config (JSON)")->required();
  sim->add_option("--seeds", o.seeds, "seed range a..b, list a,b,c or one seed (default: config seed)");
  sim->add_option("--method", o.method, "fusion method: ci|bci|modci|mbci|both");
  sim->add_option("--out", o.out, "output directory");
  sim->add_flag("--baseline-kf", o.baseline_kf, "also run the no-association Kalman baseline");
  sim->add_flag("--dump-csv", o.dump_csv, "write trajectory CSVs next to the records");

  auto* met = app.add_subcommand("metrics", "score run records: per-run rows and median/IQR across seeds");
  met->add_option("records", o.records, "run record files")->required();
  met->add_option("--out", o.metrics_out, "write metrics.csv and aggregate.csv into this directory");

  auto* cmp = app.add_subcommand("compare", "modified vs traditional CI per seed, with a sign test");
  cmp->add_option("records", o.records, "run record files (method 'both')")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (sim->parsed()) return cmd_simulate(o, out);
    if (met->parsed()) return cmd_metrics(o, out);
    return cmd_compare(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace rbfusion::cli
