// Command-line front end: simulate, track, noise-sweep, compare, config.
//
// Exit codes: 0 ok, 1 usage, 2 invalid config, 3 runtime failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "evmocap/analysis.hpp"
#include "evmocap/config.hpp"
#include "evmocap/error.hpp"
#include "evmocap/event_file.hpp"
#include "evmocap/led_detector.hpp"
#include "evmocap/pipeline.hpp"
#include "evmocap/simulator.hpp"

using namespace evmocap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Failures inside a command that are not config problems.
struct RuntimeFailure : Error {
  using Error::Error;
};

void print_diagnostics(const std::vector<Diagnostic>& diags, bool all) {
  for (const auto& d : diags)
    if (all || d.severity != Diagnostic::Severity::Pass)
      std::cerr << to_string(d.severity) << " [" << d.rule << "] " << d.message << '\n';
}

std::unique_ptr<PoseSink> make_sink(const std::string& target, std::ofstream& file) {
  std::ostream* os = &std::cout;
  if (target != "-") {
    file.open(target);
    if (!file) throw RuntimeFailure("cannot open " + target);
    os = &file;
  }
  const bool csv = target.size() >= 4 && target.substr(target.size() - 4) == ".csv";
  if (csv) return std::make_unique<CsvPoseSink>(*os);
  return std::make_unique<JsonlPoseSink>(*os);
}

nlohmann::ordered_json stats_json(const PipelineStats& st, const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["batches_produced"] = st.produced;
  j["batches_processed"] = st.processed;
  j["batches_dropped"] = st.dropped;
  j["poses"] = st.poses;
  j["events"] = st.events;
  j["wall_s"] = st.wall_s;
  j["data_s"] = st.data_s;
  j["pose_rate_hz"] = st.pose_rate_hz();
  j["max_source_lag_us"] = st.max_source_lag_us;
  auto hist = [](const std::vector<double>& v) {
    nlohmann::ordered_json h;
    h["median"] = median(v);
    h["p90"] = percentile(v, 0.9);
    h["p99"] = percentile(v, 0.99);
    h["max"] = percentile(v, 1.0);
    return h;
  };
  j["stage1_us"] = hist(st.stage1_us);
  j["stage2_us"] = hist(st.stage2_us);
  j["stage3_us"] = hist(st.stage3_us);
  j["latency_us"] = hist(st.latency_us);
  nlohmann::ordered_json leds;
  for (const auto& m : c.rig.markers) {
    nlohmann::ordered_json l;
    l["tracked"] = st.detection_rate(m.id);
    l["observed"] = st.observation_rate(m.id);
    leds[std::to_string(m.id)] = l;
  }
  j["detection_rate"] = leds;
  j["all_tracked_rate"] = st.processed ? double(st.all_tracked) / double(st.processed) : 0.0;
  j["warnings"] = st.warnings;
  if (st.error)
    j["error"] = *st.error;
  else
    j["error"] = nullptr;
  return j;
}

struct Options {
  std::string config_path;

  std::string sim_events = "events.evt", sim_truth = "truth.jsonl";
  std::optional<std::uint64_t> sim_seed;
  std::optional<double> sim_duration;

  std::string track_in, track_out = "poses.jsonl", track_solver, track_debug_csv, track_stats_json;
  std::optional<double> track_rate_hz;
  std::optional<std::uint64_t> track_seed;
  bool track_stats = false, track_paced = false, track_no_drops = false, track_no_latency = false;

  std::vector<double> sweep_distances{0.7, 1, 1.5, 2, 3, 4, 5};
  int sweep_repeats = 20;
  double sweep_duration = 0.25;
  std::uint64_t sweep_seed = 1;
  std::string sweep_out = "sweep.csv";

  std::string cmp_poses, cmp_truth, cmp_out = "-";
  std::optional<std::uint64_t> cmp_max_dt;

  bool dump = false;
};

AppConfig load(const Options& o) { return o.config_path.empty() ? default_app_config() : load_config(o.config_path); }

int cmd_simulate(const Options& o) {
  AppConfig c = load(o);
  if (o.sim_duration) {
    if (!(*o.sim_duration > 0)) throw ConfigError("schema", "--duration must be positive");
    c.scene.duration_us = std::uint64_t(std::llround(*o.sim_duration * 1e6));
    c.sync();
  }
  print_diagnostics(validate_config(c), false);
  const std::uint64_t seed = o.sim_seed.value_or(c.sim_seed);
  const SimulationSummary s = simulate(c.scene, seed, o.sim_events, o.sim_truth);
  std::cout << "simulated " << double(c.scene.duration_us) * 1e-6 << " s, " << c.scene.rig.size() << " LEDs, seed "
            << seed << ": " << s.events << " events -> " << o.sim_events << ", " << s.truth_records
            << " truth records -> " << o.sim_truth << '\n';
  return kExitOk;
}

int cmd_track(const Options& o) {
  AppConfig c = load(o);
  PipelineConfig& p = c.pipeline;
  if (!o.track_solver.empty()) {
    try {
      p.solver = parse_solver(o.track_solver);
    } catch (const Error&) {
      throw ConfigError("schema", "--solver must be sqpnp or epnp");
    }
  }
  if (o.track_rate_hz) {
    if (!(*o.track_rate_hz > 0)) throw ConfigError("schema", "--rate-hz must be positive");
    p.batch_us = std::uint64_t(std::llround(1e6 / *o.track_rate_hz));
    p.window_us = std::max(p.window_us, p.batch_us);
  }
  if (o.track_seed) p.seed = *o.track_seed;
  p.paced = o.track_paced;
  // A file read as fast as possible must not lose batches; only a paced
  // (live-like) run drops the oldest batch under overload.
  p.allow_drops = o.track_paced && !o.track_no_drops;
  p.record_latency = !o.track_no_latency;

  FileEventSource src(o.track_in);
  std::ofstream out_file;
  auto sink = make_sink(o.track_out, out_file);

  std::ofstream debug;
  BatchObserver observer;
  if (!o.track_debug_csv.empty()) {
    debug.open(o.track_debug_csv);
    if (!debug) throw RuntimeFailure("cannot open " + o.track_debug_csv);
    write_detection_csv_header(debug);
    observer = [&](const BatchResult& r) { write_detection_csv(debug, r.detection, p.rig, p.detector.match_tol_us); };
  }

  const PipelineStats st = run_pipeline(src, p, *sink, observer);
  for (const auto& w : st.warnings) std::cerr << "warning: " << w << '\n';
  const auto j = stats_json(st, p);
  if (o.track_stats) std::cerr << j.dump(2) << '\n';
  if (!o.track_stats_json.empty()) {
    std::ofstream f(o.track_stats_json);
    if (!f) throw RuntimeFailure("cannot open " + o.track_stats_json);
    f << j.dump(2) << '\n';
  }
  if (st.error) throw RuntimeFailure("tracking stopped: " + *st.error);
  if (o.track_out != "-")
    std::cout << st.poses << " poses from " << st.processed << " batches (" << st.dropped << " dropped) -> "
              << o.track_out << '\n';
  return kExitOk;
}

int cmd_noise_sweep(const Options& o) {
  AppConfig c = load(o);
  NoiseSweepConfig s;
  s.base = c.scene;
  s.pipeline = c.pipeline;
  s.distances = o.sweep_distances;
  s.repeats = o.sweep_repeats;
  s.duration_us = std::uint64_t(std::llround(o.sweep_duration * 1e6));
  s.seed = o.sweep_seed;
  if (s.repeats < 1 || s.duration_us <= s.warmup_us) throw ConfigError("schema", "sweep needs repeats >= 1 and duration > 0.05 s");
  for (double d : s.distances)
    if (!(d > 0)) throw ConfigError("schema", "--distances must be positive");

  const NoiseSweepResult r = run_noise_sweep(s, [](double d) { std::cerr << "distance " << d << " m\n"; });
  std::ofstream f;
  std::ostream* os = &std::cout;
  if (o.sweep_out != "-") {
    f.open(o.sweep_out);
    if (!f) throw RuntimeFailure("cannot open " + o.sweep_out);
    os = &f;
  }
  write_sweep_csv(*os, r);
  for (const auto& fit : r.fits)
    std::cerr << to_string(fit.solver) << ": sigma_z slope " << fit.slope_z << ", orientation slope " << fit.slope_rot
              << '\n';
  return kExitOk;
}

int cmd_compare(const Options& o) {
  const auto poses = read_pose_file(o.cmp_poses);
  const auto truth = read_truth_jsonl(o.cmp_truth);
  if (truth.empty()) throw RuntimeFailure("truth file " + o.cmp_truth + " has no records");
  std::uint64_t max_dt = o.cmp_max_dt.value_or(0);
  if (!o.cmp_max_dt) {
    // Half the spacing of the truth records, which is the batch period for
    // files written by simulate.
    max_dt = truth.size() > 1 ? (truth[1].t_us - truth[0].t_us) / 2 : 1250;
  }
  const CompareReport r = compare_poses(poses, truth, max_dt);
  nlohmann::ordered_json j;
  j["truth_records"] = r.truth_records;
  j["poses"] = r.poses;
  j["matched"] = r.matched;
  j["availability"] = r.availability();
  j["max_dt_us"] = max_dt;
  j["position_rmse_m"] = r.position_rmse_m;
  j["position_max_m"] = r.position_max_m;
  j["orientation_rmse_rad"] = r.orientation_rmse_rad;
  j["orientation_max_rad"] = r.orientation_max_rad;
  if (o.cmp_out == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    std::ofstream f(o.cmp_out);
    if (!f) throw RuntimeFailure("cannot open " + o.cmp_out);
    f << j.dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_config(const Options& o) {
  const AppConfig c = load(o);
  print_diagnostics(validate_config(c), true);
  if (o.dump) std::cout << dump_config(c);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular event-camera motion capture with blinking LED markers"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "YAML config (defaults if omitted)")->check(CLI::ExistingFile);

  auto* sim = app.add_subcommand("simulate", "Simulate an event stream and ground truth");
  sim->add_option("--out", o.sim_events, "EVT1 event file")->capture_default_str();
  sim->add_option("--truth", o.sim_truth, "ground-truth JSON lines")->capture_default_str();
  sim->add_option("--seed", o.sim_seed, "noise seed (config simulator.seed if omitted)");
  sim->add_option("--duration", o.sim_duration, "seconds (config simulator.duration_s if omitted)");

  auto* track = app.add_subcommand("track", "Track poses from an event file");
  track->add_option("--in", o.track_in, "EVT1 event file")->required();
  track->add_option("--out", o.track_out, "pose file (.jsonl or .csv, - for stdout)")->capture_default_str();
  track->add_option("--solver", o.track_solver, "sqpnp or epnp");
  track->add_option("--rate-hz", o.track_rate_hz, "pose rate; sets the batch duration");
  track->add_option("--seed", o.track_seed, "particle-filter seed");
  track->add_flag("--stats", o.track_stats, "print the stats report to stderr");
  track->add_option("--stats-json", o.track_stats_json, "write the stats report to a file");
  track->add_option("--debug-csv", o.track_debug_csv, "write per-batch clusters and associations");
  track->add_flag("--paced", o.track_paced, "release batches at their timestamps, like a live camera");
  track->add_flag("--no-drops", o.track_no_drops, "with --paced, stages wait for each other instead of dropping batches");
  track->add_flag("--no-latency", o.track_no_latency, "write null latency so runs are byte-reproducible");

  auto* sweep = app.add_subcommand("noise-sweep", "Static pose noise against distance for both solvers");
  sweep->add_option("--distances", o.sweep_distances, "meters")->delimiter(',')->capture_default_str();
  sweep->add_option("--repeats", o.sweep_repeats, "simulated scenes per distance")->capture_default_str();
  sweep->add_option("--duration", o.sweep_duration, "seconds per scene")->capture_default_str();
  sweep->add_option("--seed", o.sweep_seed)->capture_default_str();
  sweep->add_option("--out", o.sweep_out, "CSV output, - for stdout")->capture_default_str();

  auto* cmp = app.add_subcommand("compare", "Time-aligned pose error against ground truth");
  cmp->add_option("--poses", o.cmp_poses)->required()->check(CLI::ExistingFile);
  cmp->add_option("--truth", o.cmp_truth)->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", o.cmp_out, "JSON report, - for stdout")->capture_default_str();
  cmp->add_option("--max-dt-us", o.cmp_max_dt, "matching tolerance (half the truth spacing if omitted)");

  auto* cfg = app.add_subcommand("config", "Validate a config and list every rule outcome");
  cfg->add_flag("--dump", o.dump, "print the resolved config as YAML");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(o);
    if (track->parsed()) return cmd_track(o);
    if (sweep->parsed()) return cmd_noise_sweep(o);
    if (cmp->parsed()) return cmd_compare(o);
    if (cfg->parsed()) return cmd_config(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.rule() << "]: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
