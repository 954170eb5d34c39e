// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion with
// the measured values and the pinned tolerance.
//
//   acceptance [--only N[,N...]] [--known-failures N[,N...]] [--work DIR]
//
// Exit status is nonzero when a criterion fails that is not listed as a known
// failure. Known failures still print FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "evmocap/analysis.hpp"
#include "evmocap/event_file.hpp"
#include "evmocap/led_detector.hpp"
#include "evmocap/pipeline.hpp"
#include "evmocap/sdtv.hpp"
#include "evmocap/simulator.hpp"
#include "double_event_fixture.hpp"
#include "pnp_instances.hpp"

namespace fs = std::filesystem;
using namespace evmocap;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  // Criterion 6 result, reused by criterion 9.
  std::optional<NoiseSweepResult> sweep;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

PipelineConfig pipeline_for(const SimScene& scene) {
  PipelineConfig c;
  c.rig = scene.rig;
  c.camera = scene.camera;
  c.t_cw = scene.t_cw;
  return c;
}

Outcome memory_footprint(Context&) {
  const std::uint64_t volume = event_volume_bytes(640, 480, 2000, 5);
  const double r4 = volume_reduction_factor(2000, 5, 4);
  const double r16 = volume_reduction_factor(2000, 5, 16);
  double lo = 1e300, hi = 0;
  for (std::uint64_t d = 4; d <= 16; ++d) {
    lo = std::min(lo, volume_reduction_factor(2000, 5, d));
    hi = std::max(hi, volume_reduction_factor(2000, 5, d));
  }
  const bool pass = volume == 122'880'000 && lo == 25 && hi == 100 && r4 == 100 && r16 == 25;
  return {pass, fmt("event volume %llu B (want 122880000), reduction over D in [4,16] = [%g, %g] (want [25, 100])",
                    (unsigned long long)volume, lo, hi)};
}

Outcome threshold_and_depth(Context&) {
  const LedRig rig = default_rig();
  const std::uint32_t th = rate_threshold(2500, rig.min_frequency(), 0.8);
  const std::uint32_t d = min_depth(2000, rig.max_frequency());
  return {th == 7 && d == 12, fmt("rate_threshold(2.5 ms, %.0f Hz, 0.8) = %u (want 7), min_depth(2 ms, %.0f Hz) = %u "
                                  "(want 12)",
                                  rig.min_frequency(), th, rig.max_frequency(), d)};
}

Outcome period_robustness(Context&) {
  const SensorGeometry g{4, 4};
  Sdtv sdtv(g, 11);
  CountFrame cf(g);
  sdtv.ingest(testing::double_event_fixture(1, 2), cf);
  const std::uint32_t px = g.index(1, 2);
  const auto stats = period_stats(sdtv, std::vector<std::uint32_t>{px}, DetectorConfig{});
  if (stats.size() != 1) return {false, "fixture pixel rejected"};
  const double m = stats[0].mean;
  return {m >= 295 && m <= 305, fmt("mean period %.2f us (want [295, 305])", m)};
}

Outcome frequency_association(Context&) {
  SimScene scene = static_scene(1.0, 10'000'000);
  PipelineConfig pc = pipeline_for(scene);
  const TruthRecord truth = truth_at(scene, 0);
  const double gate_px = scene.noise.blob_radius_px + 1.0;

  std::uint64_t batches = 0, all_detected = 0, all_observed = 0, misassociated = 0, associations = 0;
  SimulatorSource src(scene, 4);
  MemoryPoseSink sink;
  const PipelineStats st = run_reference(src, pc, sink, [&](const BatchResult& r) {
    const Detection& d = r.detection;
    ++batches;
    all_detected += d.centroids.size() == scene.rig.size();
    all_observed += d.observed.size() == scene.rig.size();
    for (const auto& [id, uv] : d.observed) {
      ++associations;
      if ((uv - truth.marker_pixels.at(id)).norm() > gate_px) ++misassociated;
    }
  });
  if (st.error) return {false, "pipeline error: " + *st.error};
  const double rate = double(all_detected) / double(batches);
  const double raw = double(all_observed) / double(batches);
  std::string per_led;
  for (const auto& m : scene.rig.markers) per_led += fmt(" %d:%.0f%%", m.id, 100 * st.observation_rate(m.id));

  // A cluster at 540 us against the 578.0 us LED (1730 Hz) is outside 25 us.
  Cluster c;
  c.period_us = 540;
  c.samples = 10;
  c.pixels = {0};
  LedRig one;
  one.markers.push_back(scene.rig.markers.front());
  const Association a = associate_clusters(std::vector{c}, one, 25);
  const bool rejected = a.matched.empty();

  return {misassociated == 0 && rate >= 0.99 && rejected,
          fmt("%llu batches, misassociations %llu of %llu (want 0), all 5 LEDs detected in %.2f %% (want >= 99 %%; "
              "raw association of all 5 %.2f %%, per LED%s), 540 us vs %.1f us LED %s",
              (unsigned long long)batches, (unsigned long long)misassociated, (unsigned long long)associations,
              100 * rate, 100 * raw, per_led.c_str(), 1e6 / one.markers.front().frequency_hz, rejected ? "rejected" : "ACCEPTED")};
}

Outcome pnp_exactness(Context&) {
  using namespace evmocap::testing;
  std::mt19937_64 rng(7);
  double worst_rot = 0, worst_t = 0;
  for (int i = 0; i < 1000; ++i) {
    const Instance in = random_instance(rng, 4 + i % 6, 0);
    const PoseEstimate sq = solve_sqpnp(in.c);
    worst_rot = std::max(worst_rot, rotation_error(sq.t_cb, in.truth));
    worst_t = std::max(worst_t, (sq.t_cb.translation - in.truth.translation).norm());
  }
  std::mt19937_64 rng2(11);
  int not_worse = 0;
  double worst_gap = -1e300;
  for (int i = 0; i < 1000; ++i) {
    const Instance in = random_instance(rng2, 5 + i % 5, 0.2 / 1000);
    const PoseEstimate sq = solve_sqpnp(in.c);
    const PoseEstimate ep = solve_epnp(in.c);
    const double oracle = std::min(
        {refined_objective(sq.t_cb, in.c), refined_objective(ep.t_cb, in.c), refined_objective(in.truth, in.c)});
    worst_gap = std::max(worst_gap, sq.objective - oracle);
    if (sq.objective <= ep.objective + 1e-15) ++not_worse;
  }
  const bool pass = worst_rot < 1e-7 && worst_t < 1e-7 && worst_gap <= 1e-10 && not_worse >= 990;
  return {pass, fmt("noiseless worst rotation %.2e rad, translation %.2e m (want < 1e-7); noisy worst objective gap "
                    "to refined oracle %.2e (want <= 1e-10), SQPnP <= EPnP on %d/1000 (want >= 990)",
                    worst_rot, worst_t, worst_gap, not_worse)};
}

Outcome noise_scaling(Context& ctx) {
  NoiseSweepConfig c;
  c.repeats = 20;
  const NoiseSweepResult r = run_noise_sweep(c, [](double d) { std::cerr << "  sweep distance " << d << " m\n"; });
  ctx.sweep = r;
  const auto sq = r.rows_for(PnpSolver::Sqpnp);
  const auto ep = r.rows_for(PnpSolver::Epnp);
  const NoiseSweepFit& f = r.fit_for(PnpSolver::Sqpnp);

  std::ostringstream table;
  bool b = true, d = true;
  double worst_depth_ratio = 1e300, worst_solver_ratio = 1e300;
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double lateral = std::max(sq[i].sigma_x, sq[i].sigma_y);
    const double depth_ratio = sq[i].sigma_z / lateral;
    worst_depth_ratio = std::min(worst_depth_ratio, depth_ratio);
    b = b && depth_ratio >= 3;
    const double ratio = ep[i].sigma_rot / sq[i].sigma_rot;
    if (sq[i].distance_m >= 2) {
      worst_solver_ratio = std::min(worst_solver_ratio, ratio);
      d = d && ratio >= 1.5;
    }
    table << fmt("\n    %.1f m: sqpnp sigma_xyz %.2e %.2e %.2e m, rot %.2e rad | epnp rot %.2e rad (ratio %.2f), n=%zu",
                 sq[i].distance_m, sq[i].sigma_x, sq[i].sigma_y, sq[i].sigma_z, sq[i].sigma_rot, ep[i].sigma_rot,
                 ratio, sq[i].samples);
  }
  const bool a = f.slope_z >= 1.7 && f.slope_z <= 2.3;
  const bool c_ok = f.slope_rot >= 0.7 && f.slope_rot <= 1.3;
  return {a && b && c_ok && d,
          fmt("(a) sigma_z slope %.2f [1.7, 2.3] %s; (b) min sigma_z/max(sigma_x, sigma_y) %.1f >= 3 %s; (c) rotation "
              "slope %.2f [0.7, 1.3] %s; (d) min EPnP/SQPnP rotation sigma at >= 2 m %.2f >= 1.5 %s",
              f.slope_z, a ? "ok" : "FAIL", worst_depth_ratio, b ? "ok" : "FAIL", f.slope_rot, c_ok ? "ok" : "FAIL",
              worst_solver_ratio, d ? "ok" : "FAIL") +
              table.str()};
}

Outcome millimeter_accuracy(Context&) {
  NoiseSweepConfig c;
  c.distances = {1.0};
  c.repeats = 1;
  c.duration_us = 5'000'000;
  c.seed = 77;
  c.solvers = {PnpSolver::Sqpnp};
  const NoiseSweepRow row = run_noise_sweep(c).rows.front();
  const double worst = std::max({row.sigma_x, row.sigma_y, row.sigma_z});
  const double lateral = std::max(row.sigma_x, row.sigma_y);
  return {worst < 5e-3 && lateral < 1e-3,
          fmt("1 m, %zu poses: sigma x %.3f mm, y %.3f mm, z %.3f mm (want all < 5 mm, x/y < 1 mm)", row.samples,
              1e3 * row.sigma_x, 1e3 * row.sigma_y, 1e3 * row.sigma_z)};
}

Outcome real_time(Context& ctx) {
  SimScene scene = static_scene(1.0, 10'000'000);
  const fs::path events = ctx.work / "rt_events.evt";
  simulate(scene, 5, events, ctx.work / "rt_truth.jsonl");

  PipelineConfig pc = pipeline_for(scene);
  pc.paced = true;
  MemoryPoseSink sink;
  FileEventSource src(events);
  const PipelineStats live = run_pipeline(src, pc, sink);
  const double stage3 = median(live.stage3_us);

  PipelineConfig fast = pipeline_for(scene);
  fast.batch_us = 1000;
  fast.window_us = 2500;
  fast.allow_drops = false;
  MemoryPoseSink sink2;
  FileEventSource src2(events);
  const PipelineStats off = run_pipeline(src2, fast, sink2);
  bool warned = false;
  for (const auto& w : off.warnings) warned = warned || w.find("batch_rate_limit") != std::string::npos;

  const bool pass = !live.error && !off.error && live.dropped == 0 && stage3 < 2500 &&
                    off.pose_rate_hz() >= 1000 && warned;
  return {pass, fmt("400 Hz paced: %llu poses, %llu dropped of %llu (want 0), median stage 3 %.0f us "
                    "(want < 2500), worst source lag %.1f ms; 1 ms batches: %.0f poses/s (want >= 1000), "
                    "batch_rate_limit warning %s",
                    (unsigned long long)live.poses, (unsigned long long)live.dropped,
                    (unsigned long long)live.produced, stage3, live.max_source_lag_us * 1e-3, off.pose_rate_hz(),
                    warned ? "emitted" : "MISSING")};
}

Outcome closed_loop(Context& ctx) {
  if (!ctx.sweep) return {false, "needs the criterion 6 sweep"};
  std::vector<double> d, s;
  for (const auto& r : ctx.sweep->rows_for(PnpSolver::Sqpnp)) {
    d.push_back(r.distance_m);
    s.push_back(r.sigma_position());
  }
  const double sigma_25 = power_law_at(d, s, 2.5);

  SimScene scene = static_scene(2.5, 20'000'000);
  scene.trajectory = Trajectory::rectangle(Trajectory::RectangleParams{}, facing_orientation(scene.t_cw),
                                           scene.duration_us);
  const PipelineConfig pc = pipeline_for(scene);
  SimulatorSource src(scene, 9);
  MemoryPoseSink sink;
  const PipelineStats st = run_reference(src, pc, sink);
  if (st.error) return {false, "pipeline error: " + *st.error};
  std::vector<TruthRecord> truth;
  for (std::uint64_t t = scene.truth_interval_us; t <= scene.duration_us; t += scene.truth_interval_us)
    truth.push_back(truth_at(scene, t));
  const CompareReport r = compare_poses(sink.records, truth, pc.batch_us / 2);
  const bool pass = r.position_rmse_m < 3 * sigma_25 && r.availability() >= 0.95;
  return {pass, fmt("rectangle at 2-3 m, 20 s: position RMSE %.2f mm (want < 3 x %.2f mm static sigma at 2.5 m), "
                    "orientation RMSE %.3f rad, availability %.2f %% (want >= 95 %%)",
                    1e3 * r.position_rmse_m, 1e3 * sigma_25, r.orientation_rmse_rad, 100 * r.availability())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(Context& ctx) {
  SimScene scene = static_scene(1.5, 3'000'000);
  const fs::path events = ctx.work / "det_events.evt";
  simulate(scene, 21, events, ctx.work / "det_truth.jsonl");
  PipelineConfig pc = pipeline_for(scene);
  pc.allow_drops = false;
  pc.record_latency = false;
  pc.seed = 3;

  auto run = [&](const fs::path& out, bool threaded) {
    std::ofstream os(out);
    JsonlPoseSink sink(os);
    FileEventSource src(events);
    const PipelineStats st = threaded ? run_pipeline(src, pc, sink) : run_reference(src, pc, sink);
    return st.poses;
  };
  const auto n1 = run(ctx.work / "det_a.jsonl", true);
  run(ctx.work / "det_b.jsonl", true);
  run(ctx.work / "det_ref.jsonl", false);
  const std::string a = slurp(ctx.work / "det_a.jsonl");
  const bool same = a == slurp(ctx.work / "det_b.jsonl");
  const bool ref = a == slurp(ctx.work / "det_ref.jsonl");
  return {same && ref && n1 > 0, fmt("%llu poses; threaded run twice %s; threaded vs single-threaded reference %s",
                                     (unsigned long long)n1, same ? "byte-identical" : "DIFFER",
                                     ref ? "byte-identical" : "DIFFER")};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, known;
  fs::path work = fs::temp_directory_path() / "evmocap_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc)
      only = parse_list(argv[++i]);
    else if (a == "--known-failures" && i + 1 < argc)
      known = parse_list(argv[++i]);
    else if (a == "--work" && i + 1 < argc)
      work = argv[++i];
    else {
      std::cerr << "usage: acceptance [--only N,..] [--known-failures N,..] [--work DIR]\n";
      return 1;
    }
  }
  fs::create_directories(work);
  Context ctx{work, {}};

  const std::vector<std::pair<const char*, std::function<Outcome(Context&)>>> criteria{
      {"memory footprint", memory_footprint},
      {"threshold and depth", threshold_and_depth},
      {"period robustness", period_robustness},
      {"frequency association", frequency_association},
      {"pnp exactness and dominance", pnp_exactness},
      {"noise scaling", noise_scaling},
      {"millimeter accuracy", millimeter_accuracy},
      {"real-time", real_time},
      {"closed-loop surrogate", closed_loop},
      {"determinism", determinism},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    // Criterion 9 compares against the sweep of criterion 6.
    if (!only.empty() && !only.count(n) && !(n == 6 && only.count(9))) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass && !known.count(n)) ++unexpected;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << " (" << fmt("%.1f", s)
              << " s): " << o.detail << (!o.pass && known.count(n) ? " [known failure]" : "") << std::endl;
  }
  fs::remove_all(work);
  return unexpected ? 1 : 0;
}
