#include "evmocap/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "evmocap/error.hpp"

namespace evmocap {

double rotation_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const Eigen::Quaterniond d = a.conjugate() * b;
  return 2 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

Eigen::Quaterniond mean_rotation(std::span<const Eigen::Quaterniond> q) {
  if (q.empty()) throw Error("mean of no rotations");
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  for (const auto& r : q) {
    const Eigen::Vector4d v = r.normalized().coeffs();
    m += v * v.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(m);
  const Eigen::Vector4d v = es.eigenvectors().col(3);
  return Eigen::Quaterniond(v[3], v[0], v[1], v[2]).normalized();
}

double rotation_spread(std::span<const Eigen::Quaterniond> q) {
  const Eigen::Quaterniond mean = mean_rotation(q);
  double sum = 0;
  for (const auto& r : q) {
    const double a = rotation_angle(mean, r);
    sum += a * a;
  }
  return std::sqrt(sum / double(q.size()));
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1));
}

namespace {

// Intercept and slope of log(y) = a + b log(x).
std::pair<double, double> loglog_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("log-log fit needs at least two paired samples");
  Eigen::MatrixXd A(x.size(), 2);
  Eigen::VectorXd b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw Error("log-log fit needs positive samples");
    A(Eigen::Index(i), 0) = 1;
    A(Eigen::Index(i), 1) = std::log(x[i]);
    b[Eigen::Index(i)] = std::log(y[i]);
  }
  const Eigen::Vector2d ab = A.colPivHouseholderQr().solve(b);
  return {ab[0], ab[1]};
}

}  // namespace

double loglog_slope(std::span<const double> x, std::span<const double> y) { return loglog_fit(x, y).second; }

double power_law_at(std::span<const double> xs, std::span<const double> ys, double x) {
  const auto [a, b] = loglog_fit(xs, ys);
  return std::exp(a + b * std::log(x));
}

CompareReport compare_poses(std::span<const PoseRecord> poses, std::span<const TruthRecord> truth,
                            std::uint64_t max_dt_us) {
  if (truth.empty()) throw Error("no truth records to compare against");
  std::vector<const PoseRecord*> sorted;
  for (const auto& p : poses) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->t_us < b->t_us; });

  CompareReport r;
  r.truth_records = truth.size();
  r.poses = poses.size();
  double pos_ss = 0, rot_ss = 0;
  for (const auto& t : truth) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), t.t_us,
                               [](const PoseRecord* p, std::uint64_t v) { return p->t_us < v; });
    const PoseRecord* best = nullptr;
    std::uint64_t best_dt = std::numeric_limits<std::uint64_t>::max();
    for (auto c : {it, it == sorted.begin() ? it : it - 1}) {
      if (c == sorted.end()) continue;
      const std::uint64_t dt = (*c)->t_us > t.t_us ? (*c)->t_us - t.t_us : t.t_us - (*c)->t_us;
      if (dt < best_dt) {
        best_dt = dt;
        best = *c;
      }
    }
    if (!best || best_dt > max_dt_us) continue;
    ++r.matched;
    const double e = (best->position_m - t.t_wb.translation).norm();
    const double a = rotation_angle(t.t_wb.rotation, best->orientation);
    pos_ss += e * e;
    rot_ss += a * a;
    r.position_max_m = std::max(r.position_max_m, e);
    r.orientation_max_rad = std::max(r.orientation_max_rad, a);
  }
  if (r.matched == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.position_rmse_m = r.position_max_m = r.orientation_rmse_rad = r.orientation_max_rad = nan;
    return r;
  }
  r.position_rmse_m = std::sqrt(pos_ss / double(r.matched));
  r.orientation_rmse_rad = std::sqrt(rot_ss / double(r.matched));
  return r;
}

double NoiseSweepRow::sigma_position() const { return std::sqrt(sigma_x * sigma_x + sigma_y * sigma_y + sigma_z * sigma_z); }

std::vector<NoiseSweepRow> NoiseSweepResult::rows_for(PnpSolver s) const {
  std::vector<NoiseSweepRow> out;
  for (const auto& r : rows)
    if (r.solver == s) out.push_back(r);
  return out;
}

const NoiseSweepFit& NoiseSweepResult::fit_for(PnpSolver s) const {
  for (const auto& f : fits)
    if (f.solver == s) return f;
  throw Error("no fit for solver " + std::string(to_string(s)));
}

NoiseSweepResult run_noise_sweep(const NoiseSweepConfig& config, const std::function<void(double)>& progress) {
  if (config.repeats < 1) throw Error("noise sweep needs at least one repeat");
  NoiseSweepResult out;
  PipelineConfig pc = config.pipeline;
  pc.rig = config.base.rig;
  pc.camera = config.base.camera;
  pc.t_cw = config.base.t_cw;
  pc.record_latency = false;

  struct Centroids {
    std::uint64_t t_us;
    std::map<int, Eigen::Vector2d> uv;
  };

  for (std::size_t di = 0; di < config.distances.size(); ++di) {
    const double d = config.distances[di];
    if (progress) progress(d);
    SimScene scene = config.base;
    scene.trajectory = facing_trajectory(scene.t_cw, d);
    scene.duration_us = config.duration_us;

    std::vector<Centroids> batches;
    for (int k = 0; k < config.repeats; ++k) {
      const std::uint64_t seed = config.seed * 1'000'003 + di * 1000 + std::uint64_t(k);
      const std::vector<Event> events = simulate_events(scene, seed);
      SpanEventSource src(scene.camera.geometry(), events);
      MemoryPoseSink sink;
      pc.seed = seed;
      const PipelineStats st = run_reference(src, pc, sink, [&](const BatchResult& r) {
        if (r.detection.pose_sufficient && r.detection.t_us >= config.warmup_us)
          batches.push_back({r.detection.t_us, r.detection.centroids});
      });
      if (st.error) throw Error("noise sweep run failed: " + *st.error);
    }

    for (PnpSolver solver : config.solvers) {
      std::vector<double> x, y, z;
      std::vector<Eigen::Quaterniond> q;
      for (const auto& b : batches) {
        const auto pose = estimate_pose(b.uv, b.t_us, pc.rig, pc.camera, pc.t_cw, solver);
        if (!pose) continue;
        const Eigen::Vector3d pc_cam = pc.t_cw * pose->position_m;
        x.push_back(pc_cam.x());
        y.push_back(pc_cam.y());
        z.push_back(pc_cam.z());
        q.push_back(pc.t_cw.rotation * pose->orientation);
      }
      NoiseSweepRow row;
      row.distance_m = d;
      row.solver = solver;
      row.samples = x.size();
      if (!x.empty()) {
        row.sigma_x = sample_std(x);
        row.sigma_y = sample_std(y);
        row.sigma_z = sample_std(z);
        row.sigma_rot = rotation_spread(q);
      }
      out.rows.push_back(row);
    }
  }

  for (PnpSolver solver : config.solvers) {
    std::vector<double> d, sz, sr;
    for (const auto& r : out.rows_for(solver)) {
      d.push_back(r.distance_m);
      sz.push_back(r.sigma_z);
      sr.push_back(r.sigma_rot);
    }
    NoiseSweepFit f;
    f.solver = solver;
    if (d.size() >= 2) {
      f.slope_z = loglog_slope(d, sz);
      f.slope_rot = loglog_slope(d, sr);
    }
    out.fits.push_back(f);
  }
  return out;
}

void write_sweep_csv(std::ostream& os, const NoiseSweepResult& r) {
  os << "distance_m,solver,sigma_x_m,sigma_y_m,sigma_z_m,sigma_rot_rad,samples\n";
  const auto old = os.precision(10);
  for (const auto& row : r.rows)
    os << row.distance_m << ',' << to_string(row.solver) << ',' << row.sigma_x << ',' << row.sigma_y << ','
       << row.sigma_z << ',' << row.sigma_rot << ',' << row.samples << '\n';
  for (const auto& f : r.fits)
    os << "# slope," << to_string(f.solver) << ",sigma_z," << f.slope_z << ",sigma_rot," << f.slope_rot << '\n';
  os.precision(old);
}

}  // namespace evmocap
