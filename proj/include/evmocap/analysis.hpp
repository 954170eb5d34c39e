#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Geometry>

#include "evmocap/pipeline.hpp"
#include "evmocap/pnp.hpp"
#include "evmocap/simulator.hpp"

namespace evmocap {

/// Angle of the rotation taking `a` to `b`, in [0, pi].
double rotation_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

/// Quaternion average: the principal eigenvector of sum(q q^T), which is
/// insensitive to the sign of each q.
Eigen::Quaterniond mean_rotation(std::span<const Eigen::Quaterniond> q);

/// Root mean square of the angles between each rotation and their mean.
double rotation_spread(std::span<const Eigen::Quaterniond> q);

/// Sample standard deviation (n - 1).
double sample_std(std::span<const double> v);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// Value at `x` of the power law fitted to (xs, ys) in log-log space.
double power_law_at(std::span<const double> xs, std::span<const double> ys, double x);

struct CompareReport {
  std::size_t truth_records = 0;
  std::size_t poses = 0;
  std::size_t matched = 0;  ///< truth records with a pose within the time tolerance
  double position_rmse_m = 0;
  double position_max_m = 0;
  double orientation_rmse_rad = 0;
  double orientation_max_rad = 0;

  double availability() const { return truth_records ? double(matched) / double(truth_records) : 0.0; }
};

/// Pairs every truth record with the pose nearest in time, if within
/// `max_dt_us`. Throws Error when there is no truth. Errors are NaN when
/// nothing matched.
CompareReport compare_poses(std::span<const PoseRecord> poses, std::span<const TruthRecord> truth,
                            std::uint64_t max_dt_us);

struct NoiseSweepConfig {
  SimScene base = static_scene(1.0);  ///< rig, camera, t_cw and noise; the trajectory is replaced
  PipelineConfig pipeline;            ///< rig, camera and t_cw are taken from `base`
  std::vector<double> distances{0.7, 1, 1.5, 2, 3, 4, 5};
  int repeats = 20;
  std::uint64_t duration_us = 250'000;  ///< per repeat
  std::uint64_t warmup_us = 50'000;     ///< poses before this are ignored
  std::uint64_t seed = 1;
  std::vector<PnpSolver> solvers{PnpSolver::Sqpnp, PnpSolver::Epnp};
};

/// Spread of the static pose at one distance. Positions are in the camera
/// frame, so sigma_z is the depth noise.
struct NoiseSweepRow {
  double distance_m = 0;
  PnpSolver solver = PnpSolver::Sqpnp;
  double sigma_x = 0, sigma_y = 0, sigma_z = 0;
  double sigma_rot = 0;  ///< rad
  std::size_t samples = 0;

  double sigma_position() const;
};

struct NoiseSweepFit {
  PnpSolver solver = PnpSolver::Sqpnp;
  double slope_z = 0;
  double slope_rot = 0;
};

struct NoiseSweepResult {
  std::vector<NoiseSweepRow> rows;
  std::vector<NoiseSweepFit> fits;

  std::vector<NoiseSweepRow> rows_for(PnpSolver s) const;
  const NoiseSweepFit& fit_for(PnpSolver s) const;
};

/// Simulates `repeats` static scenes per distance, tracks each once and
/// solves every batch's centroids with every solver, so the solvers see
/// identical input.
NoiseSweepResult run_noise_sweep(const NoiseSweepConfig& config,
                                 const std::function<void(double distance_m)>& progress = {});

/// Rows as `distance_m,solver,sigma_x_m,sigma_y_m,sigma_z_m,sigma_rot_rad,samples`, then one
/// `# slope` comment line per solver.
void write_sweep_csv(std::ostream& os, const NoiseSweepResult& r);

}  // namespace evmocap
