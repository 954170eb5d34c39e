#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "evmocap/double_sphere.hpp"
#include "evmocap/rigid_transform.hpp"

namespace evmocap {

/// A body-frame marker position and its observation in normalized image
/// coordinates (x/z, y/z).
struct Correspondence {
  Eigen::Vector3d body = Eigen::Vector3d::Zero();
  Eigen::Vector2d normalized = Eigen::Vector2d::Zero();
};

enum class PnpSolver { Sqpnp, Epnp };

std::string_view to_string(PnpSolver s);
PnpSolver parse_solver(std::string_view name);

/// Body-to-camera pose T_CB and quality metadata.
struct PoseEstimate {
  Transform t_cb;
  double objective = 0;        ///< pnp_objective() of the solution
  double rmse_normalized = 0;  ///< reprojection RMSE, normalized units
  double rmse_px = 0;          ///< filled in when pixels are known
  PnpSolver solver = PnpSolver::Sqpnp;
  std::uint64_t t_us = 0;
};

struct SqpnpParams {
  double rank_tolerance = 1e-7;
  double sqp_squared_tolerance = 1e-10;
  double sqp_det_threshold = 1.001;
  double orthogonality_squared_error_threshold = 1e-8;
  int sqp_max_iterations = 15;
};

/// Globally optimal PnP via sequential quadratic programming over the
/// rotation constraints. Minimizes pnp_objective(). Needs >= 4 points, not all
/// collinear.
PoseEstimate solve_sqpnp(std::span<const Correspondence> c, const SqpnpParams& params = {});

/// Efficient PnP with four (or, for planar layouts, three) control points and
/// Gauss-Newton on the kernel coefficients. No pose refinement.
PoseEstimate solve_epnp(std::span<const Correspondence> c);

PoseEstimate solve_pnp(std::span<const Correspondence> c, PnpSolver solver);

/// Sum over points of |B_i (R X_i + t)|^2 with B_i = [1 0 -x_i; 0 1 -y_i]:
/// the squared normalized reprojection error weighted by squared depth.
double pnp_objective(const Transform& t_cb, std::span<const Correspondence> c);

/// Root mean square of the per-point normalized reprojection error.
double reprojection_rmse(const Transform& t_cb, std::span<const Correspondence> c);

/// Same, in pixels, against the measured pixel positions.
double reprojection_rmse_px(const Transform& t_cb, std::span<const Eigen::Vector3d> body,
                            std::span<const Eigen::Vector2d> pixels, const DsCamera& camera);

/// Levenberg-Marquardt minimization of pnp_objective() from a seed pose.
/// Used as an independent local-optimality oracle, not in the tracking path.
Transform refine_pose(const Transform& seed, std::span<const Correspondence> c, int max_iterations = 200);

/// World pose of the body, T_WB = inverse(T_CW) * T_CB.
Transform to_world(const Transform& t_cb, const Transform& t_cw);

/// Depth standard deviation z^2 * sigma_u / (b * f) of a nearly flat marker
/// arrangement of span b seen at distance z with focal length f (px) and
/// centroid noise sigma_u (px).
double depth_sigma(double z_c, double marker_span_b, double focal_f, double sigma_u);

/// Largest pairwise distance between markers, measured perpendicular to the
/// optical axis, for markers placed with T_CB.
double marker_span(std::span<const Eigen::Vector3d> body, const Transform& t_cb);

}  // namespace evmocap
