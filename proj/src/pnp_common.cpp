#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "evmocap/error.hpp"
#include "evmocap/pnp.hpp"
#include "pnp_internal.hpp"

namespace evmocap {

namespace detail {

void check_pnp_input(std::span<const Correspondence> c) {
  if (c.size() < 4)
    throw PnpError(PnpError::Kind::InsufficientCorrespondences,
                   "PnP needs at least 4 correspondences, got " + std::to_string(c.size()));
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& k : c) {
    if (!k.body.allFinite() || !k.normalized.allFinite())
      throw PnpError(PnpError::Kind::DegenerateConfiguration, "PnP input contains non-finite values");
    mean += k.body;
  }
  mean /= double(c.size());
  Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
  for (const auto& k : c) S += (k.body - mean) * (k.body - mean).transpose();
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(S, Eigen::EigenvaluesOnly).eigenvalues();
  if (!(ev[2] > 0) || ev[1] <= 1e-10 * ev[2])
    throw PnpError(PnpError::Kind::DegenerateConfiguration, "PnP body points are collinear");
}

Transform absolute_orientation(std::span<const Eigen::Vector3d> body, std::span<const Eigen::Vector3d> camera) {
  Eigen::Vector3d mb = Eigen::Vector3d::Zero(), mc = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < body.size(); ++i) {
    mb += body[i];
    mc += camera[i];
  }
  mb /= double(body.size());
  mc /= double(body.size());
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < body.size(); ++i) H += (camera[i] - mc) * (body[i] - mb).transpose();
  const Eigen::Matrix3d R = nearest_rotation(H);
  return Transform(R, mc - R * mb);
}

}  // namespace detail

std::string_view to_string(PnpSolver s) { return s == PnpSolver::Sqpnp ? "sqpnp" : "epnp"; }

PnpSolver parse_solver(std::string_view name) {
  if (name == "sqpnp") return PnpSolver::Sqpnp;
  if (name == "epnp") return PnpSolver::Epnp;
  throw Error("unknown PnP solver '" + std::string(name) + "' (expected sqpnp or epnp)");
}

PoseEstimate solve_pnp(std::span<const Correspondence> c, PnpSolver solver) {
  return solver == PnpSolver::Sqpnp ? solve_sqpnp(c) : solve_epnp(c);
}

double pnp_objective(const Transform& t_cb, std::span<const Correspondence> c) {
  const Eigen::Matrix3d R = t_cb.matrix3();
  double sum = 0;
  for (const auto& k : c) {
    const Eigen::Vector3d p = R * k.body + t_cb.translation;
    const double ex = p.x() - k.normalized.x() * p.z();
    const double ey = p.y() - k.normalized.y() * p.z();
    sum += ex * ex + ey * ey;
  }
  return sum;
}

double reprojection_rmse(const Transform& t_cb, std::span<const Correspondence> c) {
  if (c.empty()) return 0;
  const Eigen::Matrix3d R = t_cb.matrix3();
  double sum = 0;
  for (const auto& k : c) {
    const Eigen::Vector3d p = R * k.body + t_cb.translation;
    sum += (p.head<2>() / p.z() - k.normalized).squaredNorm();
  }
  return std::sqrt(sum / double(c.size()));
}

double reprojection_rmse_px(const Transform& t_cb, std::span<const Eigen::Vector3d> body,
                            std::span<const Eigen::Vector2d> pixels, const DsCamera& camera) {
  if (body.empty()) return 0;
  double sum = 0;
  for (std::size_t i = 0; i < body.size(); ++i) sum += (camera.project(t_cb * body[i]) - pixels[i]).squaredNorm();
  return std::sqrt(sum / double(body.size()));
}

Transform refine_pose(const Transform& seed, std::span<const Correspondence> c, int max_iterations) {
  Eigen::Matrix3d R = seed.matrix3();
  Eigen::Vector3d t = seed.translation;
  const auto n = Eigen::Index(c.size());

  auto evaluate = [&](const Eigen::Matrix3d& Rx, const Eigen::Vector3d& tx, Eigen::VectorXd& res,
                      Eigen::MatrixXd* J) {
    res.resize(2 * n);
    if (J) J->resize(2 * n, 6);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& k = c[std::size_t(i)];
      const Eigen::Vector3d rx = Rx * k.body;
      const Eigen::Vector3d p = rx + tx;
      Eigen::Matrix<double, 2, 3> B;
      B << 1, 0, -k.normalized.x(), 0, 1, -k.normalized.y();
      res.segment<2>(2 * i) = B * p;
      if (J) {
        Eigen::Matrix3d skew;
        skew << 0, -rx.z(), rx.y(), rx.z(), 0, -rx.x(), -rx.y(), rx.x(), 0;
        J->block<2, 3>(2 * i, 0) = -B * skew;  // left-multiplied rotation increment
        J->block<2, 3>(2 * i, 3) = B;
      }
    }
    return res.squaredNorm();
  };

  Eigen::VectorXd res, trial_res;
  Eigen::MatrixXd J;
  double cost = evaluate(R, t, res, &J);
  double lambda = 1e-6;
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::Matrix<double, 6, 6> JtJ = J.transpose() * J;
    const Eigen::Matrix<double, 6, 1> g = J.transpose() * res;
    bool improved = false;
    for (int attempt = 0; attempt < 20 && !improved; ++attempt) {
      Eigen::Matrix<double, 6, 6> A = JtJ;
      A.diagonal() += lambda * (JtJ.diagonal().array() + 1e-30).matrix();
      const Eigen::Matrix<double, 6, 1> step = -A.ldlt().solve(g);
      const Eigen::Vector3d w = step.head<3>();
      const Eigen::Matrix3d Rn =
          (w.norm() > 0 ? Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix() : Eigen::Matrix3d::Identity()) *
          R;
      const Eigen::Vector3d tn = t + step.tail<3>();
      const double c2 = evaluate(Rn, tn, trial_res, nullptr);
      if (c2 <= cost) {
        const double step_norm = step.norm();
        R = nearest_rotation(Rn);
        t = tn;
        cost = evaluate(R, t, res, &J);
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        if (step_norm < 1e-15) return Transform(R, t);
      } else {
        lambda *= 10;
      }
    }
    if (!improved) break;
  }
  return Transform(R, t);
}

Transform to_world(const Transform& t_cb, const Transform& t_cw) { return t_cw.inverse() * t_cb; }

double depth_sigma(double z_c, double marker_span_b, double focal_f, double sigma_u) {
  return z_c * z_c * sigma_u / (marker_span_b * focal_f);
}

double marker_span(std::span<const Eigen::Vector3d> body, const Transform& t_cb) {
  double best = 0;
  for (std::size_t i = 0; i < body.size(); ++i)
    for (std::size_t j = i + 1; j < body.size(); ++j) {
      const Eigen::Vector3d d = t_cb.rotation * (body[i] - body[j]);
      best = std::max(best, d.head<2>().norm());
    }
  return best;
}

}  // namespace evmocap
