// SQPnP: the PnP objective is rewritten as r' * Omega * r over the row-major
// vectorized rotation r (translation eliminated in closed form), then
// minimized with SQP steps on the orthogonality constraints, started from the
// nearest rotations of the eigenvectors of Omega with the smallest
// eigenvalues.

#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

#include "evmocap/error.hpp"
#include "evmocap/pnp.hpp"
#include "pnp_internal.hpp"

namespace evmocap {

namespace {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat39 = Eigen::Matrix<double, 3, 9>;

Eigen::Matrix3d as_matrix(const Vec9& r) {
  Eigen::Matrix3d R;
  R << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
  return R;
}

Vec9 as_vector(const Eigen::Matrix3d& R) {
  Vec9 r;
  r << R(0, 0), R(0, 1), R(0, 2), R(1, 0), R(1, 1), R(1, 2), R(2, 0), R(2, 1), R(2, 2);
  return r;
}

double orthogonality_sq_error(const Vec9& r) {
  const auto r1 = r.segment<3>(0), r2 = r.segment<3>(3), r3 = r.segment<3>(6);
  const double a = r1.squaredNorm() - 1, b = r2.squaredNorm() - 1, c = r3.squaredNorm() - 1;
  const double d = r1.dot(r2), e = r2.dot(r3), f = r1.dot(r3);
  return a * a + b * b + c * c + 2 * (d * d + e * e + f * f);
}

Vec9 nearest_rotation_vec(const Vec9& e) { return as_vector(nearest_rotation(as_matrix(e))); }

struct Candidate {
  Vec9 r_hat;
  Eigen::Vector3d t;
  double sq_error = std::numeric_limits<double>::infinity();
  bool converged = true;
};

struct SqpResult {
  Vec9 r;
  bool converged;
};

class SqpnpProblem {
 public:
  SqpnpProblem(std::span<const Correspondence> c, const SqpnpParams& params) : c_(c), params_(params) {
    mean_.setZero();
    for (const auto& k : c) mean_ += k.body;
    mean_ /= double(c.size());

    Omega_.setZero();
    Mat39 QA = Mat39::Zero();
    Eigen::Matrix3d Qsum = Eigen::Matrix3d::Zero();
    for (const auto& k : c) {
      const Eigen::Vector3d M = k.body - mean_;
      const double x = k.normalized.x(), y = k.normalized.y();
      Eigen::Matrix3d Q;
      Q << 1, 0, -x, 0, 1, -y, -x, -y, x * x + y * y;
      Mat39 A = Mat39::Zero();
      A.block<1, 3>(0, 0) = M.transpose();
      A.block<1, 3>(1, 3) = M.transpose();
      A.block<1, 3>(2, 6) = M.transpose();
      const Mat39 QAi = Q * A;
      Omega_ += A.transpose() * QAi;
      QA += QAi;
      Qsum += Q;
    }
    Eigen::FullPivLU<Eigen::Matrix3d> lu(Qsum);
    if (!lu.isInvertible()) throw PnpError(PnpError::Kind::DegenerateConfiguration, "SQPnP: singular projection sum");
    P_ = -lu.inverse() * QA;
    Omega_ += QA.transpose() * P_;
    Omega_ = (0.5 * (Omega_ + Omega_.transpose())).eval();
  }

  Candidate solve() {
    Eigen::SelfAdjointEigenSolver<Mat9> es(Omega_);
    if (es.info() != Eigen::Success) throw PnpError(PnpError::Kind::NumericalFailure, "SQPnP: eigensolver failed");
    const Vec9 lambda = es.eigenvalues();  // ascending
    const Mat9 U = es.eigenvectors();

    int null_dim = 0;
    while (null_dim < 9 && lambda[null_dim] < params_.rank_tolerance) ++null_dim;
    if (null_dim > 6) throw PnpError(PnpError::Kind::DegenerateConfiguration, "SQPnP: null space of Omega too large");

    Candidate best;
    const int eigen_points = std::max(null_dim, 1);
    for (int i = 0; i < eigen_points; ++i) {
      const Vec9 e = std::sqrt(3.0) * U.col(i);
      if (orthogonality_sq_error(e) < params_.orthogonality_squared_error_threshold) {
        // Already close to a rotation; SQP only polishes it.
        consider(run_sqp(as_matrix(e).determinant() < 0 ? Vec9(-e) : e), best);
      } else {
        consider(run_sqp(nearest_rotation_vec(e)), best);
        consider(run_sqp(nearest_rotation_vec(-e)), best);
      }
    }
    for (int a = eigen_points; a < 9 && best.sq_error > 3 * lambda[a]; ++a) {
      const Vec9 e = U.col(a);
      consider(run_sqp(nearest_rotation_vec(e)), best);
      consider(run_sqp(nearest_rotation_vec(-e)), best);
    }
    if (!std::isfinite(best.sq_error))
      throw PnpError(PnpError::Kind::NumericalFailure, "SQPnP: no solution with positive depth");
    return best;
  }

  const Eigen::Vector3d& mean() const { return mean_; }
  Eigen::Vector3d translation(const Vec9& r) const { return P_ * r; }

 private:
  // A run that stops at the iteration cap may still be off the rotation
  // manifold, where its objective is not comparable; it is projected first.
  SqpResult run_sqp(const Vec9& r0) const {
    Vec9 r = r0;
    double delta_sq = std::numeric_limits<double>::max();
    for (int step = 0; delta_sq > params_.sqp_squared_tolerance && step < params_.sqp_max_iterations; ++step) {
      const Vec9 delta = sqp_step(r);
      r += delta;
      delta_sq = delta.squaredNorm();
    }
    const bool converged = delta_sq <= params_.sqp_squared_tolerance;
    double det = as_matrix(r).determinant();
    if (det < 0) {
      r = -r;
      det = -det;
    }
    if (!converged || det > params_.sqp_det_threshold) r = nearest_rotation_vec(r);
    return {r, converged};
  }

  // Solves min (r + d)' Omega (r + d) subject to the linearized orthogonality
  // constraints J d = g, splitting d into row-space and null-space parts of J.
  // The row space is orthonormalized row by row, so J H is lower triangular.
  Vec9 sqp_step(const Vec9& r) const {
    const Eigen::Vector3d r1 = r.segment<3>(0), r2 = r.segment<3>(3), r3 = r.segment<3>(6);
    Eigen::Matrix<double, 9, 6> Jt = Eigen::Matrix<double, 9, 6>::Zero();
    Jt.col(0).segment<3>(0) = 2 * r1;
    Jt.col(1).segment<3>(3) = 2 * r2;
    Jt.col(2).segment<3>(6) = 2 * r3;
    Jt.col(3) << r2, r1, Eigen::Vector3d::Zero();
    Jt.col(4) << Eigen::Vector3d::Zero(), r3, r2;
    Jt.col(5) << r3, Eigen::Vector3d::Zero(), r1;

    Eigen::Matrix<double, 6, 1> g;
    g << 1 - r1.squaredNorm(), 1 - r2.squaredNorm(), 1 - r3.squaredNorm(), -r1.dot(r2), -r2.dot(r3), -r1.dot(r3);

    Eigen::Matrix<double, 9, 6> H;
    Eigen::Matrix<double, 6, 6> JH = Eigen::Matrix<double, 6, 6>::Zero();
    for (int k = 0; k < 6; ++k) {
      Vec9 h = Jt.col(k);
      for (int i = 0; i < k; ++i) {
        JH(k, i) = Jt.col(k).dot(H.col(i));
        h -= JH(k, i) * H.col(i);
      }
      const double n = h.norm();
      if (n < 1e-10) return kkt_step(r, Jt, g);
      H.col(k) = h / n;
      JH(k, k) = n;
    }
    const Eigen::Matrix<double, 6, 1> x = JH.triangularView<Eigen::Lower>().solve(g);
    Vec9 delta = H * x;

    // Null space: complete the basis with the unit vectors least covered by H.
    Eigen::Matrix<double, 9, 3> N;
    Vec9 residual = (Mat9::Identity() - H * H.transpose()).colwise().squaredNorm().transpose();
    for (int k = 0; k < 3; ++k) {
      int best = 0;
      residual.maxCoeff(&best);
      residual[best] = -1;
      Vec9 v = Vec9::Unit(best);
      v -= H * (H.transpose() * v);
      for (int i = 0; i < k; ++i) v -= N.col(i).dot(v) * N.col(i);
      N.col(k) = v.normalized();
    }

    const Eigen::Matrix<double, 3, 9> NtOmega = N.transpose() * Omega_;
    const Eigen::Matrix3d W = NtOmega * N;
    const Eigen::Vector3d y = -W.ldlt().solve(NtOmega * (r + delta));
    delta += N * y;
    return delta;
  }

  // Fallback when J loses rank: the full KKT system.
  Vec9 kkt_step(const Vec9& r, const Eigen::Matrix<double, 9, 6>& Jt, const Eigen::Matrix<double, 6, 1>& g) const {
    Eigen::Matrix<double, 15, 15> K = Eigen::Matrix<double, 15, 15>::Zero();
    K.topLeftCorner<9, 9>() = Omega_;
    K.topRightCorner<9, 6>() = Jt;
    K.bottomLeftCorner<6, 9>() = Jt.transpose();
    Eigen::Matrix<double, 15, 1> rhs;
    rhs << -Omega_ * r, g;
    return K.fullPivLu().solve(rhs).head<9>();
  }

  void consider(const SqpResult& s, Candidate& best) const {
    const Vec9& r_hat = s.r;
    const Eigen::Vector3d t = P_ * r_hat;
    if (!positive_depth(r_hat, t)) return;
    const double err = r_hat.dot(Omega_ * r_hat);
    if (err < best.sq_error) {
      best.sq_error = err;
      best.r_hat = r_hat;
      best.t = t;
      best.converged = s.converged;
    }
  }

  bool positive_depth(const Vec9& r, const Eigen::Vector3d& t) const {
    // Centered points: the mean maps to t itself.
    if (t.z() > 0) return true;
    int positive = 0;
    for (const auto& k : c_) positive += (r.segment<3>(6).dot(k.body - mean_) + t.z()) > 0 ? 1 : 0;
    return 2 * positive > int(c_.size());
  }

  std::span<const Correspondence> c_;
  SqpnpParams params_;
  Eigen::Vector3d mean_;
  Mat9 Omega_;
  Mat39 P_;
};

}  // namespace

PoseEstimate solve_sqpnp(std::span<const Correspondence> c, const SqpnpParams& params) {
  detail::check_pnp_input(c);
  SqpnpProblem problem(c, params);
  const Candidate best = problem.solve();

  const Eigen::Matrix3d R_raw = as_matrix(best.r_hat);
  const Eigen::Matrix3d R = nearest_rotation(R_raw);
  if (best.converged && (R - R_raw).norm() > 1e-6)
    throw PnpError(PnpError::Kind::NumericalFailure, "SQPnP: rotation estimate drifted from SO(3) by " + std::to_string((R - R_raw).norm()));

  PoseEstimate out;
  out.solver = PnpSolver::Sqpnp;
  // t was computed for centered points; undo the centering.
  out.t_cb = Transform(R, problem.translation(as_vector(R)) - R * problem.mean());
  out.objective = pnp_objective(out.t_cb, c);
  out.rmse_normalized = reprojection_rmse(out.t_cb, c);
  return out;
}

}  // namespace evmocap
