// EPnP: every body point is a barycentric combination of a few control
// points; the camera-frame control points lie in the kernel of a 2n x 3k
// system and are recovered from the known inter-control-point distances.

#include <array>
#include <limits>
#include <optional>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

#include "evmocap/error.hpp"
#include "evmocap/pnp.hpp"
#include "pnp_internal.hpp"

namespace evmocap {

namespace {

constexpr double kPlanarEigenRatio = 1e-8;
constexpr int kGaussNewtonIterations = 5;

struct ControlFrame {
  int k = 4;                                  // number of control points
  std::array<Eigen::Vector3d, 4> world;       // control points, body frame
  std::vector<Eigen::Vector4d> alphas;        // barycentric coordinates (first k used)
};

ControlFrame choose_control_points(std::span<const Correspondence> c) {
  const double n = double(c.size());
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& k : c) mean += k.body;
  mean /= n;
  Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
  for (const auto& k : c) S += (k.body - mean) * (k.body - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(S);
  const Eigen::Vector3d ev = es.eigenvalues();  // ascending
  const Eigen::Matrix3d V = es.eigenvectors();

  ControlFrame f;
  f.k = ev[0] < kPlanarEigenRatio * ev[2] ? 3 : 4;
  f.world[0] = mean;
  // Largest principal directions first.
  for (int j = 1; j < f.k; ++j) f.world[j] = mean + std::sqrt(ev[3 - j] / n) * V.col(3 - j);

  const int m = f.k - 1;
  Eigen::Matrix<double, 3, Eigen::Dynamic> CC(3, m);
  for (int j = 0; j < m; ++j) CC.col(j) = f.world[j + 1] - mean;
  const Eigen::MatrixXd pinv = (CC.transpose() * CC).inverse() * CC.transpose();
  f.alphas.reserve(c.size());
  for (const auto& k : c) {
    Eigen::VectorXd a = pinv * (k.body - mean);
    Eigen::Vector4d alpha = Eigen::Vector4d::Zero();
    alpha[0] = 1 - a.sum();
    for (int j = 0; j < m; ++j) alpha[j + 1] = a[j];
    f.alphas.push_back(alpha);
  }
  return f;
}

// Products of kernel coefficients in the order b11, b12, b22, b13, b23, b33,
// b14, b24, b34, b44 (truncated for fewer kernel vectors).
int product_count(int kernel_dim) { return kernel_dim * (kernel_dim + 1) / 2; }

std::vector<std::pair<int, int>> product_pairs(int kernel_dim) {
  std::vector<std::pair<int, int>> p;
  for (int b = 0; b < kernel_dim; ++b)
    for (int a = 0; a <= b; ++a) p.emplace_back(a, b);
  return p;
}

class EpnpProblem {
 public:
  explicit EpnpProblem(std::span<const Correspondence> c) : c_(c), frame_(choose_control_points(c)) {
    const int k = frame_.k;
    const int cols = 3 * k;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * Eigen::Index(c.size()), cols);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double u = c[i].normalized.x(), v = c[i].normalized.y();
      for (int j = 0; j < k; ++j) {
        const double a = frame_.alphas[i][j];
        M(2 * i, 3 * j) = a;
        M(2 * i, 3 * j + 2) = -a * u;
        M(2 * i + 1, 3 * j + 1) = a;
        M(2 * i + 1, 3 * j + 2) = -a * v;
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M.transpose() * M);
    kernel_ = es.eigenvectors();  // ascending eigenvalues: column 0 is the best kernel vector

    // Constraints: one per pair of control points.
    for (int a = 0; a < k; ++a)
      for (int b = a + 1; b < k; ++b) pairs_.emplace_back(a, b);
    const int kernel_dim = k == 4 ? 4 : 3;
    const auto prods = product_pairs(kernel_dim);
    L_.resize(Eigen::Index(pairs_.size()), product_count(kernel_dim));
    rho_.resize(Eigen::Index(pairs_.size()));
    for (std::size_t r = 0; r < pairs_.size(); ++r) {
      const auto [a, b] = pairs_[r];
      std::array<Eigen::Vector3d, 4> dv;
      for (int q = 0; q < kernel_dim; ++q)
        dv[q] = kernel_.col(q).segment<3>(3 * a) - kernel_.col(q).segment<3>(3 * b);
      for (std::size_t p = 0; p < prods.size(); ++p) {
        const auto [qa, qb] = prods[p];
        L_(Eigen::Index(r), Eigen::Index(p)) = (qa == qb ? 1.0 : 2.0) * dv[qa].dot(dv[qb]);
      }
      rho_[Eigen::Index(r)] = (frame_.world[a] - frame_.world[b]).squaredNorm();
    }
    kernel_dim_ = kernel_dim;
  }

  PoseEstimate solve() {
    PoseEstimate best;
    double best_err = std::numeric_limits<double>::infinity();
    auto keep = [&](Eigen::Vector4d betas) {
      gauss_newton(betas);
      Transform T;
      if (!pose_from_betas(betas, T)) return;
      const double err = reprojection_rmse(T, c_);
      if (err < best_err) {
        best_err = err;
        best.t_cb = T;
      }
    };
    for (int n = 1; n <= kernel_dim_; ++n) {
      if (auto b = initial_betas(n)) keep(*b);
    }
    if (!std::isfinite(best_err)) throw PnpError(PnpError::Kind::NumericalFailure, "EPnP: no valid solution");
    return best;
  }

 private:
  // Linearized initial guesses using the first n kernel vectors.
  std::optional<Eigen::Vector4d> initial_betas(int n) const {
    Eigen::Vector4d betas = Eigen::Vector4d::Zero();
    if (n == 1) {
      const Eigen::VectorXd l = L_.col(0);
      const double b11 = l.dot(rho_) / l.squaredNorm();
      betas[0] = std::sqrt(std::abs(b11));
      return betas;
    }
    if (kernel_dim_ == 4 && n == 4) {
      // b11, b12, b13, b14
      Eigen::MatrixXd A(L_.rows(), 4);
      A << L_.col(0), L_.col(1), L_.col(3), L_.col(6);
      const Eigen::Vector4d b = A.colPivHouseholderQr().solve(rho_);
      if (b[0] < 0) {
        betas[0] = std::sqrt(-b[0]);
        for (int q = 1; q < 4; ++q) betas[q] = -b[q] / betas[0];
      } else {
        betas[0] = std::sqrt(b[0]);
        for (int q = 1; q < 4; ++q) betas[q] = b[q] / betas[0];
      }
      return betas;
    }
    if (n == 2) {
      // b11, b12, b22
      Eigen::MatrixXd A = L_.leftCols(3);
      const Eigen::Vector3d b = A.colPivHouseholderQr().solve(rho_);
      if (b[0] < 0) {
        betas[0] = std::sqrt(-b[0]);
        betas[1] = b[2] < 0 ? std::sqrt(-b[2]) : 0.0;
      } else {
        betas[0] = std::sqrt(b[0]);
        betas[1] = b[2] > 0 ? std::sqrt(b[2]) : 0.0;
      }
      if (b[1] < 0) betas[0] = -betas[0];
      return betas;
    }
    if (kernel_dim_ == 4 && n == 3) {
      // b11, b12, b22, b13, b23
      Eigen::MatrixXd A = L_.leftCols(5);
      const Eigen::VectorXd b = A.colPivHouseholderQr().solve(rho_);
      if (b[0] < 0) {
        betas[0] = std::sqrt(-b[0]);
        betas[1] = b[2] < 0 ? std::sqrt(-b[2]) : 0.0;
      } else {
        betas[0] = std::sqrt(b[0]);
        betas[1] = b[2] > 0 ? std::sqrt(b[2]) : 0.0;
      }
      if (b[1] < 0) betas[0] = -betas[0];
      betas[2] = b[3] / betas[0];
      return betas;
    }
    return std::nullopt;
  }

  void gauss_newton(Eigen::Vector4d& betas) const {
    const auto prods = product_pairs(kernel_dim_);
    const Eigen::Index rows = L_.rows();
    for (int it = 0; it < kGaussNewtonIterations; ++it) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, kernel_dim_);
      Eigen::VectorXd r(rows);
      for (Eigen::Index i = 0; i < rows; ++i) {
        double value = 0;
        for (std::size_t p = 0; p < prods.size(); ++p) {
          const auto [qa, qb] = prods[p];
          const double l = L_(i, Eigen::Index(p));
          value += l * betas[qa] * betas[qb];
          if (qa == qb) {
            A(i, qa) += 2 * l * betas[qa];
          } else {
            A(i, qa) += l * betas[qb];
            A(i, qb) += l * betas[qa];
          }
        }
        r[i] = rho_[i] - value;
      }
      const Eigen::VectorXd dx = A.colPivHouseholderQr().solve(r);
      betas.head(kernel_dim_) += dx;
    }
  }

  bool pose_from_betas(const Eigen::Vector4d& betas, Transform& out) const {
    const int k = frame_.k;
    Eigen::VectorXd ccs = Eigen::VectorXd::Zero(3 * k);
    for (int q = 0; q < kernel_dim_; ++q) ccs += betas[q] * kernel_.col(q);

    std::vector<Eigen::Vector3d> pcs(c_.size()), pws(c_.size());
    for (std::size_t i = 0; i < c_.size(); ++i) {
      Eigen::Vector3d p = Eigen::Vector3d::Zero();
      for (int j = 0; j < k; ++j) p += frame_.alphas[i][j] * ccs.segment<3>(3 * j);
      pcs[i] = p;
      pws[i] = c_[i].body;
    }
    if (pcs[0].z() < 0)
      for (auto& p : pcs) p = -p;
    if (!pcs[0].allFinite()) return false;
    out = detail::absolute_orientation(pws, pcs);
    return out.translation.allFinite();
  }

  std::span<const Correspondence> c_;
  ControlFrame frame_;
  Eigen::MatrixXd kernel_;
  std::vector<std::pair<int, int>> pairs_;
  Eigen::MatrixXd L_;
  Eigen::VectorXd rho_;
  int kernel_dim_ = 4;
};

}  // namespace

PoseEstimate solve_epnp(std::span<const Correspondence> c) {
  detail::check_pnp_input(c);
  EpnpProblem problem(c);
  PoseEstimate out = problem.solve();
  out.solver = PnpSolver::Epnp;
  out.objective = pnp_objective(out.t_cb, c);
  out.rmse_normalized = reprojection_rmse(out.t_cb, c);
  return out;
}

}  // namespace evmocap
