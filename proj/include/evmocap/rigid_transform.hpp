#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace evmocap {

/// Rigid transform T_AB mapping coordinates in frame B to frame A:
/// p_A = R * p_B + t.
template <typename Scalar_ = double>
struct RigidTransform {
  using Scalar = Scalar_;
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
  using Quat = Eigen::Quaternion<Scalar>;

  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Quat& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}
  RigidTransform(const Mat3& R, const Vec3& t) : rotation(Quat(R).normalized()), translation(t) {}

  static RigidTransform Identity() { return {}; }

  Mat3 matrix3() const { return rotation.toRotationMatrix(); }

  RigidTransform inverse() const {
    Quat qi = rotation.conjugate();
    return RigidTransform(qi, -(qi * translation));
  }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform operator*(const RigidTransform& other) const {
    return RigidTransform(rotation * other.rotation, rotation * other.translation + translation);
  }

  template <typename Other>
  RigidTransform<Other> cast() const {
    return RigidTransform<Other>(rotation.template cast<Other>(), translation.template cast<Other>());
  }
};

using Transform = RigidTransform<double>;

/// Geodesic angle between two rotations, radians in [0, pi].
template <typename Scalar>
Scalar rotation_angle_between(const Eigen::Quaternion<Scalar>& a, const Eigen::Quaternion<Scalar>& b) {
  using std::abs;
  using std::atan2;
  Eigen::Quaternion<Scalar> d = a.conjugate() * b;
  return Scalar(2) * atan2(d.vec().norm(), abs(d.w()));
}

/// Projection of an arbitrary 3x3 matrix onto SO(3) in the Frobenius sense.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> nearest_rotation(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Eigen::JacobiSVD<Eigen::Matrix<Scalar, 3, 3>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix<Scalar, 3, 3> U = svd.matrixU();
  Eigen::Matrix<Scalar, 3, 3> V = svd.matrixV();
  Eigen::Matrix<Scalar, 3, 1> s(1, 1, (U * V.transpose()).determinant() < 0 ? -1 : 1);
  return U * s.asDiagonal() * V.transpose();
}

}  // namespace evmocap
