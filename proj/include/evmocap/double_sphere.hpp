#pragma once

#include <cmath>

#include <Eigen/Core>

#include "evmocap/error.hpp"
#include "evmocap/event.hpp"

namespace evmocap {

/// Double sphere camera model with parameters [fx, fy, cx, cy, xi, alpha].
///
/// A point is projected onto a first unit sphere, shifted by xi along the
/// optical axis, projected onto a second unit sphere and then through a
/// pinhole whose center is moved by alpha / (1 - alpha). With xi = 0 and
/// alpha = 0 the model is an ordinary pinhole. Pixel (i, j) has its center at
/// (u, v) = (i, j).
template <typename Scalar_ = double>
class DoubleSphereCamera {
 public:
  using Scalar = Scalar_;
  using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  using Mat23 = Eigen::Matrix<Scalar, 2, 3>;

  DoubleSphereCamera() = default;
  DoubleSphereCamera(Scalar fx, Scalar fy, Scalar cx, Scalar cy, Scalar xi, Scalar alpha_ds, SensorGeometry geometry)
      : fx_(fx), fy_(fy), cx_(cx), cy_(cy), xi_(xi), alpha_(alpha_ds), geometry_(geometry) {
    if (!(fx > Scalar(0)) || !(fy > Scalar(0))) throw Error("focal lengths must be positive");
    if (!(alpha_ds >= Scalar(0) && alpha_ds < Scalar(1))) throw Error("alpha_ds must lie in [0, 1)");
  }

  /// Pinhole-like camera whose horizontal field of view is `hfov_rad`, with
  /// the principal point at the image center and no distortion.
  static DoubleSphereCamera from_horizontal_fov(Scalar hfov_rad, SensorGeometry geometry) {
    using std::tan;
    const Scalar f = Scalar(geometry.width) / Scalar(2) / tan(hfov_rad / Scalar(2));
    return DoubleSphereCamera(f, f, (Scalar(geometry.width) - 1) / 2, (Scalar(geometry.height) - 1) / 2, Scalar(0),
                              Scalar(0), geometry);
  }

  Scalar fx() const { return fx_; }
  Scalar fy() const { return fy_; }
  Scalar cx() const { return cx_; }
  Scalar cy() const { return cy_; }
  Scalar xi() const { return xi_; }
  Scalar alpha_ds() const { return alpha_; }
  SensorGeometry geometry() const { return geometry_; }
  /// Geometric-mean focal length sqrt(fx * fy).
  Scalar focal() const {
    using std::sqrt;
    return sqrt(fx_ * fy_);
  }

  bool in_projection_domain(const Vec3& p) const {
    using std::sqrt;
    const Scalar w1 = alpha_ <= Scalar(0.5) ? alpha_ / (Scalar(1) - alpha_) : (Scalar(1) - alpha_) / alpha_;
    const Scalar w2 = (w1 + xi_) / sqrt(Scalar(2) * w1 * xi_ + xi_ * xi_ + Scalar(1));
    return p.z() > -w2 * p.norm() && p.norm() > Scalar(0);
  }

  bool in_unprojection_domain(const Vec2& uv) const {
    const Scalar mx = (uv.x() - cx_) / fx_;
    const Scalar my = (uv.y() - cy_) / fy_;
    const Scalar r2 = mx * mx + my * my;
    if (alpha_ > Scalar(0.5) && r2 > Scalar(1) / (Scalar(2) * alpha_ - Scalar(1))) return false;
    const Scalar mz = mz_of(r2);
    return mz * mz + (Scalar(1) - xi_ * xi_) * r2 >= Scalar(0);
  }

  /// Throws ProjectionError outside the valid domain.
  Vec2 project(const Vec3& p, Mat23* d_point = nullptr) const {
    using std::sqrt;
    if (!in_projection_domain(p)) throw ProjectionError("point outside double-sphere projection domain");
    const Scalar x = p.x(), y = p.y(), z = p.z();
    const Scalar xx = x * x, yy = y * y;
    const Scalar d1 = sqrt(xx + yy + z * z);
    const Scalar k = xi_ * d1 + z;
    const Scalar d2 = sqrt(xx + yy + k * k);
    const Scalar den = alpha_ * d2 + (Scalar(1) - alpha_) * k;
    if (!(den > Scalar(0))) throw ProjectionError("point outside double-sphere projection domain");
    const Vec2 uv(fx_ * x / den + cx_, fy_ * y / den + cy_);

    if (d_point) {
      const Vec3 dk = xi_ * p / d1 + Vec3::UnitZ();
      const Vec3 dd2 = (Vec3(x, y, Scalar(0)) + k * dk) / d2;
      const Vec3 dden = alpha_ * dd2 + (Scalar(1) - alpha_) * dk;
      const Scalar inv2 = Scalar(1) / (den * den);
      d_point->row(0) = fx_ * (Vec3::UnitX() * den - x * dden).transpose() * inv2;
      d_point->row(1) = fy_ * (Vec3::UnitY() * den - y * dden).transpose() * inv2;
    }
    return uv;
  }

  /// Unit-norm viewing ray of a pixel. Throws ProjectionError outside the
  /// valid domain.
  Vec3 unproject(const Vec2& uv) const {
    using std::sqrt;
    if (!in_unprojection_domain(uv)) throw ProjectionError("pixel outside double-sphere unprojection domain");
    const Scalar mx = (uv.x() - cx_) / fx_;
    const Scalar my = (uv.y() - cy_) / fy_;
    const Scalar r2 = mx * mx + my * my;
    const Scalar mz = mz_of(r2);
    const Scalar mz2 = mz * mz;
    const Scalar k = (mz * xi_ + sqrt(mz2 + (Scalar(1) - xi_ * xi_) * r2)) / (mz2 + r2);
    Vec3 ray(k * mx, k * my, k * mz - xi_);
    return ray.normalized();
  }

  /// Normalized image coordinates (x/z, y/z) of the pixel's ray.
  Vec2 undistort_to_normalized(const Vec2& uv) const {
    const Vec3 ray = unproject(uv);
    if (!(ray.z() > Scalar(0))) throw ProjectionError("pixel ray does not point in front of the camera");
    return ray.template head<2>() / ray.z();
  }

  template <typename Other>
  DoubleSphereCamera<Other> cast() const {
    return DoubleSphereCamera<Other>(Other(fx_), Other(fy_), Other(cx_), Other(cy_), Other(xi_), Other(alpha_),
                                     geometry_);
  }

 private:
  Scalar mz_of(Scalar r2) const {
    using std::sqrt;
    return (Scalar(1) - alpha_ * alpha_ * r2) /
           (alpha_ * sqrt(Scalar(1) - (Scalar(2) * alpha_ - Scalar(1)) * r2) + Scalar(1) - alpha_);
  }

  Scalar fx_ = 1, fy_ = 1, cx_ = 0, cy_ = 0, xi_ = 0, alpha_ = 0;
  SensorGeometry geometry_;
};

using DsCamera = DoubleSphereCamera<double>;

}  // namespace evmocap
