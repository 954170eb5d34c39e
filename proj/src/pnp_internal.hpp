#pragma once

#include <span>

#include <Eigen/Core>

#include "evmocap/pnp.hpp"

namespace evmocap::detail {

/// Throws PnpError for fewer than 4 points, non-finite values or a collinear
/// body layout.
void check_pnp_input(std::span<const Correspondence> c);

/// Closed-form R, t aligning `body` onto `camera` points (least squares).
Transform absolute_orientation(std::span<const Eigen::Vector3d> body, std::span<const Eigen::Vector3d> camera);

}  // namespace evmocap::detail
