#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "evmocap/event.hpp"

namespace evmocap {

/// Noise levels are per nominal batch.
struct ParticleFilterConfig {
  int particles = 200;
  double process_pos_px = 0.5;
  double process_vel_px = 0.2;
  double measurement_px = 0.5;
  double gate_sigma = 4;
  double nominal_batch_us = 2500;
};

/// Constant-velocity particle filter over (u, v, du, dv) for one LED
/// centroid. Velocities are in pixels per nominal batch.
struct LedTrack {
  int led_id = 0;
  std::vector<Eigen::Vector4d> particles;
  std::vector<double> weights;
  std::uint64_t last_update_us = 0;  ///< time of the last observation
  std::uint64_t last_predict_us = 0;
  int observations = 0;
  Eigen::Vector2d last_observation = Eigen::Vector2d::Zero();
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  bool reinitialized = false;
};

/// New track with all particles at the observation and zero velocity.
LedTrack make_track(int led_id, const Eigen::Vector2d& observation, std::uint64_t t_us,
                    const ParticleFilterConfig& cfg);

/// Predict by dt_us under constant velocity plus process noise, then, with an
/// observation, weight by an isotropic Gaussian likelihood and resample
/// systematically. The second observation of a track sets the velocity of
/// all particles from the displacement. An observation outside the gate
/// (gate_sigma of the predicted spread) or with degenerate weights
/// reinitializes the track at the observation and sets `reinitialized`.
void track_update(LedTrack& track, const std::optional<Eigen::Vector2d>& observation, std::uint64_t dt_us,
                  const ParticleFilterConfig& cfg, std::mt19937_64& rng, SensorGeometry geometry);

}  // namespace evmocap
