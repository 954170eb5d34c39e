#include "evmocap/particle_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/LU>

namespace evmocap {

namespace {

constexpr double kMinSigma = 1e-9;

void summarize(LedTrack& t, SensorGeometry g) {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  for (std::size_t i = 0; i < t.particles.size(); ++i) mean += t.weights[i] * t.particles[i];
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < t.particles.size(); ++i) {
    const Eigen::Vector2d d = t.particles[i].head<2>() - mean.head<2>();
    cov += t.weights[i] * d * d.transpose();
  }
  t.centroid = mean.head<2>();
  t.velocity = mean.tail<2>();
  t.covariance = cov;
  if (g.valid()) {
    t.centroid.x() = std::clamp(t.centroid.x(), 0.0, double(g.width - 1));
    t.centroid.y() = std::clamp(t.centroid.y(), 0.0, double(g.height - 1));
  }
}

void seed_particles(LedTrack& t, const Eigen::Vector2d& pos, const Eigen::Vector2d& vel, const ParticleFilterConfig& cfg,
                    std::mt19937_64* rng) {
  const std::size_t n = std::size_t(std::max(cfg.particles, 1));
  t.particles.assign(n, Eigen::Vector4d(pos.x(), pos.y(), vel.x(), vel.y()));
  t.weights.assign(n, 1.0 / double(n));
  if (!rng) return;
  std::normal_distribution<double> z(0, 1);
  for (auto& p : t.particles) {
    p.x() += cfg.measurement_px * z(*rng);
    p.y() += cfg.measurement_px * z(*rng);
    p.z() += cfg.process_vel_px * z(*rng);
    p.w() += cfg.process_vel_px * z(*rng);
  }
}

void systematic_resample(LedTrack& t, std::mt19937_64& rng) {
  const std::size_t n = t.particles.size();
  std::uniform_real_distribution<double> u(0, 1.0 / double(n));
  const double start = u(rng);
  std::vector<Eigen::Vector4d> out;
  out.reserve(n);
  double cum = t.weights[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = start + double(i) / double(n);
    while (target > cum && j + 1 < n) cum += t.weights[++j];
    out.push_back(t.particles[j]);
  }
  t.particles = std::move(out);
  t.weights.assign(n, 1.0 / double(n));
}

}  // namespace

LedTrack make_track(int led_id, const Eigen::Vector2d& observation, std::uint64_t t_us,
                    const ParticleFilterConfig& cfg) {
  LedTrack t;
  t.led_id = led_id;
  seed_particles(t, observation, Eigen::Vector2d::Zero(), cfg, nullptr);
  t.last_update_us = t.last_predict_us = t_us;
  t.observations = 1;
  t.last_observation = observation;
  summarize(t, {});
  return t;
}

void track_update(LedTrack& track, const std::optional<Eigen::Vector2d>& observation, std::uint64_t dt_us,
                  const ParticleFilterConfig& cfg, std::mt19937_64& rng, SensorGeometry geometry) {
  const double steps = double(dt_us) / cfg.nominal_batch_us;
  const double sp = cfg.process_pos_px * std::sqrt(steps);
  const double sv = cfg.process_vel_px * std::sqrt(steps);
  std::normal_distribution<double> z(0, 1);
  for (auto& p : track.particles) {
    p.head<2>() += steps * p.tail<2>();
    if (sp > 0) {
      p.x() += sp * z(rng);
      p.y() += sp * z(rng);
    }
    if (sv > 0) {
      p.z() += sv * z(rng);
      p.w() += sv * z(rng);
    }
  }
  track.last_predict_us += dt_us;
  track.reinitialized = false;
  summarize(track, geometry);
  if (!observation) return;

  const Eigen::Vector2d& obs = *observation;
  const std::uint64_t now = track.last_predict_us;

  if (track.observations == 1) {
    // Two-point start: velocity from the displacement since the first sighting.
    const double since = double(now - track.last_update_us) / cfg.nominal_batch_us;
    const Eigen::Vector2d vel = since > 0 ? Eigen::Vector2d((obs - track.last_observation) / since)
                                          : Eigen::Vector2d::Zero();
    seed_particles(track, obs, vel, cfg, &rng);
  } else {
    const double sm = std::max(cfg.measurement_px, kMinSigma);
    const Eigen::Matrix2d S = track.covariance + Eigen::Matrix2d::Identity() * (sm * sm + kMinSigma);
    const Eigen::Vector2d r = obs - track.centroid;
    const double m2 = r.dot(S.inverse() * r);

    std::vector<double> logw(track.particles.size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < track.particles.size(); ++i) {
      logw[i] = -(track.particles[i].head<2>() - obs).squaredNorm() / (2 * sm * sm);
      best = std::max(best, logw[i]);
    }
    // exp(-700) is the edge of double range: weights have all vanished.
    const bool degenerate = !(best > -700);
    if (degenerate || m2 > cfg.gate_sigma * cfg.gate_sigma) {
      seed_particles(track, obs, Eigen::Vector2d::Zero(), cfg, &rng);
      track.observations = 0;
      track.reinitialized = true;
    } else {
      double sum = 0;
      for (std::size_t i = 0; i < logw.size(); ++i) sum += (track.weights[i] = std::exp(logw[i] - best));
      for (auto& w : track.weights) w /= sum;
      systematic_resample(track, rng);
    }
  }
  ++track.observations;
  track.last_update_us = now;
  track.last_observation = obs;
  summarize(track, geometry);
}

}  // namespace evmocap
