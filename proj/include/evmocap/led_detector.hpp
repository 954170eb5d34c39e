#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evmocap/led_rig.hpp"
#include "evmocap/particle_filter.hpp"
#include "evmocap/sdtv.hpp"

namespace evmocap {

struct DetectorConfig {
  double beta = 0.8;             ///< fraction of transitions expected to fire
  double match_tol_us = 25;      ///< LED association tolerance on the period
  double link_tol_us = 25;       ///< period difference allowed between clustered neighbors
  std::size_t min_cluster = 2;
  std::size_t max_cluster = 500;
  double std_floor_us = 25;      ///< pixels with period std above max(floor, rel * mean) are rejected
  double std_rel = 0.05;
  std::uint64_t stale_us = 50000;
  std::size_t min_leds_for_pose = 4;
  ParticleFilterConfig filter;
};

struct PeriodStats {
  std::uint32_t pixel = 0;
  double mean = 0;
  double median = 0;
  double stddev = 0;
  std::uint32_t samples = 0;
};

struct Cluster {
  std::vector<std::uint32_t> pixels;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();  ///< (u, v) pixel coordinates
  double period_us = 0;
  std::uint32_t samples = 0;
};

struct Association {
  std::map<int, Cluster> matched;  ///< LED id -> cluster
  std::size_t unmatched = 0;
  std::size_t ties_discarded = 0;
};

/// Minimum batch event count of an LED pixel: ceil(beta * 2 * t * f_min).
std::uint32_t rate_threshold(std::uint64_t batch_us, double f_min_hz, double beta = 0.8);

/// Pixels with at least `threshold` events, in ascending pixel order.
std::vector<std::uint32_t> candidate_pixels(const CountFrame& counts, std::uint32_t threshold);

/// Mean, median and standard deviation of the periods of one stack. False
/// when the stack holds no complete period.
bool compute_period_stats(std::span<const std::int16_t> stack, PeriodStats& out);

bool period_rejected(const PeriodStats& s, const DetectorConfig& cfg);

/// Statistics of the snapshotted pixels, without pixels that have no complete
/// period, are stale, or whose period scatter is too large.
std::vector<PeriodStats> period_stats(const StackSnapshot& stacks, const DetectorConfig& cfg);
std::vector<PeriodStats> period_stats(const Sdtv& sdtv, std::span<const std::uint32_t> pixels,
                                      const DetectorConfig& cfg);

/// 8-connected components whose linked neighbors differ in mean period by at
/// most `link_tol_us`; components outside [min_size, max_size] are dropped.
/// Centroid and period are weighted by the per-pixel period sample count.
std::vector<Cluster> cluster_candidates(std::span<const PeriodStats> stats, SensorGeometry geometry,
                                        double link_tol_us, std::size_t min_size, std::size_t max_size);

/// Matches clusters to LEDs by period, at most one cluster per LED and one LED
/// per cluster. Closest period wins, then the larger sample count.
Association associate_clusters(std::span<const Cluster> clusters, const LedRig& rig, double match_tol_us = 25);

/// Per-batch result of the detection chain.
struct Detection {
  std::uint64_t t_us = 0;
  std::map<int, Eigen::Vector2d> centroids;  ///< filtered, for every live track
  std::map<int, Eigen::Vector2d> observed;   ///< raw cluster centroids associated this batch
  bool pose_sufficient = false;
  std::size_t candidates = 0;
  std::vector<Cluster> clusters;
  std::size_t unmatched_clusters = 0;
  std::size_t reinitialized_tracks = 0;
};

/// Stateful detector: rate filter, period statistics, clustering, frequency
/// association and one particle-filter track per LED.
class LedDetector {
 public:
  LedDetector(LedRig rig, SensorGeometry geometry, DetectorConfig config, std::uint64_t batch_us,
              std::uint64_t seed);

  std::uint32_t threshold() const { return threshold_; }
  const DetectorConfig& config() const { return config_; }
  const LedRig& rig() const { return rig_; }
  const std::map<int, LedTrack>& tracks() const { return tracks_; }

  /// Candidates of a count frame (what stage 2 snapshots).
  std::vector<std::uint32_t> candidates(const CountFrame& counts) const {
    return candidate_pixels(counts, threshold_);
  }

  /// Runs the chain on snapshotted candidate stacks for the batch ending at
  /// `t_end_us`.
  Detection detect(const StackSnapshot& stacks, std::uint64_t t_end_us);

  /// Convenience for single-threaded use: snapshot the candidates of `counts`
  /// from `sdtv` and detect.
  Detection detect(const Sdtv& sdtv, const CountFrame& counts, std::uint64_t t_end_us);

 private:
  LedRig rig_;
  SensorGeometry geometry_;
  DetectorConfig config_;
  std::uint64_t batch_us_;
  std::uint32_t threshold_;
  std::mt19937_64 rng_;
  std::map<int, LedTrack> tracks_;
  StackSnapshot scratch_;
};

/// Debug CSV rows: one per cluster with its association (led -1 if none).
void write_detection_csv_header(std::ostream& os);
void write_detection_csv(std::ostream& os, const Detection& d, const LedRig& rig, double match_tol_us);

}  // namespace evmocap
