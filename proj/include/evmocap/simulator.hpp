#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evmocap/double_sphere.hpp"
#include "evmocap/event.hpp"
#include "evmocap/led_rig.hpp"
#include "evmocap/rigid_transform.hpp"

namespace evmocap {

/// Pixel response of the simulated sensor.
struct NoiseModel {
  double beta_sim = 0.98;              ///< detection probability of a transition at the blob core
  double double_event_prob = 0.1;      ///< chance a detected transition fires twice
  double double_lag_us = 15;           ///< mean delay of the second event
  double double_lag_jitter_us = 5;     ///< std of that delay
  double blob_spurious_rate = 1000;    ///< events / px / s inside LED blobs
  double background_rate = 10;         ///< events / px / s everywhere
  double jitter_us = 2;                ///< timestamp std
  double blob_radius_px = 2;           ///< outer radius of the LED image
  double blob_core_px = 1.5;           ///< detection is flat at beta_sim inside this radius

  /// Transition detection probability of a pixel at distance r from the LED
  /// image center: flat core, cosine roll-off to zero at the blob radius.
  double detection_probability(double r) const;

  /// No jitter, no double or spurious events, perfect detection.
  static NoiseModel ideal();
};

/// Time-stamped body poses T_WB, linearly / spherically interpolated.
class Trajectory {
 public:
  enum class Kind { Static, Rectangle, Csv };

  struct Sample {
    std::uint64_t t_us = 0;
    Transform t_wb;
  };

  Trajectory() = default;
  Trajectory(Kind kind, std::vector<Sample> samples);

  Kind kind() const { return kind_; }
  const std::vector<Sample>& samples() const { return samples_; }
  Transform at(std::uint64_t t_us) const;

  static Trajectory fixed(const Transform& t_wb);

  /// Rounded-corner rectangle in the world x-y plane at height `z`, traversed
  /// at constant speed, body orientation fixed. Sampled at 1 kHz.
  struct RectangleParams {
    double x_min = 2.0, x_max = 3.0;
    double y_min = -0.2, y_max = 0.2;
    double z = 0.0;
    double corner_radius = 0.1;
    double speed_mps = 0.5;
    Eigen::Vector2d start{2.0, 0.1};  ///< on the x_min edge
  };
  static Trajectory rectangle(const RectangleParams& p, const Eigen::Quaterniond& orientation,
                              std::uint64_t duration_us);

  /// CSV with header t_us,x,y,z,qw,qx,qy,qz.
  static Trajectory load_csv(const std::filesystem::path& path);
  void save_csv(const std::filesystem::path& path) const;

 private:
  Kind kind_ = Kind::Static;
  std::vector<Sample> samples_;
};

struct SimScene {
  LedRig rig;
  DsCamera camera;
  Transform t_cw;  ///< world -> camera
  Trajectory trajectory;
  NoiseModel noise;
  std::uint64_t duration_us = 10'000'000;
  std::uint64_t truth_interval_us = 2500;
  bool randomize_phase = true;  ///< false: every LED turns on at t = 0

  Transform t_cb(std::uint64_t t_us) const { return t_cw * trajectory.at(t_us); }
};

/// Five markers at the measured blink frequencies and duty cycles of the
/// reference hardware: the corners of an 80 mm square plus its center raised
/// 15 mm.
LedRig default_rig(double square_mm = 80, double center_raise_mm = 15);

/// Camera with the 22 degree horizontal field of view of a 25 mm lens on a
/// 640 x 480 sensor.
DsCamera default_camera();

/// World -> camera transform of a camera at the world origin looking along
/// +x with world z up.
Transform default_t_cw();

/// Body orientation in the world that faces the marker plane toward a camera
/// with transform `t_cw`.
Eigen::Quaterniond facing_orientation(const Transform& t_cw);

/// Fixed body pose `distance_m` along the optical axis of a camera with
/// transform `t_cw`, marker plane facing the camera.
Trajectory facing_trajectory(const Transform& t_cw, double distance_m);

/// Static scene with the body at `distance_m` on the optical axis facing the
/// camera.
SimScene static_scene(double distance_m, std::uint64_t duration_us = 10'000'000);

/// Warnings for markers that leave the image during the trajectory.
std::vector<std::string> validate_scene(const SimScene& scene);

/// Ground truth for one instant.
struct TruthRecord {
  std::uint64_t t_us = 0;
  Transform t_wb;
  std::map<int, Eigen::Vector2d> marker_pixels;
};

TruthRecord truth_at(const SimScene& scene, std::uint64_t t_us);
void write_truth_jsonl(std::ostream& os, const TruthRecord& r);
std::vector<TruthRecord> read_truth_jsonl(const std::filesystem::path& path);

/// Streams the events of a scene in time order. Events are generated in
/// fixed chunks, each with its own seeded generator, so the stream is a pure
/// function of (scene, seed).
class SimulatorSource final : public EventSource {
 public:
  SimulatorSource(SimScene scene, std::uint64_t seed);

  SensorGeometry geometry() const override { return scene_.camera.geometry(); }
  std::size_t read(std::vector<Event>& out, std::size_t max_events) override;

  /// Random phase of each LED, in microseconds.
  const std::vector<double>& phases() const { return phases_; }

 private:
  void generate_chunk();

  SimScene scene_;
  std::uint64_t seed_;
  std::vector<double> phases_;
  std::uint64_t next_chunk_ = 0;
  std::vector<Event> pending_;  ///< generated, not yet released (sorted)
  std::vector<Event> ready_;
  std::size_t ready_pos_ = 0;
  bool done_ = false;
};

struct SimulationSummary {
  std::uint64_t events = 0;
  std::uint64_t truth_records = 0;
  std::vector<std::string> warnings;
};

/// Writes the scene's events as EVT1 and its ground truth as JSON lines.
SimulationSummary simulate(const SimScene& scene, std::uint64_t seed, const std::filesystem::path& events_path,
                           const std::filesystem::path& truth_path);

/// All events of a scene in memory (short scenes and tests).
std::vector<Event> simulate_events(const SimScene& scene, std::uint64_t seed);

}  // namespace evmocap
