#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "evmocap/double_sphere.hpp"
#include "evmocap/event.hpp"
#include "evmocap/led_detector.hpp"
#include "evmocap/led_rig.hpp"
#include "evmocap/pnp.hpp"
#include "evmocap/rigid_transform.hpp"

namespace evmocap {

struct PipelineConfig {
  std::uint64_t batch_us = 2500;
  std::uint64_t window_us = 2500;  ///< SDTV window T; sets the stack depth
  LedRig rig;
  DsCamera camera;
  Transform t_cw;  ///< world -> camera
  DetectorConfig detector;
  PnpSolver solver = PnpSolver::Sqpnp;
  std::uint64_t seed = 1;        ///< particle-filter seed
  std::uint64_t t_origin_us = 0;  ///< start of the first batch
  bool allow_drops = true;        ///< false: stages wait for each other instead of dropping
  bool paced = false;             ///< release batches no faster than their timestamps
  bool record_latency = true;     ///< write measured latency into pose records
  std::uint64_t stage3_delay_us = 0;  ///< test hook: extra sleep per stage-3 batch

  std::uint32_t depth() const;
};

/// Rig, batch-rate and window checks. Throws ConfigError on the first error;
/// returns the warnings.
std::vector<std::string> validate_pipeline_config(const PipelineConfig& config);

struct PoseRecord {
  std::uint64_t t_us = 0;
  Eigen::Vector3d position_m = Eigen::Vector3d::Zero();  ///< world frame
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();  ///< world <- body, w >= 0
  std::size_t leds_used = 0;
  double reproj_rmse_px = 0;
  std::optional<double> latency_us;
};

class PoseSink {
 public:
  virtual ~PoseSink() = default;
  virtual void write(const PoseRecord& r) = 0;
  virtual void flush() {}
};

/// {t_us, frame: "world", position_m, quaternion_wxyz, leds_used, reproj_rmse_px, latency_us}
class JsonlPoseSink final : public PoseSink {
 public:
  explicit JsonlPoseSink(std::ostream& os) : os_(os) {}
  void write(const PoseRecord& r) override;
  void flush() override;

 private:
  std::ostream& os_;
};

/// Same columns as CSV; position and quaternion flattened.
class CsvPoseSink final : public PoseSink {
 public:
  explicit CsvPoseSink(std::ostream& os);
  void write(const PoseRecord& r) override;
  void flush() override;

 private:
  std::ostream& os_;
};

class MemoryPoseSink final : public PoseSink {
 public:
  void write(const PoseRecord& r) override { records.push_back(r); }
  std::vector<PoseRecord> records;
};

/// Reads pose files written by either sink (format chosen by extension).
std::vector<PoseRecord> read_pose_file(const std::filesystem::path& path);

struct PipelineStats {
  std::uint64_t produced = 0;
  std::uint64_t processed = 0;
  std::uint64_t dropped = 0;
  std::uint64_t poses = 0;
  std::uint64_t events = 0;
  std::vector<double> stage1_us, stage2_us, stage3_us;  ///< per processed batch
  std::vector<double> latency_us;                        ///< per pose
  std::map<int, std::uint64_t> tracked;   ///< batches in which the LED had a live track
  std::map<int, std::uint64_t> observed;  ///< batches in which a cluster was associated with the LED
  std::uint64_t all_tracked = 0;          ///< batches with every LED tracked
  std::uint64_t all_observed = 0;
  std::uint64_t misassociations = 0;     ///< filled by callers that know the truth
  double wall_s = 0;
  double data_s = 0;
  double max_source_lag_us = 0;  ///< paced mode: worst delay of stage 1 behind the batch clock
  std::vector<std::string> warnings;
  std::optional<std::string> error;

  double pose_rate_hz() const { return wall_s > 0 ? double(poses) / wall_s : 0; }
  double detection_rate(int led) const;
  double observation_rate(int led) const;
};

double median(std::vector<double> v);
double percentile(std::vector<double> v, double q);

/// Per-batch output of stage 3, also used by the reference run.
struct BatchResult {
  Detection detection;
  std::optional<PoseRecord> pose;
};

/// Undistorts the centroids, solves PnP and moves the pose into the world
/// frame. Empty when fewer than four markers survive or the solver fails.
std::optional<PoseRecord> estimate_pose(const std::map<int, Eigen::Vector2d>& centroids, std::uint64_t t_us,
                                        const LedRig& rig, const DsCamera& camera, const Transform& t_cw,
                                        PnpSolver solver);

/// Detection, association, tracking, PnP and world transform for one batch.
class PoseStage {
 public:
  explicit PoseStage(const PipelineConfig& config);
  BatchResult process(const StackSnapshot& stacks, std::uint64_t t_end_us);
  LedDetector& detector() { return detector_; }

 private:
  const PipelineConfig& config_;
  LedDetector detector_;
};

/// Optional per-batch observer (debug CSV, acceptance bookkeeping). Called on
/// the stage-3 thread.
using BatchObserver = std::function<void(const BatchResult&)>;

/// Three-stage run: stage 1 reads and batches the source, stage 2 updates the
/// SDTV and snapshots candidate stacks, stage 3 detects and solves poses.
PipelineStats run_pipeline(EventSource& source, const PipelineConfig& config, PoseSink& sink,
                           const BatchObserver& observer = {});

/// The same stages executed one after another on the calling thread.
PipelineStats run_reference(EventSource& source, const PipelineConfig& config, PoseSink& sink,
                            const BatchObserver& observer = {});

}  // namespace evmocap
