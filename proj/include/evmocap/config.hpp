#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evmocap/led_rig.hpp"
#include "evmocap/pipeline.hpp"
#include "evmocap/simulator.hpp"

namespace evmocap {

/// Version of the YAML layout understood by load_config().
inline constexpr int kConfigSchemaVersion = 1;

/// How the simulator trajectory was specified, kept so a config can be
/// written back.
struct TrajectorySpec {
  Trajectory::Kind kind = Trajectory::Kind::Static;
  double distance_m = 1.0;  ///< static: along the optical axis, facing the camera
  Trajectory::RectangleParams rectangle;
  std::filesystem::path csv_path;
};

/// Everything the command-line tool needs: camera, rig, pipeline and
/// simulator settings. `pipeline` carries the same rig, camera and t_cw as
/// `scene`.
struct AppConfig {
  SimScene scene;
  PipelineConfig pipeline;
  TrajectorySpec trajectory;
  std::uint64_t sim_seed = 1;

  /// Rebuilds the scene trajectory from `trajectory` and copies rig, camera
  /// and t_cw into `pipeline`.
  void sync();
};

AppConfig default_app_config();

/// Parses a YAML config. Missing keys keep their defaults; unknown keys,
/// a wrong schema_version and malformed values raise ConfigError naming the
/// offending key. Validation errors raise ConfigError naming the rule.
AppConfig parse_config(const std::string& yaml);
AppConfig load_config(const std::filesystem::path& path);

/// The full config as YAML, including defaults.
std::string dump_config(const AppConfig& config);

/// Every design rule with its outcome: rig rules, batch rate, window length
/// and markers leaving the image.
std::vector<Diagnostic> validate_config(const AppConfig& config);

}  // namespace evmocap
