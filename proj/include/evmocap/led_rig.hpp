#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace evmocap {

/// One blinking marker on the tracked body.
struct LedSpec {
  int id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  ///< body frame, meters
  double frequency_hz = 0;
  double duty = 0;  ///< on-time fraction of a period

  double period_us() const { return 1e6 / frequency_hz; }
};

struct LedRig {
  std::vector<LedSpec> markers;

  std::size_t size() const { return markers.size(); }
  double min_frequency() const;
  double max_frequency() const;
  const LedSpec* find(int id) const;
  std::vector<Eigen::Vector3d> positions() const;
};

/// Outcome of one validation rule.
struct Diagnostic {
  enum class Severity { Pass, Warning, Error };
  Severity severity = Severity::Pass;
  std::string rule;
  std::string message;
};

const char* to_string(Diagnostic::Severity s);
bool has_errors(const std::vector<Diagnostic>& diags);

/// LED design rules: marker count, aliasing, period separation, frequency
/// range and the pulse-current duty limit. One diagnostic per rule.
std::vector<Diagnostic> validate_rig(const LedRig& rig, double match_tol_us = 25.0);

/// Pose-rate rule: a batch must span at least two periods of the slowest LED,
/// i.e. batch rate <= f_min / 2. Also flags batch durations outside the
/// real-time range.
std::vector<Diagnostic> validate_batch_rate(const LedRig& rig, std::uint64_t batch_us);

}  // namespace evmocap
