#include "evmocap/led_rig.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "evmocap/batching.hpp"

namespace evmocap {

namespace {

constexpr double kMaxDuty = 0.02;
constexpr double kMaxMeasurableHz = 3000.0;
constexpr std::size_t kMinMarkers = 4;

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

}  // namespace

double LedRig::min_frequency() const {
  double f = markers.empty() ? 0 : markers.front().frequency_hz;
  for (const auto& m : markers) f = std::min(f, m.frequency_hz);
  return f;
}

double LedRig::max_frequency() const {
  double f = 0;
  for (const auto& m : markers) f = std::max(f, m.frequency_hz);
  return f;
}

const LedSpec* LedRig::find(int id) const {
  for (const auto& m : markers)
    if (m.id == id) return &m;
  return nullptr;
}

std::vector<Eigen::Vector3d> LedRig::positions() const {
  std::vector<Eigen::Vector3d> p;
  p.reserve(markers.size());
  for (const auto& m : markers) p.push_back(m.position);
  return p;
}

const char* to_string(Diagnostic::Severity s) {
  switch (s) {
    case Diagnostic::Severity::Pass:
      return "pass";
    case Diagnostic::Severity::Warning:
      return "warning";
    case Diagnostic::Severity::Error:
      return "error";
  }
  return "?";
}

bool has_errors(const std::vector<Diagnostic>& diags) {
  return std::any_of(diags.begin(), diags.end(),
                     [](const Diagnostic& d) { return d.severity == Diagnostic::Severity::Error; });
}

std::vector<Diagnostic> validate_rig(const LedRig& rig, double match_tol_us) {
  using S = Diagnostic::Severity;
  std::vector<Diagnostic> out;

  if (rig.size() < kMinMarkers)
    out.push_back({S::Error, "min_markers",
                   "at least four LEDs are necessary for a unique PnP solution; rig has " +
                       std::to_string(rig.size())});
  else
    out.push_back({S::Pass, "min_markers", std::to_string(rig.size()) + " markers"});

  std::set<int> ids;
  bool dup = false;
  for (const auto& m : rig.markers) dup |= !ids.insert(m.id).second;
  out.push_back(dup ? Diagnostic{S::Error, "unique_ids", "marker ids must be unique"}
                    : Diagnostic{S::Pass, "unique_ids", "marker ids unique"});

  bool bad_freq = std::any_of(rig.markers.begin(), rig.markers.end(),
                              [](const LedSpec& m) { return !(m.frequency_hz > 0) || !std::isfinite(m.frequency_hz); });
  if (bad_freq) {
    out.push_back({S::Error, "positive_frequency", "every blink frequency must be positive"});
    return out;
  }
  out.push_back({S::Pass, "positive_frequency", "all frequencies positive"});

  if (!rig.markers.empty()) {
    const double ratio = rig.max_frequency() / rig.min_frequency();
    if (ratio > 2.0)
      out.push_back({S::Error, "aliasing_factor_two",
                     fmt("blink frequencies must lie within a factor of two to avoid aliasing; max/min = %.3f", ratio)});
    else
      out.push_back({S::Pass, "aliasing_factor_two", fmt("max/min frequency ratio %.3f <= 2", ratio)});

    double min_sep = 1e300;
    for (std::size_t i = 0; i < rig.size(); ++i)
      for (std::size_t j = i + 1; j < rig.size(); ++j)
        min_sep = std::min(min_sep, std::abs(rig.markers[i].period_us() - rig.markers[j].period_us()));
    if (rig.size() > 1 && !(min_sep > match_tol_us))
      out.push_back({S::Error, "period_separation",
                     fmt("a perfectly measured LED would match another: closest periods differ by %.2f us, "
                         "tolerance %.1f us",
                         min_sep, match_tol_us)});
    else if (rig.size() > 1 && !(min_sep > 2 * match_tol_us))
      // Tolerance windows overlap; the closest period still decides.
      out.push_back({S::Warning, "period_separation",
                     fmt("closest periods differ by %.2f us, less than twice the %.1f us tolerance", min_sep,
                         match_tol_us)});
    else
      out.push_back({S::Pass, "period_separation", fmt("closest periods differ by %.2f us", min_sep)});

    if (rig.max_frequency() > kMaxMeasurableHz)
      out.push_back({S::Warning, "frequency_upper_limit",
                     fmt("LED at %.0f Hz exceeds the ~3 kHz range event cameras measure reliably", rig.max_frequency())});
    else
      out.push_back({S::Pass, "frequency_upper_limit", fmt("fastest LED %.0f Hz", rig.max_frequency())});
  }

  double max_duty = 0;
  bool bad_duty = false;
  for (const auto& m : rig.markers) {
    max_duty = std::max(max_duty, m.duty);
    bad_duty |= !(m.duty > 0 && m.duty < 1);
  }
  if (bad_duty)
    out.push_back({S::Error, "duty_cycle_limit", "duty cycles must lie in (0, 1)"});
  else if (max_duty > kMaxDuty)
    out.push_back({S::Warning, "duty_cycle_limit",
                   fmt("duty cycle %.2f %% exceeds the 2 %% LED pulse-current limit", 100 * max_duty)});
  else
    out.push_back({S::Pass, "duty_cycle_limit", fmt("max duty cycle %.2f %%", 100 * max_duty)});
  return out;
}

std::vector<Diagnostic> validate_batch_rate(const LedRig& rig, std::uint64_t batch_us) {
  using S = Diagnostic::Severity;
  std::vector<Diagnostic> out;
  if (batch_us == 0) {
    out.push_back({S::Error, "batch_rate_limit", "batch duration must be positive"});
    return out;
  }
  const double rate = 1e6 / double(batch_us);
  const double limit = rig.min_frequency() / 2;
  if (rate > limit)
    out.push_back({S::Warning, "batch_rate_limit",
                   fmt("batch rate %.0f Hz exceeds f_min/2 = %.0f Hz; batches may not span two periods of the slowest "
                       "LED and robustness may degrade",
                       rate, limit)});
  else
    out.push_back({S::Pass, "batch_rate_limit", fmt("batch rate %.0f Hz <= f_min/2 = %.0f Hz", rate, limit)});
  if (auto w = batch_duration_warning(batch_us))
    out.push_back({S::Warning, "batch_duration_range", *w});
  else
    out.push_back({S::Pass, "batch_duration_range", "batch duration within [1000, 2500] us"});
  return out;
}

}  // namespace evmocap
