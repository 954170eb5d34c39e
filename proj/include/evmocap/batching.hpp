#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evmocap/event.hpp"

namespace evmocap {

inline constexpr std::uint64_t kMinRealtimeBatchUs = 1000;
inline constexpr std::uint64_t kMaxRealtimeBatchUs = 2500;

/// Splits a time-sorted stream into consecutive half-open windows
/// [t_origin + i*d, t_origin + (i+1)*d). Empty windows are kept. Without
/// `t_stop` the windows cover up to the last event; with it they cover
/// [t_origin, t_stop) and the final window is clipped to t_stop.
std::vector<EventBatch> batch_stream(std::span<const Event> events, std::uint64_t batch_duration_us,
                                     std::uint64_t t_origin, std::optional<std::uint64_t> t_stop = std::nullopt);

/// Warning text when a batch duration lies outside the real-time range.
std::optional<std::string> batch_duration_warning(std::uint64_t batch_duration_us);

}  // namespace evmocap
