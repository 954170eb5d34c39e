#include "evmocap/batching.hpp"

#include "evmocap/error.hpp"

namespace evmocap {

std::vector<EventBatch> batch_stream(std::span<const Event> events, std::uint64_t batch_duration_us,
                                     std::uint64_t t_origin, std::optional<std::uint64_t> t_stop) {
  if (batch_duration_us == 0) throw Error("batch duration must be positive");
  if (!is_time_sorted(events)) throw OrderingError("events are not sorted by timestamp");
  if (!events.empty() && events.front().t < t_origin) throw OrderingError("event precedes batch origin");

  std::uint64_t stop;
  if (t_stop) {
    stop = *t_stop;
    if (!events.empty() && events.back().t >= stop) throw OrderingError("event at or after batch stop time");
  } else if (events.empty()) {
    stop = t_origin;
  } else {
    std::uint64_t n = (events.back().t - t_origin) / batch_duration_us + 1;
    stop = t_origin + n * batch_duration_us;
  }

  std::vector<EventBatch> out;
  if (stop <= t_origin) return out;
  out.reserve((stop - t_origin + batch_duration_us - 1) / batch_duration_us);
  std::size_t i = 0;
  for (std::uint64_t start = t_origin; start < stop; start += batch_duration_us) {
    EventBatch b;
    b.t_start = start;
    b.t_end = std::min(start + batch_duration_us, stop);
    std::size_t j = i;
    while (j < events.size() && events[j].t < b.t_end) ++j;
    b.events.assign(events.begin() + std::ptrdiff_t(i), events.begin() + std::ptrdiff_t(j));
    i = j;
    out.push_back(std::move(b));
  }
  return out;
}

std::optional<std::string> batch_duration_warning(std::uint64_t batch_duration_us) {
  if (batch_duration_us >= kMinRealtimeBatchUs && batch_duration_us <= kMaxRealtimeBatchUs) return std::nullopt;
  return "batch duration " + std::to_string(batch_duration_us) +
         " us is outside the real-time range [1000, 2500] us; acceptable for offline analysis only";
}

}  // namespace evmocap
