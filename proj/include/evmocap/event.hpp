#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace evmocap {

/// A single camera event. The layout is the 16-byte record used both in memory
/// and on disk: x, y, polarity, 3 bytes padding, timestamp.
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;  ///< -1 or +1
  std::uint8_t pad[3] = {0, 0, 0};
  std::uint64_t t = 0;  ///< microseconds

  Event() = default;
  Event(std::uint16_t x_, std::uint16_t y_, std::int8_t p, std::uint64_t t_) : x(x_), y(y_), polarity(p), t(t_) {}

  friend bool operator==(const Event& a, const Event& b) {
    return a.x == b.x && a.y == b.y && a.polarity == b.polarity && a.t == b.t;
  }
};
static_assert(sizeof(Event) == 16, "Event must be a 16-byte record");

struct SensorGeometry {
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  std::size_t pixel_count() const { return std::size_t(width) * height; }
  bool contains(std::uint32_t x, std::uint32_t y) const { return x < width && y < height; }
  std::uint32_t index(std::uint32_t x, std::uint32_t y) const { return y * width + x; }
  bool valid() const { return width >= 1 && height >= 1; }

  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

/// Events in the half-open window [t_start, t_end).
struct EventBatch {
  std::vector<Event> events;
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;

  std::uint64_t duration() const { return t_end - t_start; }
};

/// Anything that yields a time-ordered stream of events: files, the
/// simulator, a camera driver.
class EventSource {
 public:
  virtual ~EventSource() = default;
  virtual SensorGeometry geometry() const = 0;
  /// Appends up to `max_events` events to `out`. Returns the number appended;
  /// zero means the source is exhausted.
  virtual std::size_t read(std::vector<Event>& out, std::size_t max_events) = 0;
};

/// In-memory source over a borrowed, time-sorted event sequence.
class SpanEventSource final : public EventSource {
 public:
  SpanEventSource(SensorGeometry geometry, std::span<const Event> events) : geometry_(geometry), events_(events) {}

  SensorGeometry geometry() const override { return geometry_; }
  std::size_t read(std::vector<Event>& out, std::size_t max_events) override;

 private:
  SensorGeometry geometry_;
  std::span<const Event> events_;
  std::size_t pos_ = 0;
};

bool is_time_sorted(std::span<const Event> events);

}  // namespace evmocap
