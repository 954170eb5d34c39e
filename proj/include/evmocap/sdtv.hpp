#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "evmocap/event.hpp"

namespace evmocap {

/// Largest magnitude a stored delta can take; longer gaps saturate.
inline constexpr std::int16_t kSdtvSaturated = 32767;
inline constexpr std::uint32_t kMinSdtvDepth = 4;

/// Stack depth needed so a window of `window_us` holds two events per period
/// of the fastest LED: ceil(2 * T * f_max), at least 4.
std::uint32_t min_depth(std::uint64_t window_us, double f_max_hz);

/// Bytes occupied by the delta stacks of a W x H x D volume (int16 entries).
std::uint64_t sdtv_footprint_bytes(std::uint64_t width, std::uint64_t height, std::uint64_t depth);

/// Bytes of a dense time-binned event volume covering `window_us` at
/// `resolution_us` bins.
std::uint64_t event_volume_bytes(std::uint64_t width, std::uint64_t height, std::uint64_t window_us,
                                 std::uint64_t resolution_us, std::uint64_t bytes_per_cell = 1);

/// Cells per pixel of the dense volume divided by the stack depth.
double volume_reduction_factor(std::uint64_t window_us, std::uint64_t resolution_us, std::uint64_t depth);

/// Per-pixel event counts of one batch, saturating at 65535. Only touched
/// pixels are reset by clear(), so reuse across batches costs O(events).
class CountFrame {
 public:
  CountFrame() = default;
  explicit CountFrame(SensorGeometry geometry);

  void add(std::uint32_t pixel) {
    std::uint16_t& c = counts_[pixel];
    if (c == 0) touched_.push_back(pixel);
    if (c != 0xFFFF) ++c;
  }
  void prefetch(std::uint32_t pixel) const { __builtin_prefetch(&counts_[pixel], 1); }
  std::uint16_t operator[](std::uint32_t pixel) const { return counts_[pixel]; }
  std::uint16_t at(std::uint32_t x, std::uint32_t y) const { return counts_[geometry_.index(x, y)]; }

  /// Pixels with a nonzero count, in first-touch order.
  std::span<const std::uint32_t> touched() const { return touched_; }
  SensorGeometry geometry() const { return geometry_; }
  void clear();

 private:
  SensorGeometry geometry_;
  std::vector<std::uint16_t> counts_;
  std::vector<std::uint32_t> touched_;
};

/// Chronological copies of selected pixel stacks. This is what crosses from
/// the SDTV owner to the detection stage.
struct StackSnapshot {
  std::uint32_t depth = 0;
  std::vector<std::uint32_t> pixels;
  std::vector<std::uint8_t> fill;
  std::vector<std::uint8_t> stale;
  std::vector<std::int16_t> values;  ///< pixels.size() * depth, oldest first

  std::size_t size() const { return pixels.size(); }
  std::span<const std::int16_t> stack(std::size_t i) const {
    return {values.data() + i * depth, fill[i]};
  }
  void clear() {
    pixels.clear();
    fill.clear();
    stale.clear();
    values.clear();
  }
};

/// Signed delta-time volume: for every pixel a cyclic stack of D time
/// differences between consecutive events, signed by the polarity of the
/// later event. Stacks are contiguous per pixel; the per-pixel bookkeeping
/// sits in one 16-byte record so an event touches two cache lines.
class Sdtv {
 public:
  Sdtv(SensorGeometry geometry, std::uint32_t depth);

  /// Adds a batch. The batch is rejected as a whole (BoundsError) if any
  /// event falls outside the sensor.
  CountFrame ingest(const EventBatch& batch);
  /// Same as above but accumulates counts into a caller-owned frame.
  void ingest(std::span<const Event> events, CountFrame& frame);

  SensorGeometry geometry() const { return geometry_; }
  std::uint32_t depth() const { return depth_; }
  std::uint64_t stack_bytes() const { return stacks_.size() * sizeof(std::int16_t); }

  std::uint32_t fill(std::uint32_t pixel) const { return state_[pixel].fill; }
  bool initialized(std::uint32_t pixel) const { return state_[pixel].seen != 0; }
  /// True while a saturated delta is inside the stack.
  bool stale(std::uint32_t pixel) const { return state_[pixel].saturated != 0; }
  std::uint64_t last_t(std::uint32_t pixel) const { return state_[pixel].last_t; }

  /// Raw storage of one stack, in ring order.
  std::span<const std::int16_t> raw(std::uint32_t pixel) const {
    return {stacks_.data() + std::size_t(pixel) * depth_, depth_};
  }
  std::vector<std::int16_t> chronological(std::uint32_t pixel) const;
  void chronological(std::uint32_t pixel, std::int16_t* out) const;

  /// Periods of one pixel (empty for stale pixels).
  std::vector<std::uint32_t> pixel_periods(std::uint32_t pixel) const;

  void snapshot(std::span<const std::uint32_t> pixels, StackSnapshot& out) const;

  /// Debug dump, one `pixel,slot,delta` row per stored entry, slot 0 oldest.
  void dump_csv(std::ostream& os) const;

 private:
  struct PixelState {
    std::uint64_t last_t = 0;
    std::uint8_t write_pos = 0;
    std::uint8_t fill = 0;
    std::uint8_t saturated = 0;  ///< saturated deltas inside the stack
    std::uint8_t seen = 0;
  };

  void push(std::uint32_t pixel, PixelState& st, std::int16_t value);

  SensorGeometry geometry_;
  std::uint32_t depth_;
  std::vector<std::int16_t> stacks_;
  std::vector<PixelState> state_;
};

/// Period extraction on one chronological stack. Entries up to and including
/// the first positive-to-negative transition are discarded; afterwards every
/// positive run followed by a negative run forms one period, the sum of the
/// absolute deltas. Same-sign runs are absorbed. Needs at least 3 entries.
std::vector<std::uint32_t> pixel_periods(std::span<const std::int16_t> chronological);

}  // namespace evmocap
