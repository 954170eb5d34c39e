#include "evmocap/sdtv.hpp"

#include <cmath>
#include <ostream>

#include "evmocap/error.hpp"

namespace evmocap {

std::uint32_t min_depth(std::uint64_t window_us, double f_max_hz) {
  if (window_us == 0 || !(f_max_hz > 0)) throw Error("min_depth needs a positive window and frequency");
  // Exact rational form of 2 * (T / 1e6) * f so that integral results do not
  // pick up a spurious +1 from rounding.
  const double events = 2.0 * double(window_us) * f_max_hz / 1e6;
  auto d = std::uint32_t(std::ceil(events - 1e-9));
  return std::max(d, kMinSdtvDepth);
}

std::uint64_t sdtv_footprint_bytes(std::uint64_t width, std::uint64_t height, std::uint64_t depth) {
  return width * height * depth * sizeof(std::int16_t);
}

std::uint64_t event_volume_bytes(std::uint64_t width, std::uint64_t height, std::uint64_t window_us,
                                 std::uint64_t resolution_us, std::uint64_t bytes_per_cell) {
  if (resolution_us == 0) return 0;
  return width * height * (window_us / resolution_us) * bytes_per_cell;
}

double volume_reduction_factor(std::uint64_t window_us, std::uint64_t resolution_us, std::uint64_t depth) {
  return double(window_us / resolution_us) / double(depth);
}

CountFrame::CountFrame(SensorGeometry geometry) : geometry_(geometry), counts_(geometry.pixel_count(), 0) {}

void CountFrame::clear() {
  for (auto p : touched_) counts_[p] = 0;
  touched_.clear();
}

Sdtv::Sdtv(SensorGeometry geometry, std::uint32_t depth)
    : geometry_(geometry),
      depth_(depth),
      stacks_(geometry.pixel_count() * depth, 0),
      state_(geometry.pixel_count()) {
  if (!geometry.valid()) throw Error("SDTV needs a non-empty sensor");
  if (depth < 1 || depth > 255) throw Error("SDTV depth must be in [1, 255]");
}

CountFrame Sdtv::ingest(const EventBatch& batch) {
  CountFrame frame(geometry_);
  ingest(batch.events, frame);
  return frame;
}

void Sdtv::ingest(std::span<const Event> events, CountFrame& frame) {
  for (const auto& e : events)
    if (!geometry_.contains(e.x, e.y)) throw BoundsError("event pixel outside sensor geometry; batch rejected");

  // Background events land on random pixels; fetching a few events ahead
  // overlaps the cache misses.
  constexpr std::size_t kAhead = 8;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (i + kAhead < events.size()) {
      const std::uint32_t q = geometry_.index(events[i + kAhead].x, events[i + kAhead].y);
      __builtin_prefetch(&state_[q], 1);
      __builtin_prefetch(&stacks_[std::size_t(q) * depth_], 1);
      frame.prefetch(q);
    }
    const Event& e = events[i];
    const std::uint32_t p = geometry_.index(e.x, e.y);
    frame.add(p);
    PixelState& st = state_[p];
    if (!st.seen) {
      st.seen = 1;
      st.last_t = e.t;
      continue;
    }
    const std::uint64_t delta = e.t - st.last_t;
    st.last_t = e.t;
    if (delta == 0) {
      // Same-timestamp pair: keep a single delta carrying the later polarity.
      if (st.fill > 0) {
        std::uint32_t last = (st.write_pos + depth_ - 1) % depth_;
        std::int16_t& v = stacks_[std::size_t(p) * depth_ + last];
        v = std::int16_t(e.polarity > 0 ? std::abs(v) : -std::abs(v));
      }
      continue;
    }
    const auto mag = std::int16_t(std::min<std::uint64_t>(delta, std::uint64_t(kSdtvSaturated)));
    push(p, st, e.polarity > 0 ? mag : std::int16_t(-mag));
  }
}

void Sdtv::push(std::uint32_t pixel, PixelState& st, std::int16_t value) {
  std::int16_t& slot = stacks_[std::size_t(pixel) * depth_ + st.write_pos];
  if (st.fill == depth_ && std::abs(slot) == kSdtvSaturated) --st.saturated;
  slot = value;
  if (std::abs(value) == kSdtvSaturated) ++st.saturated;
  st.write_pos = std::uint8_t(st.write_pos + 1 == depth_ ? 0 : st.write_pos + 1);
  if (st.fill < depth_) ++st.fill;
}

void Sdtv::chronological(std::uint32_t pixel, std::int16_t* out) const {
  const std::int16_t* s = stacks_.data() + std::size_t(pixel) * depth_;
  const std::uint32_t n = state_[pixel].fill;
  const std::uint32_t start = n < depth_ ? 0 : state_[pixel].write_pos;
  for (std::uint32_t i = 0; i < n; ++i) out[i] = s[(start + i) % depth_];
}

std::vector<std::int16_t> Sdtv::chronological(std::uint32_t pixel) const {
  std::vector<std::int16_t> out(fill(pixel));
  chronological(pixel, out.data());
  return out;
}

std::vector<std::uint32_t> Sdtv::pixel_periods(std::uint32_t pixel) const {
  if (stale(pixel)) return {};
  auto stack = chronological(pixel);
  return evmocap::pixel_periods(stack);
}

void Sdtv::snapshot(std::span<const std::uint32_t> pixels, StackSnapshot& out) const {
  out.clear();
  out.depth = depth_;
  out.pixels.assign(pixels.begin(), pixels.end());
  out.fill.resize(pixels.size());
  out.stale.resize(pixels.size());
  out.values.assign(pixels.size() * depth_, 0);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto p = pixels[i];
    out.fill[i] = std::uint8_t(fill(p));
    out.stale[i] = stale(p) ? 1 : 0;
    chronological(p, out.values.data() + i * depth_);
  }
}

void Sdtv::dump_csv(std::ostream& os) const {
  os << "pixel,slot,delta\n";
  std::vector<std::int16_t> buf(depth_);
  for (std::uint32_t p = 0; p < geometry_.pixel_count(); ++p) {
    if (fill(p) == 0) continue;
    chronological(p, buf.data());
    for (std::uint32_t i = 0; i < fill(p); ++i) os << p << ',' << i << ',' << buf[i] << '\n';
  }
}

std::vector<std::uint32_t> pixel_periods(std::span<const std::int16_t> stack) {
  std::vector<std::uint32_t> periods;
  if (stack.size() < 3) return periods;

  std::size_t i = 1;
  while (i < stack.size() && !(stack[i - 1] > 0 && stack[i] < 0)) ++i;
  if (i >= stack.size()) return periods;
  ++i;
  while (i < stack.size() && stack[i] < 0) ++i;

  std::uint32_t sum = 0;
  bool seen_negative = false;
  for (; i < stack.size(); ++i) {
    const std::int16_t v = stack[i];
    if (v > 0 && seen_negative) {
      periods.push_back(sum);
      sum = 0;
      seen_negative = false;
    }
    if (v < 0) seen_negative = true;
    sum += std::uint32_t(std::abs(v));
  }
  if (seen_negative) periods.push_back(sum);
  return periods;
}

}  // namespace evmocap
