#include <doctest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "evmocap/error.hpp"
#include "evmocap/sdtv.hpp"
#include "double_event_fixture.hpp"

using namespace evmocap;

namespace {

EventBatch batch_of(std::vector<Event> ev, std::uint64_t t0, std::uint64_t t1) {
  EventBatch b;
  b.events = std::move(ev);
  b.t_start = t0;
  b.t_end = t1;
  return b;
}

// Independent reference: keep every delta, then take the last D.
std::vector<std::int16_t> reference_stack(const std::vector<Event>& ev, std::size_t depth) {
  std::vector<std::int16_t> all;
  bool first = true;
  std::uint64_t last = 0;
  for (const auto& e : ev) {
    if (first) {
      first = false;
      last = e.t;
      continue;
    }
    const std::uint64_t d = e.t - last;
    last = e.t;
    if (d == 0) {
      if (!all.empty()) all.back() = std::int16_t(e.polarity * std::abs(all.back()));
      continue;
    }
    all.push_back(std::int16_t(e.polarity * std::int64_t(std::min<std::uint64_t>(d, 32767))));
  }
  if (all.size() > depth) all.erase(all.begin(), all.end() - std::ptrdiff_t(depth));
  return all;
}

}  // namespace

TEST_CASE("depth, footprint and reduction formulas") {
  CHECK(min_depth(2000, 2860) == 12);
  CHECK(min_depth(2000, 1000) == 4);
  CHECK(min_depth(2500, 2860) == 15);
  CHECK(event_volume_bytes(640, 480, 2000, 5, 1) == 122'880'000ull);
  CHECK(sdtv_footprint_bytes(640, 480, 16) == 9'830'400ull);
  CHECK(sdtv_footprint_bytes(0, 0, 0) == 0);
  CHECK(volume_reduction_factor(2000, 5, 4) == 100.0);
  CHECK(volume_reduction_factor(2000, 5, 16) == 25.0);
  Sdtv s({640, 480}, 16);
  CHECK(s.stack_bytes() == sdtv_footprint_bytes(640, 480, 16));
}

TEST_CASE("direct differencing with sign from the closing event") {
  Sdtv s({4, 4}, 8);
  const CountFrame f = s.ingest(batch_of({Event(1, 2, 1, 100), Event(1, 2, -1, 130), Event(1, 2, 1, 400)}, 0, 1000));
  const auto px = s.geometry().index(1, 2);
  CHECK(s.chronological(px) == std::vector<std::int16_t>{-30, 270});
  CHECK(f[px] == 3);
  CHECK(f.touched().size() == 1);
  CHECK(s.last_t(px) == 400);
}

TEST_CASE("first event initializes, zero deltas collapse") {
  Sdtv s({2, 1}, 4);
  s.ingest(batch_of({Event(0, 0, 1, 10)}, 0, 100));
  CHECK(s.fill(0) == 0);
  CHECK(s.initialized(0));
  s.ingest(batch_of({Event(0, 0, -1, 110), Event(0, 0, 1, 110)}, 100, 200));
  CHECK(s.chronological(0) == std::vector<std::int16_t>{100});
}

TEST_CASE("long gaps saturate and mark the pixel stale until shifted out") {
  Sdtv s({1, 1}, 4);
  s.ingest(batch_of({Event(0, 0, 1, 0), Event(0, 0, -1, 40000)}, 0, 50000));
  CHECK(s.chronological(0) == std::vector<std::int16_t>{-32767});
  CHECK(s.stale(0));
  CHECK(s.pixel_periods(0).empty());
  std::vector<Event> more;
  for (int i = 1; i <= 4; ++i) more.emplace_back(0, 0, std::int8_t(i % 2 ? 1 : -1), 40000 + 100 * i);
  s.ingest(batch_of(more, 40000, 50000));
  CHECK_FALSE(s.stale(0));
}

TEST_CASE("out-of-bounds events reject the whole batch") {
  Sdtv s({4, 4}, 4);
  CHECK_THROWS_AS(s.ingest(batch_of({Event(0, 0, 1, 1), Event(4, 0, 1, 2)}, 0, 10)), BoundsError);
  CHECK_FALSE(s.initialized(0));
}

TEST_CASE("stack equals the most recent D deltas of a reference model") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dt(0, 400);
  std::bernoulli_distribution pol(0.5);
  for (std::uint32_t depth : {4u, 7u, 16u}) {
    std::vector<Event> ev;
    std::uint64_t t = 0;
    for (int i = 0; i < 200; ++i) {
      t += std::uint64_t(dt(rng));
      ev.emplace_back(0, 0, pol(rng) ? 1 : -1, t);
    }
    Sdtv s({1, 1}, depth);
    // Split across several batches to exercise persistence.
    for (std::size_t a = 0; a < ev.size(); a += 37)
      s.ingest(batch_of({ev.begin() + std::ptrdiff_t(a), ev.begin() + std::ptrdiff_t(std::min(ev.size(), a + 37))}, 0, 1));
    const auto expect = reference_stack(ev, depth);
    CHECK(s.chronological(0) == expect);
    // last_t minus the stack sum is the oldest retained timestamp.
    std::uint64_t sum = 0;
    for (auto v : expect) sum += std::uint64_t(std::abs(v));
    std::vector<std::uint64_t> distinct;
    for (const auto& e : ev)
      if (distinct.empty() || distinct.back() != e.t) distinct.push_back(e.t);
    CHECK(s.last_t(0) - sum == distinct[distinct.size() - 1 - expect.size()]);
    for (auto v : expect) CHECK(v != 0);
  }
}

TEST_CASE("ingestion touches only pixels present in the batch") {
  Sdtv s({8, 8}, 4);
  s.ingest(batch_of({Event(1, 1, 1, 5), Event(1, 1, -1, 9)}, 0, 10));
  std::ostringstream os;
  s.dump_csv(os);
  CHECK(os.str() == "pixel,slot,delta\n9,0,-4\n");
}

TEST_CASE("period extraction examples") {
  CHECK(pixel_periods(std::vector<std::int16_t>{5, -30, 270, -30, 270, -30}) == std::vector<std::uint32_t>{300, 300});
  CHECK(pixel_periods(std::vector<std::int16_t>{10, 20, 30, 40}).empty());
  CHECK(pixel_periods(std::vector<std::int16_t>{5, -30}).empty());
  // Same-sign runs (double events) are absorbed into the running period.
  CHECK(pixel_periods(std::vector<std::int16_t>{5, -30, 150, 120, -15, -15, 270, -30}) ==
        std::vector<std::uint32_t>{300, 300});
}

TEST_CASE("double and spurious events fixture recovers the 300 us period") {
  Sdtv s({1, 1}, 16);
  s.ingest(batch_of(testing::double_event_fixture(), 0, 1500));
  CHECK(s.chronological(0) ==
        std::vector<std::int16_t>{-30, -15, 255, -30, 180, 90, -30, 270, -30, 270, -30});
  const auto periods = s.pixel_periods(0);
  REQUIRE_FALSE(periods.empty());
  for (auto p : periods) CHECK(p == 300);
}

TEST_CASE("noise-free square wave yields its exact period at any phase") {
  for (std::uint32_t period : {350u, 437u, 578u}) {
    for (std::uint64_t phase : {0ull, 13ull, 211ull}) {
      std::vector<Event> ev;
      for (std::uint64_t k = 0; k < 10; ++k) {
        ev.emplace_back(0, 0, 1, phase + k * period);
        ev.emplace_back(0, 0, -1, phase + k * period + 7);
      }
      Sdtv s({1, 1}, 12);
      s.ingest(batch_of(ev, 0, 10000));
      const auto periods = s.pixel_periods(0);
      REQUIRE(periods.size() >= 4);
      for (auto p : periods) CHECK(p == period);
    }
  }
}

TEST_CASE("count frame saturates and clears touched pixels only") {
  CountFrame f({2, 2});
  for (int i = 0; i < 70000; ++i) f.add(3);
  CHECK(f[3] == 65535);
  f.add(1);
  CHECK(f.touched().size() == 2);
  f.clear();
  CHECK(f[3] == 0);
  CHECK(f[1] == 0);
  CHECK(f.touched().empty());
}
