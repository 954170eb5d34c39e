#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <random>
#include <set>

#include "evmocap/batching.hpp"
#include "evmocap/led_detector.hpp"
#include "evmocap/simulator.hpp"
#include "double_event_fixture.hpp"

using namespace evmocap;

namespace {

// Stack of a clean square wave: alternating +on / -off deltas.
std::vector<std::int16_t> square_stack(int periods, int period, int on) {
  std::vector<std::int16_t> s;
  for (int k = 0; k < periods; ++k) {
    s.push_back(std::int16_t(period - on));
    s.push_back(std::int16_t(-on));
  }
  return s;
}

PeriodStats stat(std::uint32_t pixel, double mean, std::uint32_t samples) {
  PeriodStats s;
  s.pixel = pixel;
  s.mean = s.median = mean;
  s.samples = samples;
  return s;
}

Cluster cluster_with_period(double period, std::uint32_t samples = 10) {
  Cluster c;
  c.pixels = {0, 1};
  c.period_us = period;
  c.samples = samples;
  return c;
}

struct SimRun {
  SimScene scene;
  std::vector<EventBatch> batches;
};

SimRun run_scene(SimScene scene, std::uint64_t seed, std::uint64_t batch_us = 2500) {
  SimRun r;
  const auto events = simulate_events(scene, seed);
  r.batches = batch_stream(events, batch_us, 0, scene.duration_us);
  r.scene = std::move(scene);
  return r;
}

}  // namespace

TEST_CASE("rate threshold") {
  CHECK(rate_threshold(2500, 1730, 0.8) == 7);
  CHECK(rate_threshold(1000, 1730, 0.8) == 3);
  CHECK(rate_threshold(1'000'000, 1, 1.0) == 2);
  // Property: equals the smallest integer not below beta * 2 * t * f.
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::uint64_t> t(100, 10000);
  std::uniform_real_distribution<double> f(100, 5000), b(0.1, 1);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t tt = t(rng);
    const double ff = f(rng), bb = b(rng);
    const double x = bb * 2 * double(tt) * 1e-6 * ff;
    const std::uint32_t th = rate_threshold(tt, ff, bb);
    CHECK(double(th) >= x - 1e-9);
    CHECK(double(th) - 1 < x);
  }
}

TEST_CASE("candidate pixels") {
  const SensorGeometry g{8, 8};
  CountFrame cf(g);
  CHECK(candidate_pixels(cf, 1).empty());
  for (int i = 0; i < 7; ++i) cf.add(g.index(3, 4));
  for (int i = 0; i < 6; ++i) cf.add(g.index(1, 1));
  const auto c = candidate_pixels(cf, 7);
  REQUIRE(c.size() == 1);
  CHECK(c[0] == g.index(3, 4));
  CHECK(candidate_pixels(cf, 6).size() == 2);
}

TEST_CASE("candidates cover every blob core in the default scene") {
  auto scene = static_scene(1.0, 250'000);
  auto run = run_scene(scene, 11);
  const SensorGeometry g = scene.camera.geometry();
  const auto truth = truth_at(scene, 0);
  const std::uint32_t th = rate_threshold(2500, scene.rig.min_frequency(), 0.8);
  Sdtv sdtv(g, 15);
  // A core pixel drops below the threshold only when it misses two or more
  // transitions in a batch, so coverage is statistical rather than certain.
  int checked = 0, covered = 0;
  for (std::size_t b = 0; b < run.batches.size(); ++b) {
    const CountFrame cf = sdtv.ingest(run.batches[b]);
    const auto cand = candidate_pixels(cf, th);
    if (b == 0) continue;  // the first batch starts at an arbitrary phase
    for (const auto& [id, uv] : truth.marker_pixels)
      for (std::uint32_t y = 0; y < g.height; ++y)
        for (std::uint32_t x = 0; x < g.width; ++x) {
          if ((Eigen::Vector2d(x, y) - uv).norm() > scene.noise.blob_core_px) continue;
          covered += std::binary_search(cand.begin(), cand.end(), g.index(x, y)) ? 1 : 0;
          ++checked;
        }
  }
  CHECK(checked > 500);
  CHECK(double(covered) >= 0.99 * checked);
}

TEST_CASE("period statistics") {
  DetectorConfig cfg;
  PeriodStats s;
  SUBCASE("clean pixel") {
    const auto st = square_stack(5, 300, 30);
    REQUIRE(compute_period_stats(st, s));
    CHECK(s.mean == 300);
    CHECK(s.median == 300);
    CHECK(s.stddev == 0);
    CHECK_FALSE(period_rejected(s, cfg));
  }
  SUBCASE("double and spurious events fixture") {
    Sdtv sdtv({4, 4}, 11);
    CountFrame cf({4, 4});
    sdtv.ingest(testing::double_event_fixture(1, 2), cf);
    const std::uint32_t px = SensorGeometry{4, 4}.index(1, 2);
    const auto stats = period_stats(sdtv, std::vector<std::uint32_t>{px}, cfg);
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].mean >= 295);
    CHECK(stats[0].mean <= 305);
    CHECK(stats[0].stddev <= 10);
  }
  SUBCASE("periods 280 and 600 are rejected") {
    // +10 -20 | +260 -20 | +580 -20  -> periods {280, 600}
    const std::vector<std::int16_t> st{10, -20, 260, -20, 580, -20};
    REQUIRE(compute_period_stats(st, s));
    CHECK(s.samples == 2);
    const double mean = (280.0 + 600.0) / 2;
    const double sd = std::sqrt(((280 - mean) * (280 - mean) + (600 - mean) * (600 - mean)) / 2);
    CHECK(s.mean == doctest::Approx(mean));
    CHECK(s.stddev == doctest::Approx(sd));
    CHECK(sd > std::max(25.0, 0.05 * mean));
    CHECK(period_rejected(s, cfg));
  }
  SUBCASE("no complete period") {
    const std::vector<std::int16_t> st{5, 5, 5};
    CHECK_FALSE(compute_period_stats(st, s));
  }
}

TEST_CASE("clustering") {
  const SensorGeometry g{10, 10};
  SUBCASE("diagonal neighbors link") {
    const std::vector<PeriodStats> st{stat(g.index(2, 2), 500, 3), stat(g.index(3, 3), 510, 1)};
    const auto c = cluster_candidates(st, g, 25, 2, 500);
    REQUIRE(c.size() == 1);
    CHECK(c[0].pixels.size() == 2);
    CHECK(c[0].centroid.x() == doctest::Approx((3 * 2 + 1 * 3) / 4.0));
    CHECK(c[0].centroid.y() == doctest::Approx((3 * 2 + 1 * 3) / 4.0));
    CHECK(c[0].period_us == doctest::Approx((3 * 500 + 1 * 510) / 4.0));
    CHECK(c[0].samples == 4);
  }
  SUBCASE("tight tolerance splits and size bound drops") {
    const std::vector<PeriodStats> st{stat(g.index(2, 2), 500, 3), stat(g.index(3, 3), 510, 1)};
    CHECK(cluster_candidates(st, g, 5, 2, 500).empty());
    CHECK(cluster_candidates(st, g, 5, 1, 500).size() == 2);
  }
  SUBCASE("size bounds") {
    std::vector<PeriodStats> st;
    for (std::uint32_t y = 0; y < 4; ++y)
      for (std::uint32_t x = 0; x < 4; ++x) st.push_back(stat(g.index(x, y), 400, 1));
    CHECK(cluster_candidates(st, g, 25, 2, 15).empty());
    CHECK(cluster_candidates(st, g, 25, 2, 16).size() == 1);
  }
  SUBCASE("no wrap across rows") {
    const std::vector<PeriodStats> st{stat(g.index(9, 0), 400, 1), stat(g.index(0, 1), 400, 1)};
    CHECK(cluster_candidates(st, g, 25, 1, 500).size() == 2);
  }
  SUBCASE("removing pixels moves the centroid by at most their weight share") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::uint32_t> w(1, 9);
    for (int trial = 0; trial < 200; ++trial) {
      // A 3x3 block: removing any subset of pixels other than the center keeps it connected.
      std::vector<PeriodStats> all;
      for (std::uint32_t y = 3; y < 6; ++y)
        for (std::uint32_t x = 3; x < 6; ++x) all.push_back(stat(g.index(x, y), 400, w(rng)));
      std::vector<PeriodStats> kept;
      double removed = 0, total = 0;
      for (std::size_t i = 0; i < all.size(); ++i) {
        total += all[i].samples;
        if (i != 4 && rng() % 3 == 0)
          removed += all[i].samples;
        else
          kept.push_back(all[i]);
      }
      const auto full = cluster_candidates(all, g, 25, 1, 500);
      const auto part = cluster_candidates(kept, g, 25, 1, 500);
      REQUIRE(full.size() == 1);
      REQUIRE(part.size() == 1);
      const double diameter = std::sqrt(8.0);
      CHECK((full[0].centroid - part[0].centroid).norm() <= removed / total * diameter + 1e-12);
    }
  }
}

TEST_CASE("association") {
  const LedRig rig = default_rig();
  SUBCASE("25 us rule") {
    std::vector<Cluster> c{cluster_with_period(565)};
    auto a = associate_clusters(c, rig, 25);
    REQUIRE(a.matched.count(1));
    CHECK(std::abs(565 - rig.find(1)->period_us()) <= 25);
    c = {cluster_with_period(540)};
    a = associate_clusters(c, rig, 25);
    CHECK(a.matched.empty());
    CHECK(a.unmatched == 1);
    CHECK(std::abs(540 - 1e6 / 1730) > 25);
  }
  SUBCASE("exact periods map one to one") {
    std::vector<Cluster> c;
    for (auto it = rig.markers.rbegin(); it != rig.markers.rend(); ++it) c.push_back(cluster_with_period(it->period_us()));
    const auto a = associate_clusters(c, rig, 25);
    REQUIRE(a.matched.size() == 5);
    for (const auto& m : rig.markers) CHECK(a.matched.at(m.id).period_us == m.period_us());
  }
  SUBCASE("closer period wins, then more samples") {
    std::vector<Cluster> c{cluster_with_period(rig.find(1)->period_us() + 10, 50),
                           cluster_with_period(rig.find(1)->period_us() - 3, 5)};
    auto a = associate_clusters(c, rig, 25);
    CHECK(a.matched.at(1).samples == 5);
    c = {cluster_with_period(rig.find(1)->period_us() + 3, 5), cluster_with_period(rig.find(1)->period_us() - 3, 50)};
    a = associate_clusters(c, rig, 25);
    CHECK(a.matched.at(1).samples == 50);
  }
  SUBCASE("equidistant cluster is discarded") {
    LedRig r;
    r.markers = {{1, {}, 1e6 / 500, 0.01}, {2, {}, 1e6 / 540, 0.01}};
    std::vector<Cluster> c{cluster_with_period(520)};
    const auto a = associate_clusters(c, r, 25);
    CHECK(a.matched.empty());
    CHECK(a.ties_discarded == 1);
  }
  SUBCASE("random clusters: partial injective map within tolerance") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> p(300, 650);
    std::uniform_int_distribution<std::uint32_t> s(1, 100);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<Cluster> c;
      const int n = int(rng() % 9);
      for (int i = 0; i < n; ++i) {
        c.push_back(cluster_with_period(p(rng), s(rng)));
        c.back().pixels = {std::uint32_t(i)};
      }
      const auto a = associate_clusters(c, rig, 25);
      std::set<std::uint32_t> used;
      for (const auto& [id, cl] : a.matched) {
        CHECK(std::abs(cl.period_us - rig.find(id)->period_us()) <= 25);
        CHECK(used.insert(cl.pixels[0]).second);
      }
      CHECK(a.matched.size() + a.unmatched + a.ties_discarded == c.size());
    }
  }
}

TEST_CASE("particle filter") {
  const SensorGeometry g{640, 480};
  ParticleFilterConfig cfg;
  std::mt19937_64 rng(1);

  SUBCASE("stationary observations converge") {
    std::normal_distribution<double> n(0, cfg.measurement_px);
    LedTrack t = make_track(1, {100 + n(rng), 100 + n(rng)}, 0, cfg);
    for (int k = 1; k <= 10; ++k) track_update(t, Eigen::Vector2d(100 + n(rng), 100 + n(rng)), 2500, cfg, rng, g);
    CHECK((t.centroid - Eigen::Vector2d(100, 100)).norm() < 1.0);
  }
  SUBCASE("noiseless constant velocity is recovered exactly") {
    ParticleFilterConfig z = cfg;
    z.process_pos_px = z.process_vel_px = z.measurement_px = 0;
    const Eigen::Vector2d v(1.5, -0.75);
    LedTrack t = make_track(1, {200, 200}, 0, z);
    for (int k = 1; k <= 8; ++k) track_update(t, Eigen::Vector2d(Eigen::Vector2d(200, 200) + k * v), 2500, z, rng, g);
    CHECK((t.velocity - v).norm() < 1e-12);
    CHECK((t.centroid - (Eigen::Vector2d(200, 200) + 8 * v)).norm() < 1e-9);
  }
  SUBCASE("missed batches then an observation inside the gate") {
    LedTrack t = make_track(1, {300, 200}, 0, cfg);
    std::uint64_t now = 0;
    for (int k = 0; k < 5; ++k) {
      track_update(t, Eigen::Vector2d(300, 200), 2500, cfg, rng, g);
      now += 2500;
    }
    const Eigen::Matrix2d before = t.covariance;
    for (int k = 0; k < 5; ++k) track_update(t, std::nullopt, 2500, cfg, rng, g);
    CHECK(t.covariance.trace() > before.trace());
    track_update(t, Eigen::Vector2d(301, 200.5), 2500, cfg, rng, g);
    CHECK_FALSE(t.reinitialized);
  }
  SUBCASE("observation far outside the gate reinitializes") {
    LedTrack t = make_track(1, {300, 200}, 0, cfg);
    for (int k = 0; k < 5; ++k) track_update(t, Eigen::Vector2d(300, 200), 2500, cfg, rng, g);
    track_update(t, Eigen::Vector2d(400, 100), 2500, cfg, rng, g);
    CHECK(t.reinitialized);
    CHECK((t.centroid - Eigen::Vector2d(400, 100)).norm() < 1.0);
  }
  SUBCASE("weights stay normalized and the centroid inside the image") {
    std::uniform_real_distribution<double> u(-5, 645);
    LedTrack t = make_track(1, {1, 1}, 0, cfg);
    for (int k = 0; k < 300; ++k) {
      std::optional<Eigen::Vector2d> obs;
      if (k % 3) obs = Eigen::Vector2d(std::clamp(u(rng), 0.0, 639.0), std::clamp(u(rng), 0.0, 479.0));
      track_update(t, obs, 2500, cfg, rng, g);
      CHECK(std::accumulate(t.weights.begin(), t.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(t.centroid.x() >= 0);
      CHECK(t.centroid.y() >= 0);
      CHECK(t.centroid.x() <= 639);
      CHECK(t.centroid.y() <= 479);
    }
  }
  SUBCASE("steady-state error on a static target does not exceed the measurement noise") {
    // Over 50 seeds: RMS filtered error after burn-in, compared with sigma at 3-sigma confidence
    // of the sample mean of squared errors.
    const double sigma = cfg.measurement_px;
    double sum_sq = 0;
    int n = 0;
    for (int seed = 0; seed < 50; ++seed) {
      std::mt19937_64 r(seed);
      std::normal_distribution<double> noise(0, sigma);
      const Eigen::Vector2d truth(320.3, 240.7);
      LedTrack t = make_track(1, truth + Eigen::Vector2d(noise(r), noise(r)), 0, cfg);
      for (int k = 1; k <= 60; ++k) {
        track_update(t, Eigen::Vector2d(truth + Eigen::Vector2d(noise(r), noise(r))), 2500, cfg, r, g);
        if (k > 20) {
          sum_sq += (t.centroid - truth).squaredNorm() / 2;
          ++n;
        }
      }
    }
    const double rms = std::sqrt(sum_sq / n);
    MESSAGE("per-axis steady-state rms " << rms << " px, sigma " << sigma);
    CHECK(rms <= sigma);
  }
}

TEST_CASE("noise-free LED period is exact") {
  auto scene = static_scene(1.0, 40'000);
  for (auto& m : scene.rig.markers) m.frequency_hz = 1e6 / std::round(m.period_us());  // integer periods
  scene.noise = NoiseModel::ideal();
  auto run = run_scene(scene, 2);
  Sdtv sdtv(scene.camera.geometry(), 15);
  LedDetector det(scene.rig, scene.camera.geometry(), DetectorConfig{}, 2500, 1);
  Detection d;
  for (const auto& b : run.batches) d = det.detect(sdtv, sdtv.ingest(b), b.t_end);
  REQUIRE(d.clusters.size() == 5);
  for (const auto& c : d.clusters) {
    bool exact = false;
    for (const auto& m : scene.rig.markers) exact |= c.period_us == m.period_us();
    CHECK(exact);
  }
}

TEST_CASE("detector on simulated scenes") {
  SUBCASE("clean static scene") {
    auto scene = static_scene(1.0, 50'000);
    scene.noise = NoiseModel::ideal();
    auto run = run_scene(scene, 4);
    Sdtv sdtv(scene.camera.geometry(), min_depth(2500, scene.rig.max_frequency()));
    LedDetector det(scene.rig, scene.camera.geometry(), DetectorConfig{}, 2500, 1);
    const auto truth = truth_at(scene, 0);
    Detection d;
    for (const auto& b : run.batches) {
      d = det.detect(sdtv, sdtv.ingest(b), b.t_end);
      if (b.t_end >= 5000) CHECK(d.clusters.size() == 5);
    }
    REQUIRE(d.centroids.size() == 5);
    CHECK(d.pose_sufficient);
    for (const auto& [id, c] : d.centroids) CHECK((c - truth.marker_pixels.at(id)).norm() < 0.5);
  }
  SUBCASE("empty stream") {
    const auto scene = static_scene(1.0);
    Sdtv sdtv(scene.camera.geometry(), 15);
    LedDetector det(scene.rig, scene.camera.geometry(), DetectorConfig{}, 2500, 1);
    EventBatch b;
    b.t_end = 2500;
    const Detection d = det.detect(sdtv, sdtv.ingest(b), b.t_end);
    CHECK(d.centroids.empty());
    CHECK_FALSE(d.pose_sufficient);
  }
  SUBCASE("one occluded LED") {
    auto scene = static_scene(1.0, 30'000);
    const LedRig full = scene.rig;
    scene.rig.markers.pop_back();
    auto run = run_scene(scene, 5);
    Sdtv sdtv(scene.camera.geometry(), 15);
    LedDetector det(full, scene.camera.geometry(), DetectorConfig{}, 2500, 1);
    Detection d;
    for (const auto& b : run.batches) d = det.detect(sdtv, sdtv.ingest(b), b.t_end);
    CHECK(d.centroids.size() == 4);
    CHECK_FALSE(d.centroids.count(5));
    CHECK(d.pose_sufficient);
  }
  SUBCASE("raising the threshold only removes and splits clusters") {
    // Every cluster found at a higher threshold lies inside one linked
    // component of the lower threshold; no cluster appears in a new place.
    auto scene = static_scene(1.0, 30'000);
    auto run = run_scene(scene, 6);
    Sdtv sdtv(scene.camera.geometry(), 15);
    DetectorConfig cfg;
    int splits = 0;
    for (const auto& b : run.batches) {
      const CountFrame cf = sdtv.ingest(b);
      std::vector<Cluster> prev;
      for (std::uint32_t th = 1; th <= 20; ++th) {
        const auto st = period_stats(sdtv, candidate_pixels(cf, th), cfg);
        const auto all = cluster_candidates(st, scene.camera.geometry(), cfg.link_tol_us, 1, 1 << 30);
        if (th > 1) {
          for (const auto& c : all) {
            int containing = 0;
            for (const auto& p : prev)
              containing += std::includes(p.pixels.begin(), p.pixels.end(), c.pixels.begin(), c.pixels.end());
            CHECK(containing == 1);
          }
          splits += all.size() > prev.size();
        }
        prev = all;
      }
    }
    MESSAGE(splits << " threshold steps split a cluster");
  }
}
