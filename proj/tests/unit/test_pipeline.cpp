#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "evmocap/error.hpp"
#include "evmocap/ping_pong.hpp"
#include "evmocap/pipeline.hpp"
#include "evmocap/simulator.hpp"

using namespace evmocap;

namespace {

PipelineConfig config_for(const SimScene& scene) {
  PipelineConfig c;
  c.rig = scene.rig;
  c.camera = scene.camera;
  c.t_cw = scene.t_cw;
  return c;
}

// One short simulated scene shared by the tests that only need some events.
const std::vector<Event>& short_stream() {
  static const std::vector<Event> events = simulate_events(static_scene(1.0, 500'000), 5);
  return events;
}

bool has_warning(const PipelineStats& st, const std::string& rule) {
  return std::any_of(st.warnings.begin(), st.warnings.end(),
                     [&](const std::string& w) { return w.rfind(rule + ":", 0) == 0; });
}

class FailingSink final : public PoseSink {
 public:
  explicit FailingSink(int ok) : ok_(ok) {}
  void write(const PoseRecord&) override {
    if (written == ok_) throw Error("disk full");
    ++written;
  }
  int written = 0;

 private:
  int ok_;
};

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("evmocap_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("ping-pong drops the unread generation when both slots are busy") {
  PingPong<int> q(true);
  q.begin_write() = 1;
  q.publish();
  q.begin_write() = 2;
  q.publish();  // generation 1 never read
  CHECK(q.dropped() == 1);

  int* r = q.begin_read();
  REQUIRE(r);
  CHECK(*r == 2);

  q.begin_write() = 3;
  q.publish();
  q.begin_write() = 4;  // reader holds 2, 3 waits: 3 is reclaimed
  CHECK(q.dropped() == 2);
  q.publish();
  q.end_read();

  r = q.begin_read();
  REQUIRE(r);
  CHECK(*r == 4);
  q.end_read();
  q.close();
  CHECK(q.begin_read() == nullptr);
  CHECK(q.published_count() == 4);
}

TEST_CASE("ping-pong accounting under concurrent use") {
  for (bool drops : {true, false}) {
    CAPTURE(drops);
    PingPong<std::uint64_t> q(drops);
    constexpr std::uint64_t n = 5000;
    std::vector<std::uint64_t> seen;
    std::thread consumer([&] {
      std::mt19937 rng(3);
      while (std::uint64_t* v = q.begin_read()) {
        seen.push_back(*v);
        if (rng() % 8 == 0) std::this_thread::sleep_for(std::chrono::microseconds(50));
        q.end_read();
      }
    });
    for (std::uint64_t i = 1; i <= n; ++i) {
      q.begin_write() = i;
      q.publish();
    }
    q.close();
    consumer.join();

    CHECK(std::is_sorted(seen.begin(), seen.end()));
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    CHECK(seen.size() + q.dropped() == n);
    CHECK(seen.back() == n);  // the last generation is never dropped
    if (!drops) CHECK(q.dropped() == 0);
  }
}

TEST_CASE("empty source yields no batches") {
  const SimScene scene = static_scene(1.0, 1000);
  SpanEventSource src(scene.camera.geometry(), {});
  MemoryPoseSink sink;
  const PipelineStats st = run_pipeline(src, config_for(scene), sink);
  CHECK(st.produced == 0);
  CHECK(st.processed == 0);
  CHECK(st.dropped == 0);
  CHECK(sink.records.empty());
  CHECK_FALSE(st.error);
}

TEST_CASE("threaded run reproduces the sequential reference byte for byte") {
  const SimScene scene = static_scene(1.0, 500'000);
  PipelineConfig c = config_for(scene);
  c.allow_drops = false;
  c.record_latency = false;

  auto run = [&](bool threaded) {
    SpanEventSource src(scene.camera.geometry(), short_stream());
    std::ostringstream os;
    JsonlPoseSink sink(os);
    const PipelineStats st = threaded ? run_pipeline(src, c, sink) : run_reference(src, c, sink);
    CHECK(st.dropped == 0);
    CHECK(st.processed == st.produced);
    return std::make_pair(os.str(), st);
  };
  const auto [ref, ref_st] = run(false);
  const auto [a, a_st] = run(true);
  const auto [b, b_st] = run(true);
  CHECK(ref_st.produced == 200);
  CHECK(ref_st.poses > 190);
  CHECK(a == ref);
  CHECK(b == ref);
  CHECK(ref.find("\"latency_us\":null") != std::string::npos);
}

TEST_CASE("slow stage 3 drops batches without stalling the source") {
  const SimScene scene = static_scene(1.0, 500'000);
  PipelineConfig c = config_for(scene);
  c.paced = true;
  c.stage3_delay_us = 10'000;
  SpanEventSource src(scene.camera.geometry(), short_stream());
  MemoryPoseSink sink;
  const PipelineStats st = run_pipeline(src, c, sink);

  CHECK(st.produced == 200);
  CHECK(st.dropped == st.produced - st.processed);
  // Stage 3 manages at most one batch per 10 ms of the 500 ms stream.
  CHECK(st.processed <= 60);
  CHECK(st.dropped >= 140);
  // The source kept the batch clock: it finished close to the stream duration
  // instead of waiting 200 x 10 ms for stage 3.
  CHECK(st.wall_s < 0.5 + 0.25);
}

TEST_CASE("latency covers the batch and the processing") {
  const SimScene scene = static_scene(1.0, 500'000);
  PipelineConfig c = config_for(scene);
  SpanEventSource src(scene.camera.geometry(), short_stream());
  MemoryPoseSink sink;
  const PipelineStats st = run_pipeline(src, c, sink);
  REQUIRE(st.poses == sink.records.size());
  REQUIRE(st.latency_us.size() == sink.records.size());
  for (std::size_t i = 0; i < sink.records.size(); ++i) {
    REQUIRE(sink.records[i].latency_us);
    CHECK(*sink.records[i].latency_us >= double(c.batch_us));
    CHECK(*sink.records[i].latency_us == st.latency_us[i]);
  }
  CHECK(st.stage1_us.size() == st.processed);
  CHECK(st.stage3_us.size() == st.processed);
}

TEST_CASE("batch rate above half the slowest LED frequency warns") {
  const SimScene scene = static_scene(1.0, 100'000);
  PipelineConfig c = config_for(scene);
  c.batch_us = 1000;
  SpanEventSource src(scene.camera.geometry(), {});
  MemoryPoseSink sink;
  CHECK(has_warning(run_pipeline(src, c, sink), "batch_rate_limit"));

  c.batch_us = 2500;
  CHECK_FALSE(has_warning(run_pipeline(src, c, sink), "batch_rate_limit"));

  c.window_us = 1000;
  CHECK_THROWS_AS(run_pipeline(src, c, sink), ConfigError);
}

TEST_CASE("sink failure stops the run with partial stats") {
  const SimScene scene = static_scene(1.0, 500'000);
  for (bool threaded : {true, false}) {
    CAPTURE(threaded);
    SpanEventSource src(scene.camera.geometry(), short_stream());
    FailingSink sink(3);
    PipelineConfig c = config_for(scene);
    c.allow_drops = false;
    const PipelineStats st = threaded ? run_pipeline(src, c, sink) : run_reference(src, c, sink);
    REQUIRE(st.error);
    CHECK(st.error->find("disk full") != std::string::npos);
    CHECK(sink.written == 3);
    CHECK(st.poses == 3);
    CHECK(st.produced < 200);
  }
}

TEST_CASE("pose files round trip in both formats") {
  PoseRecord a;
  a.t_us = 2500;
  a.position_m = {1.0 / 3, -2.5e-7, 1.125};
  a.orientation = Eigen::Quaterniond(0.9, 0.1, -0.3, 0.2).normalized();
  a.leds_used = 5;
  a.reproj_rmse_px = 0.123456789;
  a.latency_us = 3141.5;
  PoseRecord b = a;
  b.t_us = 5000;
  b.latency_us.reset();

  for (const std::string ext : {".csv", ".jsonl"}) {
    CAPTURE(ext);
    const auto path = temp_path("poses" + ext);
    {
      std::ofstream os(path);
      std::unique_ptr<PoseSink> sink;
      if (ext == ".csv")
        sink = std::make_unique<CsvPoseSink>(os);
      else
        sink = std::make_unique<JsonlPoseSink>(os);
      sink->write(a);
      sink->write(b);
      sink->flush();
    }
    const auto back = read_pose_file(path);
    std::filesystem::remove(path);
    REQUIRE(back.size() == 2);
    for (int i = 0; i < 2; ++i) {
      const PoseRecord& want = i == 0 ? a : b;
      CHECK(back[i].t_us == want.t_us);
      CHECK(back[i].position_m == want.position_m);
      CHECK(back[i].orientation.coeffs() == want.orientation.coeffs());
      CHECK(back[i].leds_used == want.leds_used);
      CHECK(back[i].reproj_rmse_px == want.reproj_rmse_px);
      CHECK(back[i].latency_us == want.latency_us);
    }
  }
}

TEST_CASE("noise-free scene: exact centroids give the exact pose") {
  SimScene scene = static_scene(1.0, 10'000);
  const TruthRecord truth = truth_at(scene, 0);
  std::vector<Correspondence> corr;
  std::vector<Eigen::Vector3d> body;
  std::vector<Eigen::Vector2d> pixels;
  for (const auto& [id, uv] : truth.marker_pixels) {
    corr.push_back({scene.rig.find(id)->position, scene.camera.undistort_to_normalized(uv)});
    body.push_back(scene.rig.find(id)->position);
    pixels.push_back(uv);
  }
  const PoseEstimate est = solve_pnp(corr, PnpSolver::Sqpnp);
  const Transform t_wb = to_world(est.t_cb, scene.t_cw);
  CHECK(reprojection_rmse_px(est.t_cb, body, pixels, scene.camera) < 1e-3);
  CHECK((t_wb.translation - truth.t_wb.translation).norm() < 1e-4);
}

TEST_CASE("noise-free scene: the full loop is limited by centroid quantization") {
  SimScene scene = static_scene(1.0, 500'000);
  scene.noise = NoiseModel::ideal();
  const auto events = simulate_events(scene, 3);
  SpanEventSource src(scene.camera.geometry(), events);
  MemoryPoseSink sink;
  const PipelineStats st = run_reference(src, config_for(scene), sink);
  REQUIRE(st.poses >= 195);

  // A centroid may sit up to half a pixel off per axis, so the marker spacing
  // can be off by one pixel; depth scales with spacing.
  const TruthRecord truth = truth_at(scene, 0);
  const double spacing_px = (truth.marker_pixels.at(1) - truth.marker_pixels.at(2)).norm();
  const double depth_bound = truth.t_wb.translation.norm() / spacing_px;
  for (const auto& r : sink.records) {
    CHECK((r.position_m - truth.t_wb.translation).norm() < depth_bound);
    CHECK(r.reproj_rmse_px < 0.5);
  }
}
