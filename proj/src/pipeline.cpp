#include "evmocap/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "evmocap/error.hpp"
#include "evmocap/ping_pong.hpp"
#include "evmocap/sdtv.hpp"

namespace evmocap {

namespace {

using Clock = std::chrono::steady_clock;
// Events per source read; small reads keep stage 1 close to the batch clock.
constexpr std::size_t kReadChunk = 1 << 12;

double micros(Clock::duration d) { return std::chrono::duration<double, std::micro>(d).count(); }

std::string num(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct BatchSlot {
  EventBatch batch;
  Clock::time_point closed;
  double stage1_us = 0;
};

struct SnapshotSlot {
  StackSnapshot stacks;
  std::uint64_t t_end = 0;
  std::size_t events = 0;
  Clock::time_point closed;
  double stage1_us = 0;
  double stage2_us = 0;
};

// Cuts a time-ordered stream into [origin + i*d, origin + (i+1)*d) windows,
// keeping empty ones. `emit` receives each finished batch.
class StreamBatcher {
 public:
  StreamBatcher(std::uint64_t origin, std::uint64_t d) : t0_(origin), d_(d) {}

  template <class Acquire, class Emit>
  void feed(std::span<const Event> events, Acquire&& acquire, Emit&& emit) {
    for (const auto& e : events) {
      if (e.t < t0_) throw OrderingError("event at t=" + std::to_string(e.t) + " us before the batch origin");
      if (!cur_) cur_ = &acquire();
      while (e.t >= t0_ + d_) {
        close(emit);
        cur_ = &acquire();
      }
      cur_->events.push_back(e);
    }
  }

  template <class Emit>
  void finish(Emit&& emit) {
    if (cur_) close(emit);
  }

 private:
  template <class Emit>
  void close(Emit&& emit) {
    cur_->t_start = t0_;
    cur_->t_end = t0_ + d_;
    t0_ += d_;
    EventBatch* done = cur_;
    cur_ = nullptr;
    emit(*done);
  }

  std::uint64_t t0_, d_;
  EventBatch* cur_ = nullptr;
};

void record_detection(PipelineStats& st, const LedRig& rig, const BatchResult& r) {
  bool all_t = true, all_o = true;
  for (const auto& m : rig.markers) {
    const bool t = r.detection.centroids.count(m.id) > 0, o = r.detection.observed.count(m.id) > 0;
    st.tracked[m.id] += t;
    st.observed[m.id] += o;
    all_t &= t;
    all_o &= o;
  }
  st.all_tracked += all_t;
  st.all_observed += all_o;
}

}  // namespace

std::uint32_t PipelineConfig::depth() const { return min_depth(window_us, rig.max_frequency()); }

std::vector<std::string> validate_pipeline_config(const PipelineConfig& config) {
  std::vector<std::string> warnings;
  auto take = [&](const std::vector<Diagnostic>& diags) {
    for (const auto& d : diags) {
      if (d.severity == Diagnostic::Severity::Error) throw ConfigError(d.rule, d.rule + ": " + d.message);
      if (d.severity == Diagnostic::Severity::Warning) warnings.push_back(d.rule + ": " + d.message);
    }
  };
  take(validate_rig(config.rig, config.detector.match_tol_us));
  take(validate_batch_rate(config.rig, config.batch_us));
  if (config.window_us < config.batch_us)
    throw ConfigError("window_length", "window_length: SDTV window must be at least the batch duration");
  if (!config.camera.geometry().valid()) throw ConfigError("camera", "camera: invalid sensor geometry");
  return warnings;
}

// ------------------------------------------------------------------ sinks

void JsonlPoseSink::write(const PoseRecord& r) {
  nlohmann::ordered_json j;
  j["t_us"] = r.t_us;
  j["frame"] = "world";
  j["position_m"] = {r.position_m.x(), r.position_m.y(), r.position_m.z()};
  j["quaternion_wxyz"] = {r.orientation.w(), r.orientation.x(), r.orientation.y(), r.orientation.z()};
  j["leds_used"] = r.leds_used;
  j["reproj_rmse_px"] = r.reproj_rmse_px;
  if (r.latency_us)
    j["latency_us"] = *r.latency_us;
  else
    j["latency_us"] = nullptr;
  os_ << j.dump() << '\n';
  if (!os_) throw Error("pose sink write failed");
}

void JsonlPoseSink::flush() {
  os_.flush();
  if (!os_) throw Error("pose sink flush failed");
}

CsvPoseSink::CsvPoseSink(std::ostream& os) : os_(os) {
  os_ << "t_us,frame,position_x_m,position_y_m,position_z_m,qw,qx,qy,qz,leds_used,reproj_rmse_px,latency_us\n";
}

void CsvPoseSink::write(const PoseRecord& r) {
  const auto& p = r.position_m;
  const auto& q = r.orientation;
  os_ << r.t_us << ",world," << num(p.x()) << ',' << num(p.y()) << ',' << num(p.z()) << ',' << num(q.w()) << ','
      << num(q.x()) << ',' << num(q.y()) << ',' << num(q.z()) << ',' << r.leds_used << ',' << num(r.reproj_rmse_px)
      << ',' << (r.latency_us ? num(*r.latency_us) : std::string()) << '\n';
  if (!os_) throw Error("pose sink write failed");
}

void CsvPoseSink::flush() {
  os_.flush();
  if (!os_) throw Error("pose sink flush failed");
}

std::vector<PoseRecord> read_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pose file " + path.string());
  std::vector<PoseRecord> out;
  std::string line;
  if (path.extension() == ".csv") {
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      if (f.size() < 11) throw Error("malformed pose row: " + line);
      PoseRecord r;
      r.t_us = std::stoull(f[0]);
      r.position_m = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4])};
      r.orientation = Eigen::Quaterniond(std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[8]));
      r.leds_used = std::stoul(f[9]);
      r.reproj_rmse_px = std::stod(f[10]);
      if (f.size() > 11 && !f[11].empty()) r.latency_us = std::stod(f[11]);
      out.push_back(r);
    }
    return out;
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PoseRecord r;
    r.t_us = j.at("t_us").get<std::uint64_t>();
    const auto& p = j.at("position_m");
    const auto& q = j.at("quaternion_wxyz");
    r.position_m = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
    r.orientation = Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
    r.leds_used = j.at("leds_used").get<std::size_t>();
    r.reproj_rmse_px = j.at("reproj_rmse_px").get<double>();
    if (j.contains("latency_us") && !j["latency_us"].is_null()) r.latency_us = j["latency_us"].get<double>();
    out.push_back(r);
  }
  return out;
}

// ------------------------------------------------------------------ stats

double PipelineStats::detection_rate(int led) const {
  auto it = tracked.find(led);
  return processed && it != tracked.end() ? double(it->second) / double(processed) : 0.0;
}

double PipelineStats::observation_rate(int led) const {
  auto it = observed.find(led);
  return processed && it != observed.end() ? double(it->second) / double(processed) : 0.0;
}

double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const std::size_t i = std::size_t(std::floor(pos));
  const double f = pos - double(i);
  return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
}

// ------------------------------------------------------------------ stage 3

PoseStage::PoseStage(const PipelineConfig& config)
    : config_(config), detector_(config.rig, config.camera.geometry(), config.detector, config.batch_us, config.seed) {}

BatchResult PoseStage::process(const StackSnapshot& stacks, std::uint64_t t_end_us) {
  BatchResult r;
  r.detection = detector_.detect(stacks, t_end_us);
  if (r.detection.pose_sufficient)
    r.pose = estimate_pose(r.detection.centroids, t_end_us, config_.rig, config_.camera, config_.t_cw, config_.solver);
  return r;
}

std::optional<PoseRecord> estimate_pose(const std::map<int, Eigen::Vector2d>& centroids, std::uint64_t t_us,
                                        const LedRig& rig, const DsCamera& camera, const Transform& t_cw,
                                        PnpSolver solver) {
  std::vector<Correspondence> corr;
  std::vector<Eigen::Vector3d> body;
  std::vector<Eigen::Vector2d> pixels;
  for (const auto& [id, uv] : centroids) {
    const LedSpec* m = rig.find(id);
    if (!m) continue;
    try {
      corr.push_back({m->position, camera.undistort_to_normalized(uv)});
    } catch (const ProjectionError&) {
      continue;
    }
    body.push_back(m->position);
    pixels.push_back(uv);
  }
  if (corr.size() < 4) return std::nullopt;
  PoseEstimate est;
  try {
    est = solve_pnp(corr, solver);
  } catch (const PnpError&) {
    return std::nullopt;
  }
  const Transform t_wb = to_world(est.t_cb, t_cw);
  PoseRecord p;
  p.t_us = t_us;
  p.position_m = t_wb.translation;
  p.orientation = t_wb.rotation;
  if (p.orientation.w() < 0) p.orientation.coeffs() *= -1;
  p.leds_used = corr.size();
  p.reproj_rmse_px = reprojection_rmse_px(est.t_cb, body, pixels, camera);
  return p;
}

// ------------------------------------------------------------------ runs

PipelineStats run_pipeline(EventSource& source, const PipelineConfig& config, PoseSink& sink,
                           const BatchObserver& observer) {
  PipelineStats st;
  st.warnings = validate_pipeline_config(config);
  const SensorGeometry geometry = config.camera.geometry();
  if (source.geometry() != geometry) throw ConfigError("camera", "camera: source geometry differs from the intrinsics");

  PingPong<BatchSlot> q12(config.allow_drops);
  PingPong<SnapshotSlot> q23(config.allow_drops);
  std::atomic<bool> stop{false};
  std::mutex err_mu;
  auto fail = [&](const std::string& what) {
    std::lock_guard<std::mutex> lock(err_mu);
    if (!st.error) st.error = what;
    stop = true;
  };

  std::uint64_t events = 0, produced = 0;
  double max_lag = 0;
  const auto wall0 = Clock::now();

  std::thread stage1([&] {
    try {
      StreamBatcher batcher(config.t_origin_us, config.batch_us);
      std::vector<Event> buf;
      Clock::time_point opened = Clock::now();
      BatchSlot* slot = nullptr;
      auto acquire = [&]() -> EventBatch& {
        slot = &q12.begin_write();
        slot->batch.events.clear();
        opened = Clock::now();
        return slot->batch;
      };
      auto emit = [&](EventBatch& b) {
        BatchSlot& s = *slot;
        s.stage1_us = micros(Clock::now() - opened);
        if (config.paced) {
          const auto due = wall0 + std::chrono::microseconds(b.t_end - config.t_origin_us);
          std::this_thread::sleep_until(due);
          max_lag = std::max(max_lag, micros(Clock::now() - due));
        }
        s.closed = Clock::now();
        ++produced;
        q12.publish();
      };
      while (!stop) {
        buf.clear();
        if (source.read(buf, kReadChunk) == 0) break;
        events += buf.size();
        batcher.feed(buf, acquire, emit);
      }
      if (!stop) batcher.finish(emit);
    } catch (const std::exception& e) {
      fail(e.what());
    }
    q12.close();
  });

  std::thread stage2([&] {
    Sdtv sdtv(geometry, config.depth());
    CountFrame counts(geometry);
    const std::uint32_t threshold = rate_threshold(config.batch_us, config.rig.min_frequency(), config.detector.beta);
    std::vector<std::uint32_t> cand;
    while (BatchSlot* in = q12.begin_read()) {
      if (stop) {
        q12.end_read();
        continue;
      }
      try {
        const auto t = Clock::now();
        counts.clear();
        sdtv.ingest(in->batch.events, counts);
        cand = candidate_pixels(counts, threshold);
        SnapshotSlot& out = q23.begin_write();
        sdtv.snapshot(cand, out.stacks);
        out.t_end = in->batch.t_end;
        out.events = in->batch.events.size();
        out.closed = in->closed;
        out.stage1_us = in->stage1_us;
        out.stage2_us = micros(Clock::now() - t);
        q12.end_read();
        q23.publish();
      } catch (const std::exception& e) {
        q12.end_read();
        fail(e.what());
      }
    }
    q23.close();
  });

  std::thread stage3([&] {
    PoseStage pose_stage(config);
    while (SnapshotSlot* in = q23.begin_read()) {
      if (stop) {
        q23.end_read();
        continue;
      }
      try {
        const auto t = Clock::now();
        if (config.stage3_delay_us) std::this_thread::sleep_for(std::chrono::microseconds(config.stage3_delay_us));
        BatchResult r = pose_stage.process(in->stacks, in->t_end);
        const double stage3 = micros(Clock::now() - t);
        if (r.pose) {
          const double latency = micros(Clock::now() - in->closed) + double(config.batch_us);
          st.latency_us.push_back(latency);
          if (config.record_latency) r.pose->latency_us = latency;
          sink.write(*r.pose);
          ++st.poses;
        }
        st.stage1_us.push_back(in->stage1_us);
        st.stage2_us.push_back(in->stage2_us);
        st.stage3_us.push_back(stage3);
        ++st.processed;
        record_detection(st, config.rig, r);
        if (observer) observer(r);
      } catch (const std::exception& e) {
        fail(e.what());
      }
      q23.end_read();
    }
  });

  stage1.join();
  stage2.join();
  stage3.join();
  try {
    sink.flush();
  } catch (const std::exception& e) {
    if (!st.error) st.error = e.what();
  }
  st.wall_s = std::chrono::duration<double>(Clock::now() - wall0).count();
  st.events = events;
  st.produced = produced;
  st.dropped = produced - st.processed;
  st.max_source_lag_us = max_lag;
  st.data_s = double(produced * config.batch_us) * 1e-6;
  return st;
}

PipelineStats run_reference(EventSource& source, const PipelineConfig& config, PoseSink& sink,
                            const BatchObserver& observer) {
  PipelineStats st;
  st.warnings = validate_pipeline_config(config);
  const SensorGeometry geometry = config.camera.geometry();
  if (source.geometry() != geometry) throw ConfigError("camera", "camera: source geometry differs from the intrinsics");
  const auto wall0 = Clock::now();

  Sdtv sdtv(geometry, config.depth());
  CountFrame counts(geometry);
  const std::uint32_t threshold = rate_threshold(config.batch_us, config.rig.min_frequency(), config.detector.beta);
  PoseStage pose_stage(config);
  StackSnapshot snap;
  EventBatch batch;
  Clock::time_point opened = Clock::now();

  auto acquire = [&]() -> EventBatch& {
    batch.events.clear();
    opened = Clock::now();
    return batch;
  };
  auto emit = [&](EventBatch& b) {
    ++st.produced;
    const double s1 = micros(Clock::now() - opened);
    const auto closed = Clock::now();
    auto t = Clock::now();
    counts.clear();
    sdtv.ingest(b.events, counts);
    sdtv.snapshot(candidate_pixels(counts, threshold), snap);
    const double s2 = micros(Clock::now() - t);
    t = Clock::now();
    BatchResult r = pose_stage.process(snap, b.t_end);
    const double s3 = micros(Clock::now() - t);
    if (r.pose) {
      const double latency = micros(Clock::now() - closed) + double(config.batch_us);
      st.latency_us.push_back(latency);
      if (config.record_latency) r.pose->latency_us = latency;
      sink.write(*r.pose);
      ++st.poses;
    }
    st.stage1_us.push_back(s1);
    st.stage2_us.push_back(s2);
    st.stage3_us.push_back(s3);
    ++st.processed;
    record_detection(st, config.rig, r);
    if (observer) observer(r);
  };

  try {
    StreamBatcher batcher(config.t_origin_us, config.batch_us);
    std::vector<Event> buf;
    while (true) {
      buf.clear();
      if (source.read(buf, kReadChunk) == 0) break;
      st.events += buf.size();
      batcher.feed(buf, acquire, emit);
    }
    batcher.finish(emit);
    sink.flush();
  } catch (const std::exception& e) {
    st.error = e.what();
  }
  st.wall_s = std::chrono::duration<double>(Clock::now() - wall0).count();
  st.dropped = st.produced - st.processed;
  st.data_s = double(st.produced * config.batch_us) * 1e-6;
  return st;
}

}  // namespace evmocap
