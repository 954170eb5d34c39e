#include "evmocap/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "evmocap/error.hpp"
#include "evmocap/event_file.hpp"

namespace evmocap {

namespace {

constexpr std::uint64_t kChunkUs = 10000;
constexpr double kJitterClip = 4.0;  // jitter and lag draws are clipped at 4 sigma

bool event_less(const Event& a, const Event& b) {
  if (a.t != b.t) return a.t < b.t;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  return a.polarity < b.polarity;
}

double clipped_normal(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0) return 0;
  std::normal_distribution<double> n(0, 1);
  return sigma * std::clamp(n(rng), -kJitterClip, kJitterClip);
}

std::uint64_t to_tick(double t) { return t <= 0 ? 0 : std::uint64_t(std::llround(t)); }

}  // namespace

double NoiseModel::detection_probability(double r) const {
  const double core = std::min(blob_core_px, blob_radius_px);
  if (r < 0 || r >= blob_radius_px) return r <= core && r >= 0 ? beta_sim : 0.0;
  if (r <= core) return beta_sim;
  return beta_sim * std::cos(0.5 * M_PI * (r - core) / (blob_radius_px - core));
}

NoiseModel NoiseModel::ideal() {
  NoiseModel n;
  n.beta_sim = 1;
  n.double_event_prob = 0;
  n.blob_spurious_rate = 0;
  n.background_rate = 0;
  n.jitter_us = 0;
  n.double_lag_jitter_us = 0;
  return n;
}

// ---------------------------------------------------------------- trajectory

Trajectory::Trajectory(Kind kind, std::vector<Sample> samples) : kind_(kind), samples_(std::move(samples)) {
  if (samples_.empty()) throw SceneError("trajectory needs at least one sample");
  for (std::size_t i = 1; i < samples_.size(); ++i)
    if (samples_[i].t_us <= samples_[i - 1].t_us) throw SceneError("trajectory samples must increase in time");
  for (auto& s : samples_) s.t_wb.rotation.normalize();
}

Transform Trajectory::at(std::uint64_t t_us) const {
  if (samples_.size() == 1 || t_us <= samples_.front().t_us) return samples_.front().t_wb;
  if (t_us >= samples_.back().t_us) return samples_.back().t_wb;
  auto it = std::upper_bound(samples_.begin(), samples_.end(), t_us,
                             [](std::uint64_t t, const Sample& s) { return t < s.t_us; });
  const Sample& b = *it;
  const Sample& a = *(it - 1);
  const double w = double(t_us - a.t_us) / double(b.t_us - a.t_us);
  return Transform(a.t_wb.rotation.slerp(w, b.t_wb.rotation),
                   (1 - w) * a.t_wb.translation + w * b.t_wb.translation);
}

Trajectory Trajectory::fixed(const Transform& t_wb) { return Trajectory(Kind::Static, {{0, t_wb}}); }

Trajectory Trajectory::rectangle(const RectangleParams& p, const Eigen::Quaterniond& orientation,
                                 std::uint64_t duration_us) {
  const double r = p.corner_radius;
  const double w = p.x_max - p.x_min - 2 * r, h = p.y_max - p.y_min - 2 * r;
  if (w < 0 || h < 0 || r < 0) throw SceneError("rectangle smaller than its corner radius");
  if (!(p.speed_mps > 0)) throw SceneError("rectangle speed must be positive");
  const double arc = 0.5 * M_PI * r;
  // Counter-clockwise from the bottom of the x_min edge, moving +y.
  const double lengths[8] = {h, arc, w, arc, h, arc, w, arc};
  double perimeter = 0;
  for (double l : lengths) perimeter += l;

  auto point = [&](double s) -> Eigen::Vector2d {
    s = std::fmod(s, perimeter);
    if (s < 0) s += perimeter;
    const Eigen::Vector2d c_tl(p.x_min + r, p.y_max - r), c_tr(p.x_max - r, p.y_max - r),
        c_br(p.x_max - r, p.y_min + r), c_bl(p.x_min + r, p.y_min + r);
    auto on_arc = [&](const Eigen::Vector2d& c, double a0, double f) {
      const double a = a0 - 0.5 * M_PI * f;  // clockwise in angle for this traversal
      return Eigen::Vector2d(c + r * Eigen::Vector2d(std::cos(a), std::sin(a)));
    };
    int seg = 0;
    while (seg < 7 && s > lengths[seg]) s -= lengths[seg++];
    const double f = lengths[seg] > 0 ? s / lengths[seg] : 0;
    switch (seg) {
      case 0:
        return {p.x_min, p.y_min + r + s};
      case 1:
        return on_arc(c_tl, M_PI, f);
      case 2:
        return {p.x_min + r + s, p.y_max};
      case 3:
        return on_arc(c_tr, 0.5 * M_PI, f);
      case 4:
        return {p.x_max, p.y_max - r - s};
      case 5:
        return on_arc(c_br, 0, f);
      case 6:
        return {p.x_max - r - s, p.y_min};
      default:
        return on_arc(c_bl, -0.5 * M_PI, f);
    }
  };

  if (p.start.x() != p.x_min || p.start.y() < p.y_min + r || p.start.y() > p.y_max - r)
    throw SceneError("rectangle start must lie on the straight part of the x_min edge");
  const double s0 = p.start.y() - (p.y_min + r);
  std::vector<Sample> samples;
  for (std::uint64_t t = 0; t <= duration_us + 1000; t += 1000) {
    const Eigen::Vector2d xy = point(s0 + p.speed_mps * double(t) * 1e-6);
    samples.push_back({t, Transform(orientation, Eigen::Vector3d(xy.x(), xy.y(), p.z))});
  }
  return Trajectory(Kind::Rectangle, std::move(samples));
}

Trajectory Trajectory::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SceneError("cannot open trajectory " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("t_us,x,y,z,qw,qx,qy,qz", 0) != 0)
    throw SceneError("trajectory csv must start with header t_us,x,y,z,qw,qx,qy,qz");
  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Sample s;
    double x, y, z, qw, qx, qy, qz;
    if (!(ss >> s.t_us >> x >> y >> z >> qw >> qx >> qy >> qz)) throw SceneError("malformed trajectory row: " + line);
    s.t_wb = Transform(Eigen::Quaterniond(qw, qx, qy, qz).normalized(), Eigen::Vector3d(x, y, z));
    samples.push_back(s);
  }
  return Trajectory(Kind::Csv, std::move(samples));
}

void Trajectory::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "t_us,x,y,z,qw,qx,qy,qz\n";
  for (const auto& s : samples_) {
    const auto& q = s.t_wb.rotation;
    const auto& t = s.t_wb.translation;
    out << s.t_us << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.w() << ',' << q.x() << ',' << q.y()
        << ',' << q.z() << '\n';
  }
}

// --------------------------------------------------------------- scene setup

LedRig default_rig(double square_mm, double center_raise_mm) {
  const double h = 0.5e-3 * square_mm, c = 1e-3 * center_raise_mm;
  LedRig rig;
  rig.markers = {
      {1, {-h, -h, 0}, 1730, 0.0066}, {2, {h, -h, 0}, 1980, 0.0075}, {3, {h, h, 0}, 2290, 0.0087},
      {4, {-h, h, 0}, 2610, 0.0099},  {5, {0, 0, c}, 2860, 0.0109},
  };
  return rig;
}

DsCamera default_camera() { return DsCamera::from_horizontal_fov(22.0 * M_PI / 180.0, {640, 480}); }

Transform default_t_cw() {
  Eigen::Matrix3d R;
  R << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  return Transform(Eigen::Quaterniond(R), Eigen::Vector3d::Zero());
}

Eigen::Quaterniond facing_orientation(const Transform& t_cw) {
  // Body z toward the camera: R_CB = diag(1, -1, -1).
  const Eigen::Matrix3d r_cb = Eigen::Vector3d(1, -1, -1).asDiagonal();
  return Eigen::Quaterniond(t_cw.matrix3().transpose() * r_cb).normalized();
}

Trajectory facing_trajectory(const Transform& t_cw, double distance_m) {
  const Transform t_cb(Eigen::Quaterniond(Eigen::Matrix3d(Eigen::Vector3d(1, -1, -1).asDiagonal())),
                       Eigen::Vector3d(0, 0, distance_m));
  return Trajectory::fixed(t_cw.inverse() * t_cb);
}

SimScene static_scene(double distance_m, std::uint64_t duration_us) {
  SimScene s;
  s.rig = default_rig();
  s.camera = default_camera();
  s.t_cw = default_t_cw();
  s.trajectory = facing_trajectory(s.t_cw, distance_m);
  s.duration_us = duration_us;
  return s;
}

std::vector<std::string> validate_scene(const SimScene& scene) {
  std::vector<std::string> warnings;
  const auto g = scene.camera.geometry();
  const std::uint64_t step = 10000;
  for (const auto& m : scene.rig.markers) {
    bool reported = false;
    for (std::uint64_t t = 0; t <= scene.duration_us && !reported; t += step) {
      const Eigen::Vector3d p = scene.t_cb(t) * m.position;
      if (p.z() <= 0) throw SceneError("marker " + std::to_string(m.id) + " behind the camera at t=" + std::to_string(t));
      bool inside = scene.camera.in_projection_domain(p);
      if (inside) {
        const Eigen::Vector2d uv = scene.camera.project(p);
        inside = uv.x() >= 0 && uv.y() >= 0 && uv.x() <= g.width - 1 && uv.y() <= g.height - 1;
      }
      if (!inside) {
        warnings.push_back("marker " + std::to_string(m.id) + " leaves the image at t=" + std::to_string(t) + " us");
        reported = true;
      }
    }
  }
  return warnings;
}

TruthRecord truth_at(const SimScene& scene, std::uint64_t t_us) {
  TruthRecord r;
  r.t_us = t_us;
  r.t_wb = scene.trajectory.at(t_us);
  const Transform t_cb = scene.t_cw * r.t_wb;
  for (const auto& m : scene.rig.markers) {
    const Eigen::Vector3d p = t_cb * m.position;
    if (scene.camera.in_projection_domain(p) && p.z() > 0) r.marker_pixels[m.id] = scene.camera.project(p);
  }
  return r;
}

void write_truth_jsonl(std::ostream& os, const TruthRecord& r) {
  nlohmann::ordered_json j;
  j["t_us"] = r.t_us;
  const auto& t = r.t_wb.translation;
  const auto& q = r.t_wb.rotation;
  j["position_m"] = {t.x(), t.y(), t.z()};
  j["quaternion_wxyz"] = {q.w(), q.x(), q.y(), q.z()};
  nlohmann::ordered_json px = nlohmann::ordered_json::object();
  for (const auto& [id, uv] : r.marker_pixels) px[std::to_string(id)] = {uv.x(), uv.y()};
  j["marker_pixels"] = px;
  os << j.dump() << '\n';
}

std::vector<TruthRecord> read_truth_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open truth file " + path.string());
  std::vector<TruthRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TruthRecord r;
    r.t_us = j.at("t_us").get<std::uint64_t>();
    const auto& p = j.at("position_m");
    const auto& q = j.at("quaternion_wxyz");
    r.t_wb = Transform(Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()),
                       Eigen::Vector3d(p[0].get<double>(), p[1].get<double>(), p[2].get<double>()));
    if (j.contains("marker_pixels"))
      for (const auto& [k, v] : j["marker_pixels"].items())
        r.marker_pixels[std::stoi(k)] = Eigen::Vector2d(v[0].get<double>(), v[1].get<double>());
    out.push_back(r);
  }
  return out;
}

// ----------------------------------------------------------------- generator

SimulatorSource::SimulatorSource(SimScene scene, std::uint64_t seed) : scene_(std::move(scene)), seed_(seed) {
  std::mt19937_64 rng(seed);
  for (const auto& m : scene_.rig.markers) {
    std::uniform_real_distribution<double> u(0, m.period_us());
    phases_.push_back(scene_.randomize_phase ? u(rng) : 0.0);
  }
}

void SimulatorSource::generate_chunk() {
  const NoiseModel& nm = scene_.noise;
  const SensorGeometry g = scene_.camera.geometry();
  const std::uint64_t c0 = next_chunk_ * kChunkUs;
  const std::uint64_t c1 = std::min(c0 + kChunkUs, scene_.duration_us);
  std::seed_seq seq{std::uint64_t(seed_ & 0xffffffffu), std::uint64_t(seed_ >> 32), next_chunk_};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0, 1);
  std::bernoulli_distribution coin(0.5);
  const double margin = kJitterClip * nm.jitter_us + nm.double_lag_us + kJitterClip * nm.double_lag_jitter_us + 1;

  auto emit = [&](std::uint32_t x, std::uint32_t y, int pol, double t) {
    const std::uint64_t tick = to_tick(t);
    if (tick < scene_.duration_us) pending_.emplace_back(std::uint16_t(x), std::uint16_t(y), std::int8_t(pol), tick);
  };
  auto maybe_double = [&](std::uint32_t x, std::uint32_t y, int pol, double t) {
    if (nm.double_event_prob > 0 && unit(rng) < nm.double_event_prob)
      emit(x, y, pol, t + std::max(1.0, nm.double_lag_us + clipped_normal(rng, nm.double_lag_jitter_us)));
  };

  struct BlobPixel {
    std::uint32_t x, y;
    double prob;
  };
  std::vector<BlobPixel> blob;
  auto blob_at = [&](const Eigen::Vector2d& uv) {
    blob.clear();
    const double R = nm.blob_radius_px;
    const int x0 = int(std::floor(uv.x() - R)), x1 = int(std::ceil(uv.x() + R));
    const int y0 = int(std::floor(uv.y() - R)), y1 = int(std::ceil(uv.y() + R));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (x < 0 || y < 0 || x >= int(g.width) || y >= int(g.height)) continue;
        const double p = nm.detection_probability((Eigen::Vector2d(x, y) - uv).norm());
        if (p > 0) blob.push_back({std::uint32_t(x), std::uint32_t(y), p});
      }
  };
  auto project = [&](const LedSpec& m, std::uint64_t t, Eigen::Vector2d& uv) {
    const Eigen::Vector3d p = scene_.t_cb(t) * m.position;
    if (p.z() <= 0) throw SceneError("marker " + std::to_string(m.id) + " behind the camera");
    if (!scene_.camera.in_projection_domain(p)) return false;
    uv = scene_.camera.project(p);
    return true;
  };

  for (std::size_t li = 0; li < scene_.rig.size(); ++li) {
    const LedSpec& m = scene_.rig.markers[li];
    const double P = m.period_us(), on_len = m.duty * P, phase = phases_[li];
    // Pulses whose rising edge falls in [c0, c1).
    const double k0 = std::ceil((double(c0) - phase) / P), k1 = std::ceil((double(c1) - phase) / P);
    for (double k = std::max(k0, 0.0); k < k1; ++k) {
      const double t_on = phase + k * P, t_off = t_on + on_len;
      Eigen::Vector2d uv;
      if (!project(m, to_tick(t_on), uv)) continue;
      blob_at(uv);
      for (const auto& b : blob) {
        const bool on = unit(rng) < b.prob, off = unit(rng) < b.prob;
        double ton = t_on + clipped_normal(rng, nm.jitter_us);
        double toff = t_off + clipped_normal(rng, nm.jitter_us);
        // One pixel reports its own events in order.
        if (on && to_tick(toff) <= to_tick(ton)) toff = double(to_tick(ton) + 1);
        if (on) {
          emit(b.x, b.y, +1, ton);
          maybe_double(b.x, b.y, +1, ton);
        }
        if (off) {
          emit(b.x, b.y, -1, toff);
          maybe_double(b.x, b.y, -1, toff);
        }
      }
    }
    // Spurious events on the blob footprint, re-projected every millisecond.
    if (nm.blob_spurious_rate > 0) {
      for (std::uint64_t s0 = c0; s0 < c1; s0 += 1000) {
        const std::uint64_t s1 = std::min(s0 + 1000, c1);
        Eigen::Vector2d uv;
        if (!project(m, (s0 + s1) / 2, uv)) continue;
        blob_at(uv);
        std::poisson_distribution<int> pois(nm.blob_spurious_rate * double(s1 - s0) * 1e-6);
        for (const auto& b : blob) {
          const int n = pois(rng);
          for (int i = 0; i < n; ++i) emit(b.x, b.y, coin(rng) ? 1 : -1, double(s0) + unit(rng) * double(s1 - s0));
        }
      }
    }
  }
  if (nm.background_rate > 0) {
    std::poisson_distribution<std::uint64_t> pois(nm.background_rate * double(g.pixel_count()) * double(c1 - c0) * 1e-6);
    const std::uint64_t n = pois(rng);
    std::uniform_int_distribution<std::uint32_t> ux(0, g.width - 1), uy(0, g.height - 1);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint32_t x = ux(rng), y = uy(rng);
      emit(x, y, coin(rng) ? 1 : -1, double(c0) + unit(rng) * double(c1 - c0));
    }
  }

  std::sort(pending_.begin(), pending_.end(), event_less);
  ++next_chunk_;
  const bool last = c1 >= scene_.duration_us;
  const double release = last ? 1e300 : double(c1) - margin;
  auto split = std::partition_point(pending_.begin(), pending_.end(),
                                    [&](const Event& e) { return double(e.t) < release; });
  ready_.assign(pending_.begin(), split);
  pending_.erase(pending_.begin(), split);
  ready_pos_ = 0;
  if (last) done_ = true;
}

std::size_t SimulatorSource::read(std::vector<Event>& out, std::size_t max_events) {
  std::size_t n = 0;
  while (n < max_events) {
    if (ready_pos_ >= ready_.size()) {
      if (done_ || scene_.duration_us == 0) break;
      generate_chunk();
      continue;
    }
    const std::size_t take = std::min(max_events - n, ready_.size() - ready_pos_);
    out.insert(out.end(), ready_.begin() + std::ptrdiff_t(ready_pos_), ready_.begin() + std::ptrdiff_t(ready_pos_ + take));
    ready_pos_ += take;
    n += take;
  }
  return n;
}

std::vector<Event> simulate_events(const SimScene& scene, std::uint64_t seed) {
  SimulatorSource src(scene, seed);
  std::vector<Event> out;
  while (src.read(out, 1 << 16) > 0) {
  }
  return out;
}

SimulationSummary simulate(const SimScene& scene, std::uint64_t seed, const std::filesystem::path& events_path,
                           const std::filesystem::path& truth_path) {
  SimulationSummary s;
  s.warnings = validate_scene(scene);
  SimulatorSource src(scene, seed);
  EventFileWriter writer(events_path, scene.camera.geometry());
  std::vector<Event> buf;
  while (true) {
    buf.clear();
    if (src.read(buf, 1 << 16) == 0) break;
    writer.write(buf);
  }
  writer.close();
  s.events = writer.count();

  std::ofstream truth(truth_path);
  if (!truth) throw Error("cannot write " + truth_path.string());
  for (std::uint64_t t = scene.truth_interval_us; t <= scene.duration_us; t += scene.truth_interval_us) {
    write_truth_jsonl(truth, truth_at(scene, t));
    ++s.truth_records;
  }
  if (!truth) throw Error("failed writing " + truth_path.string());
  return s;
}

}  // namespace evmocap
