#include "evmocap/config.hpp"

#include <charconv>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "evmocap/error.hpp"

namespace evmocap {

namespace {

// A YAML mapping whose keys must all be consumed; leftovers are typos.
class Section {
 public:
  Section(const YAML::Node& node, std::string path)
      : node_(node), path_(std::move(path)), present_(node.IsDefined() && !node.IsNull()) {
    if (present_ && !node_.IsMap()) throw ConfigError("schema", path_ + ": expected a mapping");
  }

  template <class T>
  void get(const char* key, T& value) {
    used_.insert(key);
    const YAML::Node v = at(key);
    if (!v.IsDefined()) return;
    try {
      value = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("schema", where(key) + ": malformed value");
    }
  }

  void get(const char* key, Eigen::Vector3d& v) {
    std::vector<double> raw;
    get(key, raw);
    if (!used_value(key)) return;
    if (raw.size() != 3) throw ConfigError("schema", where(key) + ": expected 3 numbers");
    v = {raw[0], raw[1], raw[2]};
  }

  Section child(const char* key) {
    used_.insert(key);
    return Section(at(key), where(key));
  }

  YAML::Node raw(const char* key) {
    used_.insert(key);
    return at(key);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (!present_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!used_.count(key)) throw ConfigError("schema", "unknown key " + where(key));
    }
  }

 private:
  bool used_value(const char* key) const { return at(key).IsDefined(); }
  // Const lookup never inserts into the mapping. An absent key yields an
  // undefined node (a default-constructed Node would be a defined null).
  YAML::Node at(const char* key) const {
    if (!present_) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& n = node_;
    return n[key];
  }

  YAML::Node node_;
  std::string path_;
  bool present_;
  std::set<std::string> used_;
};

Trajectory::Kind parse_kind(const std::string& s) {
  if (s == "static") return Trajectory::Kind::Static;
  if (s == "rectangle") return Trajectory::Kind::Rectangle;
  if (s == "csv") return Trajectory::Kind::Csv;
  throw ConfigError("schema", "simulator.trajectory.kind: expected static, rectangle or csv");
}

const char* kind_name(Trajectory::Kind k) {
  switch (k) {
    case Trajectory::Kind::Static: return "static";
    case Trajectory::Kind::Rectangle: return "rectangle";
    case Trajectory::Kind::Csv: return "csv";
  }
  return "static";
}

void read_camera(Section s, AppConfig& c) {
  const DsCamera& d = c.scene.camera;
  std::uint32_t width = d.geometry().width, height = d.geometry().height;
  double fx = d.fx(), fy = d.fy(), cx = d.cx(), cy = d.cy(), xi = d.xi(), alpha = d.alpha_ds();
  double hfov_deg = 0;
  s.get("width", width);
  s.get("height", height);
  s.get("hfov_deg", hfov_deg);
  s.get("fx", fx);
  s.get("fy", fy);
  s.get("cx", cx);
  s.get("cy", cy);
  s.get("xi", xi);
  s.get("alpha", alpha);
  const SensorGeometry g{width, height};
  if (!g.valid()) throw ConfigError("camera", "camera: width and height must be positive");
  try {
    c.scene.camera = hfov_deg > 0 ? DsCamera::from_horizontal_fov(hfov_deg * std::numbers::pi / 180, g)
                                  : DsCamera(fx, fy, cx, cy, xi, alpha, g);
  } catch (const Error& e) {
    throw ConfigError("camera", std::string("camera: ") + e.what());
  }

  Section t = s.child("t_cw");
  Eigen::Vector3d translation = c.scene.t_cw.translation;
  std::vector<double> q{c.scene.t_cw.rotation.w(), c.scene.t_cw.rotation.x(), c.scene.t_cw.rotation.y(),
                        c.scene.t_cw.rotation.z()};
  t.get("translation_m", translation);
  t.get("quaternion_wxyz", q);
  if (q.size() != 4) throw ConfigError("schema", "camera.t_cw.quaternion_wxyz: expected 4 numbers");
  const Eigen::Quaterniond rot(q[0], q[1], q[2], q[3]);
  if (!(rot.norm() > 0)) throw ConfigError("camera", "camera.t_cw: zero quaternion");
  c.scene.t_cw = Transform(rot, translation);
  t.finish();
  s.finish();
}

void read_rig(Section s, AppConfig& c) {
  const YAML::Node markers = s.raw("markers");
  if (markers) {
    if (!markers.IsSequence()) throw ConfigError("schema", "rig.markers: expected a list");
    c.scene.rig.markers.clear();
    for (std::size_t i = 0; i < markers.size(); ++i) {
      Section m(markers[i], "rig.markers[" + std::to_string(i) + "]");
      LedSpec led;
      m.get("id", led.id);
      m.get("frequency_hz", led.frequency_hz);
      m.get("duty", led.duty);
      m.get("position_m", led.position);
      m.finish();
      c.scene.rig.markers.push_back(led);
    }
  }
  s.finish();
}

void read_pipeline(Section s, AppConfig& c) {
  PipelineConfig& p = c.pipeline;
  std::string solver(to_string(p.solver));
  s.get("batch_us", p.batch_us);
  s.get("window_us", p.window_us);
  s.get("solver", solver);
  s.get("seed", p.seed);
  s.get("t_origin_us", p.t_origin_us);
  try {
    p.solver = parse_solver(solver);
  } catch (const Error&) {
    throw ConfigError("schema", "pipeline.solver: expected sqpnp or epnp");
  }

  Section d = s.child("detector");
  DetectorConfig& dc = p.detector;
  d.get("beta", dc.beta);
  d.get("match_tol_us", dc.match_tol_us);
  d.get("link_tol_us", dc.link_tol_us);
  d.get("min_cluster", dc.min_cluster);
  d.get("max_cluster", dc.max_cluster);
  d.get("std_floor_us", dc.std_floor_us);
  d.get("std_rel", dc.std_rel);
  d.get("stale_us", dc.stale_us);
  d.get("min_leds_for_pose", dc.min_leds_for_pose);

  Section f = d.child("filter");
  f.get("particles", dc.filter.particles);
  f.get("process_pos_px", dc.filter.process_pos_px);
  f.get("process_vel_px", dc.filter.process_vel_px);
  f.get("measurement_px", dc.filter.measurement_px);
  f.get("gate_sigma", dc.filter.gate_sigma);
  f.finish();
  d.finish();
  s.finish();
}

void read_simulator(Section s, AppConfig& c) {
  double duration_s = double(c.scene.duration_us) * 1e-6;
  s.get("seed", c.sim_seed);
  s.get("duration_s", duration_s);
  s.get("truth_interval_us", c.scene.truth_interval_us);
  s.get("randomize_phase", c.scene.randomize_phase);
  if (!(duration_s > 0)) throw ConfigError("schema", "simulator.duration_s: must be positive");
  c.scene.duration_us = std::uint64_t(std::llround(duration_s * 1e6));

  Section n = s.child("noise");
  NoiseModel& nm = c.scene.noise;
  n.get("beta_sim", nm.beta_sim);
  n.get("double_event_prob", nm.double_event_prob);
  n.get("double_lag_us", nm.double_lag_us);
  n.get("double_lag_jitter_us", nm.double_lag_jitter_us);
  n.get("blob_spurious_rate", nm.blob_spurious_rate);
  n.get("background_rate", nm.background_rate);
  n.get("jitter_us", nm.jitter_us);
  n.get("blob_radius_px", nm.blob_radius_px);
  n.get("blob_core_px", nm.blob_core_px);
  n.finish();

  Section t = s.child("trajectory");
  TrajectorySpec& ts = c.trajectory;
  std::string kind = kind_name(ts.kind);
  std::string path = ts.csv_path.string();
  t.get("kind", kind);
  ts.kind = parse_kind(kind);
  t.get("distance_m", ts.distance_m);
  auto& r = ts.rectangle;
  t.get("x_min", r.x_min);
  t.get("x_max", r.x_max);
  t.get("y_min", r.y_min);
  t.get("y_max", r.y_max);
  t.get("z", r.z);
  t.get("corner_radius", r.corner_radius);
  t.get("speed_mps", r.speed_mps);
  std::vector<double> start{r.start.x(), r.start.y()};
  t.get("start", start);
  if (start.size() != 2) throw ConfigError("schema", "simulator.trajectory.start: expected 2 numbers");
  r.start = {start[0], start[1]};
  t.get("path", path);
  ts.csv_path = path;
  t.finish();
  s.finish();
}

// Shortest decimal that reads back to the same double.
struct Num {
  double v;
};

YAML::Emitter& operator<<(YAML::Emitter& out, Num n) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, n.v);
  return out << std::string(buf, r.ptr);
}

template <class V>
void emit_seq(YAML::Emitter& out, const V& v) {
  out << YAML::Flow << YAML::BeginSeq;
  for (double x : v) out << Num{x};
  out << YAML::EndSeq;
}

}  // namespace

void AppConfig::sync() {
  switch (trajectory.kind) {
    case Trajectory::Kind::Static:
      scene.trajectory = facing_trajectory(scene.t_cw, trajectory.distance_m);
      break;
    case Trajectory::Kind::Rectangle:
      scene.trajectory =
          Trajectory::rectangle(trajectory.rectangle, facing_orientation(scene.t_cw), scene.duration_us);
      break;
    case Trajectory::Kind::Csv:
      scene.trajectory = Trajectory::load_csv(trajectory.csv_path);
      break;
  }
  pipeline.rig = scene.rig;
  pipeline.camera = scene.camera;
  pipeline.t_cw = scene.t_cw;
}

AppConfig default_app_config() {
  AppConfig c;
  c.scene = static_scene(1.0);
  c.sync();
  return c;
}

AppConfig parse_config(const std::string& yaml) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw ConfigError("syntax", std::string("config syntax: ") + e.what());
  }
  AppConfig c = default_app_config();
  Section top(root, "");
  const YAML::Node& croot = root;
  if (!croot.IsMap() || !croot["schema_version"])
    throw ConfigError("schema", "missing schema_version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  int version = 0;
  top.get("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw ConfigError("schema", "schema_version must be " + std::to_string(kConfigSchemaVersion) + ", got " +
                                    std::to_string(version));
  read_camera(top.child("camera"), c);
  read_rig(top.child("rig"), c);
  read_pipeline(top.child("pipeline"), c);
  read_simulator(top.child("simulator"), c);
  top.finish();
  try {
    c.sync();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("trajectory", std::string("trajectory: ") + e.what());
  }

  for (const auto& d : validate_config(c))
    if (d.severity == Diagnostic::Severity::Error) throw ConfigError(d.rule, d.rule + ": " + d.message);
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("io", "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<Diagnostic> validate_config(const AppConfig& c) {
  using S = Diagnostic::Severity;
  std::vector<Diagnostic> out = validate_rig(c.scene.rig, c.pipeline.detector.match_tol_us);
  for (auto& d : validate_batch_rate(c.scene.rig, c.pipeline.batch_us)) out.push_back(d);
  if (c.pipeline.window_us < c.pipeline.batch_us)
    out.push_back({S::Error, "window_length", "SDTV window must be at least the batch duration"});
  else
    out.push_back({S::Pass, "window_length", "SDTV window covers the batch"});
  try {
    const auto warnings = validate_scene(c.scene);
    if (warnings.empty()) out.push_back({S::Pass, "marker_visibility", "all markers stay in the image"});
    for (const auto& w : warnings) out.push_back({S::Warning, "marker_visibility", w});
  } catch (const Error& e) {
    out.push_back({S::Error, "scene_geometry", e.what()});
  }
  return out;
}

std::string dump_config(const AppConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "schema_version" << YAML::Value << kConfigSchemaVersion;

  const DsCamera& cam = c.scene.camera;
  out << YAML::Key << "camera" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "width" << YAML::Value << cam.geometry().width;
  out << YAML::Key << "height" << YAML::Value << cam.geometry().height;
  out << YAML::Key << "fx" << YAML::Value << Num{cam.fx()};
  out << YAML::Key << "fy" << YAML::Value << Num{cam.fy()};
  out << YAML::Key << "cx" << YAML::Value << Num{cam.cx()};
  out << YAML::Key << "cy" << YAML::Value << Num{cam.cy()};
  out << YAML::Key << "xi" << YAML::Value << Num{cam.xi()};
  out << YAML::Key << "alpha" << YAML::Value << Num{cam.alpha_ds()};
  out << YAML::Key << "t_cw" << YAML::Value << YAML::BeginMap;
  const auto& t = c.scene.t_cw;
  out << YAML::Key << "translation_m" << YAML::Value;
  emit_seq(out, std::vector<double>{t.translation.x(), t.translation.y(), t.translation.z()});
  out << YAML::Key << "quaternion_wxyz" << YAML::Value;
  emit_seq(out, std::vector<double>{t.rotation.w(), t.rotation.x(), t.rotation.y(), t.rotation.z()});
  out << YAML::EndMap << YAML::EndMap;

  out << YAML::Key << "rig" << YAML::Value << YAML::BeginMap << YAML::Key << "markers" << YAML::Value
      << YAML::BeginSeq;
  for (const auto& m : c.scene.rig.markers) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << m.id;
    out << YAML::Key << "frequency_hz" << YAML::Value << Num{m.frequency_hz};
    out << YAML::Key << "duty" << YAML::Value << Num{m.duty};
    out << YAML::Key << "position_m" << YAML::Value;
    emit_seq(out, std::vector<double>{m.position.x(), m.position.y(), m.position.z()});
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;

  const PipelineConfig& p = c.pipeline;
  const DetectorConfig& d = p.detector;
  out << YAML::Key << "pipeline" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_us" << YAML::Value << p.batch_us;
  out << YAML::Key << "window_us" << YAML::Value << p.window_us;
  out << YAML::Key << "solver" << YAML::Value << std::string(to_string(p.solver));
  out << YAML::Key << "seed" << YAML::Value << p.seed;
  out << YAML::Key << "t_origin_us" << YAML::Value << p.t_origin_us;
  out << YAML::Key << "detector" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "beta" << YAML::Value << Num{d.beta};
  out << YAML::Key << "match_tol_us" << YAML::Value << Num{d.match_tol_us};
  out << YAML::Key << "link_tol_us" << YAML::Value << Num{d.link_tol_us};
  out << YAML::Key << "min_cluster" << YAML::Value << d.min_cluster;
  out << YAML::Key << "max_cluster" << YAML::Value << d.max_cluster;
  out << YAML::Key << "std_floor_us" << YAML::Value << Num{d.std_floor_us};
  out << YAML::Key << "std_rel" << YAML::Value << Num{d.std_rel};
  out << YAML::Key << "stale_us" << YAML::Value << d.stale_us;
  out << YAML::Key << "min_leds_for_pose" << YAML::Value << d.min_leds_for_pose;
  out << YAML::Key << "filter" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "particles" << YAML::Value << d.filter.particles;
  out << YAML::Key << "process_pos_px" << YAML::Value << Num{d.filter.process_pos_px};
  out << YAML::Key << "process_vel_px" << YAML::Value << Num{d.filter.process_vel_px};
  out << YAML::Key << "measurement_px" << YAML::Value << Num{d.filter.measurement_px};
  out << YAML::Key << "gate_sigma" << YAML::Value << Num{d.filter.gate_sigma};
  out << YAML::EndMap << YAML::EndMap << YAML::EndMap;

  const NoiseModel& n = c.scene.noise;
  out << YAML::Key << "simulator" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.sim_seed;
  out << YAML::Key << "duration_s" << YAML::Value << Num{double(c.scene.duration_us) * 1e-6};
  out << YAML::Key << "truth_interval_us" << YAML::Value << c.scene.truth_interval_us;
  out << YAML::Key << "randomize_phase" << YAML::Value << c.scene.randomize_phase;
  out << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "beta_sim" << YAML::Value << Num{n.beta_sim};
  out << YAML::Key << "double_event_prob" << YAML::Value << Num{n.double_event_prob};
  out << YAML::Key << "double_lag_us" << YAML::Value << Num{n.double_lag_us};
  out << YAML::Key << "double_lag_jitter_us" << YAML::Value << Num{n.double_lag_jitter_us};
  out << YAML::Key << "blob_spurious_rate" << YAML::Value << Num{n.blob_spurious_rate};
  out << YAML::Key << "background_rate" << YAML::Value << Num{n.background_rate};
  out << YAML::Key << "jitter_us" << YAML::Value << Num{n.jitter_us};
  out << YAML::Key << "blob_radius_px" << YAML::Value << Num{n.blob_radius_px};
  out << YAML::Key << "blob_core_px" << YAML::Value << Num{n.blob_core_px};
  out << YAML::EndMap;

  const TrajectorySpec& ts = c.trajectory;
  out << YAML::Key << "trajectory" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << kind_name(ts.kind);
  switch (ts.kind) {
    case Trajectory::Kind::Static:
      out << YAML::Key << "distance_m" << YAML::Value << Num{ts.distance_m};
      break;
    case Trajectory::Kind::Rectangle: {
      const auto& r = ts.rectangle;
      out << YAML::Key << "x_min" << YAML::Value << Num{r.x_min};
      out << YAML::Key << "x_max" << YAML::Value << Num{r.x_max};
      out << YAML::Key << "y_min" << YAML::Value << Num{r.y_min};
      out << YAML::Key << "y_max" << YAML::Value << Num{r.y_max};
      out << YAML::Key << "z" << YAML::Value << Num{r.z};
      out << YAML::Key << "corner_radius" << YAML::Value << Num{r.corner_radius};
      out << YAML::Key << "speed_mps" << YAML::Value << Num{r.speed_mps};
      out << YAML::Key << "start" << YAML::Value;
      emit_seq(out, std::vector<double>{r.start.x(), r.start.y()});
      break;
    }
    case Trajectory::Kind::Csv:
      out << YAML::Key << "path" << YAML::Value << ts.csv_path.string();
      break;
  }
  out << YAML::EndMap << YAML::EndMap << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace evmocap
