#include "evmocap/led_detector.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace evmocap {

std::uint32_t rate_threshold(std::uint64_t batch_us, double f_min_hz, double beta) {
  const double x = beta * 2.0 * (double(batch_us) * 1e-6) * f_min_hz;
  return std::uint32_t(std::ceil(x - 1e-9));
}

std::vector<std::uint32_t> candidate_pixels(const CountFrame& counts, std::uint32_t threshold) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t p : counts.touched())
    if (counts[p] >= threshold) out.push_back(p);
  std::sort(out.begin(), out.end());
  return out;
}

bool compute_period_stats(std::span<const std::int16_t> stack, PeriodStats& out) {
  std::vector<std::uint32_t> periods = pixel_periods(stack);
  if (periods.empty()) return false;
  const double n = double(periods.size());
  double sum = 0;
  for (auto p : periods) sum += p;
  out.mean = sum / n;
  double var = 0;
  for (auto p : periods) var += (p - out.mean) * (p - out.mean);
  out.stddev = std::sqrt(var / n);
  std::sort(periods.begin(), periods.end());
  const std::size_t m = periods.size() / 2;
  out.median = periods.size() % 2 ? double(periods[m]) : 0.5 * (double(periods[m - 1]) + double(periods[m]));
  out.samples = std::uint32_t(periods.size());
  return true;
}

bool period_rejected(const PeriodStats& s, const DetectorConfig& cfg) {
  return s.stddev > std::max(cfg.std_floor_us, cfg.std_rel * s.mean);
}

std::vector<PeriodStats> period_stats(const StackSnapshot& stacks, const DetectorConfig& cfg) {
  std::vector<PeriodStats> out;
  out.reserve(stacks.size());
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    if (stacks.stale[i]) continue;
    PeriodStats s;
    s.pixel = stacks.pixels[i];
    if (!compute_period_stats(stacks.stack(i), s) || period_rejected(s, cfg)) continue;
    out.push_back(s);
  }
  return out;
}

std::vector<PeriodStats> period_stats(const Sdtv& sdtv, std::span<const std::uint32_t> pixels,
                                      const DetectorConfig& cfg) {
  StackSnapshot snap;
  sdtv.snapshot(pixels, snap);
  return period_stats(snap, cfg);
}

std::vector<Cluster> cluster_candidates(std::span<const PeriodStats> stats, SensorGeometry geometry,
                                        double link_tol_us, std::size_t min_size, std::size_t max_size) {
  // Index of each pixel in `stats`, looked up by binary search.
  std::vector<std::pair<std::uint32_t, std::size_t>> index(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) index[i] = {stats[i].pixel, i};
  std::sort(index.begin(), index.end());
  auto find = [&](std::uint32_t pixel) -> std::ptrdiff_t {
    auto it = std::lower_bound(index.begin(), index.end(), std::make_pair(pixel, std::size_t(0)));
    return it != index.end() && it->first == pixel ? std::ptrdiff_t(it->second) : -1;
  };

  std::vector<std::uint8_t> visited(stats.size(), 0);
  std::vector<Cluster> out;
  std::vector<std::size_t> queue, members;
  for (const auto& [start_pixel, start] : index) {
    if (visited[start]) continue;
    visited[start] = 1;
    queue.assign(1, start);
    members.clear();
    while (!queue.empty()) {
      const std::size_t cur = queue.back();
      queue.pop_back();
      members.push_back(cur);
      const std::int64_t x = stats[cur].pixel % geometry.width, y = stats[cur].pixel / geometry.width;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dx && !dy) continue;
          const std::int64_t nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= geometry.width || ny >= geometry.height) continue;
          const auto j = find(geometry.index(std::uint32_t(nx), std::uint32_t(ny)));
          if (j < 0 || visited[std::size_t(j)]) continue;
          if (std::abs(stats[std::size_t(j)].mean - stats[cur].mean) > link_tol_us) continue;
          visited[std::size_t(j)] = 1;
          queue.push_back(std::size_t(j));
        }
    }
    if (members.size() < min_size || members.size() > max_size) continue;

    Cluster c;
    double w = 0, period = 0;
    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return stats[a].pixel < stats[b].pixel; });
    for (std::size_t m : members) {
      const auto& s = stats[m];
      c.pixels.push_back(s.pixel);
      const double sw = s.samples;
      centroid += sw * Eigen::Vector2d(double(s.pixel % geometry.width), double(s.pixel / geometry.width));
      period += sw * s.mean;
      w += sw;
    }
    c.centroid = centroid / w;
    c.period_us = period / w;
    c.samples = std::uint32_t(w);
    out.push_back(std::move(c));
  }
  return out;
}

Association associate_clusters(std::span<const Cluster> clusters, const LedRig& rig, double match_tol_us) {
  struct Pair {
    std::size_t cluster;
    std::size_t led;
    double distance;
  };
  std::vector<Pair> pairs;
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (std::size_t l = 0; l < rig.size(); ++l) {
      const double d = std::abs(clusters[c].period_us - rig.markers[l].period_us());
      if (d <= match_tol_us) pairs.push_back({c, l, d});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return clusters[a.cluster].samples > clusters[b.cluster].samples;
  });

  Association out;
  std::vector<std::uint8_t> cluster_used(clusters.size(), 0), led_used(rig.size(), 0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Pair& p = pairs[i];
    if (cluster_used[p.cluster] || led_used[p.led]) continue;
    // The same cluster exactly as close to another free LED: ambiguous.
    bool tie = false;
    for (std::size_t j = i + 1; j < pairs.size() && pairs[j].distance == p.distance; ++j)
      tie |= pairs[j].cluster == p.cluster && !led_used[pairs[j].led];
    cluster_used[p.cluster] = 1;
    if (tie) {
      ++out.ties_discarded;
      continue;
    }
    led_used[p.led] = 1;
    out.matched[rig.markers[p.led].id] = clusters[p.cluster];
  }
  for (std::size_t c = 0; c < clusters.size(); ++c) out.unmatched += cluster_used[c] ? 0 : 1;
  return out;
}

LedDetector::LedDetector(LedRig rig, SensorGeometry geometry, DetectorConfig config, std::uint64_t batch_us,
                         std::uint64_t seed)
    : rig_(std::move(rig)),
      geometry_(geometry),
      config_(config),
      batch_us_(batch_us),
      threshold_(rate_threshold(batch_us, rig_.min_frequency(), config.beta)),
      rng_(seed) {
  config_.filter.nominal_batch_us = double(batch_us);
}

Detection LedDetector::detect(const Sdtv& sdtv, const CountFrame& counts, std::uint64_t t_end_us) {
  sdtv.snapshot(candidates(counts), scratch_);
  return detect(scratch_, t_end_us);
}

Detection LedDetector::detect(const StackSnapshot& stacks, std::uint64_t t_end_us) {
  Detection d;
  d.t_us = t_end_us;
  d.candidates = stacks.size();
  const auto stats = period_stats(stacks, config_);
  d.clusters = cluster_candidates(stats, geometry_, config_.link_tol_us, config_.min_cluster, config_.max_cluster);
  Association assoc = associate_clusters(d.clusters, rig_, config_.match_tol_us);
  d.unmatched_clusters = assoc.unmatched + assoc.ties_discarded;

  for (const auto& m : rig_.markers) {
    auto hit = assoc.matched.find(m.id);
    auto track = tracks_.find(m.id);
    std::optional<Eigen::Vector2d> obs;
    if (hit != assoc.matched.end()) {
      obs = hit->second.centroid;
      d.observed[m.id] = *obs;
    }
    if (track == tracks_.end()) {
      if (obs) tracks_.emplace(m.id, make_track(m.id, *obs, t_end_us, config_.filter));
      continue;
    }
    LedTrack& t = track->second;
    const std::uint64_t dt = t_end_us > t.last_predict_us ? t_end_us - t.last_predict_us : 0;
    track_update(t, obs, dt, config_.filter, rng_, geometry_);
    d.reinitialized_tracks += t.reinitialized ? 1 : 0;
    if (!obs && t_end_us - t.last_update_us > config_.stale_us) tracks_.erase(track);
  }
  for (const auto& [id, t] : tracks_) d.centroids[id] = t.centroid;
  d.pose_sufficient = d.centroids.size() >= config_.min_leds_for_pose;
  return d;
}

void write_detection_csv_header(std::ostream& os) {
  os << "t_us,candidates,cluster,size,period_us,u,v,led\n";
}

void write_detection_csv(std::ostream& os, const Detection& d, const LedRig& rig, double match_tol_us) {
  const Association a = associate_clusters(d.clusters, rig, match_tol_us);
  for (std::size_t i = 0; i < d.clusters.size(); ++i) {
    const Cluster& c = d.clusters[i];
    int led = -1;
    for (const auto& [id, m] : a.matched)
      if (m.pixels == c.pixels) led = id;
    os << d.t_us << ',' << d.candidates << ',' << i << ',' << c.pixels.size() << ',' << c.period_us << ','
       << c.centroid.x() << ',' << c.centroid.y() << ',' << led << '\n';
  }
  if (d.clusters.empty()) os << d.t_us << ',' << d.candidates << ",-1,0,0,0,0,-1\n";
}

}  // namespace evmocap
