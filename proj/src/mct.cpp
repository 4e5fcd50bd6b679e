#include "citytrack/mct.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <tuple>

#include "citytrack/errors.hpp"

namespace citytrack::mct {

namespace {

bool intersects(const std::vector<geo::CameraId>& a, const std::vector<geo::CameraId>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

std::vector<geo::CameraId> merged(const std::vector<geo::CameraId>& a, const std::vector<geo::CameraId>& b) {
  std::vector<geo::CameraId> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

void finalize(GlobalIdentity& g) {
  std::sort(g.members.begin(), g.members.end(), [](const auto& a, const auto& b) {
    return std::tie(a.t_s, a.camera, a.track_id) < std::tie(b.t_s, b.camera, b.track_id);
  });
  g.cameras.clear();
  g.last_seen = 0.0;
  for (const auto& m : g.members) {
    g.cameras.push_back(m.camera);
    g.last_seen = std::max(g.last_seen, m.t_e);
  }
  std::sort(g.cameras.begin(), g.cameras.end());
  if (std::adjacent_find(g.cameras.begin(), g.cameras.end()) != g.cameras.end()) {
    throw Error("identity " + std::to_string(g.global_id) + " holds two tracks from one camera");
  }
}

double oldest_start(const GlobalIdentity& g) {
  double t = g.members.front().t_s;
  for (const auto& m : g.members) t = std::min(t, m.t_s);
  return t;
}

}  // namespace

TrackSummary summarize(const sct::ConcludedTrack& t) {
  TrackSummary s;
  s.cameras = {t.camera};
  s.start_camera = t.camera;
  s.end_camera = t.camera;
  s.embedding = t.embedding;
  s.t_s = t.t_s;
  s.t_e = t.t_e;
  s.l_s = t.l_s;
  s.l_e = t.l_e;
  s.key = {t.camera, t.track_id};
  return s;
}

TrackSummary summarize(const std::vector<sct::ConcludedTrack>& members) {
  if (members.empty()) throw std::invalid_argument("summarize: no members");
  TrackSummary s = summarize(members.front());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(members.front().embedding.size());
  for (const auto& m : members) {
    sum += m.embedding;
    s.cameras.push_back(m.camera);
    s.key = std::min(s.key, TrackKey{m.camera, m.track_id});
    if (m.t_s < s.t_s) {
      s.t_s = m.t_s;
      s.l_s = m.l_s;
      s.start_camera = m.camera;
    }
    if (m.t_e > s.t_e) {
      s.t_e = m.t_e;
      s.l_e = m.l_e;
      s.end_camera = m.camera;
    }
  }
  std::sort(s.cameras.begin(), s.cameras.end());
  s.cameras.erase(std::unique(s.cameras.begin(), s.cameras.end()), s.cameras.end());
  s.embedding = reid::l2_normalize(sum);
  return s;
}

TrackPairContext make_context(const TrackSummary& a, const TrackSummary& b) {
  const bool a_first = std::tie(a.t_e, a.key) <= std::tie(b.t_e, b.key);
  TrackPairContext ctx;
  ctx.earlier = a_first ? &a : &b;
  ctx.later = a_first ? &b : &a;
  ctx.dt = ctx.later->t_s - ctx.earlier->t_e;
  ctx.gap_distance = geo::haversine_distance(ctx.later->l_s, ctx.earlier->l_e);
  return ctx;
}

double speed_similarity(double mean_speed, double v_max) {
  if (mean_speed <= 0.0 || mean_speed >= v_max) return 0.0;
  return std::max(0.0, 4.0 * mean_speed * (v_max - mean_speed) / (v_max * v_max));
}

double speed_similarity(const TrackPairContext& ctx, double v_max) {
  if (!(ctx.dt > 0.0)) throw NonPositiveDt("dt = " + std::to_string(ctx.dt));
  return speed_similarity(ctx.gap_distance / ctx.dt, v_max);
}

bool direction_consistent(const TrackSummary& earlier, const TrackSummary& later) {
  using geo::haversine_distance;
  return haversine_distance(earlier.l_s, later.l_s) >= haversine_distance(earlier.l_e, later.l_s) &&
         haversine_distance(later.l_e, earlier.l_e) >= haversine_distance(later.l_s, earlier.l_e);
}

bool direction_consistent(const sct::ConcludedTrack& earlier, const sct::ConcludedTrack& later) {
  return direction_consistent(summarize(earlier), summarize(later));
}

double pairwise_similarity(const TrackSummary& a, const TrackSummary& b, const geo::CameraTopology& topo,
                           const MctParams& params) {
  for (const auto* s : {&a, &b}) {
    for (const auto& c : s->cameras) {
      if (!topo.contains(c)) throw UnknownCamera(c);
    }
  }
  if (intersects(a.cameras, b.cameras)) return 0.0;

  const auto ctx = make_context(a, b);
  const auto& from = ctx.earlier->end_camera;
  const auto& to = ctx.later->start_camera;
  const bool overlap_pair = topo.are_overlapping(from, to);
  if (ctx.dt <= 0.0 && !overlap_pair) return 0.0;
  if (params.rule_adjacency && !topo.are_adjacent(from, to)) return 0.0;
  if (params.rule_direction && !direction_consistent(*ctx.earlier, *ctx.later)) return 0.0;

  // Overlapping views may see the vehicle simultaneously; the speed prior
  // has no meaning there.
  const double sim_v = ctx.dt > 0.0 ? speed_similarity(ctx, params.v_max) : 1.0;
  const double appearance = 1.0 - (a.embedding - b.embedding).norm() / 2.0;
  return std::clamp(appearance, 0.0, 1.0) * sim_v;
}

double pairwise_similarity(const sct::ConcludedTrack& a, const sct::ConcludedTrack& b,
                           const geo::CameraTopology& topo, const MctParams& params) {
  return pairwise_similarity(summarize(a), summarize(b), topo, params);
}

SimilarityMatrix build_similarity_matrix(const std::vector<TrackSummary>& tracks, const geo::CameraTopology& topo,
                                         const MctParams& params) {
  const auto n = static_cast<Eigen::Index>(tracks.size());
  SimilarityMatrix m = SimilarityMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = pairwise_similarity(tracks[static_cast<std::size_t>(i)], tracks[static_cast<std::size_t>(j)],
                                           topo, params);
      m(i, j) = s;
      m(j, i) = s;
    }
  }
  return m;
}

SimilarityMatrix build_similarity_matrix(const std::vector<sct::ConcludedTrack>& tracks,
                                         const geo::CameraTopology& topo, const MctParams& params) {
  std::vector<TrackSummary> s;
  s.reserve(tracks.size());
  for (const auto& t : tracks) s.push_back(summarize(t));
  return build_similarity_matrix(s, topo, params);
}

SimilarityMatrix apply_min_threshold(const SimilarityMatrix& m, double tau_min) {
  return (m.array() < tau_min).select(0.0, m);
}

std::vector<std::vector<std::size_t>> hierarchical_cluster(const std::vector<TrackSummary>& tracks,
                                                           const SimilarityMatrix& m) {
  const std::size_t n = tracks.size();
  if (static_cast<std::size_t>(m.rows()) != n || static_cast<std::size_t>(m.cols()) != n) {
    throw DimensionMismatch("similarity matrix does not match track list");
  }
  struct Pair {
    double sim;
    TrackKey lo, hi;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (s > 0.0) {
        auto lo = std::min(tracks[i].key, tracks[j].key);
        auto hi = std::max(tracks[i].key, tracks[j].key);
        pairs.push_back({s, std::move(lo), std::move(hi), i, j});
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return std::tie(a.lo, a.hi, a.i, a.j) < std::tie(b.lo, b.hi, b.i, b.j);
  });

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::vector<geo::CameraId>> cams(n);
  for (std::size_t i = 0; i < n; ++i) cams[i] = tracks[i].cameras;
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  for (const auto& p : pairs) {
    std::size_t a = find(p.i);
    std::size_t b = find(p.j);
    if (a == b || intersects(cams[a], cams[b])) continue;
    if (b < a) std::swap(a, b);
    parent[b] = a;
    cams[a] = merged(cams[a], cams[b]);
    cams[b].clear();
  }

  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> slot(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    if (slot[r] == n) {
      slot[r] = clusters.size();
      clusters.emplace_back();
    }
    clusters[slot[r]].push_back(i);
  }
  return clusters;
}

Supervisor::Supervisor(geo::CameraTopology topology, MctParams params)
    : topology_(std::move(topology)), params_(params) {}

TickResult Supervisor::tick(std::vector<sct::ConcludedTrack> new_tracks, double now) {
  TickResult result;

  std::vector<GlobalIdentity> keep;
  for (auto& g : active_) {
    if (now - g.last_seen > params_.flush_horizon) {
      result.flushed.push_back(std::move(g));
    } else {
      keep.push_back(std::move(g));
    }
  }
  active_ = std::move(keep);
  if (new_tracks.empty()) return result;

  std::sort(new_tracks.begin(), new_tracks.end(), [](const auto& a, const auto& b) {
    return std::tie(a.camera, a.track_id) < std::tie(b.camera, b.track_id);
  });
  for (const auto& t : new_tracks) {
    if (!topology_.contains(t.camera)) throw UnknownCamera(t.camera);
    camera_stats_.add(t.camera, t.embedding);
  }
  for (auto& t : new_tracks) t.embedding = camera_stats_.mitigate(t.camera, t.embedding, params_.lambda);

  std::vector<TrackSummary> candidates;
  candidates.reserve(active_.size() + new_tracks.size());
  for (const auto& g : active_) candidates.push_back(summarize(g.members));
  for (const auto& t : new_tracks) candidates.push_back(summarize(t));

  const auto m = apply_min_threshold(build_similarity_matrix(candidates, topology_, params_), params_.tau_min);
  const auto clusters = hierarchical_cluster(candidates, m);

  const std::size_t n_active = active_.size();
  std::vector<bool> absorbed(n_active, false);
  std::vector<GlobalIdentity> fresh;

  // Identity receiving each cluster: an existing index, or n_active for a fresh one.
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> plan;
  for (const auto& cluster : clusters) {
    result.merges += cluster.size() - 1;
    std::size_t winner = n_active;
    for (std::size_t idx : cluster) {
      if (idx >= n_active) continue;
      if (winner == n_active) {
        winner = idx;
        continue;
      }
      const auto lhs = std::make_pair(oldest_start(active_[idx]), active_[idx].global_id);
      const auto rhs = std::make_pair(oldest_start(active_[winner]), active_[winner].global_id);
      if (lhs < rhs) winner = idx;
    }
    plan.emplace_back(winner, cluster);
  }

  for (const auto& [winner, cluster] : plan) {
    GlobalIdentity* target = nullptr;
    if (winner < n_active) {
      target = &active_[winner];
    } else {
      fresh.emplace_back();
      target = &fresh.back();
    }
    for (std::size_t idx : cluster) {
      if (idx < n_active) {
        if (idx == winner) continue;
        absorbed[idx] = true;
        for (auto& mbr : active_[idx].members) target->members.push_back(std::move(mbr));
      } else {
        target->members.push_back(new_tracks[idx - n_active]);
      }
    }
  }

  // Fresh identities are numbered in order of their earliest member.
  std::vector<std::size_t> order(fresh.size());
  std::iota(order.begin(), order.end(), 0);
  for (auto& g : fresh) finalize(g);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ma = fresh[a].members.front();
    const auto& mb = fresh[b].members.front();
    return std::tie(ma.t_s, ma.camera, ma.track_id) < std::tie(mb.t_s, mb.camera, mb.track_id);
  });
  for (std::size_t k : order) fresh[k].global_id = next_id_++;

  std::vector<GlobalIdentity> next;
  for (std::size_t i = 0; i < n_active; ++i) {
    if (absorbed[i]) continue;
    finalize(active_[i]);
    next.push_back(std::move(active_[i]));
  }
  for (std::size_t k : order) next.push_back(std::move(fresh[k]));
  std::sort(next.begin(), next.end(), [](const auto& a, const auto& b) { return a.global_id < b.global_id; });
  active_ = std::move(next);

  for (const auto& [winner, cluster] : plan) {
    for (std::size_t idx : cluster) {
      if (idx < n_active) continue;
      const auto& t = new_tracks[idx - n_active];
      for (const auto& g : active_) {
        const bool has = std::any_of(g.members.begin(), g.members.end(), [&](const auto& mbr) {
          return mbr.camera == t.camera && mbr.track_id == t.track_id;
        });
        if (has) {
          result.assignments.emplace_back(TrackKey{t.camera, t.track_id}, g.global_id);
          break;
        }
      }
    }
  }
  std::sort(result.assignments.begin(), result.assignments.end());
  return result;
}

std::vector<GlobalIdentity> Supervisor::finish() {
  auto out = std::move(active_);
  active_.clear();
  return out;
}

void write_global_csv(const std::string& path, const std::vector<GlobalIdentity>& identities) {
  struct Row {
    geo::CameraId camera;
    std::int64_t frame;
    std::int64_t id;
    ingest::Detection box;
  };
  std::vector<Row> rows;
  for (const auto& g : identities) {
    for (const auto& m : g.members) {
      for (const auto& b : m.boxes) rows.push_back({m.camera, b.frame_index, g.global_id, b.box});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.camera, a.frame, a.id) < std::tie(b.camera, b.frame, b.id);
  });
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%lld,%lld,%.4f,%.4f,%.4f,%.4f\n", static_cast<long long>(r.frame + 1),
                  static_cast<long long>(r.id), r.box.x1, r.box.y1, r.box.width(), r.box.height());
    out << r.camera << buf;
  }
}

nlohmann::json summary_json(const std::vector<GlobalIdentity>& identities) {
  auto arr = nlohmann::json::array();
  for (const auto& g : identities) {
    auto members = nlohmann::json::array();
    for (const auto& m : g.members) {
      members.push_back({{"camera", m.camera}, {"track_id", m.track_id}, {"t_s", m.t_s}, {"t_e", m.t_e}});
    }
    arr.push_back({{"global_id", g.global_id}, {"cameras", g.cameras}, {"last_seen", g.last_seen},
                   {"members", members}});
  }
  return arr;
}

}  // namespace citytrack::mct
