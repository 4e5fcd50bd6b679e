#include "citytrack/metrics.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <tuple>

#include "citytrack/assignment.hpp"
#include "citytrack/errors.hpp"
#include "citytrack/sct.hpp"

namespace citytrack::metrics {

namespace {

using FrameKey = std::pair<std::int64_t, geo::CameraId>;

// (frame, camera) -> observation indices, in frame order.
std::map<FrameKey, std::vector<std::size_t>> by_frame(const TrajectorySet& s) {
  std::map<FrameKey, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < s.size(); ++i) out[{s[i].frame, s[i].camera}].push_back(i);
  return out;
}

double safe_ratio(double a, double b) { return b > 0.0 ? a / b : 0.0; }

}  // namespace

nlohmann::json MotSummary::to_json() const {
  return {{"mota", mota},       {"idf1", idf1},     {"idp", idp},   {"idr", idr},
          {"fp", fp},           {"fn", fn},         {"id_switches", id_switches},
          {"num_gt", num_gt},   {"num_matches", num_matches},
          {"idtp", idtp},       {"idfp", idfp},     {"idfn", idfn}};
}

void check_trajectories(const TrajectorySet& s) {
  std::set<std::tuple<long, geo::CameraId, std::int64_t>> seen;
  for (const auto& o : s) {
    if (!seen.emplace(o.id, o.camera, o.frame).second) {
      throw std::invalid_argument("id " + std::to_string(o.id) + " repeats in " + o.camera + " frame " +
                                  std::to_string(o.frame));
    }
  }
}

MotSummary evaluate_mota(const TrajectorySet& gt, const TrajectorySet& pred, double iou_thresh) {
  MotSummary s;
  s.num_gt = gt.size();
  const auto gf = by_frame(gt);
  const auto pf = by_frame(pred);
  std::set<FrameKey> keys;
  for (const auto& [k, v] : gf) keys.insert(k);
  for (const auto& [k, v] : pf) keys.insert(k);

  std::map<long, long> last;  // gt id -> last matched pred id
  static const std::vector<std::size_t> kNone;
  for (const auto& key : keys) {
    const auto git = gf.find(key);
    const auto pit = pf.find(key);
    const auto& gi = git == gf.end() ? kNone : git->second;
    const auto& pi = pit == pf.end() ? kNone : pit->second;

    std::vector<bool> g_used(gi.size(), false), p_used(pi.size(), false);
    std::vector<std::pair<std::size_t, std::size_t>> matched;
    // Keep correspondences from earlier frames while they still overlap.
    for (std::size_t a = 0; a < gi.size(); ++a) {
      const auto it = last.find(gt[gi[a]].id);
      if (it == last.end()) continue;
      for (std::size_t b = 0; b < pi.size(); ++b) {
        if (p_used[b] || pred[pi[b]].id != it->second) continue;
        if (ingest::iou(gt[gi[a]].box, pred[pi[b]].box) >= iou_thresh) {
          g_used[a] = p_used[b] = true;
          matched.emplace_back(a, b);
        }
        break;
      }
    }
    std::vector<std::size_t> ra, rb;
    for (std::size_t a = 0; a < gi.size(); ++a) if (!g_used[a]) ra.push_back(a);
    for (std::size_t b = 0; b < pi.size(); ++b) if (!p_used[b]) rb.push_back(b);
    if (!ra.empty() && !rb.empty()) {
      constexpr double kForbidden = 1e6;
      Eigen::MatrixXd cost(static_cast<Eigen::Index>(ra.size()), static_cast<Eigen::Index>(rb.size()));
      for (std::size_t r = 0; r < ra.size(); ++r) {
        for (std::size_t c = 0; c < rb.size(); ++c) {
          const double v = ingest::iou(gt[gi[ra[r]]].box, pred[pi[rb[c]]].box);
          cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v >= iou_thresh ? 1.0 - v : kForbidden;
        }
      }
      for (auto [r, c] : solve_assignment(cost)) {
        if (cost(r, c) >= kForbidden) continue;
        const std::size_t a = ra[static_cast<std::size_t>(r)];
        const std::size_t b = rb[static_cast<std::size_t>(c)];
        g_used[a] = p_used[b] = true;
        matched.emplace_back(a, b);
      }
    }
    for (auto [a, b] : matched) {
      const long g = gt[gi[a]].id;
      const long p = pred[pi[b]].id;
      const auto it = last.find(g);
      if (it != last.end() && it->second != p) ++s.id_switches;
      last[g] = p;
    }
    s.num_matches += matched.size();
    s.fn += gi.size() - matched.size();
    s.fp += pi.size() - matched.size();
  }
  s.mota = s.num_gt > 0 ? 1.0 - static_cast<double>(s.fp + s.fn + s.id_switches) / static_cast<double>(s.num_gt)
                        : (pred.empty() ? 1.0 : 0.0);
  return s;
}

IdentityScores evaluate_identity(const TrajectorySet& gt, const TrajectorySet& pred, double iou_thresh) {
  std::map<long, std::size_t> gid, pid;
  for (const auto& o : gt) gid.emplace(o.id, gid.size());
  for (const auto& o : pred) pid.emplace(o.id, pid.size());

  // Frames where gt id g and pred id p overlap enough to count as a match.
  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gid.size()),
                                                  static_cast<Eigen::Index>(pid.size()));
  const auto pf = by_frame(pred);
  for (const auto& g : gt) {
    const auto it = pf.find({g.frame, g.camera});
    if (it == pf.end()) continue;
    for (std::size_t b : it->second) {
      if (ingest::iou(g.box, pred[b].box) >= iou_thresh) {
        overlap(static_cast<Eigen::Index>(gid[g.id]), static_cast<Eigen::Index>(pid[pred[b].id])) += 1.0;
      }
    }
  }

  IdentityScores s;
  if (!gid.empty() && !pid.empty()) {
    const Eigen::MatrixXd cost = -overlap;
    for (auto [r, c] : solve_assignment(cost)) s.idtp += static_cast<std::size_t>(overlap(r, c));
  }
  s.idfn = gt.size() - s.idtp;
  s.idfp = pred.size() - s.idtp;
  const double tp = static_cast<double>(s.idtp);
  s.idp = safe_ratio(tp, tp + static_cast<double>(s.idfp));
  s.idr = safe_ratio(tp, tp + static_cast<double>(s.idfn));
  s.idf1 = safe_ratio(2.0 * tp, 2.0 * tp + static_cast<double>(s.idfp + s.idfn));
  // Nothing to track and nothing reported, as in evaluate_mota.
  if (gt.empty() && pred.empty()) s.idp = s.idr = s.idf1 = 1.0;
  return s;
}

MotSummary evaluate(const TrajectorySet& gt, const TrajectorySet& pred, double iou_thresh) {
  MotSummary s = evaluate_mota(gt, pred, iou_thresh);
  const auto id = evaluate_identity(gt, pred, iou_thresh);
  s.idp = id.idp;
  s.idr = id.idr;
  s.idf1 = id.idf1;
  s.idtp = id.idtp;
  s.idfp = id.idfp;
  s.idfn = id.idfn;
  return s;
}

std::map<std::pair<geo::CameraId, long>, long> majority_labels(const TrajectorySet& pred, const TrajectorySet& gt,
                                                              double iou_thresh) {
  const auto gf = by_frame(gt);
  std::map<std::pair<geo::CameraId, long>, std::map<long, std::size_t>> votes;
  for (const auto& p : pred) {
    const auto it = gf.find({p.frame, p.camera});
    if (it == gf.end()) continue;
    double best = iou_thresh;
    long label = 0;
    bool found = false;
    for (std::size_t g : it->second) {
      const double v = ingest::iou(p.box, gt[g].box);
      if (v >= best) {
        best = v;
        label = gt[g].id;
        found = true;
      }
    }
    if (found) ++votes[{p.camera, p.id}][label];
  }
  std::map<std::pair<geo::CameraId, long>, long> out;
  for (const auto& [key, counts] : votes) {
    long label = 0;
    std::size_t n = 0;
    for (const auto& [id, c] : counts) {
      if (c > n) {
        n = c;
        label = id;
      }
    }
    out[key] = label;
  }
  return out;
}

TrajectorySet read_gt_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw SourceMissing("no such directory " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  TrajectorySet out;
  for (const auto& f : files) {
    const auto cam = f.stem().string();
    for (const auto& r : ingest::read_detection_csv(f.string())) {
      out.push_back({cam, r.frame_index, static_cast<long>(r.id), r.det});
    }
  }
  return out;
}

TrajectorySet read_prediction_csv(const std::string& path) {
  TrajectorySet out;
  for (const auto& r : sct::read_track_csv(path)) {
    out.push_back({r.camera, r.frame_index, static_cast<long>(r.id), r.box});
  }
  return out;
}

}  // namespace citytrack::metrics
