#include "citytrack/reid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "citytrack/errors.hpp"

namespace citytrack::reid {

Embedding l2_normalize(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ZeroVector("cannot normalize a zero or non-finite vector");
  return v / n;
}

// ---------------------------------------------------------------------------
// Temporal scorer

TemporalScorer TemporalScorer::learned(ConvWeights weights) {
  const auto d = weights.conv1[0].cols();
  for (const auto& k : weights.conv1) {
    if (k.rows() != kHidden || k.cols() != d) throw DimensionMismatch("conv1 kernels must be 64 x D");
  }
  if (weights.bias1.size() != kHidden) throw DimensionMismatch("bias1 must have 64 entries");
  TemporalScorer s;
  s.kind_ = Kind::LearnedConv;
  s.w_ = std::move(weights);
  return s;
}

Eigen::VectorXd TemporalScorer::scores(const Eigen::MatrixXd& seq) const {
  const auto len = seq.rows();
  if (kind_ == Kind::Uniform) return Eigen::VectorXd::Zero(len);
  if (seq.cols() != w_.conv1[0].cols()) throw DimensionMismatch("sequence dimension does not match scorer");

  // hidden: L x 64
  Eigen::MatrixXd hidden = Eigen::MatrixXd::Zero(len, kHidden);
  for (int k = 0; k < kKernel; ++k) {
    const Eigen::Index shift = k - 1;
    const Eigen::MatrixXd proj = seq * w_.conv1[static_cast<std::size_t>(k)].transpose();
    for (Eigen::Index t = 0; t < len; ++t) {
      const Eigen::Index src = t + shift;
      if (src >= 0 && src < len) hidden.row(t) += proj.row(src);
    }
  }
  hidden.rowwise() += w_.bias1.transpose();
  hidden = hidden.cwiseMax(0.0);

  Eigen::VectorXd out = Eigen::VectorXd::Constant(len, w_.bias2);
  for (int k = 0; k < kKernel; ++k) {
    const Eigen::VectorXd proj = hidden * w_.conv2.row(k).transpose();
    for (Eigen::Index t = 0; t < len; ++t) {
      const Eigen::Index src = t + k - 1;
      if (src >= 0 && src < len) out(t) += proj(src);
    }
  }
  return out;
}

TemporalScorer TemporalScorer::load(const std::string& path) {
  const auto blocks = read_embedding_blocks(path);
  if (blocks.size() != 2) throw ParseError(path + ": scorer file needs two blocks");
  const auto& b1 = blocks[0];
  const auto& b2 = blocks[1];
  if (b1.rows.size() != static_cast<std::size_t>(kHidden * kKernel)) throw ParseError(path + ": block 1 must have 192 rows");
  if (b2.dim != static_cast<std::uint32_t>(kHidden) || b2.rows.size() != 5) {
    throw ParseError(path + ": block 2 must be 5 rows of dimension 64");
  }
  ConvWeights w;
  for (auto& k : w.conv1) k = Eigen::MatrixXd::Zero(kHidden, b1.dim);
  for (int o = 0; o < kHidden; ++o) {
    for (int k = 0; k < kKernel; ++k) {
      w.conv1[static_cast<std::size_t>(k)].row(o) = b1.rows[static_cast<std::size_t>(o * kKernel + k)].transpose();
    }
  }
  for (int k = 0; k < kKernel; ++k) w.conv2.row(k) = b2.rows[static_cast<std::size_t>(k)].transpose();
  w.bias1 = b2.rows[3];
  w.bias2 = b2.rows[4](0);
  return learned(std::move(w));
}

void TemporalScorer::save(const std::string& path) const {
  if (kind_ != Kind::LearnedConv) throw ConfigError("only learned scorers have weights to save");
  const auto d = static_cast<std::uint32_t>(w_.conv1[0].cols());
  EmbeddingBlock b1{d, {}};
  for (int o = 0; o < kHidden; ++o) {
    for (int k = 0; k < kKernel; ++k) b1.rows.push_back(w_.conv1[static_cast<std::size_t>(k)].row(o).transpose());
  }
  EmbeddingBlock b2{static_cast<std::uint32_t>(kHidden), {}};
  for (int k = 0; k < kKernel; ++k) b2.rows.push_back(w_.conv2.row(k).transpose());
  b2.rows.push_back(w_.bias1);
  Eigen::VectorXd last = Eigen::VectorXd::Zero(kHidden);
  last(0) = w_.bias2;
  b2.rows.push_back(last);
  write_embedding_blocks(path, {b1, b2});
}

// ---------------------------------------------------------------------------
// Aggregation

Embedding weighted_aggregate(const Eigen::MatrixXd& seq, const Eigen::VectorXd& scores) {
  if (seq.rows() < 1) throw DimensionMismatch("track feature sequence is empty");
  if (scores.size() != seq.rows()) throw DimensionMismatch("one score per frame required");
  const double top = scores.maxCoeff();
  Eigen::VectorXd w = (scores.array() - top).exp().matrix();
  w /= w.sum();
  return l2_normalize(seq.transpose() * w);
}

Embedding temporal_aggregate(const Eigen::MatrixXd& seq, const TemporalScorer& scorer) {
  if (seq.rows() < 1) throw DimensionMismatch("track feature sequence is empty");
  return weighted_aggregate(seq, scorer.scores(seq));
}

Embedding temporal_aggregate(const std::vector<Embedding>& rows, const TemporalScorer& scorer) {
  if (rows.empty()) throw DimensionMismatch("track feature sequence is empty");
  Eigen::MatrixXd seq(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != seq.cols()) throw DimensionMismatch("ragged feature sequence");
    seq.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return temporal_aggregate(seq, scorer);
}

Embedding average_embeddings(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw DimensionMismatch("embedding dimensions differ");
  return l2_normalize((a + b) / 2.0);
}

// ---------------------------------------------------------------------------
// Camera bias

std::vector<Embedding> mitigate_camera_bias(const std::vector<std::pair<geo::CameraId, Embedding>>& tracks,
                                            double lambda) {
  CameraEmbeddingStats stats;
  for (const auto& [cam, f] : tracks) stats.add(cam, f);
  std::vector<Embedding> out;
  out.reserve(tracks.size());
  for (const auto& [cam, f] : tracks) out.push_back(stats.mitigate(cam, f, lambda));
  return out;
}

void CameraEmbeddingStats::add(const geo::CameraId& camera, const Embedding& f) {
  auto& e = stats_[camera];
  if (e.n == 0) {
    e.sum = f;
  } else {
    if (e.sum.size() != f.size()) throw DimensionMismatch("embedding dimensions differ within a camera");
    e.sum += f;
  }
  ++e.n;
}

Embedding CameraEmbeddingStats::mean(const geo::CameraId& camera) const {
  auto it = stats_.find(camera);
  if (it == stats_.end()) throw UnknownCamera("no embeddings recorded for " + camera);
  return it->second.sum / static_cast<double>(it->second.n);
}

std::size_t CameraEmbeddingStats::count(const geo::CameraId& camera) const {
  auto it = stats_.find(camera);
  return it == stats_.end() ? 0 : it->second.n;
}

Embedding CameraEmbeddingStats::mitigate(const geo::CameraId& camera, const Embedding& f, double lambda) const {
  if (lambda == 0.0) return f;
  return l2_normalize(f - lambda * mean(camera));
}

// ---------------------------------------------------------------------------
// Evaluation

Eigen::MatrixXd euclidean_distances(const std::vector<Embedding>& query, const std::vector<Embedding>& gallery) {
  Eigen::MatrixXd d(static_cast<Eigen::Index>(query.size()), static_cast<Eigen::Index>(gallery.size()));
  for (std::size_t i = 0; i < query.size(); ++i) {
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (query[i] - gallery[j]).norm();
    }
  }
  return d;
}

ReidScores eval_track_reid(const std::vector<LabeledTrack>& query, const std::vector<LabeledTrack>& gallery,
                           const Eigen::MatrixXd& dist) {
  if (dist.rows() != static_cast<Eigen::Index>(query.size()) ||
      dist.cols() != static_cast<Eigen::Index>(gallery.size())) {
    throw DimensionMismatch("distance matrix shape does not match query/gallery");
  }
  if (query.empty()) throw NoValidGallery("no queries");
  ReidScores s;
  for (std::size_t qi = 0; qi < query.size(); ++qi) {
    std::vector<std::size_t> valid;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (gallery[g].camera != query[qi].camera) valid.push_back(g);
    }
    std::stable_sort(valid.begin(), valid.end(), [&](std::size_t a, std::size_t b) {
      return dist(static_cast<Eigen::Index>(qi), static_cast<Eigen::Index>(a)) <
             dist(static_cast<Eigen::Index>(qi), static_cast<Eigen::Index>(b));
    });
    double hits = 0.0, precision_sum = 0.0;
    std::size_t first_hit = 0;
    for (std::size_t r = 0; r < valid.size(); ++r) {
      if (gallery[valid[r]].identity != query[qi].identity) continue;
      hits += 1.0;
      precision_sum += hits / static_cast<double>(r + 1);
      if (first_hit == 0) first_hit = r + 1;
    }
    if (hits == 0.0) throw NoValidGallery("query " + std::to_string(qi) + " has no cross-camera match");
    s.mAP += precision_sum / hits;
    if (first_hit <= 1) s.cmc1 += 1.0;
    if (first_hit <= 5) s.cmc5 += 1.0;
  }
  const auto n = static_cast<double>(query.size());
  s.mAP /= n;
  s.cmc1 /= n;
  s.cmc5 /= n;
  return s;
}

}  // namespace citytrack::reid
