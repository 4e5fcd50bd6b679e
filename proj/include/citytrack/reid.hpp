#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "citytrack/embedding.hpp"
#include "citytrack/geo.hpp"

namespace citytrack::reid {

/// v / ||v||_2. Throws ZeroVector when the norm is zero or not finite.
Embedding l2_normalize(const Eigen::VectorXd& v);

/// Produces one score per frame of an L x D feature sequence.
///
/// `Uniform` scores every frame 0 (plain mean after softmax). `LearnedConv`
/// applies two temporal 1-D convolutions with same padding:
/// D -> 64 channels (kernel 3), ReLU, then 64 -> 1 (kernel 3).
class TemporalScorer {
 public:
  static constexpr int kHidden = 64;
  static constexpr int kKernel = 3;

  enum class Kind { Uniform, LearnedConv };

  struct ConvWeights {
    /// conv1[k] is kHidden x D: weights applied to frame t + k - 1.
    std::array<Eigen::MatrixXd, kKernel> conv1;
    Eigen::VectorXd bias1;  // kHidden
    /// conv2 row k (length kHidden) applies to hidden frame t + k - 1.
    Eigen::Matrix<double, kKernel, kHidden> conv2;
    double bias2 = 0.0;
  };

  TemporalScorer() = default;
  static TemporalScorer uniform() { return TemporalScorer(); }
  static TemporalScorer learned(ConvWeights weights);

  /// Weights file: two EMB1 blocks.
  ///   block 1: dim D,  rows 3*64, row (o*3 + k) = conv1[k].row(o)
  ///   block 2: dim 64, rows 5,    rows 0..2 = conv2 rows, row 3 = bias1,
  ///                               row 4 = [bias2, 0, ..., 0]
  static TemporalScorer load(const std::string& path);
  void save(const std::string& path) const;

  Kind kind() const { return kind_; }
  Eigen::VectorXd scores(const Eigen::MatrixXd& sequence) const;

 private:
  Kind kind_ = Kind::Uniform;
  ConvWeights w_;
};

/// Softmax-weighted sum of the rows of `sequence` (temporally ordered, L >= 1),
/// re-normalized to unit length.
Embedding temporal_aggregate(const Eigen::MatrixXd& sequence, const TemporalScorer& scorer);
Embedding temporal_aggregate(const std::vector<Embedding>& rows, const TemporalScorer& scorer);
/// Aggregation with explicit frame scores, exposed for property tests.
Embedding weighted_aggregate(const Eigen::MatrixXd& sequence, const Eigen::VectorXd& scores);

/// Flip-augmentation merge: normalize((a + b) / 2).
Embedding average_embeddings(const Embedding& a, const Embedding& b);

/// Per camera, subtracts lambda times the camera's mean embedding and
/// re-normalizes. Output is aligned with the input.
std::vector<Embedding> mitigate_camera_bias(const std::vector<std::pair<geo::CameraId, Embedding>>& tracks,
                                            double lambda);

/// Running per-camera mean of raw track embeddings, used online where the
/// full set of a camera's tracks is not known up front.
class CameraEmbeddingStats {
 public:
  void add(const geo::CameraId& camera, const Embedding& f);
  bool has(const geo::CameraId& camera) const { return stats_.count(camera) > 0; }
  Embedding mean(const geo::CameraId& camera) const;
  std::size_t count(const geo::CameraId& camera) const;
  /// normalize(f - lambda * g_c) with the current camera mean.
  Embedding mitigate(const geo::CameraId& camera, const Embedding& f, double lambda) const;

 private:
  struct Entry {
    Eigen::VectorXd sum;
    std::size_t n = 0;
  };
  std::map<geo::CameraId, Entry> stats_;
};

/// Pairwise Euclidean distances, rows = queries, cols = gallery.
Eigen::MatrixXd euclidean_distances(const std::vector<Embedding>& query, const std::vector<Embedding>& gallery);

struct RerankParams {
  int k1 = 20;
  int k2 = 6;
  double lambda = 0.3;
};

/// k-reciprocal re-ranking. Returns lambda * euclidean + (1 - lambda) * jaccard
/// over expanded k-reciprocal neighbour sets. Neighbour sets include every
/// candidate tied with the last admitted rank, so exact ties stay ties.
/// Throws InsufficientGallery when the gallery has fewer than k1 entries.
Eigen::MatrixXd k_reciprocal_rerank(const std::vector<Embedding>& query, const std::vector<Embedding>& gallery,
                                    const RerankParams& params);

struct LabeledTrack {
  long identity = 0;
  geo::CameraId camera;
};

struct ReidScores {
  double mAP = 0.0;
  double cmc1 = 0.0;
  double cmc5 = 0.0;
};

/// Track-to-track retrieval scores. Gallery entries from the query's own camera
/// are excluded. Throws NoValidGallery when a query has no remaining match.
ReidScores eval_track_reid(const std::vector<LabeledTrack>& query, const std::vector<LabeledTrack>& gallery,
                           const Eigen::MatrixXd& dist);

}  // namespace citytrack::reid
