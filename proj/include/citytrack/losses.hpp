#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <Eigen/Core>

namespace citytrack::losses {

struct LabeledBatch {
  Eigen::MatrixXd features;  // one sample per row
  std::vector<long> ids;
};

struct LossGrad {
  double loss = 0.0;
  Eigen::MatrixXd d_features;
};

/// Batch-hard triplet loss, averaged over anchors. Throws DegenerateBatch when
/// an id has a single sample or the batch holds a single id.
double batch_hard_triplet(const LabeledBatch& batch, double margin = 0.3);
/// Same loss with its gradient. At a zero distance the subgradient 0 is used.
LossGrad batch_hard_triplet_grad(const LabeledBatch& batch, double margin = 0.3);

/// Label-smoothed target row: 1 - (C-1)/C * eps at c, eps/C elsewhere.
Eigen::VectorXd smooth_targets(int c, int num_classes, double epsilon = 0.1);

struct LinearClassifier {
  Eigen::MatrixXd W;  // C x D
  Eigen::VectorXd b;  // C
};

struct CrossEntropyGrad {
  double loss = 0.0;
  Eigen::MatrixXd d_features;
  Eigen::MatrixXd d_W;
  Eigen::VectorXd d_b;
};

/// Mean soft-target cross entropy of softmax(W f + b). `targets` is N x C.
double smoothed_cross_entropy(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                              const LinearClassifier& clf);
CrossEntropyGrad smoothed_cross_entropy_grad(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                                             const LinearClassifier& clf);
/// Cross entropy directly on logits (N x C), exposed for shift-invariance checks.
double smoothed_cross_entropy_logits(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets);

/// 0.5 * (1 + cos(pi m / M)). Throws OutOfRange unless 0 <= m <= M and M >= 1.
double excitation_schedule(double m, double M);

/// Frame timestamps of one track.
using TrackFrames = std::vector<double>;
/// Identity -> its tracks.
using TrackDataset = std::map<long, std::vector<TrackFrames>>;

struct SampleRef {
  long id = 0;
  std::size_t track = 0;
  std::size_t frame = 0;
};

/// K identities, one random track each, L frames per track in temporal order
/// (with replacement when the track is shorter than L). Rows are grouped by
/// identity. Throws InsufficientIdentities.
std::vector<SampleRef> sample_batch(const TrackDataset& dataset, int K, int L, std::uint64_t seed);

}  // namespace citytrack::losses
