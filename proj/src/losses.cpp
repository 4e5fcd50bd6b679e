#include "citytrack/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "citytrack/errors.hpp"
#include "citytrack/rng.hpp"

namespace citytrack::losses {

namespace {

void check_batch(const LabeledBatch& batch) {
  if (static_cast<std::size_t>(batch.features.rows()) != batch.ids.size()) {
    throw DimensionMismatch("features and ids differ in length");
  }
  std::map<long, int> counts;
  for (long id : batch.ids) ++counts[id];
  if (counts.size() < 2) throw DegenerateBatch("batch holds fewer than two identities");
  for (auto [id, n] : counts) {
    if (n < 2) throw DegenerateBatch("identity " + std::to_string(id) + " has a single sample");
  }
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& z) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return z.array() - lse;
}

}  // namespace

LossGrad batch_hard_triplet_grad(const LabeledBatch& batch, double margin) {
  check_batch(batch);
  const auto& f = batch.features;
  const Eigen::Index n = f.rows();
  LossGrad out;
  out.d_features = Eigen::MatrixXd::Zero(n, f.cols());
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto ia = static_cast<std::size_t>(a);
    Eigen::Index hp = -1, hn = -1;
    double dp = -1.0, dn = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = (f.row(a) - f.row(j)).norm();
      if (batch.ids[static_cast<std::size_t>(j)] == batch.ids[ia]) {
        if (d > dp) {
          dp = d;
          hp = j;
        }
      } else if (hn < 0 || d < dn) {
        dn = d;
        hn = j;
      }
    }
    const double hinge = margin + dp - dn;
    if (hinge <= 0.0) continue;
    out.loss += hinge;
    if (dp > 0.0) {
      const Eigen::RowVectorXd u = (f.row(a) - f.row(hp)) / dp;
      out.d_features.row(a) += u;
      out.d_features.row(hp) -= u;
    }
    if (dn > 0.0) {
      const Eigen::RowVectorXd u = (f.row(a) - f.row(hn)) / dn;
      out.d_features.row(a) -= u;
      out.d_features.row(hn) += u;
    }
  }
  out.loss /= static_cast<double>(n);
  out.d_features /= static_cast<double>(n);
  return out;
}

double batch_hard_triplet(const LabeledBatch& batch, double margin) {
  return batch_hard_triplet_grad(batch, margin).loss;
}

Eigen::VectorXd smooth_targets(int c, int num_classes, double epsilon) {
  if (num_classes < 2 || c < 0 || c >= num_classes) {
    throw std::invalid_argument("smooth_targets: class out of range");
  }
  const double C = num_classes;
  Eigen::VectorXd y = Eigen::VectorXd::Constant(num_classes, epsilon / C);
  y(c) = 1.0 - (C - 1.0) / C * epsilon;
  return y;
}

double smoothed_cross_entropy_logits(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw DimensionMismatch("logits and targets differ in shape");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    total -= targets.row(i).dot(log_softmax(logits.row(i).transpose()));
  }
  return logits.rows() > 0 ? total / static_cast<double>(logits.rows()) : 0.0;
}

double smoothed_cross_entropy(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                              const LinearClassifier& clf) {
  return smoothed_cross_entropy_grad(features, targets, clf).loss;
}

CrossEntropyGrad smoothed_cross_entropy_grad(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                                             const LinearClassifier& clf) {
  if (features.cols() != clf.W.cols() || clf.W.rows() != clf.b.size()) {
    throw DimensionMismatch("classifier shape does not match features");
  }
  const Eigen::MatrixXd logits = (features * clf.W.transpose()).rowwise() + clf.b.transpose();
  CrossEntropyGrad out;
  out.loss = smoothed_cross_entropy_logits(logits, targets);

  const double n = static_cast<double>(std::max<Eigen::Index>(1, features.rows()));
  Eigen::MatrixXd g(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::VectorXd p = log_softmax(logits.row(i).transpose()).array().exp();
    // Soft targets need not sum to one exactly; keep the general form.
    g.row(i) = (p * targets.row(i).sum() - targets.row(i).transpose()).transpose() / n;
  }
  out.d_features = g * clf.W;
  out.d_W = g.transpose() * features;
  out.d_b = g.colwise().sum().transpose();
  return out;
}

double excitation_schedule(double m, double M) {
  if (!(M >= 1.0) || !(m >= 0.0) || m > M) {
    throw OutOfRange("epoch " + std::to_string(m) + " of " + std::to_string(M));
  }
  return 0.5 * (1.0 + std::cos(std::numbers::pi * m / M));
}

std::vector<SampleRef> sample_batch(const TrackDataset& dataset, int K, int L, std::uint64_t seed) {
  if (K < 1 || L < 1) throw std::invalid_argument("sample_batch: K and L must be positive");
  std::vector<long> ids;
  for (const auto& [id, tracks] : dataset) {
    const bool usable = std::any_of(tracks.begin(), tracks.end(), [](const auto& t) { return !t.empty(); });
    if (usable) ids.push_back(id);
  }
  if (ids.size() < static_cast<std::size_t>(K)) {
    throw InsufficientIdentities(std::to_string(ids.size()) + " identities, need " + std::to_string(K));
  }
  rng::Stream rs(seed, {rng::hash_string("sample_batch")});
  // Partial Fisher-Yates for K distinct identities.
  for (std::size_t i = 0; i < static_cast<std::size_t>(K); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rs.below(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }

  std::vector<SampleRef> plan;
  plan.reserve(static_cast<std::size_t>(K * L));
  for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
    const long id = ids[k];
    const auto& tracks = dataset.at(id);
    std::vector<std::size_t> usable;
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      if (!tracks[t].empty()) usable.push_back(t);
    }
    const std::size_t track = usable[rs.below(usable.size())];
    const auto& frames = tracks[track];

    std::vector<std::size_t> picked;
    if (frames.size() >= static_cast<std::size_t>(L)) {
      std::vector<std::size_t> all(frames.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      for (std::size_t i = 0; i < static_cast<std::size_t>(L); ++i) {
        std::swap(all[i], all[i + rs.below(all.size() - i)]);
      }
      picked.assign(all.begin(), all.begin() + L);
    } else {
      for (int i = 0; i < L; ++i) picked.push_back(rs.below(frames.size()));
    }
    std::sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
      return std::make_pair(frames[a], a) < std::make_pair(frames[b], b);
    });
    for (std::size_t f : picked) plan.push_back({id, track, f});
  }
  return plan;
}

}  // namespace citytrack::losses
