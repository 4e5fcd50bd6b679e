// k-reciprocal neighbour re-ranking of a query/gallery distance matrix.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "citytrack/errors.hpp"
#include "citytrack/reid.hpp"

namespace citytrack::reid {

namespace {

using Index = Eigen::Index;

class NeighbourIndex {
 public:
  explicit NeighbourIndex(const Eigen::MatrixXd& d) : d_(d), rank_(static_cast<std::size_t>(d.rows())) {
    const Index n = d.rows();
    for (Index i = 0; i < n; ++i) {
      auto& r = rank_[static_cast<std::size_t>(i)];
      r.resize(static_cast<std::size_t>(n));
      std::iota(r.begin(), r.end(), Index{0});
      std::stable_sort(r.begin(), r.end(), [&](Index a, Index b) { return d(i, a) < d(i, b); });
    }
  }

  /// The first `count` ranked entries of row i plus everything tied with the last.
  std::vector<Index> top(Index i, Index count) const {
    const auto& r = rank_[static_cast<std::size_t>(i)];
    const Index n = static_cast<Index>(r.size());
    if (count >= n) {
      std::vector<Index> all(r.begin(), r.end());
      return all;
    }
    if (count <= 0) return {};
    const double bound = d_(i, r[static_cast<std::size_t>(count - 1)]);
    std::vector<Index> out(r.begin(), r.begin() + count);
    for (Index k = count; k < n && d_(i, r[static_cast<std::size_t>(k)]) <= bound; ++k) {
      out.push_back(r[static_cast<std::size_t>(k)]);
    }
    return out;
  }

  bool in_top(Index i, Index j, Index count) const {
    const auto t = top(i, count);
    return std::find(t.begin(), t.end(), j) != t.end();
  }

  std::vector<Index> k_reciprocal(Index i, Index k) const {
    std::vector<Index> out;
    for (Index j : top(i, k + 1)) {
      if (in_top(j, i, k + 1)) out.push_back(j);
    }
    return out;
  }

 private:
  const Eigen::MatrixXd& d_;
  std::vector<std::vector<Index>> rank_;
};

std::size_t intersection_size(std::vector<Index> a, std::vector<Index> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<Index> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out.size();
}

}  // namespace

Eigen::MatrixXd k_reciprocal_rerank(const std::vector<Embedding>& query, const std::vector<Embedding>& gallery,
                                    const RerankParams& params) {
  if (params.k1 <= params.k2 || params.k2 < 1) throw std::invalid_argument("rerank requires k1 > k2 >= 1");
  if (params.lambda < 0.0 || params.lambda > 1.0) throw std::invalid_argument("rerank lambda outside [0,1]");
  if (gallery.size() < static_cast<std::size_t>(params.k1)) {
    throw InsufficientGallery("gallery has " + std::to_string(gallery.size()) + " entries, k1 = " +
                              std::to_string(params.k1));
  }
  const Eigen::MatrixXd original = euclidean_distances(query, gallery);

  std::vector<Embedding> all(query);
  all.insert(all.end(), gallery.begin(), gallery.end());
  const Index n = static_cast<Index>(all.size());
  const Index nq = static_cast<Index>(query.size());

  // Squared distances, each row scaled by its maximum.
  Eigen::MatrixXd dist = euclidean_distances(all, all).array().square().matrix();
  for (Index i = 0; i < n; ++i) {
    const double m = dist.row(i).maxCoeff();
    if (m > 0.0) dist.row(i) /= m;
  }
  const NeighbourIndex nn(dist);
  const Index k1 = params.k1;
  const Index half_k1 = static_cast<Index>(std::nearbyint(static_cast<double>(k1) / 2.0));

  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const auto recip = nn.k_reciprocal(i, k1);
    std::vector<Index> expansion = recip;
    for (Index c : recip) {
      const auto cand = nn.k_reciprocal(c, half_k1);
      if (static_cast<double>(intersection_size(cand, recip)) > 2.0 / 3.0 * static_cast<double>(cand.size())) {
        expansion.insert(expansion.end(), cand.begin(), cand.end());
      }
    }
    std::sort(expansion.begin(), expansion.end());
    expansion.erase(std::unique(expansion.begin(), expansion.end()), expansion.end());
    double total = 0.0;
    for (Index j : expansion) total += std::exp(-dist(i, j));
    for (Index j : expansion) v(i, j) = std::exp(-dist(i, j)) / total;
  }

  if (params.k2 != 1) {
    Eigen::MatrixXd qe = Eigen::MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      const auto nb = nn.top(i, params.k2);
      for (Index j : nb) qe.row(i) += v.row(j);
      qe.row(i) /= static_cast<double>(nb.size());
    }
    v = std::move(qe);
  }

  Eigen::MatrixXd out(nq, static_cast<Index>(gallery.size()));
  for (Index i = 0; i < nq; ++i) {
    for (Index g = 0; g < out.cols(); ++g) {
      const double shared = v.row(i).cwiseMin(v.row(nq + g)).sum();
      const double jaccard = 1.0 - shared / (2.0 - shared);
      out(i, g) = params.lambda * original(i, g) + (1.0 - params.lambda) * jaccard;
    }
  }
  return out;
}

}  // namespace citytrack::reid
