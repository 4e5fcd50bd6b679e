#include "citytrack/assignment.hpp"

#include <algorithm>
#include <limits>

namespace citytrack {

namespace {

// Rows <= cols. Potentials-based O(n^2 m) augmenting path, 1-indexed internally.
std::vector<int> assign_rows(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return row_to_col;
}

}  // namespace

std::vector<std::pair<int, int>> solve_assignment(const Eigen::MatrixXd& cost) {
  std::vector<std::pair<int, int>> out;
  if (cost.rows() == 0 || cost.cols() == 0) return out;
  if (cost.rows() <= cost.cols()) {
    const auto r2c = assign_rows(cost);
    for (std::size_t r = 0; r < r2c.size(); ++r) out.emplace_back(static_cast<int>(r), r2c[r]);
  } else {
    const Eigen::MatrixXd t = cost.transpose();
    const auto c2r = assign_rows(t);
    for (std::size_t c = 0; c < c2r.size(); ++c) out.emplace_back(c2r[c], static_cast<int>(c));
    std::sort(out.begin(), out.end());
  }
  return out;
}

MatchResult min_cost_matching(const Eigen::MatrixXd& cost, double max_cost) {
  MatchResult res;
  const Eigen::MatrixXd clamped = cost.cwiseMin(max_cost + 1e-5);
  std::vector<char> row_used(static_cast<std::size_t>(cost.rows()), 0), col_used(static_cast<std::size_t>(cost.cols()), 0);
  for (auto [r, c] : solve_assignment(clamped)) {
    if (cost(r, c) > max_cost) continue;
    res.matches.emplace_back(r, c);
    row_used[static_cast<std::size_t>(r)] = 1;
    col_used[static_cast<std::size_t>(c)] = 1;
  }
  for (int r = 0; r < cost.rows(); ++r)
    if (!row_used[static_cast<std::size_t>(r)]) res.unmatched_rows.push_back(r);
  for (int c = 0; c < cost.cols(); ++c)
    if (!col_used[static_cast<std::size_t>(c)]) res.unmatched_cols.push_back(c);
  return res;
}

}  // namespace citytrack
