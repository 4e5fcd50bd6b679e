#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

namespace citytrack {

/// Minimum-cost rectangular assignment (Hungarian / shortest augmenting path).
/// Every row is assigned when rows <= cols, every column otherwise.
/// Returns (row, col) pairs sorted by row.
std::vector<std::pair<int, int>> solve_assignment(const Eigen::MatrixXd& cost);

struct MatchResult {
  std::vector<std::pair<int, int>> matches;
  std::vector<int> unmatched_rows;
  std::vector<int> unmatched_cols;
};

/// Assignment with a rejection threshold: entries above `max_cost` are clamped
/// before solving and any pair whose original cost exceeds `max_cost` is
/// returned as unmatched.
MatchResult min_cost_matching(const Eigen::MatrixXd& cost, double max_cost);

}  // namespace citytrack
