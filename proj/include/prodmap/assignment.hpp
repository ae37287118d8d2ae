#pragma once

#include "prodmap/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace prodmap {

/// Sparse bipartite assignment instance: per-row candidate columns with
/// values. The solver keeps a maximum-cardinality subset of the rows (picked
/// value-greedily when contention forces drops) and maximizes the summed
/// value over that subset.
struct AssignmentProblem {
  Index n_rows = 0, n_cols = 0;
  std::vector<std::vector<std::pair<Index, double>>> candidates;
};

struct AssignmentResult {
  std::vector<Index> row_to_col;      // -1 unmatched
  double objective = 0.0;             // sum over matched rows, row order
  std::vector<Index> unmatched_rows;  // rows no maximum matching can serve
};

inline double assignment_objective(const AssignmentProblem& prob,
                                   const std::vector<Index>& row_to_col) {
  double obj = 0.0;
  for (Index r = 0; r < prob.n_rows; ++r) {
    const Index c = row_to_col[size_t(r)];
    if (c < 0) continue;
    for (const auto& [cc, v] : prob.candidates[size_t(r)])
      if (cc == c) {
        obj += v;
        break;
      }
  }
  return obj;
}

namespace detail {

/// Augmenting-path maximum matching, rows attempted strongest-first. Returns
/// per-row matchability; rows that fail here cannot be served by any maximum
/// matching that includes the rows matched before them.
inline std::vector<char> matchable_rows(const AssignmentProblem& prob) {
  const Index n = prob.n_rows, m = prob.n_cols;
  std::vector<Index> order;
  for (Index r = 0; r < n; ++r)
    if (!prob.candidates[size_t(r)].empty()) order.push_back(r);
  std::vector<double> strength(size_t(n), 0.0);
  for (Index r : order)
    for (const auto& [c, v] : prob.candidates[size_t(r)]) {
      (void)c;
      strength[size_t(r)] = std::max(strength[size_t(r)], v);
    }
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return strength[size_t(a)] > strength[size_t(b)];
  });

  std::vector<Index> col_row(size_t(m), kUnmatched);
  std::vector<char> visited(size_t(m), 0);
  std::function<bool(Index)> augment = [&](Index r) {
    for (const auto& [c, v] : prob.candidates[size_t(r)]) {
      (void)v;
      if (visited[size_t(c)]) continue;
      visited[size_t(c)] = 1;
      if (col_row[size_t(c)] < 0 || augment(col_row[size_t(c)])) {
        col_row[size_t(c)] = r;
        return true;
      }
    }
    return false;
  };

  std::vector<char> ok(size_t(n), 0);
  for (Index r : order) {
    std::fill(visited.begin(), visited.end(), 0);
    if (augment(r)) ok[size_t(r)] = 1;
  }
  return ok;
}

} // namespace detail

/// Forward auction with epsilon scaling. Prices persist across phases;
/// assignments are rebuilt per phase. Rows that no maximum matching can
/// serve are pruned up front, so the auction always runs on an instance
/// with a row-perfect matching and terminates with every surviving row
/// assigned. Dummy zero-value rows square up wide instances; without them a
/// column abandoned after an early phase keeps its stale price forever and
/// eps-CS no longer bounds the gap to the optimum. The final assignment is
/// within n*eps_final of the sparse optimum over the surviving rows, far
/// below the gap between distinct objectives in practice.
inline AssignmentResult auction_assign(const AssignmentProblem& prob,
                                       double eps_final_rel = 1e-11) {
  const Index n = prob.n_rows, m = prob.n_cols;
  AssignmentResult res;
  res.row_to_col.assign(size_t(n), kUnmatched);
  if (n == 0) return res;
  for (const auto& row : prob.candidates)
    for (const auto& [c, v] : row) {
      (void)v;
      if (c < 0 || c >= m) throw DataError("assignment candidate column out of range");
    }

  const std::vector<char> ok = detail::matchable_rows(prob);

  double vmax = 0.0;
  Index active = 0;
  for (Index r = 0; r < n; ++r) {
    if (!ok[size_t(r)]) continue;
    ++active;
    for (const auto& [c, v] : prob.candidates[size_t(r)]) {
      (void)c;
      vmax = std::max(vmax, std::abs(v));
    }
  }
  const Index dummies = std::max<Index>(0, m - active);
  std::vector<std::pair<Index, double>> dummy_cand;
  if (dummies > 0) {
    dummy_cand.reserve(size_t(m));
    for (Index c = 0; c < m; ++c) dummy_cand.emplace_back(c, 0.0);
  }
  const Index n_bid = n + dummies;
  const std::vector<std::pair<Index, double>> empty_cand;
  const auto cand_of = [&](Index r) -> const std::vector<std::pair<Index, double>>& {
    if (r >= n) return dummy_cand;
    return ok[size_t(r)] ? prob.candidates[size_t(r)] : empty_cand;
  };

  const double scale = std::max(vmax, 1e-300);
  const double eps_final = eps_final_rel * scale;
  const double eps0 = std::max(scale / 2.0, eps_final);

  std::vector<double> price(size_t(m), 0.0);
  std::vector<Index> col_owner(size_t(m), kUnmatched);
  std::vector<Index> row_col(size_t(n_bid), kUnmatched);

  double eps = eps0;
  while (true) {
    std::fill(row_col.begin(), row_col.end(), kUnmatched);
    std::fill(col_owner.begin(), col_owner.end(), kUnmatched);
    std::deque<Index> open;
    for (Index r = 0; r < n_bid; ++r)
      if (!cand_of(r).empty()) open.push_back(r);

    while (!open.empty()) {
      const Index r = open.front();
      open.pop_front();
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      Index best_c = kUnmatched;
      for (const auto& [c, v] : cand_of(r)) {
        const double slack = v - price[size_t(c)];
        if (slack > best) {
          second = best;
          best = slack;
          best_c = c;
        } else if (slack > second) {
          second = slack;
        }
      }
      const double increment =
          (second == -std::numeric_limits<double>::infinity())
              ? 2.0 * scale + eps
              : best - second + eps;
      price[size_t(best_c)] += increment;
      const Index prev = col_owner[size_t(best_c)];
      if (prev != kUnmatched) {
        row_col[size_t(prev)] = kUnmatched;
        open.push_back(prev);
      }
      col_owner[size_t(best_c)] = r;
      row_col[size_t(r)] = best_c;
    }
    if (eps <= eps_final) break;
    eps = std::max(eps / 5.0, eps_final);
  }
  std::copy(row_col.begin(), row_col.begin() + n, res.row_to_col.begin());

  for (Index r = 0; r < n; ++r)
    if (res.row_to_col[size_t(r)] == kUnmatched)
      res.unmatched_rows.push_back(r);
  res.objective = assignment_objective(prob, res.row_to_col);
  return res;
}

} // namespace prodmap
