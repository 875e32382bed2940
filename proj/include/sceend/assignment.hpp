#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "sceend/matrix.hpp"

namespace sceend {

/// Minimum-cost one-to-one assignment via the Hungarian algorithm
/// (Jonker-Volgenant style with potentials, O(n^3)). cost must be square.
/// Returns perm with perm[row] = assigned column.
inline std::vector<int> hungarian(const Matrix& cost) {
  if (cost.rows != cost.cols) throw ShapeError("hungarian: cost matrix must be square");
  const int n = cost.rows;
  if (n == 0) return {};
  const double INF = std::numeric_limits<double>::infinity();
  // 1-based internal arrays; p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = INF;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> perm(n);
  for (int j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  return perm;
}

/// Exhaustive minimum-cost assignment. Ties broken by lexicographically
/// smallest permutation (permutations visited in lexicographic order,
/// strict improvement required to switch).
inline std::vector<int> exhaustive_assignment(const Matrix& cost) {
  if (cost.rows != cost.cols) throw ShapeError("exhaustive_assignment: square matrix required");
  const int n = cost.rows;
  std::vector<int> perm(n), best(n);
  std::iota(perm.begin(), perm.end(), 0);
  best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost(i, perm[i]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double assignment_cost(const Matrix& cost, const std::vector<int>& perm) {
  double c = 0.0;
  for (int i = 0; i < cost.rows; ++i) c += cost(i, perm[i]);
  return c;
}

struct PermutationResult {
  std::vector<int> perm;  // perm[i] = column assigned to row i
  double cost = 0.0;
};

/// Exhaustive for S <= 6, Hungarian above.
inline PermutationResult optimal_permutation(const Matrix& cost) {
  if (cost.rows != cost.cols) throw ShapeError("optimal_permutation: square matrix required");
  for (double v : cost.data)
    if (!std::isfinite(v)) throw std::invalid_argument("optimal_permutation: non-finite cost");
  PermutationResult r;
  r.perm = cost.rows <= 6 ? exhaustive_assignment(cost) : hungarian(cost);
  r.cost = assignment_cost(cost, r.perm);
  return r;
}

}  // namespace sceend
