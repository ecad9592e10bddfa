#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "fedseg/tensor.hpp"

namespace fedseg {

// Minimum-cost one-to-one assignment of min(n,m) (row, col) pairs for a
// dense n x m cost matrix. Shortest-augmenting-path implementation with
// potentials, O(n^2 m). Pairs are returned sorted by row.
inline std::vector<std::pair<int, int>> hungarian_match(const Tensor& cost) {
  if (cost.shape().size() != 2) throw ShapeError("hungarian_match: cost must be rank-2");
  int rows = cost.shape()[0], cols = cost.shape()[1];
  for (double v : cost.values())
    if (std::isnan(v)) throw NumericError("hungarian_match: NaN cost");

  bool transposed = rows > cols;
  int n = transposed ? cols : rows;
  int m = transposed ? rows : cols;
  auto at = [&](int i, int j) {
    return transposed ? cost.values()[static_cast<size_t>(j) * cols + i]
                      : cost.values()[static_cast<size_t>(i) * cols + j];
  };

  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = match[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<std::pair<int, int>> out;
  out.reserve(n);
  for (int j = 1; j <= m; ++j) {
    if (match[j] == 0) continue;
    int r = match[j] - 1, c = j - 1;
    if (transposed) std::swap(r, c);
    out.emplace_back(r, c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fedseg
