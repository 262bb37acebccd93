// Copyright 2026 The streamlat Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "streamlat/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace streamlat::oracle {

Matrix EnumerateHaltingPaths(const Matrix& p, const std::vector<int>& bounds) {
  const std::size_t steps = p.size();
  const std::size_t frames = steps == 0 ? 0 : p[0].size();
  Matrix alpha(steps, std::vector<double>(frames, 0.0));
  // Depth-first over halting frames; `mass` is the probability of the path so far.
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t start, double mass) {
    if (i == steps) return;
    const std::size_t limit = bounds.empty() ? frames : std::min<std::size_t>(frames, static_cast<std::size_t>(bounds[i]));
    double survive = 1.0;
    for (std::size_t j = start; j < frames; ++j) {
      const double here = mass * survive * p[i][j];
      if (j < limit) {
        alpha[i][j] += here;
        walk(i + 1, j, here);
      }
      survive *= 1.0 - p[i][j];
    }
  };
  walk(0, 0, 1.0);
  return alpha;
}

Matrix DirectChunkwiseBeta(const Matrix& alpha, const Matrix& u, int w) {
  const std::size_t steps = alpha.size();
  const std::size_t frames = steps == 0 ? 0 : alpha[0].size();
  Matrix beta(steps, std::vector<double>(frames, 0.0));
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j < frames; ++j) {
      for (std::size_t k = j; k < frames && k < j + static_cast<std::size_t>(w); ++k) {
        const std::size_t lo = k + 1 >= static_cast<std::size_t>(w) ? k + 1 - static_cast<std::size_t>(w) : 0;
        long double z = 0.0L;
        for (std::size_t l = lo; l <= k; ++l) z += std::exp(static_cast<long double>(u[i][l]));
        beta[i][j] += static_cast<double>(alpha[i][k] * std::exp(static_cast<long double>(u[i][j])) / z);
      }
    }
  }
  return beta;
}

std::vector<Matrix> DirectInterimContexts(const Matrix& a, const Matrix& v) {
  std::vector<Matrix> out;
  for (const auto& row : a) {
    Matrix c(row.size(), std::vector<double>(v.empty() ? 0 : v[0].size(), 0.0));
    for (std::size_t j = 0; j < row.size(); ++j) {
      for (std::size_t k = 0; k <= j; ++k) {
        for (std::size_t d = 0; d < v[k].size(); ++d) c[j][d] += row[k] * v[k][d];
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

bool TableUpdate(double acc_before, double acc_after, double cov_before, double cov_after, double tol) {
  const double dacc = acc_after - acc_before;
  const double dcov = cov_after - cov_before;
  const bool acc_equal = dacc == 0.0 || std::fabs(dacc) < tol;
  if (acc_equal) {
    const bool cov_equal = dcov == 0.0 || std::fabs(dcov) < tol;
    return !cov_equal && dcov < 0.0;
  }
  return dacc > 0.0;
}

double PooledOffset(const std::vector<std::vector<int>>& triggers, const std::vector<std::vector<int>>& truth) {
  long double total = 0.0L;
  long double count = 0.0L;
  for (std::size_t k = 0; k < triggers.size(); ++k) {
    for (std::size_t i = 0; i < triggers[k].size(); ++i) {
      total += static_cast<long double>(triggers[k][i]) - static_cast<long double>(truth[k][i]);
      count += 1.0L;
    }
  }
  return static_cast<double>(total / count);
}

int EditDistance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Matrix RandomMatrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& r : m) {
    for (double& x : r) x = u(rng);
  }
  return m;
}

}  // namespace streamlat::oracle
