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

#ifndef STREAMLAT_ORACLE_HPP_
#define STREAMLAT_ORACLE_HPP_

// Independent reference computations for tests and self-checks.
// None of these share code with the library under test.

#include <cstdint>
#include <random>
#include <vector>

namespace streamlat::oracle {

using Matrix = std::vector<std::vector<double>>;

/// Probability that decode step i halts at frame j, summed over every
/// monotonic halting path. Step i scans from the previous step's halt frame
/// (frame 0 for the first step) and halts at frame j with probability p[i][j]
/// given it reached j. Paths that halt past bounds[i] (1-based) are dropped.
Matrix EnumerateHaltingPaths(const Matrix& p, const std::vector<int>& bounds = {});

/// beta[i][j] = sum over windows k containing j of alpha[i][k] * softmax over
/// the window [k - w + 1, k] evaluated at j.
Matrix DirectChunkwiseBeta(const Matrix& alpha, const Matrix& u, int w);

/// Cumulative contexts c[i][j] = sum_{k <= j} a[i][k] v[k].
std::vector<Matrix> DirectInterimContexts(const Matrix& a, const Matrix& v);

/// Straight-line statement of the fine-tuning update table.
bool TableUpdate(double acc_before, double acc_after, double cov_before, double cov_after, double tol);

/// Token-pooled mean signed offset, computed with long double sums.
double PooledOffset(const std::vector<std::vector<int>>& triggers, const std::vector<std::vector<int>>& truth);

/// Plain O(nm) edit distance.
int EditDistance(const std::vector<int>& a, const std::vector<int>& b);

Matrix RandomMatrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi);

}  // namespace streamlat::oracle

#endif  // STREAMLAT_ORACLE_HPP_
