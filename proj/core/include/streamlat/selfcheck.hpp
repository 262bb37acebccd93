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

#ifndef STREAMLAT_SELFCHECK_HPP_
#define STREAMLAT_SELFCHECK_HPP_

// Runtime verification suites: finite-difference gradients of every
// differentiable pipeline and comparisons against the brute-force oracles.

#include <cstdint>
#include <string>
#include <vector>

#include "streamlat/model.hpp"

namespace streamlat::selfcheck {

struct Check {
  std::string name;
  double measured = 0.0;   // worst error observed
  double threshold = 0.0;  // pass iff measured < threshold
  std::size_t cases = 0;
  double seconds = 0.0;
  bool passed = false;
};

struct Report {
  std::vector<Check> checks;
  bool passed() const;
};

/// "PASS name  measured < threshold  (cases, seconds)".
std::string Format(const Check& c);

// Gradient checks (central differences, rel. error).
Check PrimitiveGradients(std::uint64_t seed, int seeds_per_op = 20);
Check SoftmaxAttentionGradient(std::uint64_t seed, int cases = 10);
Check MochaGradient(std::uint64_t seed, int cases = 10);
Check CaGradient(std::uint64_t seed, int cases = 10);
/// Whole model loss at model_dim 16, masked and unmasked.
Check ModelGradient(model::StreamingKind kind, std::uint64_t seed);

// Oracle comparisons.
Check AlignmentOracle(std::uint64_t seed, int cases = 200);
Check MaskedAlignmentOracle(std::uint64_t seed, int cases = 200);
/// Largest alpha beyond b + delta (must be exactly 0) and largest change of
/// the unmasked result under vacuous bounds (must be exactly 0).
Check MaskExactness(std::uint64_t seed, int cases = 200);
Check BetaOracle(std::uint64_t seed, int cases = 200);
Check BetaMassConservation(std::uint64_t seed, int cases = 500);
Check InterimContextOracle(std::uint64_t seed, int cases = 50);
/// 9 classified cells plus `cases` random numeric cases; measured = mismatches.
Check UpdateTableConformance(std::uint64_t seed, int cases = 1000);
Check LatencyOracle(std::uint64_t seed, int cases = 200);
Check EditDistanceOracle(std::uint64_t seed, int cases = 500);

Report GradientSuite(std::uint64_t seed = 1);
Report OracleSuite(std::uint64_t seed = 1);

}  // namespace streamlat::selfcheck

#endif  // STREAMLAT_SELFCHECK_HPP_
