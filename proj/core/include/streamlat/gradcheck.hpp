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

#ifndef STREAMLAT_GRADCHECK_HPP_
#define STREAMLAT_GRADCHECK_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "streamlat/diff.hpp"

namespace streamlat::diff {

class ProbeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds a scalar from the probed input on the given tape.
using ScalarFn = std::function<DiffArray(Tape&, const DiffArray& x)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the tape gradient of f at `point` with central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h. Per coordinate the error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8); the maximum is
/// returned. `coordinates` restricts probing to a subset (empty = all).
/// Throws ProbeError when f is non-finite at any probe point.
GradCheckResult grad_check_detailed(const ScalarFn& f, const Shape& shape,
                                    std::span<const double> point, double step,
                                    std::span<const std::size_t> coordinates = {});

double grad_check(const ScalarFn& f, const Shape& shape, std::span<const double> point,
                  double step = 1e-5);

}  // namespace streamlat::diff

#endif  // STREAMLAT_GRADCHECK_HPP_
