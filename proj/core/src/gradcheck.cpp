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

#include "streamlat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace streamlat::diff {

namespace {

double Evaluate(const ScalarFn& f, const Shape& shape, const std::vector<double>& x) {
  Tape tape;
  const DiffArray in = tape.constant(shape, x);
  const double v = f(tape, in).item();
  if (!std::isfinite(v)) throw ProbeError("function is not finite at a probe point");
  return v;
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFn& f, const Shape& shape,
                                    std::span<const double> point, double step,
                                    std::span<const std::size_t> coordinates) {
  if (NumElements(shape) != point.size()) {
    throw DimensionError("grad_check point has " + std::to_string(point.size()) +
                         " values for shape " + ShapeString(shape));
  }
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> analytic;
  {
    Tape tape;
    const DiffArray in = tape.variable(shape, x);
    const DiffArray y = f(tape, in);
    if (!std::isfinite(y.item())) throw ProbeError("function is not finite at the base point");
    tape.backward(y);
    const auto g = in.grad();
    analytic.assign(g.begin(), g.end());
  }

  std::vector<std::size_t> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    coords.resize(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
  }

  GradCheckResult result;
  for (std::size_t i : coords) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = Evaluate(f, shape, x);
    x[i] = orig - step;
    const double down = Evaluate(f, shape, x);
    x[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

double grad_check(const ScalarFn& f, const Shape& shape, std::span<const double> point,
                  double step) {
  return grad_check_detailed(f, shape, point, step).max_rel_error;
}

}  // namespace streamlat::diff
