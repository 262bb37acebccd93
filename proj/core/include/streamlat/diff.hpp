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

#ifndef STREAMLAT_DIFF_HPP_
#define STREAMLAT_DIFF_HPP_

// Reverse-mode differentiation over a dynamic tape.
//
// A Tape owns every node created during one forward pass, in creation order.
// Creation order is a topological order, so backward() is a single reverse
// sweep. DiffArray is a cheap handle (tape pointer + node index); it is only
// valid while its tape is alive.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace streamlat::diff {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Plain value container used for parameters and data outside of a tape.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);
  static Tensor Zeros(Shape s);

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const { return shape.empty() ? 1 : values.size() / rows(); }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
};

/// Read-only row-major 2-D view.
struct MatrixView {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const double> data;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return data.subspan(r * cols, cols); }
};

class Tape;

class DiffArray {
 public:
  DiffArray() = default;
  DiffArray(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::span<const double> values() const;
  /// Empty until backward() has run on the owning tape.
  std::span<const double> grad() const;
  bool requires_grad() const;
  double item() const;
  /// Interprets the array as (leading dims flattened) x last dim.
  MatrixView view() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Backward closure: reads the node's own gradient and accumulates into its
/// parents through Tape::grad_of().
using BackwardFn = std::function<void(Tape&, std::size_t self)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DiffArray constant(Shape shape, std::vector<double> values);
  DiffArray constant(const Tensor& t) { return constant(t.shape, t.values); }
  DiffArray variable(Shape shape, std::vector<double> values);
  DiffArray variable(const Tensor& t) { return variable(t.shape, t.values); }
  DiffArray scalar(double v) { return constant({}, {v}); }

  /// Records a derived node. The backward closure is kept only when some
  /// parent requires a gradient.
  DiffArray record(Shape shape, std::vector<double> values,
                   std::initializer_list<DiffArray> parents, BackwardFn backward);
  DiffArray record(Shape shape, std::vector<double> values,
                   std::span<const DiffArray> parents, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(const DiffArray& loss);

  const Shape& shape_of(std::size_t id) const { return nodes_[id].shape; }
  std::span<const double> values_of(std::size_t id) const { return nodes_[id].values; }
  /// Mutable gradient buffer for accumulation inside backward closures.
  /// Only valid during or after backward(); empty for nodes without grad.
  std::span<double> grad_of(std::size_t id) { return nodes_[id].grad; }
  std::span<const double> grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  DiffArray push(Node node);

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives.

/// (m x k) . (k x n). Rank-1 operands are treated as row vectors on the left
/// and column vectors on the right.
DiffArray matmul(const DiffArray& a, const DiffArray& b);
DiffArray transpose(const DiffArray& a);

enum class ElementwiseKind { kAdd, kSub, kMul, kSigmoid, kExp, kScale, kClampMin, kRelu };

/// Pointwise primitive dispatch. Binary kinds take two inputs, with the second
/// broadcast against the first over trailing dimensions (each trailing dim of
/// the second either matches or is 1). kScale multiplies by `param`;
/// kClampMin computes max(x, param) and passes gradient only where x > param.
DiffArray elementwise(ElementwiseKind kind, std::span<const DiffArray> inputs,
                      double param = 0.0);

DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray sigmoid(const DiffArray& a);
DiffArray exp(const DiffArray& a);
DiffArray scale(const DiffArray& a, double factor);
DiffArray clamp_min(const DiffArray& a, double floor);
DiffArray relu(const DiffArray& a);

/// Overflow-safe logistic function on a plain double.
double Sigmoid(double x);

/// Max-subtracted softmax along `axis` (negative counts from the back).
DiffArray softmax(const DiffArray& x, int axis = -1);

DiffArray sum(const DiffArray& a);
DiffArray mean(const DiffArray& a);
DiffArray reshape(const DiffArray& a, Shape shape);
/// Columns [begin, end) of a 2-D array.
DiffArray slice_cols(const DiffArray& a, std::size_t begin, std::size_t end);
/// Rows [begin, end) of an array of rank >= 1.
DiffArray slice_rows(const DiffArray& a, std::size_t begin, std::size_t end);
/// Flat elements [offset, offset + NumElements(shape)) reshaped to `shape`.
DiffArray slice_flat(const DiffArray& a, std::size_t offset, Shape shape);
DiffArray concat_cols(std::span<const DiffArray> parts);
/// Row gather: result row r = table row indices[r].
DiffArray gather_rows(const DiffArray& table, std::span<const int> indices);
/// Normalises over the last dimension, then applies gain and bias (both of
/// length = last dim).
DiffArray layer_norm(const DiffArray& x, const DiffArray& gain, const DiffArray& bias,
                     double eps = 1e-5);
/// Mean over rows of label-smoothed cross-entropy. `logits` is (n x classes);
/// the smoothed target puts (1 - smoothing) + smoothing / classes on the
/// reference class and smoothing / classes elsewhere.
DiffArray smoothed_cross_entropy(const DiffArray& logits, std::span<const int> targets,
                                 double smoothing);

}  // namespace streamlat::diff

#endif  // STREAMLAT_DIFF_HPP_
