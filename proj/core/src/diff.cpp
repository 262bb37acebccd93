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

#include "streamlat/diff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

namespace streamlat::diff {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

std::size_t NormaliseAxis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Index map from the flat index of `big` into the flat index of `small`
// under trailing-dimension broadcasting. Empty result means "same shape".
struct Broadcast {
  enum class Mode { kSame, kScalar, kSuffix, kGeneral } mode = Mode::kSame;
  std::size_t small_size = 0;
  std::vector<std::size_t> index;
};

bool CanBroadcast(const Shape& big, const Shape& small) {
  if (NumElements(small) == 1) return true;
  if (small.size() > big.size()) return false;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] != big[off + i] && small[i] != 1) return false;
  }
  return true;
}

Broadcast MakeBroadcast(const Shape& big, const Shape& small) {
  Broadcast b;
  b.small_size = NumElements(small);
  if (big == small) return b;
  if (b.small_size == 1) {
    b.mode = Broadcast::Mode::kScalar;
    return b;
  }
  const std::size_t off = big.size() - small.size();
  bool suffix = true;
  for (std::size_t i = 0; i < small.size(); ++i) suffix = suffix && small[i] == big[off + i];
  if (suffix) {
    b.mode = Broadcast::Mode::kSuffix;
    return b;
  }
  b.mode = Broadcast::Mode::kGeneral;
  const std::size_t n = NumElements(big);
  // Strides of `small` aligned to `big`, zero on broadcast dims.
  std::vector<std::size_t> stride(big.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = small.size(); i-- > 0;) {
    stride[off + i] = small[i] == 1 ? 0 : s;
    s *= small[i];
  }
  b.index.resize(n);
  std::vector<std::size_t> coord(big.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t idx = 0;
    for (std::size_t d = 0; d < big.size(); ++d) idx += coord[d] * stride[d];
    b.index[flat] = idx;
    for (std::size_t d = big.size(); d-- > 0;) {
      if (++coord[d] < big[d]) break;
      coord[d] = 0;
    }
  }
  return b;
}

inline std::size_t Map2(const Broadcast& b, std::size_t i) {
  switch (b.mode) {
    case Broadcast::Mode::kSame: return i;
    case Broadcast::Mode::kScalar: return 0;
    case Broadcast::Mode::kSuffix: return i % b.small_size;
    case Broadcast::Mode::kGeneral: return b.index[i];
  }
  return i;
}

void CheckSameTape(const DiffArray& a, const DiffArray& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands live on different tapes");
}

// Rows/cols for a matmul operand; rank-1 is a row on the left, a column on
// the right.
std::pair<std::size_t, std::size_t> LeftDims(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw DimensionError("matmul expects rank 1 or 2, got " + ShapeString(s));
}
std::pair<std::size_t, std::size_t> RightDims(const Shape& s) {
  if (s.size() == 1) return {s[0], 1};
  if (s.size() == 2) return {s[0], s[1]};
  throw DimensionError("matmul expects rank 1 or 2, got " + ShapeString(s));
}

DiffArray Binary(ElementwiseKind kind, DiffArray a, DiffArray b) {
  CheckSameTape(a, b);
  if (!CanBroadcast(a.shape(), b.shape())) {
    const bool commutes = kind == ElementwiseKind::kAdd || kind == ElementwiseKind::kMul;
    if (commutes && CanBroadcast(b.shape(), a.shape())) {
      std::swap(a, b);
    } else {
      throw DimensionError("cannot broadcast " + ShapeString(b.shape()) + " against " +
                           ShapeString(a.shape()));
    }
  }
  auto bc = std::make_shared<Broadcast>(MakeBroadcast(a.shape(), b.shape()));
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  switch (kind) {
    case ElementwiseKind::kAdd:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[Map2(*bc, i)];
      break;
    case ElementwiseKind::kSub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[Map2(*bc, i)];
      break;
    case ElementwiseKind::kMul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[Map2(*bc, i)];
      break;
    default:
      throw std::logic_error("not a binary elementwise kind");
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.shape(), std::move(out), {a, b},
                         [ia, ib, bc, kind](Tape& t, std::size_t self) {
                           const auto g = t.grad_of(self);
                           auto ga = t.grad_of(ia);
                           auto gb = t.grad_of(ib);
                           const auto av = t.values_of(ia);
                           const auto bv = t.values_of(ib);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const std::size_t j = Map2(*bc, i);
                             double da = 0.0, db = 0.0;
                             switch (kind) {
                               case ElementwiseKind::kAdd: da = g[i]; db = g[i]; break;
                               case ElementwiseKind::kSub: da = g[i]; db = -g[i]; break;
                               default: da = g[i] * bv[j]; db = g[i] * av[i]; break;
                             }
                             if (!ga.empty()) ga[i] += da;
                             if (!gb.empty()) gb[j] += db;
                           }
                         });
}

DiffArray Unary(ElementwiseKind kind, const DiffArray& a, double param) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  switch (kind) {
    case ElementwiseKind::kSigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = Sigmoid(av[i]);
      break;
    case ElementwiseKind::kExp:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
      break;
    case ElementwiseKind::kScale:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * param;
      break;
    case ElementwiseKind::kClampMin:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > param ? av[i] : param;
      break;
    case ElementwiseKind::kRelu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
      break;
    default:
      throw std::logic_error("not a unary elementwise kind");
  }
  const std::size_t ia = a.id();
  return a.tape().record(a.shape(), std::move(out), {a},
                         [ia, kind, param](Tape& t, std::size_t self) {
                           const auto g = t.grad_of(self);
                           const auto y = t.values_of(self);
                           const auto x = t.values_of(ia);
                           auto ga = t.grad_of(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             switch (kind) {
                               case ElementwiseKind::kSigmoid: ga[i] += g[i] * y[i] * (1.0 - y[i]); break;
                               case ElementwiseKind::kExp: ga[i] += g[i] * y[i]; break;
                               case ElementwiseKind::kScale: ga[i] += g[i] * param; break;
                               case ElementwiseKind::kClampMin:
                                 if (x[i] > param) ga[i] += g[i];
                                 break;
                               case ElementwiseKind::kRelu:
                                 if (x[i] > 0.0) ga[i] += g[i];
                                 break;
                               default: break;
                             }
                           }
                         });
}

}  // namespace

std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (NumElements(shape) != values.size()) {
    throw DimensionError("tensor of shape " + ShapeString(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::Zeros(Shape s) {
  const std::size_t n = NumElements(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

// DiffArray -----------------------------------------------------------------

const Shape& DiffArray::shape() const { return tape_->shape_of(id_); }
std::size_t DiffArray::size() const { return tape_->values_of(id_).size(); }
std::span<const double> DiffArray::values() const { return tape_->values_of(id_); }
std::span<const double> DiffArray::grad() const {
  return static_cast<const Tape*>(tape_)->grad_of(id_);
}
bool DiffArray::requires_grad() const { return tape_->requires_grad(id_); }

double DiffArray::item() const {
  if (size() != 1) throw DimensionError("item() on array of shape " + ShapeString(shape()));
  return values()[0];
}

MatrixView DiffArray::view() const {
  const Shape& s = shape();
  const std::size_t cols = s.empty() ? 1 : s.back();
  return MatrixView{cols == 0 ? 0 : size() / cols, cols, values()};
}

// Tape ----------------------------------------------------------------------

DiffArray Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return DiffArray(this, nodes_.size() - 1);
}

DiffArray Tape::constant(Shape shape, std::vector<double> values) {
  if (NumElements(shape) != values.size()) {
    throw DimensionError("constant of shape " + ShapeString(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  return push(Node{std::move(shape), std::move(values), {}, false, {}});
}

DiffArray Tape::variable(Shape shape, std::vector<double> values) {
  DiffArray v = constant(std::move(shape), std::move(values));
  nodes_[v.id()].requires_grad = true;
  return v;
}

DiffArray Tape::record(Shape shape, std::vector<double> values,
                       std::initializer_list<DiffArray> parents, BackwardFn backward) {
  return record(std::move(shape), std::move(values),
                std::span<const DiffArray>(parents.begin(), parents.size()), std::move(backward));
}

DiffArray Tape::record(Shape shape, std::vector<double> values,
                       std::span<const DiffArray> parents, BackwardFn backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw std::logic_error("parent recorded on a different tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  Node n{std::move(shape), std::move(values), {}, needs, {}};
  if (needs) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(const DiffArray& loss) {
  if (&loss.tape() != this) throw std::logic_error("loss recorded on a different tape");
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + ShapeString(loss.shape()));
  }
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) n.grad.assign(n.values.size(), 0.0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward) n.backward(*this, i);
  }
}

// Primitives ----------------------------------------------------------------

double Sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

DiffArray matmul(const DiffArray& a, const DiffArray& b) {
  CheckSameTape(a, b);
  const auto [m, k] = LeftDims(a.shape());
  const auto [k2, n] = RightDims(b.shape());
  if (k != k2) {
    throw DimensionError("matmul inner dimensions differ: " + ShapeString(a.shape()) + " x " +
                         ShapeString(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  Shape shape;
  if (a.rank() == 2) shape.push_back(m);
  if (b.rank() == 2) shape.push_back(n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(shape), std::move(out), {a, b},
                         [ia, ib, m, k, n](Tape& t, std::size_t self) {
                           const ConstMap g(t.grad_of(self).data(), m, n);
                           auto ga = t.grad_of(ia);
                           auto gb = t.grad_of(ib);
                           if (!ga.empty()) {
                             Map(ga.data(), m, k).noalias() +=
                                 g * ConstMap(t.values_of(ib).data(), k, n).transpose();
                           }
                           if (!gb.empty()) {
                             Map(gb.data(), k, n).noalias() +=
                                 ConstMap(t.values_of(ia).data(), m, k).transpose() * g;
                           }
                         });
}

DiffArray transpose(const DiffArray& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + ShapeString(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  Map(out.data(), c, r) = ConstMap(a.values().data(), r, c).transpose();
  const std::size_t ia = a.id();
  return a.tape().record({c, r}, std::move(out), {a}, [ia, r, c](Tape& t, std::size_t self) {
    Map(t.grad_of(ia).data(), r, c) += ConstMap(t.grad_of(self).data(), c, r).transpose();
  });
}

DiffArray elementwise(ElementwiseKind kind, std::span<const DiffArray> inputs, double param) {
  switch (kind) {
    case ElementwiseKind::kAdd:
    case ElementwiseKind::kSub:
    case ElementwiseKind::kMul:
      if (inputs.size() != 2) throw std::invalid_argument("binary elementwise needs 2 inputs");
      return Binary(kind, inputs[0], inputs[1]);
    default:
      if (inputs.size() != 1) throw std::invalid_argument("unary elementwise needs 1 input");
      return Unary(kind, inputs[0], param);
  }
}

DiffArray add(const DiffArray& a, const DiffArray& b) { return Binary(ElementwiseKind::kAdd, a, b); }
DiffArray sub(const DiffArray& a, const DiffArray& b) { return Binary(ElementwiseKind::kSub, a, b); }
DiffArray mul(const DiffArray& a, const DiffArray& b) { return Binary(ElementwiseKind::kMul, a, b); }
DiffArray sigmoid(const DiffArray& a) { return Unary(ElementwiseKind::kSigmoid, a, 0.0); }
DiffArray exp(const DiffArray& a) { return Unary(ElementwiseKind::kExp, a, 0.0); }
DiffArray scale(const DiffArray& a, double factor) { return Unary(ElementwiseKind::kScale, a, factor); }
DiffArray clamp_min(const DiffArray& a, double floor) { return Unary(ElementwiseKind::kClampMin, a, floor); }
DiffArray relu(const DiffArray& a) { return Unary(ElementwiseKind::kRelu, a, 0.0); }

DiffArray softmax(const DiffArray& x, int axis) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("softmax on a scalar");
  const std::size_t ax = NormaliseAxis(axis, s.size());
  const std::size_t len = s[ax];
  if (len == 0) throw DimensionError("softmax over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(s, std::move(out), {x},
                         [ix, outer, inner, len](Tape& t, std::size_t self) {
                           const auto g = t.grad_of(self);
                           const auto y = t.values_of(self);
                           auto gx = t.grad_of(ix);
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t in = 0; in < inner; ++in) {
                               const std::size_t base = o * len * inner + in;
                               double dot = 0.0;
                               for (std::size_t k = 0; k < len; ++k) {
                                 dot += g[base + k * inner] * y[base + k * inner];
                               }
                               for (std::size_t k = 0; k < len; ++k) {
                                 const std::size_t i = base + k * inner;
                                 gx[i] += y[i] * (g[i] - dot);
                               }
                             }
                           }
                         });
}

DiffArray sum(const DiffArray& a) {
  const auto v = a.values();
  double s = 0.0;
  for (double x : v) s += x;
  const std::size_t ia = a.id();
  return a.tape().record({}, {s}, {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& x : t.grad_of(ia)) x += g;
  });
}

DiffArray mean(const DiffArray& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty array");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

DiffArray reshape(const DiffArray& a, Shape shape) {
  if (NumElements(shape) != a.size()) {
    throw DimensionError("cannot reshape " + ShapeString(a.shape()) + " to " + ShapeString(shape));
  }
  const auto v = a.values();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(shape), std::vector<double>(v.begin(), v.end()), {a},
                         [ia](Tape& t, std::size_t self) {
                           const auto g = t.grad_of(self);
                           auto ga = t.grad_of(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

DiffArray slice_cols(const DiffArray& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin > end || end > a.dim(1)) {
    throw DimensionError("bad column slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + ShapeString(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1), w = end - begin;
  const auto v = a.values();
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(v.begin() + i * c + begin, w, out.begin() + i * w);
  }
  const std::size_t ia = a.id();
  return a.tape().record({r, w}, std::move(out), {a},
                         [ia, r, c, w, begin](Tape& t, std::size_t self) {
                           const auto g = t.grad_of(self);
                           auto ga = t.grad_of(ia);
                           for (std::size_t i = 0; i < r; ++i) {
                             for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += g[i * w + j];
                           }
                         });
}

DiffArray slice_rows(const DiffArray& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin > end || end > a.dim(0)) {
    throw DimensionError("bad row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + ShapeString(a.shape()));
  }
  const std::size_t row = a.dim(0) == 0 ? 0 : a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  return slice_flat(a, begin * row, std::move(shape));
}

DiffArray slice_flat(const DiffArray& a, std::size_t offset, Shape shape) {
  const std::size_t n = NumElements(shape);
  if (offset + n > a.size()) {
    throw DimensionError("flat slice of " + std::to_string(n) + " at " + std::to_string(offset) +
                         " exceeds " + ShapeString(a.shape()));
  }
  const auto v = a.values();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(shape),
                         std::vector<double>(v.begin() + offset, v.begin() + offset + n), {a},
                         [ia, offset](Tape& t, std::size_t self) {
                           const auto g = t.grad_of(self);
                           auto ga = t.grad_of(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
                         });
}

DiffArray concat_cols(std::span<const DiffArray> parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const std::size_t r = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != r) {
      throw DimensionError("concat_cols row mismatch: " + ShapeString(parts[0].shape()) + " vs " +
                           ShapeString(p.shape()));
    }
    total += p.dim(1);
  }
  std::vector<double> out(r * total);
  std::vector<std::size_t> ids, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    const auto v = p.values();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(v.begin() + i * w, w, out.begin() + i * total + off);
    ids.push_back(p.id());
    widths.push_back(w);
    off += w;
  }
  return parts[0].tape().record({r, total}, std::move(out), parts,
                                [ids, widths, r, total](Tape& t, std::size_t self) {
                                  const auto g = t.grad_of(self);
                                  std::size_t off = 0;
                                  for (std::size_t p = 0; p < ids.size(); ++p) {
                                    auto gp = t.grad_of(ids[p]);
                                    const std::size_t w = widths[p];
                                    if (!gp.empty()) {
                                      for (std::size_t i = 0; i < r; ++i) {
                                        for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
                                      }
                                    }
                                    off += w;
                                  }
                                });
}

DiffArray gather_rows(const DiffArray& table, std::span<const int> indices) {
  if (table.rank() != 2) throw DimensionError("gather_rows expects a 2-D table");
  const std::size_t rows = table.dim(0), c = table.dim(1);
  std::vector<int> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * c);
  const auto v = table.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= rows) {
      throw DimensionError("gather index " + std::to_string(idx[r]) + " outside table of " +
                           std::to_string(rows) + " rows");
    }
    std::copy_n(v.begin() + idx[r] * c, c, out.begin() + r * c);
  }
  const std::size_t it = table.id();
  const std::size_t n = idx.size();
  return table.tape().record({n, c}, std::move(out), {table},
                             [it, idx = std::move(idx), c](Tape& t, std::size_t self) {
                               const auto g = t.grad_of(self);
                               auto gt = t.grad_of(it);
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 for (std::size_t j = 0; j < c; ++j) gt[idx[r] * c + j] += g[r * c + j];
                               }
                             });
}

DiffArray layer_norm(const DiffArray& x, const DiffArray& gain, const DiffArray& bias, double eps) {
  const std::size_t d = x.shape().empty() ? 1 : x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm gain/bias of " + ShapeString(gain.shape()) + "/" +
                         ShapeString(bias.shape()) + " for input " + ShapeString(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[r * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[r * d + j] - mu) * s;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(x.shape(), std::move(out), {x, gain, bias},
                         [ix, ig, ib, d, rows, xhat, inv](Tape& t, std::size_t self) {
                           const auto g = t.grad_of(self);
                           const auto gv = t.values_of(ig);
                           auto gx = t.grad_of(ix);
                           auto gg = t.grad_of(ig);
                           auto gb = t.grad_of(ib);
                           std::vector<double> gh(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double m1 = 0.0, m2 = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                               const std::size_t i = r * d + j;
                               if (!gg.empty()) gg[j] += g[i] * (*xhat)[i];
                               if (!gb.empty()) gb[j] += g[i];
                               gh[j] = g[i] * gv[j];
                               m1 += gh[j];
                               m2 += gh[j] * (*xhat)[i];
                             }
                             if (gx.empty()) continue;
                             m1 /= static_cast<double>(d);
                             m2 /= static_cast<double>(d);
                             for (std::size_t j = 0; j < d; ++j) {
                               const std::size_t i = r * d + j;
                               gx[i] += (*inv)[r] * (gh[j] - m1 - (*xhat)[i] * m2);
                             }
                           }
                         });
}

DiffArray smoothed_cross_entropy(const DiffArray& logits, std::span<const int> targets,
                                 double smoothing) {
  if (logits.rank() != 2) throw DimensionError("cross-entropy expects (n x classes) logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross-entropy: " + std::to_string(n) + " logit rows vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (n == 0) throw DimensionError("cross-entropy over zero rows");
  const auto z = logits.values();
  auto probs = std::make_shared<std::vector<double>>(n * c);
  std::vector<int> tgt(targets.begin(), targets.end());
  const double off = smoothing / static_cast<double>(c);
  const double on = 1.0 - smoothing + off;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= c) {
      throw DimensionError("target " + std::to_string(tgt[r]) + " outside " + std::to_string(c) +
                           " classes");
    }
    double mx = z[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[r * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[r * c + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) {
      const double logp = z[r * c + j] - lse;
      (*probs)[r * c + j] = std::exp(logp);
      total -= (static_cast<std::size_t>(tgt[r]) == j ? on : off) * logp;
    }
  }
  const std::size_t il = logits.id();
  return logits.tape().record(
      {}, {total / static_cast<double>(n)}, {logits},
      [il, probs, tgt = std::move(tgt), n, c, on, off](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0] / static_cast<double>(n);
        auto gz = t.grad_of(il);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double q = static_cast<std::size_t>(tgt[r]) == j ? on : off;
            gz[r * c + j] += g * ((*probs)[r * c + j] - q);
          }
        }
      });
}

}  // namespace streamlat::diff
