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

#ifndef STREAMLAT_ATTENTION_HPP_
#define STREAMLAT_ATTENTION_HPP_

// Global and streaming attention.
//
// Frame indices that leave this module (triggers, mask bounds) are 1-based:
// frame 1 is the first encoder state, frame T the last. Array storage is
// 0-based as usual.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "streamlat/diff.hpp"

namespace streamlat::attention {

using diff::DiffArray;
using diff::MatrixView;

/// Logit assigned to masked positions before softmax.
inline constexpr double kMaskedLogit = -1e9;
/// Floor on p_{i,j-1} in the expected-alignment denominator.
inline constexpr double kAlignmentFloor = 1e-10;

class InvalidBound : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ExhaustedInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major (queries x keys) visibility mask; true = may attend.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> visible;

  static AttentionMask Causal(std::size_t n);
  /// Row r sees keys [0, limits[r]).
  static AttentionMask Prefix(std::span<const int> limits, std::size_t cols);
};

/// softmax(Q K^T / sqrt(d_k)) V. When `weights` is non-null it receives the
/// attention matrix.
DiffArray scaled_dot_attention(const DiffArray& q, const DiffArray& k, const DiffArray& v,
                               const AttentionMask* mask = nullptr, DiffArray* weights = nullptr);

struct MultiHeadConfig {
  int num_heads = 1;
  int model_dim = 1;

  int head_dim() const { return model_dim / num_heads; }
  void Validate() const;
};

/// Projection matrices, each (model_dim x model_dim); head h uses the column
/// block [h * d_k, (h + 1) * d_k) of wq/wk/wv.
struct MultiHeadWeights {
  DiffArray wq, wk, wv, wo;
};

/// Concat(head_1..head_H) W^O. `mean_weights`, when set, receives the
/// head-averaged attention matrix.
DiffArray multi_head(const DiffArray& q_in, const DiffArray& k_in, const DiffArray& v_in,
                     const MultiHeadConfig& cfg, const MultiHeadWeights& w,
                     const AttentionMask* mask = nullptr, DiffArray* mean_weights = nullptr);

/// Seeded Gaussian source for pre-sigmoid training noise.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : engine_(seed) {}
  double Next() { return dist_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

/// Training-mode noise. Noise is added only when `training` is set and a
/// source is present.
struct NoiseOptions {
  bool training = false;
  double stddev = 1.0;
  NoiseSource* source = nullptr;

  bool active() const { return training && source != nullptr && stddev > 0.0; }
};

/// Adds stddev * N(0, 1) to every element when training, otherwise identity.
DiffArray add_noise(const DiffArray& x, const NoiseOptions& noise);

/// e = q k^T / sqrt(d_k) for every (query row, key row) pair.
DiffArray monotonic_energy(const DiffArray& q, const DiffArray& keys);
/// p = sigmoid(e + noise); q is (L x d_k) or a single row, keys (T x d_k).
DiffArray monotonic_p(const DiffArray& q, const DiffArray& keys, const NoiseOptions& noise);

/// One step of the expected-alignment recursion:
///   alpha_j = p_j ((1 - p_{j-1}) alpha_{j-1} / max(p_{j-1}, 1e-10) + prev_j)
/// with the j-1 terms zero at the first frame. Entries past `mask_bound`
/// (1-based, inclusive) are exactly zero.
std::vector<double> expected_alignment_row(std::span<const double> p,
                                           std::span<const double> alpha_prev,
                                           std::optional<int> mask_bound = std::nullopt);

/// Differentiable recursion over all rows of p (L x T), anchored at
/// alpha_0 = [1, 0, ..., 0]. `mask_bounds` is empty or holds one 1-based
/// bound per row; a bound >= T is vacuous.
DiffArray expected_alignment(const DiffArray& p, std::span<const int> mask_bounds = {});

/// Adds each row's missing mass, 1 - sum_j alpha_{i,j}, to the last frame,
/// which is where inference falls back when no frame triggers. Rows with a
/// non-vacuous bound (< T) are passed through unchanged.
DiffArray fallback_alignment(const DiffArray& alpha, std::span<const int> mask_bounds = {});

/// beta_j = sum_{k=j}^{j+w-1} alpha_k exp(u_j) / sum_{l=k-w+1}^{k} exp(u_l),
/// out-of-range indices dropped.
std::vector<double> chunkwise_beta_row(std::span<const double> alpha, std::span<const double> u,
                                       int w);
DiffArray chunkwise_beta(const DiffArray& alpha, const DiffArray& u, int w);

/// c_i = sum_j beta_{i,j} v_j.
DiffArray mocha_context_train(const DiffArray& alpha, const DiffArray& u, const DiffArray& values,
                              int w);

/// c_{i,j} = c_{i,j-1} + a_{i,j} v_j, c_{i,0} = 0. a is (L x T), values
/// (T x d); the result is (L x T x d).
DiffArray ca_interim_contexts(const DiffArray& a, const DiffArray& values);

/// p_{i,j} = sigmoid(w . c_{i,j} + r + eps). `selector` has d weights,
/// `bias` is the scalar r.
DiffArray ca_halting_p(const DiffArray& interim, const DiffArray& selector, const DiffArray& bias,
                       const NoiseOptions& noise);

/// c_i = sum_j alpha_{i,j} c_{i,j}.
DiffArray ca_context_train(const DiffArray& alpha, const DiffArray& interim);

struct InferStep {
  std::vector<double> context;
  int trigger = 0;  // 1-based frame
};

/// First 1-based frame j >= start_frame with p_j > 0.5, or T if none does.
int first_trigger(std::span<const double> p, int start_frame);

/// Hard MoChA decision for one decode step. Scans from `start_frame`; the
/// context is the softmax over chunk energies on [trigger - w + 1, trigger].
InferStep mocha_infer_step(std::span<const double> q_mono, MatrixView keys_mono,
                           std::span<const double> q_chunk, MatrixView keys_chunk,
                           MatrixView values, int start_frame, int w);

/// Hard CA decision for one decode step. The interim context is accumulated
/// from frame 1 (or continued from `running`, the interim context at frame
/// start_frame - 1); halting is tested from `start_frame` on.
InferStep ca_infer_step(std::span<const double> q, MatrixView keys, MatrixView values,
                        std::span<const double> selector, double bias, int start_frame,
                        std::optional<std::span<const double>> running = std::nullopt);

/// Differentiable handles for one streaming cross-attention head group.
struct MonotonicAttentionParams {
  DiffArray wq, wk;              // monotonic energy projections
  DiffArray wq_chunk, wk_chunk;  // MoChA chunk energy projections
  DiffArray selector, bias;      // CA halting selector weights and r
  int chunk_width = 1;
  double noise_std = 1.0;
};

/// Expected triggering probabilities, decode steps x frames.
struct AlignmentMatrix {
  std::size_t steps = 0;
  std::size_t frames = 0;
  std::vector<double> alpha;

  static AlignmentMatrix FromArray(const DiffArray& a);
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(alpha).subspan(i * frames, frames);
  }
  double operator()(std::size_t i, std::size_t j) const { return alpha[i * frames + j]; }
};

/// Per-step halting information. Training fills p/alpha (one matrix per
/// streaming head); inference fills triggers.
struct HaltingTrace {
  std::vector<int> triggers;
  std::vector<AlignmentMatrix> p;
  std::vector<AlignmentMatrix> alpha;
};

}  // namespace streamlat::attention

#endif  // STREAMLAT_ATTENTION_HPP_
