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

#include "streamlat/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace streamlat::attention {

using diff::DimensionError;
using diff::Shape;
using diff::ShapeString;
using diff::Tape;

namespace {

void RequireRank(const DiffArray& a, std::size_t rank, const char* what) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         ShapeString(a.shape()));
  }
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Number of leading frames a bound leaves active.
std::size_t ActiveFrames(std::optional<int> bound, std::size_t frames) {
  if (!bound) return frames;
  if (*bound < 1) throw InvalidBound("mask bound " + std::to_string(*bound) + " < 1");
  return std::min<std::size_t>(static_cast<std::size_t>(*bound), frames);
}

// Softmax of u over the chunk [k - w + 1, k] (0-based, clipped at 0),
// written into `out` indexed by absolute frame.
void ChunkSoftmax(std::span<const double> u, std::size_t k, int w, std::vector<double>& out,
                  std::size_t& lo) {
  lo = k + 1 >= static_cast<std::size_t>(w) ? k + 1 - static_cast<std::size_t>(w) : 0;
  double mx = u[lo];
  for (std::size_t l = lo + 1; l <= k; ++l) mx = std::max(mx, u[l]);
  double z = 0.0;
  for (std::size_t l = lo; l <= k; ++l) {
    out[l] = std::exp(u[l] - mx);
    z += out[l];
  }
  for (std::size_t l = lo; l <= k; ++l) out[l] /= z;
}

}  // namespace

// Masks ---------------------------------------------------------------------

AttentionMask AttentionMask::Causal(std::size_t n) {
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c <= r; ++c) m.visible[r * n + c] = 1;
  }
  return m;
}

AttentionMask AttentionMask::Prefix(std::span<const int> limits, std::size_t cols) {
  AttentionMask m{limits.size(), cols, std::vector<std::uint8_t>(limits.size() * cols, 0)};
  for (std::size_t r = 0; r < limits.size(); ++r) {
    const std::size_t lim = std::min<std::size_t>(static_cast<std::size_t>(std::max(limits[r], 0)), cols);
    for (std::size_t c = 0; c < lim; ++c) m.visible[r * cols + c] = 1;
  }
  return m;
}

// Global attention ----------------------------------------------------------

DiffArray scaled_dot_attention(const DiffArray& q, const DiffArray& k, const DiffArray& v,
                               const AttentionMask* mask, DiffArray* weights) {
  RequireRank(q, 2, "scaled_dot_attention Q");
  RequireRank(k, 2, "scaled_dot_attention K");
  RequireRank(v, 2, "scaled_dot_attention V");
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("d_k mismatch: Q " + ShapeString(q.shape()) + " vs K " + ShapeString(k.shape()));
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("K " + ShapeString(k.shape()) + " and V " + ShapeString(v.shape()) +
                         " disagree on length");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  DiffArray scores = diff::scale(diff::matmul(q, diff::transpose(k)), inv);
  if (mask != nullptr) {
    if (mask->rows != q.dim(0) || mask->cols != k.dim(0)) {
      throw DimensionError("mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                           " for scores " + ShapeString(scores.shape()));
    }
    std::vector<double> bias(mask->visible.size());
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = mask->visible[i] ? 0.0 : kMaskedLogit;
    scores = diff::add(scores, q.tape().constant(scores.shape(), std::move(bias)));
  }
  DiffArray w = diff::softmax(scores, -1);
  if (weights != nullptr) *weights = w;
  return diff::matmul(w, v);
}

void MultiHeadConfig::Validate() const {
  if (num_heads < 1 || model_dim < 1) {
    throw DimensionError("multi-head config needs positive heads and model_dim");
  }
  if (model_dim % num_heads != 0) {
    throw DimensionError("model_dim " + std::to_string(model_dim) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
  }
}

DiffArray multi_head(const DiffArray& q_in, const DiffArray& k_in, const DiffArray& v_in,
                     const MultiHeadConfig& cfg, const MultiHeadWeights& w,
                     const AttentionMask* mask, DiffArray* mean_weights) {
  cfg.Validate();
  const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  for (const DiffArray* x : {&q_in, &k_in, &v_in}) {
    if (x->rank() != 2 || x->dim(1) != d) {
      throw DimensionError("multi_head input " + ShapeString(x->shape()) + " for model_dim " +
                           std::to_string(d));
    }
  }
  const DiffArray q = diff::matmul(q_in, w.wq);
  const DiffArray k = diff::matmul(k_in, w.wk);
  const DiffArray v = diff::matmul(v_in, w.wv);
  const std::size_t dk = static_cast<std::size_t>(cfg.head_dim());
  std::vector<DiffArray> heads;
  DiffArray weight_sum;
  for (int h = 0; h < cfg.num_heads; ++h) {
    const std::size_t b = static_cast<std::size_t>(h) * dk;
    DiffArray hw;
    heads.push_back(scaled_dot_attention(diff::slice_cols(q, b, b + dk), diff::slice_cols(k, b, b + dk),
                                         diff::slice_cols(v, b, b + dk), mask,
                                         mean_weights ? &hw : nullptr));
    if (mean_weights) weight_sum = weight_sum.valid() ? diff::add(weight_sum, hw) : hw;
  }
  if (mean_weights) *mean_weights = diff::scale(weight_sum, 1.0 / cfg.num_heads);
  const DiffArray cat = heads.size() == 1 ? heads[0] : diff::concat_cols(heads);
  return diff::matmul(cat, w.wo);
}

// Monotonic energies --------------------------------------------------------

DiffArray add_noise(const DiffArray& x, const NoiseOptions& noise) {
  if (!noise.active()) return x;
  std::vector<double> eps(x.size());
  for (double& e : eps) e = noise.stddev * noise.source->Next();
  return diff::add(x, x.tape().constant(x.shape(), std::move(eps)));
}

DiffArray monotonic_energy(const DiffArray& q, const DiffArray& keys) {
  RequireRank(keys, 2, "monotonic keys");
  if (keys.dim(0) == 0) throw DimensionError("monotonic attention over zero frames");
  const std::size_t dk = keys.dim(1);
  if (q.shape().empty() || q.shape().back() != dk) {
    throw DimensionError("query " + ShapeString(q.shape()) + " vs keys " + ShapeString(keys.shape()));
  }
  const DiffArray q2 = q.rank() == 1 ? diff::reshape(q, {1, dk}) : q;
  return diff::scale(diff::matmul(q2, diff::transpose(keys)), 1.0 / std::sqrt(static_cast<double>(dk)));
}

DiffArray monotonic_p(const DiffArray& q, const DiffArray& keys, const NoiseOptions& noise) {
  return diff::sigmoid(add_noise(monotonic_energy(q, keys), noise));
}

// Expected alignment --------------------------------------------------------

std::vector<double> expected_alignment_row(std::span<const double> p,
                                           std::span<const double> alpha_prev,
                                           std::optional<int> mask_bound) {
  if (p.size() != alpha_prev.size()) {
    throw DimensionError("p row of " + std::to_string(p.size()) + " vs previous alignment of " +
                         std::to_string(alpha_prev.size()));
  }
  const std::size_t active = ActiveFrames(mask_bound, p.size());
  std::vector<double> alpha(p.size(), 0.0);
  for (std::size_t j = 0; j < active; ++j) {
    double carry = 0.0;
    if (j > 0) carry = (1.0 - p[j - 1]) * alpha[j - 1] / std::max(p[j - 1], kAlignmentFloor);
    alpha[j] = p[j] * (carry + alpha_prev[j]);
  }
  return alpha;
}

DiffArray expected_alignment(const DiffArray& p, std::span<const int> mask_bounds) {
  RequireRank(p, 2, "expected_alignment p");
  const std::size_t steps = p.dim(0), frames = p.dim(1);
  if (frames == 0) throw DimensionError("expected_alignment over zero frames");
  if (!mask_bounds.empty() && mask_bounds.size() != steps) {
    throw DimensionError(std::to_string(mask_bounds.size()) + " mask bounds for " +
                         std::to_string(steps) + " decode steps");
  }
  auto active = std::make_shared<std::vector<std::size_t>>(steps, frames);
  for (std::size_t i = 0; i < mask_bounds.size(); ++i) {
    (*active)[i] = ActiveFrames(mask_bounds[i], frames);
  }
  const auto pv = p.values();
  std::vector<double> alpha(steps * frames, 0.0);
  // s_{i,j} = alpha_{i,j} / p_{i,j} before the floor; kept for backward.
  auto carry = std::make_shared<std::vector<double>>(steps * frames, 0.0);
  std::vector<double> first(frames, 0.0);
  first[0] = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double* prev = i == 0 ? first.data() : &alpha[(i - 1) * frames];
    const double* pr = &pv[i * frames];
    double* ar = &alpha[i * frames];
    double* sr = &(*carry)[i * frames];
    for (std::size_t j = 0; j < (*active)[i]; ++j) {
      double c = 0.0;
      if (j > 0) c = (1.0 - pr[j - 1]) * ar[j - 1] / std::max(pr[j - 1], kAlignmentFloor);
      sr[j] = c + prev[j];
      ar[j] = pr[j] * sr[j];
    }
  }
  const std::size_t ip = p.id();
  return p.tape().record(
      {steps, frames}, std::move(alpha), {p},
      [ip, steps, frames, active, carry](Tape& t, std::size_t self) {
        const auto pv = t.values_of(ip);
        const auto av = t.values_of(self);
        auto gp = t.grad_of(ip);
        // Incoming gradient plus what later rows push back through alpha_prev.
        const auto g_in = t.grad_of(self);
        std::vector<double> g(g_in.begin(), g_in.end());
        for (std::size_t i = steps; i-- > 0;) {
          const double* pr = &pv[i * frames];
          const double* ar = &av[i * frames];
          const double* sr = &(*carry)[i * frames];
          double gs_next = 0.0;
          for (std::size_t j = (*active)[i]; j-- > 0;) {
            const double denom = std::max(pr[j], kAlignmentFloor);
            const double ga = g[i * frames + j] + gs_next * (1.0 - pr[j]) / denom;
            const double dratio = pr[j] > kAlignmentFloor ? -1.0 / (pr[j] * pr[j]) : -1.0 / kAlignmentFloor;
            gp[i * frames + j] += ga * sr[j] + gs_next * ar[j] * dratio;
            const double gs = ga * pr[j];
            if (i > 0) g[(i - 1) * frames + j] += gs;
            gs_next = gs;
          }
        }
      });
}

// Chunkwise attention -------------------------------------------------------

std::vector<double> chunkwise_beta_row(std::span<const double> alpha, std::span<const double> u,
                                       int w) {
  if (w < 1) throw std::invalid_argument("chunk width must be >= 1");
  if (alpha.size() != u.size()) {
    throw DimensionError("alpha row of " + std::to_string(alpha.size()) + " vs u row of " +
                         std::to_string(u.size()));
  }
  const std::size_t n = alpha.size();
  std::vector<double> beta(n, 0.0), soft(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (alpha[k] == 0.0) continue;
    std::size_t lo = 0;
    ChunkSoftmax(u, k, w, soft, lo);
    for (std::size_t j = lo; j <= k; ++j) beta[j] += alpha[k] * soft[j];
  }
  return beta;
}

DiffArray chunkwise_beta(const DiffArray& alpha, const DiffArray& u, int w) {
  RequireRank(alpha, 2, "chunkwise_beta alpha");
  if (alpha.shape() != u.shape()) {
    throw DimensionError("alpha " + ShapeString(alpha.shape()) + " vs u " + ShapeString(u.shape()));
  }
  if (w < 1) throw std::invalid_argument("chunk width must be >= 1");
  const std::size_t steps = alpha.dim(0), frames = alpha.dim(1);
  std::vector<double> beta(steps * frames);
  const auto av = alpha.values(), uv = u.values();
  for (std::size_t i = 0; i < steps; ++i) {
    const auto row = chunkwise_beta_row(av.subspan(i * frames, frames), uv.subspan(i * frames, frames), w);
    std::copy(row.begin(), row.end(), beta.begin() + i * frames);
  }
  const std::size_t ia = alpha.id(), iu = u.id();
  return alpha.tape().record(
      {steps, frames}, std::move(beta), {alpha, u},
      [ia, iu, steps, frames, w](Tape& t, std::size_t self) {
        const auto g = t.grad_of(self);
        const auto av = t.values_of(ia);
        const auto uv = t.values_of(iu);
        auto ga = t.grad_of(ia);
        auto gu = t.grad_of(iu);
        std::vector<double> soft(frames, 0.0);
        for (std::size_t i = 0; i < steps; ++i) {
          const auto ur = uv.subspan(i * frames, frames);
          for (std::size_t k = 0; k < frames; ++k) {
            std::size_t lo = 0;
            ChunkSoftmax(ur, k, w, soft, lo);
            double dot = 0.0;
            for (std::size_t j = lo; j <= k; ++j) dot += g[i * frames + j] * soft[j];
            if (!ga.empty()) ga[i * frames + k] += dot;
            if (!gu.empty()) {
              const double a = av[i * frames + k];
              for (std::size_t j = lo; j <= k; ++j) {
                gu[i * frames + j] += a * soft[j] * (g[i * frames + j] - dot);
              }
            }
          }
        }
      });
}

DiffArray mocha_context_train(const DiffArray& alpha, const DiffArray& u, const DiffArray& values,
                              int w) {
  RequireRank(values, 2, "mocha values");
  if (alpha.rank() != 2 || values.dim(0) != alpha.dim(1)) {
    throw DimensionError("alignment " + ShapeString(alpha.shape()) + " vs values " +
                         ShapeString(values.shape()));
  }
  return diff::matmul(chunkwise_beta(alpha, u, w), values);
}

// Cumulative attention ------------------------------------------------------

DiffArray ca_interim_contexts(const DiffArray& a, const DiffArray& values) {
  RequireRank(a, 2, "ca_interim_contexts a");
  RequireRank(values, 2, "ca_interim_contexts values");
  if (a.dim(1) != values.dim(0)) {
    throw DimensionError("weights " + ShapeString(a.shape()) + " vs values " + ShapeString(values.shape()));
  }
  const std::size_t steps = a.dim(0), frames = a.dim(1), d = values.dim(1);
  const auto av = a.values(), vv = values.values();
  std::vector<double> out(steps * frames * d, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j < frames; ++j) {
      double* cur = &out[(i * frames + j) * d];
      const double* prev = j > 0 ? cur - d : nullptr;
      const double w = av[i * frames + j];
      for (std::size_t k = 0; k < d; ++k) {
        cur[k] = (prev ? prev[k] : 0.0) + w * vv[j * d + k];
      }
    }
  }
  const std::size_t ia = a.id(), iv = values.id();
  return a.tape().record(
      {steps, frames, d}, std::move(out), {a, values},
      [ia, iv, steps, frames, d](Tape& t, std::size_t self) {
        const auto g = t.grad_of(self);
        const auto av = t.values_of(ia);
        const auto vv = t.values_of(iv);
        auto ga = t.grad_of(ia);
        auto gv = t.grad_of(iv);
        std::vector<double> tail(d);
        for (std::size_t i = 0; i < steps; ++i) {
          std::fill(tail.begin(), tail.end(), 0.0);
          for (std::size_t j = frames; j-- > 0;) {
            const double* gr = &g[(i * frames + j) * d];
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              tail[k] += gr[k];
              dot += tail[k] * vv[j * d + k];
            }
            if (!ga.empty()) ga[i * frames + j] += dot;
            if (!gv.empty()) {
              const double w = av[i * frames + j];
              for (std::size_t k = 0; k < d; ++k) gv[j * d + k] += w * tail[k];
            }
          }
        }
      });
}

DiffArray ca_halting_p(const DiffArray& interim, const DiffArray& selector, const DiffArray& bias,
                       const NoiseOptions& noise) {
  RequireRank(interim, 3, "ca_halting_p interim");
  const std::size_t steps = interim.dim(0), frames = interim.dim(1), d = interim.dim(2);
  if (selector.size() != d) {
    throw DimensionError("selector of " + ShapeString(selector.shape()) + " for interim dim " +
                         std::to_string(d));
  }
  if (bias.size() != 1) throw DimensionError("halting bias must be a scalar");
  const DiffArray flat = diff::reshape(interim, {steps * frames, d});
  const DiffArray w = selector.rank() == 1 ? selector : diff::reshape(selector, {d});
  DiffArray logits = diff::reshape(diff::matmul(flat, w), {steps, frames});
  logits = diff::add(logits, bias);
  return diff::sigmoid(add_noise(logits, noise));
}

DiffArray fallback_alignment(const DiffArray& alpha, std::span<const int> mask_bounds) {
  RequireRank(alpha, 2, "fallback_alignment alpha");
  const std::size_t steps = alpha.dim(0), frames = alpha.dim(1);
  if (!mask_bounds.empty() && mask_bounds.size() != steps) {
    throw DimensionError(std::to_string(mask_bounds.size()) + " mask bounds for " + std::to_string(steps) + " rows");
  }
  std::vector<bool> open(steps, true);
  for (std::size_t i = 0; i < mask_bounds.size(); ++i) {
    open[i] = mask_bounds[i] >= static_cast<int>(frames);
  }
  const auto av = alpha.values();
  std::vector<double> out(av.begin(), av.end());
  for (std::size_t i = 0; i < steps && frames > 0; ++i) {
    if (!open[i]) continue;
    double mass = 0.0;
    for (std::size_t j = 0; j < frames; ++j) mass += av[i * frames + j];
    out[i * frames + frames - 1] += 1.0 - mass;
  }
  const std::size_t ia = alpha.id();
  return alpha.tape().record({steps, frames}, std::move(out), {alpha},
                             [ia, steps, frames, open](Tape& t, std::size_t self) {
                               const auto g = t.grad_of(self);
                               auto ga = t.grad_of(ia);
                               for (std::size_t i = 0; i < steps; ++i) {
                                 const double last = open[i] && frames > 0 ? g[i * frames + frames - 1] : 0.0;
                                 for (std::size_t j = 0; j < frames; ++j) {
                                   ga[i * frames + j] += g[i * frames + j] - last;
                                 }
                               }
                             });
}

DiffArray ca_context_train(const DiffArray& alpha, const DiffArray& interim) {
  RequireRank(alpha, 2, "ca_context_train alpha");
  RequireRank(interim, 3, "ca_context_train interim");
  if (interim.dim(0) != alpha.dim(0) || interim.dim(1) != alpha.dim(1)) {
    throw DimensionError("alignment " + ShapeString(alpha.shape()) + " vs interim " +
                         ShapeString(interim.shape()));
  }
  const std::size_t steps = alpha.dim(0), frames = alpha.dim(1), d = interim.dim(2);
  const auto av = alpha.values(), cv = interim.values();
  std::vector<double> out(steps * d, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j < frames; ++j) {
      const double w = av[i * frames + j];
      if (w == 0.0) continue;
      const double* c = &cv[(i * frames + j) * d];
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] += w * c[k];
    }
  }
  const std::size_t ia = alpha.id(), ic = interim.id();
  return alpha.tape().record(
      {steps, d}, std::move(out), {alpha, interim},
      [ia, ic, steps, frames, d](Tape& t, std::size_t self) {
        const auto g = t.grad_of(self);
        const auto av = t.values_of(ia);
        const auto cv = t.values_of(ic);
        auto ga = t.grad_of(ia);
        auto gc = t.grad_of(ic);
        for (std::size_t i = 0; i < steps; ++i) {
          const double* gr = &g[i * d];
          for (std::size_t j = 0; j < frames; ++j) {
            const std::size_t base = (i * frames + j) * d;
            if (!ga.empty()) {
              double dot = 0.0;
              for (std::size_t k = 0; k < d; ++k) dot += gr[k] * cv[base + k];
              ga[i * frames + j] += dot;
            }
            if (!gc.empty()) {
              const double w = av[i * frames + j];
              for (std::size_t k = 0; k < d; ++k) gc[base + k] += w * gr[k];
            }
          }
        }
      });
}

// Inference -----------------------------------------------------------------

int first_trigger(std::span<const double> p, int start_frame) {
  const int frames = static_cast<int>(p.size());
  if (start_frame < 1) start_frame = 1;
  if (start_frame > frames) throw ExhaustedInput("no frames left to scan from " + std::to_string(start_frame));
  for (int j = start_frame; j <= frames; ++j) {
    if (p[static_cast<std::size_t>(j - 1)] > 0.5) return j;
  }
  return frames;
}

InferStep mocha_infer_step(std::span<const double> q_mono, MatrixView keys_mono,
                           std::span<const double> q_chunk, MatrixView keys_chunk,
                           MatrixView values, int start_frame, int w) {
  if (w < 1) throw std::invalid_argument("chunk width must be >= 1");
  const int frames = static_cast<int>(keys_mono.rows);
  if (keys_chunk.rows != keys_mono.rows || values.rows != keys_mono.rows) {
    throw DimensionError("keys and values disagree on frame count");
  }
  if (q_mono.size() != keys_mono.cols || q_chunk.size() != keys_chunk.cols) {
    throw DimensionError("query and key dimensions differ");
  }
  if (start_frame < 1) start_frame = 1;
  if (start_frame > frames) throw ExhaustedInput("no frames left to scan from " + std::to_string(start_frame));
  const double inv = 1.0 / std::sqrt(static_cast<double>(q_mono.size()));
  int trigger = frames;
  for (int j = start_frame; j <= frames; ++j) {
    const double p = diff::Sigmoid(Dot(q_mono, keys_mono.row(static_cast<std::size_t>(j - 1))) * inv);
    if (p > 0.5) {
      trigger = j;
      break;
    }
  }
  const double inv_c = 1.0 / std::sqrt(static_cast<double>(q_chunk.size()));
  const int lo = std::max(1, trigger - w + 1);
  std::vector<double> u;
  for (int l = lo; l <= trigger; ++l) {
    u.push_back(Dot(q_chunk, keys_chunk.row(static_cast<std::size_t>(l - 1))) * inv_c);
  }
  const double mx = *std::max_element(u.begin(), u.end());
  double z = 0.0;
  for (double& x : u) z += (x = std::exp(x - mx));
  InferStep step{std::vector<double>(values.cols, 0.0), trigger};
  for (int l = lo; l <= trigger; ++l) {
    const double wt = u[static_cast<std::size_t>(l - lo)] / z;
    const auto v = values.row(static_cast<std::size_t>(l - 1));
    for (std::size_t k = 0; k < values.cols; ++k) step.context[k] += wt * v[k];
  }
  return step;
}

InferStep ca_infer_step(std::span<const double> q, MatrixView keys, MatrixView values,
                        std::span<const double> selector, double bias, int start_frame,
                        std::optional<std::span<const double>> running) {
  const int frames = static_cast<int>(keys.rows);
  if (values.rows != keys.rows) throw DimensionError("keys and values disagree on frame count");
  if (q.size() != keys.cols) throw DimensionError("query and key dimensions differ");
  if (selector.size() != values.cols) throw DimensionError("selector and value dimensions differ");
  if (start_frame < 1) start_frame = 1;
  if (start_frame > frames) throw ExhaustedInput("no frames left to scan from " + std::to_string(start_frame));
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> ctx(values.cols, 0.0);
  int first = 1;
  if (running) {
    if (running->size() != values.cols) throw DimensionError("running context dimension differs");
    ctx.assign(running->begin(), running->end());
    first = start_frame;
  }
  auto accumulate = [&](int j) {
    const auto jj = static_cast<std::size_t>(j - 1);
    const double a = diff::Sigmoid(Dot(q, keys.row(jj)) * inv);
    const auto v = values.row(jj);
    for (std::size_t k = 0; k < ctx.size(); ++k) ctx[k] += a * v[k];
  };
  for (int j = first; j < start_frame; ++j) accumulate(j);
  for (int j = start_frame; j <= frames; ++j) {
    accumulate(j);
    if (diff::Sigmoid(Dot(selector, ctx) + bias) > 0.5) return InferStep{ctx, j};
  }
  return InferStep{ctx, frames};
}

AlignmentMatrix AlignmentMatrix::FromArray(const DiffArray& a) {
  RequireRank(a, 2, "AlignmentMatrix");
  const auto v = a.values();
  return AlignmentMatrix{a.dim(0), a.dim(1), std::vector<double>(v.begin(), v.end())};
}

}  // namespace streamlat::attention
