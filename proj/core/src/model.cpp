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

#include "streamlat/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "streamlat/hashing.hpp"

namespace streamlat::model {

using attention::AttentionMask;
using attention::NoiseOptions;
using diff::DimensionError;

namespace {

std::string Layer(std::string_view prefix, int l, std::string_view leaf) {
  return std::string(prefix) + "." + std::to_string(l) + "." + std::string(leaf);
}

DiffArray Linear(const DiffArray& x, const DiffArray& w, const DiffArray& b) {
  return diff::add(diff::matmul(x, w), b);
}

DiffArray FeedForward(const BoundParams& p, const std::string& prefix, const DiffArray& x) {
  const DiffArray h = diff::relu(Linear(x, p[prefix + "w1"], p[prefix + "b1"]));
  return Linear(h, p[prefix + "w2"], p[prefix + "b2"]);
}

DiffArray AddNorm(const BoundParams& p, const std::string& prefix, const DiffArray& x, const DiffArray& f) {
  return diff::layer_norm(diff::add(x, f), p[prefix + "g"], p[prefix + "b"]);
}

attention::MultiHeadWeights Heads(const BoundParams& p, const std::string& prefix) {
  return {p[prefix + "wq"], p[prefix + "wk"], p[prefix + "wv"], p[prefix + "wo"]};
}

bool IsStreamingLayer(const ModelConfig& cfg, int l) {
  return l == cfg.decoder_layers - 1 && cfg.kind != StreamingKind::kGlobal;
}

// Per-head projections of the final layer's streaming cross-attention.
struct StreamProjections {
  DiffArray q, k, v, q_chunk, k_chunk;
};

StreamProjections Project(const ModelConfig& cfg, const BoundParams& p, const DiffArray& y,
                          const DiffArray& enc) {
  const std::string s = Layer("dec", cfg.decoder_layers - 1, "stream.");
  StreamProjections out;
  out.q = diff::matmul(y, p[s + "wq"]);
  out.k = diff::matmul(enc, p[s + "wk"]);
  out.v = diff::matmul(enc, p[s + "wv"]);
  if (cfg.kind == StreamingKind::kMocha) {
    out.q_chunk = diff::matmul(y, p[s + "wq_chunk"]);
    out.k_chunk = diff::matmul(enc, p[s + "wk_chunk"]);
  }
  return out;
}

DiffArray HeadCols(const DiffArray& a, int h, std::size_t dk) {
  const std::size_t b = static_cast<std::size_t>(h) * dk;
  return a.dim(1) == dk ? a : diff::slice_cols(a, b, b + dk);
}

DiffArray SelectorOf(const ModelConfig& cfg, const BoundParams& p, int h, std::size_t dk) {
  const std::string s = Layer("dec", cfg.decoder_layers - 1, "stream.");
  return diff::slice_flat(p[s + "selector"], static_cast<std::size_t>(h) * dk, {dk});
}

DiffArray BiasOf(const ModelConfig& cfg, const BoundParams& p, int h) {
  const std::string s = Layer("dec", cfg.decoder_layers - 1, "stream.");
  return diff::slice_flat(p[s + "bias"], static_cast<std::size_t>(h), {});
}

// Final-layer cross-attention hook: receives the layer's post-self-attention
// states and returns the projected context rows.
using CrossFn = std::function<DiffArray(const DiffArray& y)>;

DiffArray RunDecoder(const ModelConfig& cfg, const BoundParams& p, Tape& tape, const DiffArray& enc,
                     std::span<const int> inputs, const AttentionMask* lower_mask, const CrossFn& final_cross) {
  const std::size_t rows = inputs.size();
  const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  DiffArray y = diff::gather_rows(p["embed"], inputs);
  y = diff::add(diff::scale(y, std::sqrt(static_cast<double>(d))), tape.constant(PositionTable(rows, d)));
  const AttentionMask causal = AttentionMask::Causal(rows);
  const attention::MultiHeadConfig mh{cfg.heads, cfg.model_dim};
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string pre = Layer("dec", l, "");
    y = AddNorm(p, pre + "ln1.", y, attention::multi_head(y, y, y, mh, Heads(p, pre + "self."), &causal));
    DiffArray ctx;
    if (l == cfg.decoder_layers - 1) {
      ctx = final_cross(y);
    } else {
      ctx = attention::multi_head(y, enc, enc, mh, Heads(p, pre + "cross."), lower_mask);
    }
    y = AddNorm(p, pre + "ln2.", y, ctx);
    y = AddNorm(p, pre + "ln3.", y, FeedForward(p, pre + "ffn.", y));
  }
  return y;
}

DiffArray OutputLogits(const BoundParams& p, const DiffArray& y) {
  return Linear(y, p["out.w"], p["out.b"]);
}

void AddUniform(ParamSet& ps, std::mt19937_64& rng, std::string name, std::size_t rows, std::size_t cols) {
  const double limit = std::sqrt(3.0 / static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t = Tensor::Zeros({rows, cols});
  for (double& x : t.values) x = u(rng);
  ps.Add(std::move(name), std::move(t));
}

void AddConst(ParamSet& ps, std::string name, diff::Shape shape, double value) {
  Tensor t = Tensor::Zeros(std::move(shape));
  std::fill(t.values.begin(), t.values.end(), value);
  ps.Add(std::move(name), std::move(t));
}

void AddNormParams(ParamSet& ps, const std::string& prefix, std::size_t d) {
  AddConst(ps, prefix + "g", {d}, 1.0);
  AddConst(ps, prefix + "b", {d}, 0.0);
}

void AddFfn(ParamSet& ps, std::mt19937_64& rng, const std::string& prefix, std::size_t d, std::size_t f) {
  AddUniform(ps, rng, prefix + "w1", d, f);
  AddConst(ps, prefix + "b1", {f}, 0.0);
  AddUniform(ps, rng, prefix + "w2", f, d);
  AddConst(ps, prefix + "b2", {d}, 0.0);
}

void AddAttention(ParamSet& ps, std::mt19937_64& rng, const std::string& prefix, std::size_t d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) AddUniform(ps, rng, prefix + w, d, d);
}

}  // namespace

// Config ----------------------------------------------------------------------

std::string_view ToString(StreamingKind k) {
  switch (k) {
    case StreamingKind::kMocha: return "mocha";
    case StreamingKind::kCa: return "ca";
    case StreamingKind::kGlobal: return "global";
  }
  return "ca";
}

StreamingKind ParseStreamingKind(std::string_view s) {
  if (s == "mocha") return StreamingKind::kMocha;
  if (s == "ca") return StreamingKind::kCa;
  if (s == "global") return StreamingKind::kGlobal;
  throw std::invalid_argument("unknown streaming attention kind '" + std::string(s) +
                              "' (expected mocha, ca or global)");
}

void ModelConfig::Validate() const {
  if (vocab_size < 1 || feature_dim < 1 || ffn_dim < 1) {
    throw DimensionError("vocab_size, feature_dim and ffn_dim must be positive");
  }
  attention::MultiHeadConfig{heads, model_dim}.Validate();
  attention::MultiHeadConfig{stream_heads, model_dim}.Validate();
  if (encoder_layers < 0) throw DimensionError("encoder_layers must be >= 0");
  if (decoder_layers < 1) throw DimensionError("decoder_layers must be >= 1");
  if (subsample < 1) throw DimensionError("subsample factor must be >= 1");
  if (chunk_width < 1) throw DimensionError("chunk width must be >= 1");
  if (noise_std < 0.0) throw DimensionError("noise std must be >= 0");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw DimensionError("label smoothing must be in [0, 1)");
}

// ParamSet --------------------------------------------------------------------

void ParamSet::Add(std::string name, Tensor t) {
  if (Has(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(t));
}

const Tensor& ParamSet::Get(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return entries_[it->second].second;
}

Tensor& ParamSet::Get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).Get(name));
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

std::vector<double> ParamSet::Flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& [_, t] : entries_) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

void ParamSet::Unflatten(std::span<const double> flat) {
  if (flat.size() != total_size()) throw DimensionError("flat parameter vector has the wrong size");
  std::size_t off = 0;
  for (auto& [_, t] : entries_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.values.begin());
    off += t.size();
  }
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].first != b.entries_[i].first || a.entries_[i].second.shape != b.entries_[i].second.shape ||
        a.entries_[i].second.values != b.entries_[i].second.values) {
      return false;
    }
  }
  return true;
}

ParamSet InitParams(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  std::mt19937_64 rng(DeriveSeed(seed, {0x1417ULL}));
  const auto d = static_cast<std::size_t>(cfg.model_dim);
  const auto f = static_cast<std::size_t>(cfg.ffn_dim);
  ParamSet ps;
  AddUniform(ps, rng, "input.w", static_cast<std::size_t>(cfg.feature_dim), d);
  AddConst(ps, "input.b", {d}, 0.0);
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::string pre = Layer("enc", l, "");
    AddAttention(ps, rng, pre + "attn.", d);
    AddNormParams(ps, pre + "ln1.", d);
    AddFfn(ps, rng, pre + "ffn.", d, f);
    AddNormParams(ps, pre + "ln2.", d);
  }
  {
    // Embedding rows are scaled by sqrt(d) in the forward pass.
    std::uniform_real_distribution<double> u(-1.0 / static_cast<double>(d), 1.0 / static_cast<double>(d));
    Tensor t = Tensor::Zeros({static_cast<std::size_t>(cfg.embedding_rows()), d});
    for (double& x : t.values) x = u(rng) * std::sqrt(3.0 * static_cast<double>(d));
    ps.Add("embed", std::move(t));
  }
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string pre = Layer("dec", l, "");
    AddAttention(ps, rng, pre + "self.", d);
    AddNormParams(ps, pre + "ln1.", d);
    if (IsStreamingLayer(cfg, l)) {
      const std::string s = pre + "stream.";
      AddAttention(ps, rng, s, d);
      if (cfg.kind == StreamingKind::kMocha) {
        AddUniform(ps, rng, s + "wq_chunk", d, d);
        AddUniform(ps, rng, s + "wk_chunk", d, d);
      } else {
        const std::size_t dk = d / static_cast<std::size_t>(cfg.stream_heads);
        const auto h = static_cast<std::size_t>(cfg.stream_heads);
        AddUniform(ps, rng, s + "selector", h, dk);
        ps.Get(s + "selector").shape = {h * dk};
        AddConst(ps, s + "bias", {h}, cfg.selector_bias_init);
      }
    } else {
      AddAttention(ps, rng, pre + "cross.", d);
    }
    AddNormParams(ps, pre + "ln2.", d);
    AddFfn(ps, rng, pre + "ffn.", d, f);
    AddNormParams(ps, pre + "ln3.", d);
  }
  AddUniform(ps, rng, "out.w", d, static_cast<std::size_t>(cfg.output_classes()));
  AddConst(ps, "out.b", {static_cast<std::size_t>(cfg.output_classes())}, 0.0);
  return ps;
}

// Binding ---------------------------------------------------------------------

DiffArray BoundParams::operator[](std::string_view name) const {
  const auto it = map_.find(std::string(name));
  if (it == map_.end()) throw std::out_of_range("parameter " + std::string(name) + " is not bound");
  return it->second;
}

std::vector<double> BoundParams::FlatGrad(const ParamSet& params) const {
  std::vector<double> flat;
  flat.reserve(params.total_size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = (*this)[params.name(i)].grad();
    if (g.empty()) {
      flat.insert(flat.end(), params.at(i).size(), 0.0);
    } else {
      flat.insert(flat.end(), g.begin(), g.end());
    }
  }
  return flat;
}

BoundParams Bind(Tape& tape, const ParamSet& params, bool trainable) {
  BoundParams b;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.at(i);
    b.Set(params.name(i), trainable ? tape.variable(t) : tape.constant(t));
  }
  return b;
}

BoundParams BindFlat(const DiffArray& flat, const ParamSet& params) {
  BoundParams b;
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.at(i);
    b.Set(params.name(i), diff::slice_flat(flat, off, t.shape));
    off += t.size();
  }
  return b;
}

Tensor PositionTable(std::size_t rows, std::size_t dim) {
  Tensor t = Tensor::Zeros({rows, dim});
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      t.at(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return t;
}

// Encoder ---------------------------------------------------------------------

Tensor MeanPool(const Tensor& frames, int factor, std::vector<int>* index_map) {
  if (factor < 1) throw DimensionError("subsample factor must be >= 1");
  const std::size_t t = frames.rows(), f = frames.cols();
  const auto k = static_cast<std::size_t>(factor);
  const std::size_t n = (t + k - 1) / k;
  Tensor out = Tensor::Zeros({n, f});
  if (index_map) index_map->clear();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t lo = j * k, hi = std::min(t, lo + k);
    for (std::size_t r = lo; r < hi; ++r) {
      for (std::size_t c = 0; c < f; ++c) out.at(j, c) += frames.at(r, c);
    }
    for (std::size_t c = 0; c < f; ++c) out.at(j, c) /= static_cast<double>(hi - lo);
    if (index_map) index_map->push_back(static_cast<int>(hi));
  }
  return out;
}

EncodedUtterance encode(const ModelConfig& cfg, const BoundParams& p, Tape& tape, const Tensor& frames) {
  if (frames.shape.size() != 2 || frames.rows() == 0) throw DimensionError("encode needs a non-empty frame sequence");
  if (frames.cols() != static_cast<std::size_t>(cfg.feature_dim)) {
    throw DimensionError("frames have " + std::to_string(frames.cols()) + " features, model expects " +
                         std::to_string(cfg.feature_dim));
  }
  EncodedUtterance out;
  out.original_frames = static_cast<int>(frames.rows());
  const Tensor pooled = MeanPool(frames, cfg.subsample, &out.index_map);
  const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  DiffArray x = Linear(tape.constant(pooled), p["input.w"], p["input.b"]);
  x = diff::add(x, tape.constant(PositionTable(pooled.rows(), d)));
  const attention::MultiHeadConfig mh{cfg.heads, cfg.model_dim};
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::string pre = Layer("enc", l, "");
    x = AddNorm(p, pre + "ln1.", x, attention::multi_head(x, x, x, mh, Heads(p, pre + "attn.")));
    x = AddNorm(p, pre + "ln2.", x, FeedForward(p, pre + "ffn.", x));
  }
  out.states = x;
  return out;
}

// Decoder ---------------------------------------------------------------------

std::vector<int> Targets(const ModelConfig& cfg, std::span<const int> tokens) {
  std::vector<int> t(tokens.begin(), tokens.end());
  t.push_back(cfg.eos());
  return t;
}

namespace {

DiffArray ContextAlignment(const ModelConfig& cfg, const DiffArray& alpha, std::span<const int> bounds) {
  return cfg.fallback_context ? attention::fallback_alignment(alpha, bounds) : alpha;
}

}  // namespace

DecodeTrainOutput decode_train(const ModelConfig& cfg, const BoundParams& p, const EncodedUtterance& encoded,
                               std::span<const int> tokens, std::optional<std::span<const int>> mask_bounds,
                               const NoiseOptions& noise) {
  if (tokens.empty()) throw std::invalid_argument("decode_train needs a non-empty reference");
  const int frames = encoded.frames();
  std::vector<int> bounds;
  if (mask_bounds) {
    if (mask_bounds->size() != tokens.size()) {
      throw DimensionError(std::to_string(mask_bounds->size()) + " mask bounds for " +
                           std::to_string(tokens.size()) + " tokens");
    }
    for (int b : *mask_bounds) {
      if (b < 1) throw attention::InvalidBound("mask bound " + std::to_string(b) + " < 1");
      bounds.push_back(b);
    }
    bounds.push_back(frames);  // EOS step
  }
  Tape& tape = encoded.states.tape();
  std::vector<int> inputs{cfg.sos()};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end());

  DecodeTrainOutput out;
  const DiffArray& enc = encoded.states;
  const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  CrossFn cross;
  if (cfg.kind == StreamingKind::kGlobal) {
    cross = [&](const DiffArray& y) {
      const std::string pre = Layer("dec", cfg.decoder_layers - 1, "cross.");
      std::optional<AttentionMask> mask;
      if (!bounds.empty()) mask = AttentionMask::Prefix(bounds, static_cast<std::size_t>(frames));
      DiffArray weights;
      DiffArray ctx = attention::multi_head(y, enc, enc, {cfg.heads, cfg.model_dim}, Heads(p, pre),
                                            mask ? &*mask : nullptr, &weights);
      out.alignment = attention::AlignmentMatrix::FromArray(weights);
      out.trace.alpha.push_back(out.alignment);
      return ctx;
    };
  } else {
    cross = [&](const DiffArray& y) {
      const StreamProjections proj = Project(cfg, p, y, enc);
      const std::size_t dk = d / static_cast<std::size_t>(cfg.stream_heads);
      std::vector<DiffArray> heads;
      for (int h = 0; h < cfg.stream_heads; ++h) {
        const DiffArray q = HeadCols(proj.q, h, dk), k = HeadCols(proj.k, h, dk), v = HeadCols(proj.v, h, dk);
        DiffArray p_row, alpha, ctx;
        if (cfg.kind == StreamingKind::kMocha) {
          p_row = attention::monotonic_p(q, k, noise);
          alpha = attention::expected_alignment(p_row, bounds);
          const DiffArray u = attention::monotonic_energy(HeadCols(proj.q_chunk, h, dk), HeadCols(proj.k_chunk, h, dk));
          ctx = attention::mocha_context_train(ContextAlignment(cfg, alpha, bounds), u, v, cfg.chunk_width);
        } else {
          const DiffArray a = attention::monotonic_p(q, k, NoiseOptions{});
          const DiffArray interim = attention::ca_interim_contexts(a, v);
          p_row = attention::ca_halting_p(interim, SelectorOf(cfg, p, h, dk), BiasOf(cfg, p, h), noise);
          alpha = attention::expected_alignment(p_row, bounds);
          ctx = attention::ca_context_train(ContextAlignment(cfg, alpha, bounds), interim);
        }
        out.trace.p.push_back(attention::AlignmentMatrix::FromArray(p_row));
        out.trace.alpha.push_back(attention::AlignmentMatrix::FromArray(alpha));
        heads.push_back(ctx);
      }
      out.alignment = out.trace.alpha.front();
      const DiffArray cat = heads.size() == 1 ? heads[0] : diff::concat_cols(heads);
      return diff::matmul(cat, p[Layer("dec", cfg.decoder_layers - 1, "stream.wo")]);
    };
  }
  const DiffArray y = RunDecoder(cfg, p, tape, enc, inputs, nullptr, cross);
  out.logits = OutputLogits(p, y);
  return out;
}

InferResult decode_infer(const ModelConfig& cfg, const ParamSet& params, const Tensor& frames, int max_steps) {
  Tape tape;
  const BoundParams p = Bind(tape, params, false);
  const EncodedUtterance encoded = encode(cfg, p, tape, frames);
  const int frames_sub = encoded.frames();
  const DiffArray& enc = encoded.states;
  const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  const std::size_t dk = d / static_cast<std::size_t>(cfg.stream_heads);

  // Keys and values depend only on the encoder output.
  std::optional<StreamProjections> keys;
  std::vector<DiffArray> k_heads, v_heads, kc_heads;
  std::vector<std::vector<double>> selectors;
  std::vector<double> biases;
  if (cfg.kind != StreamingKind::kGlobal) {
    const std::string s = Layer("dec", cfg.decoder_layers - 1, "stream.");
    keys = StreamProjections{};
    keys->k = diff::matmul(enc, p[s + "wk"]);
    keys->v = diff::matmul(enc, p[s + "wv"]);
    if (cfg.kind == StreamingKind::kMocha) keys->k_chunk = diff::matmul(enc, p[s + "wk_chunk"]);
    for (int h = 0; h < cfg.stream_heads; ++h) {
      k_heads.push_back(HeadCols(keys->k, h, dk));
      v_heads.push_back(HeadCols(keys->v, h, dk));
      if (cfg.kind == StreamingKind::kMocha) {
        kc_heads.push_back(HeadCols(keys->k_chunk, h, dk));
      } else {
        const auto sel = params.Get(s + "selector").values;
        selectors.emplace_back(sel.begin() + static_cast<std::ptrdiff_t>(h * dk),
                               sel.begin() + static_cast<std::ptrdiff_t>((h + 1) * dk));
        biases.push_back(params.Get(s + "bias").values[static_cast<std::size_t>(h)]);
      }
    }
  }

  InferResult result;
  std::vector<int> inputs{cfg.sos()};
  std::vector<std::vector<double>> contexts;  // per decode step, concatenated heads
  std::vector<int> limits;                    // lower-layer frame limit per step
  int resume = 1;
  for (int step = 0; step < max_steps; ++step) {
    limits.push_back(cfg.mask_lower_layers ? std::max(1, resume) : frames_sub);
    const AttentionMask lower = AttentionMask::Prefix(limits, static_cast<std::size_t>(frames_sub));
    int trigger = frames_sub;
    const CrossFn cross = [&](const DiffArray& y) -> DiffArray {
      if (cfg.kind == StreamingKind::kGlobal) {
        const std::string pre = Layer("dec", cfg.decoder_layers - 1, "cross.");
        return attention::multi_head(y, enc, enc, {cfg.heads, cfg.model_dim}, Heads(p, pre));
      }
      const std::string s = Layer("dec", cfg.decoder_layers - 1, "stream.");
      const DiffArray last = diff::slice_rows(y, y.dim(0) - 1, y.dim(0));
      const DiffArray q = diff::matmul(last, p[s + "wq"]);
      DiffArray qc;
      if (cfg.kind == StreamingKind::kMocha) qc = diff::matmul(last, p[s + "wq_chunk"]);
      // Heads scan independently; the step commits at the latest head and
      // earlier heads are re-read at that frame.
      const auto scan = [&](int h, int start) {
        const auto off = static_cast<std::size_t>(h) * dk;
        if (cfg.kind == StreamingKind::kMocha) {
          return attention::mocha_infer_step(q.values().subspan(off, dk), k_heads[h].view(),
                                             qc.values().subspan(off, dk), kc_heads[h].view(),
                                             v_heads[h].view(), start, cfg.chunk_width);
        }
        return attention::ca_infer_step(q.values().subspan(off, dk), k_heads[h].view(), v_heads[h].view(),
                                        selectors[h], biases[h], start);
      };
      std::vector<attention::InferStep> steps;
      int shared = resume;
      for (int h = 0; h < cfg.stream_heads; ++h) {
        steps.push_back(scan(h, resume));
        shared = std::max(shared, steps.back().trigger);
      }
      trigger = shared;
      std::vector<double> ctx;
      for (int h = 0; h < cfg.stream_heads; ++h) {
        if (steps[h].trigger != shared) steps[h] = scan(h, shared);
        ctx.insert(ctx.end(), steps[h].context.begin(), steps[h].context.end());
      }
      contexts.push_back(std::move(ctx));
      std::vector<double> all;
      for (const auto& c : contexts) all.insert(all.end(), c.begin(), c.end());
      const DiffArray cat = tape.constant({contexts.size(), d}, std::move(all));
      return diff::matmul(cat, p[s + "wo"]);
    };
    const DiffArray y = RunDecoder(cfg, p, tape, enc, inputs, &lower, cross);
    const DiffArray logits = OutputLogits(p, diff::slice_rows(y, y.dim(0) - 1, y.dim(0)));
    const int token = ArgmaxRows(logits, 1).front();
    if (token == cfg.eos()) break;
    result.tokens.push_back(token);
    result.subsampled_triggers.push_back(trigger);
    result.triggers.push_back(encoded.ToOriginal(trigger));
    inputs.push_back(token);
    resume = trigger;
  }
  return result;
}

DiffArray loss(const DiffArray& logits, std::span<const int> targets, double smoothing) {
  return diff::smoothed_cross_entropy(logits, targets, smoothing);
}

std::vector<int> ArgmaxRows(const DiffArray& logits, std::size_t rows) {
  const diff::MatrixView v = logits.view();
  std::vector<int> out;
  for (std::size_t r = 0; r < std::min(rows, v.rows); ++r) {
    const auto row = v.row(r);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

}  // namespace streamlat::model
