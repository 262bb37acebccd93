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

#ifndef STREAMLAT_MODEL_HPP_
#define STREAMLAT_MODEL_HPP_

// Toy streaming encoder-decoder.
//
//   frames -> mean-pool subsampling -> linear + sinusoidal positions
//          -> N x [self-attention, FFN] (post-norm residual blocks)
//   tokens -> embedding + positions
//          -> M x [causal self-attention, cross-attention, FFN]
//          -> output projection over task tokens + EOS
//
// Only the last decoder layer's cross-attention is streaming (MoChA or CA);
// lower layers use global cross-attention. Token ids 0..vocab-1 are task
// tokens, vocab is EOS and vocab + 1 is the start symbol (input only).

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "streamlat/attention.hpp"
#include "streamlat/diff.hpp"

namespace streamlat::model {

using diff::DiffArray;
using diff::Tape;
using diff::Tensor;

enum class StreamingKind { kMocha, kCa, kGlobal };

std::string_view ToString(StreamingKind k);
StreamingKind ParseStreamingKind(std::string_view s);

struct ModelConfig {
  int vocab_size = 20;
  int feature_dim = 8;
  int model_dim = 48;
  int encoder_layers = 2;
  int decoder_layers = 1;
  int ffn_dim = 96;
  int heads = 4;
  int stream_heads = 1;
  StreamingKind kind = StreamingKind::kCa;
  int chunk_width = 2;
  int subsample = 1;
  double noise_std = 1.0;
  double selector_bias_init = -4.0;
  double label_smoothing = 0.1;
  /// Training contexts route unhalted mass to the final frame, matching the
  /// inference fallback. Off gives the bare expected-alignment context.
  bool fallback_context = true;
  /// At inference, lower decoder layers only see frames up to the previous
  /// step's trigger.
  bool mask_lower_layers = true;

  void Validate() const;
  int eos() const { return vocab_size; }
  int sos() const { return vocab_size + 1; }
  int output_classes() const { return vocab_size + 1; }
  int embedding_rows() const { return vocab_size + 2; }
};

/// Named parameter tensors in a fixed order.
class ParamSet {
 public:
  void Add(std::string name, Tensor t);
  bool Has(std::string_view name) const { return index_.find(name) != index_.end(); }
  const Tensor& Get(std::string_view name) const;
  Tensor& Get(std::string_view name);
  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }
  Tensor& at(std::size_t i) { return entries_[i].second; }
  std::size_t total_size() const;
  std::vector<double> Flatten() const;
  void Unflatten(std::span<const double> flat);

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

ParamSet InitParams(const ModelConfig& cfg, std::uint64_t seed);

/// Parameters placed on one tape.
class BoundParams {
 public:
  DiffArray operator[](std::string_view name) const;
  void Set(const std::string& name, DiffArray a) { map_[name] = a; }
  /// Gradients in ParamSet order, concatenated. Requires a finished backward().
  std::vector<double> FlatGrad(const ParamSet& params) const;

 private:
  std::unordered_map<std::string, DiffArray> map_;
};

BoundParams Bind(Tape& tape, const ParamSet& params, bool trainable);
/// Views every parameter as a slice of one flat array (gradient checks).
BoundParams BindFlat(const DiffArray& flat, const ParamSet& params);

/// Sinusoidal position table (rows x dim).
Tensor PositionTable(std::size_t rows, std::size_t dim);

struct EncodedUtterance {
  DiffArray states;            // subsampled frames x model_dim
  std::vector<int> index_map;  // subsampled frame j (0-based) -> last original frame (1-based)
  int original_frames = 0;

  int frames() const { return static_cast<int>(index_map.size()); }
  /// 1-based subsampled frame -> 1-based original frame.
  int ToOriginal(int frame) const { return index_map.at(static_cast<std::size_t>(frame - 1)); }
};

/// ceil(original / factor) pooled frames; frame j averages original frames
/// [j * factor, min((j + 1) * factor, T)).
Tensor MeanPool(const Tensor& frames, int factor, std::vector<int>* index_map = nullptr);

EncodedUtterance encode(const ModelConfig& cfg, const BoundParams& params, Tape& tape,
                        const Tensor& frames);

struct DecodeTrainOutput {
  DiffArray logits;                     // (tokens + 1) x output_classes
  attention::HaltingTrace trace;        // per streaming head p and alpha
  attention::AlignmentMatrix alignment; // first streaming head (or head mean for global)
};

/// Teacher-forced decoding. `mask_bounds`, when given, has one 1-based bound
/// (subsampled frames) per reference token; the EOS step is never masked.
DecodeTrainOutput decode_train(const ModelConfig& cfg, const BoundParams& params,
                               const EncodedUtterance& encoded, std::span<const int> tokens,
                               std::optional<std::span<const int>> mask_bounds,
                               const attention::NoiseOptions& noise);

struct InferResult {
  std::vector<int> tokens;
  std::vector<int> triggers;             // original frames, 1-based
  std::vector<int> subsampled_triggers;  // encoder frames, 1-based
};

/// Greedy decoding with hard halting decisions.
InferResult decode_infer(const ModelConfig& cfg, const ParamSet& params, const Tensor& frames,
                         int max_steps);

/// Targets for teacher forcing: tokens followed by EOS.
std::vector<int> Targets(const ModelConfig& cfg, std::span<const int> tokens);

/// Mean label-smoothed cross-entropy of logits against targets.
DiffArray loss(const DiffArray& logits, std::span<const int> targets, double smoothing = 0.1);

/// Row-wise argmax of the first `rows` rows.
std::vector<int> ArgmaxRows(const DiffArray& logits, std::size_t rows);

}  // namespace streamlat::model

#endif  // STREAMLAT_MODEL_HPP_
