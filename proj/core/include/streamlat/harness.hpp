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

#ifndef STREAMLAT_HARNESS_HPP_
#define STREAMLAT_HARNESS_HPP_

// Two-stage training driver: pretraining with boundary recording, masked
// fine-tuning, the fixed-boundary comparison mode, sweeps and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "streamlat/metrics.hpp"
#include "streamlat/model.hpp"
#include "streamlat/srmlt.hpp"
#include "streamlat/synth.hpp"

namespace streamlat::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { kSrmlt, kFixedMlt, kBaseline };

std::string_view ToString(Mode m);
Mode ParseMode(std::string_view s);
std::string_view ToString(srmlt::Phase p);

struct OptimConfig {
  double peak_lr = 4e-3;
  int warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  /// Fine-tuning runs at a constant peak_lr * finetune_lr_scale.
  double finetune_lr_scale = 0.1;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 5.0;
};

struct DataConfig {
  std::size_t train = 2000;
  std::size_t dev = 200;
  std::size_t test = 200;
};

struct RunConfig {
  model::ModelConfig model;
  synth::TaskSpec task;
  DataConfig data;
  OptimConfig optim;
  int pretrain_epochs = 30;
  int finetune_epochs = 20;
  int delta = 2;
  srmlt::Granularity granularity = srmlt::Granularity::kMinibatch;
  double tolerance = srmlt::kDefaultTolerance;
  int batch_size = 16;
  std::uint64_t seed = 1;
  Mode mode = Mode::kSrmlt;
  int workers = 1;
  /// Decode step limit at inference; 0 picks 2 * max_tokens + 2.
  int max_decode_steps = 0;
  /// Dev evaluation cadence in epochs; 0 disables per-epoch evaluation.
  int eval_every = 1;

  void Validate() const;
  int decode_limit() const { return max_decode_steps > 0 ? max_decode_steps : 2 * task.max_tokens + 2; }
};

/// Canonical JSON rendering of a config (sections model, task, data, optim,
/// train).
std::string ConfigToJson(const RunConfig& cfg, int indent = 2);
/// Parses JSON text and applies `section.key=value` overrides in order.
/// Unknown keys are rejected.
RunConfig ParseConfig(std::string_view json_text, std::span<const std::string> overrides = {});
RunConfig LoadConfig(const std::filesystem::path& path, std::span<const std::string> overrides = {});

struct Corpus {
  synth::Dataset train, dev, test;
};

/// Generates train + dev + test utterances and splits them by id hash.
Corpus MakeCorpus(const RunConfig& cfg);

struct AdamState {
  std::vector<double> m, v;
  long long step = 0;
};

struct TrainState {
  model::ParamSet params;
  AdamState adam;
  srmlt::Phase phase = srmlt::Phase::kPretrain;
  int epoch = 0;  // completed epochs of `phase`
  long long global_step = 0;
};

struct Checkpoint {
  RunConfig config;
  TrainState state;
};

Checkpoint InitialCheckpoint(const RunConfig& cfg);

std::string SerializeCheckpoint(const Checkpoint& ckpt);
Checkpoint ParseCheckpoint(std::string_view text);
void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

struct EpochStats {
  srmlt::Phase phase = srmlt::Phase::kPretrain;
  int epoch = 0;  // 1-based within the phase
  double loss = 0.0;
  double train_accuracy = 0.0;
  double train_coverage = 0.0;
  std::optional<double> dev_token_error_rate;
  std::optional<double> dev_delta_corpus;
  std::size_t records_updated = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;

  static std::string CsvHeader();
  std::string Csv() const;
};

/// Greedy decoding over a dataset; Δ is NaN when no token could be paired.
metrics::EvalSummary evaluate(const model::ModelConfig& cfg, const model::ParamSet& params,
                              const synth::Dataset& data, std::string label, int max_steps);

/// Utterance indices per batch: sorted by length once and frozen.
std::vector<std::vector<std::size_t>> AssignBatches(const synth::Dataset& train, int batch_size,
                                                    std::uint64_t seed);

/// Ground-truth boundaries in subsampled frames, ceil(b / factor), frozen.
srmlt::RecordStore GroundTruthStore(const RunConfig& cfg, const synth::Dataset& train);

/// Same triggers under another granularity; snapshots are dropped.
srmlt::RecordStore Regranulate(const srmlt::RecordStore& store, srmlt::Granularity g);

struct PhaseResult {
  Checkpoint checkpoint;
  srmlt::RecordStore store;
  TrainLog log;
};

/// Called after every finished epoch (checkpoint cadence, progress output).
using EpochHook = std::function<void(const Checkpoint&, const srmlt::RecordStore&, const EpochStats&)>;

/// Unmasked training with boundary recording, continuing from `start` until
/// `pretrain_epochs` are complete.
PhaseResult pretrain(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& start,
                     srmlt::RecordStore store, const EpochHook& hook = {});

/// Masked fine-tuning from a pretrained checkpoint. The mode of `cfg` picks
/// self-regulated records (srmlt), frozen ground truth (fixed-mlt) or
/// unmasked continuation (baseline).
PhaseResult finetune(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& start,
                     srmlt::RecordStore store, const EpochHook& hook = {});

PhaseResult run_fixed_mlt(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& start,
                          const EpochHook& hook = {});

enum class SweepAxis { kDelta, kGranularity };

SweepAxis ParseSweepAxis(std::string_view s);
std::string_view ToString(SweepAxis a);

struct SweepRow {
  SweepAxis axis = SweepAxis::kDelta;
  std::string value;
  Mode mode = Mode::kSrmlt;
  std::optional<metrics::EvalSummary> summary;
  std::string error;
};

/// One fine-tuning run per (value, mode), all from the same pretrained
/// checkpoint and store, evaluated on the test split.
std::vector<SweepRow> sweep(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& pretrained,
                            const srmlt::RecordStore& store, SweepAxis axis,
                            std::span<const std::string> values, std::span<const Mode> modes);

std::string SweepCsvHeader();
std::string SweepCsv(std::span<const SweepRow> rows);

}  // namespace streamlat::harness

#endif  // STREAMLAT_HARNESS_HPP_
