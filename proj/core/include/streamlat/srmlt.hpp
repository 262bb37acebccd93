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

#ifndef STREAMLAT_SRMLT_HPP_
#define STREAMLAT_SRMLT_HPP_

// Self-regularised boundary records.
//
// Training keeps, per granularity unit (token, utterance or minibatch), the
// accuracy and coverage observed when the unit's triggering points were last
// recorded. New observations replace the record only when the update policy
// allows it; the recorded points then bound the expected alignment on the
// unit's next visit.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "streamlat/attention.hpp"

namespace streamlat::srmlt {

enum class Granularity { kToken, kUtterance, kMinibatch };
enum class Phase { kPretrain, kFinetune };
enum class Trend { kEqual, kUp, kDown };

std::string_view ToString(Granularity g);
Granularity ParseGranularity(std::string_view s);
std::string_view ToString(Trend t);

inline constexpr double kDefaultTolerance = 0.001;

class UndefinedStat : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StatsSnapshot {
  double accuracy = 0.0;
  double coverage = 0.0;
  Granularity unit = Granularity::kMinibatch;
};

/// Triggering points b_i (1-based, subsampled frames) of one utterance.
/// Under token granularity each token i owns the unit "<stats_key>#<i>";
/// otherwise every token shares the unit `stats_key`.
struct BoundaryRecord {
  std::string utterance_id;
  int frames = 0;
  std::vector<int> triggers;
  std::string stats_key;
};

/// Unit keys a record's tokens report to.
std::vector<std::string> UnitKeysOf(const BoundaryRecord& record, Granularity g);
std::string TokenUnitKey(std::string_view utterance_id, std::size_t token);

/// New triggers for a contiguous token range of one utterance.
struct MemberTriggers {
  std::string utterance_id;
  int frames = 0;
  std::size_t token_count = 0;
  std::size_t token_offset = 0;
  std::vector<int> triggers;
};

/// Observation for one granularity unit after a forward pass.
struct UnitResult {
  std::string key;
  std::vector<MemberTriggers> members;
  StatsSnapshot stats;
};

class RecordStore {
 public:
  explicit RecordStore(Granularity granularity = Granularity::kMinibatch,
                       double tolerance = kDefaultTolerance);

  Granularity granularity() const { return granularity_; }
  double tolerance() const { return tolerance_; }
  /// A frozen store never accepts updates (fixed-boundary training).
  bool frozen() const { return frozen_; }
  void Freeze() { frozen_ = true; }

  const BoundaryRecord* Find(std::string_view utterance_id) const;
  const StatsSnapshot* Snapshot(std::string_view key) const;
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::map<std::string, BoundaryRecord, std::less<>>& records() const { return records_; }
  const std::map<std::string, StatsSnapshot, std::less<>>& snapshots() const { return snapshots_; }

  void Put(BoundaryRecord record);
  void PutSnapshot(std::string key, StatsSnapshot snapshot);

  /// Replaces triggers and snapshot for every member of the unit at once.
  void Apply(const UnitResult& unit);

  /// Throws StoreError when an invariant is broken.
  void Validate() const;

  std::string Serialize() const;
  static RecordStore Parse(std::string_view text);
  void Save(const std::filesystem::path& path) const;
  static RecordStore Load(const std::filesystem::path& path);

  friend bool operator==(const RecordStore& a, const RecordStore& b);

 private:
  Granularity granularity_;
  double tolerance_;
  bool frozen_ = false;
  std::map<std::string, BoundaryRecord, std::less<>> records_;
  std::map<std::string, StatsSnapshot, std::less<>> snapshots_;
};

bool operator==(const BoundaryRecord& a, const BoundaryRecord& b);

/// Correct positions over all positions in the unit (pooled, not averaged).
double batch_accuracy(std::span<const std::vector<int>> predicted,
                      std::span<const std::vector<int>> reference);

/// Mean over all tokens of b_i / T_utt.
double batch_coverage(std::span<const std::vector<int>> triggers, std::span<const int> lengths);

Trend Classify(double before, double after, double tolerance);

/// Finetune policy. Accuracy up: update. Accuracy equal: update only when
/// coverage goes down. Accuracy down: keep the record.
bool update_decision(const StatsSnapshot& before, const StatsSnapshot& after, double tolerance);

/// Argmax of a row (1-based), earliest frame on ties; nullopt for an all-zero
/// row.
std::optional<int> extract_trigger(std::span<const double> row);
std::vector<std::optional<int>> extract_triggers(const attention::AlignmentMatrix& alpha);

/// min(b_i + delta, T) per token.
std::vector<int> mask_bounds(const BoundaryRecord& record, int delta);

/// Records the unit when it is new, otherwise applies the phase rule
/// (pretrain: accuracy strictly up; finetune: update_decision). Returns
/// whether the store changed.
bool maybe_update(RecordStore& store, const UnitResult& unit, Phase phase);

}  // namespace streamlat::srmlt

#endif  // STREAMLAT_SRMLT_HPP_
