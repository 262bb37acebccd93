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

#include "streamlat/srmlt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "streamlat/textio.hpp"

namespace streamlat::srmlt {

namespace {

constexpr std::string_view kMagic = "streamlat-records";
constexpr int kVersion = 1;

}  // namespace

std::string_view ToString(Granularity g) {
  switch (g) {
    case Granularity::kToken: return "token";
    case Granularity::kUtterance: return "utterance";
    case Granularity::kMinibatch: return "minibatch";
  }
  return "minibatch";
}

Granularity ParseGranularity(std::string_view s) {
  if (s == "token") return Granularity::kToken;
  if (s == "utterance") return Granularity::kUtterance;
  if (s == "minibatch" || s == "mini-batch" || s == "batch") return Granularity::kMinibatch;
  throw std::invalid_argument("unknown granularity '" + std::string(s) +
                              "' (expected token, utterance or minibatch)");
}

std::string_view ToString(Trend t) {
  switch (t) {
    case Trend::kEqual: return "equal";
    case Trend::kUp: return "up";
    case Trend::kDown: return "down";
  }
  return "equal";
}

std::string TokenUnitKey(std::string_view utterance_id, std::size_t token) {
  return std::string(utterance_id) + "#" + std::to_string(token);
}

std::vector<std::string> UnitKeysOf(const BoundaryRecord& record, Granularity g) {
  if (g != Granularity::kToken) return {record.stats_key};
  std::vector<std::string> keys;
  keys.reserve(record.triggers.size());
  for (std::size_t i = 0; i < record.triggers.size(); ++i) keys.push_back(TokenUnitKey(record.stats_key, i));
  return keys;
}

bool operator==(const BoundaryRecord& a, const BoundaryRecord& b) {
  return a.utterance_id == b.utterance_id && a.frames == b.frames && a.triggers == b.triggers &&
         a.stats_key == b.stats_key;
}

// RecordStore ---------------------------------------------------------------

RecordStore::RecordStore(Granularity granularity, double tolerance)
    : granularity_(granularity), tolerance_(tolerance) {
  if (!(tolerance >= 0.0)) throw std::invalid_argument("equality tolerance must be >= 0");
}

const BoundaryRecord* RecordStore::Find(std::string_view utterance_id) const {
  const auto it = records_.find(utterance_id);
  return it == records_.end() ? nullptr : &it->second;
}

const StatsSnapshot* RecordStore::Snapshot(std::string_view key) const {
  const auto it = snapshots_.find(key);
  return it == snapshots_.end() ? nullptr : &it->second;
}

void RecordStore::Put(BoundaryRecord record) {
  std::string id = record.utterance_id;
  records_.insert_or_assign(std::move(id), std::move(record));
}

void RecordStore::PutSnapshot(std::string key, StatsSnapshot snapshot) {
  snapshots_.insert_or_assign(std::move(key), snapshot);
}

void RecordStore::Apply(const UnitResult& unit) {
  if (unit.stats.unit != granularity_) {
    throw StoreError("unit '" + unit.key + "' reports " + std::string(ToString(unit.stats.unit)) +
                     " statistics to a " + std::string(ToString(granularity_)) + " store");
  }
  // Validate every member before touching the store.
  for (const auto& m : unit.members) {
    if (m.token_offset + m.triggers.size() > m.token_count) {
      throw StoreError("unit '" + unit.key + "' writes past the tokens of " + m.utterance_id);
    }
    for (int b : m.triggers) {
      if (b < 1 || b > m.frames) {
        throw StoreError("trigger " + std::to_string(b) + " outside 1.." + std::to_string(m.frames) +
                         " for " + m.utterance_id);
      }
    }
    if (const BoundaryRecord* r = Find(m.utterance_id);
        r != nullptr && (r->triggers.size() != m.token_count || r->frames != m.frames)) {
      throw StoreError("record for " + m.utterance_id + " disagrees with the dataset shape");
    }
  }
  for (const auto& m : unit.members) {
    auto it = records_.find(m.utterance_id);
    if (it == records_.end()) {
      BoundaryRecord fresh{m.utterance_id, m.frames, std::vector<int>(m.token_count, m.frames), {}};
      it = records_.emplace(m.utterance_id, std::move(fresh)).first;
    }
    BoundaryRecord& r = it->second;
    r.stats_key = granularity_ == Granularity::kToken ? m.utterance_id : unit.key;
    std::copy(m.triggers.begin(), m.triggers.end(), r.triggers.begin() + static_cast<std::ptrdiff_t>(m.token_offset));
  }
  snapshots_.insert_or_assign(unit.key, unit.stats);
}

void RecordStore::Validate() const {
  for (const auto& [id, r] : records_) {
    if (id != r.utterance_id) throw StoreError("record keyed " + id + " names " + r.utterance_id);
    for (int b : r.triggers) {
      if (b < 1 || b > r.frames) {
        throw StoreError("record " + id + " has trigger " + std::to_string(b) + " outside 1.." +
                         std::to_string(r.frames));
      }
    }
  }
  for (const auto& [key, s] : snapshots_) {
    if (s.accuracy < 0.0 || s.accuracy > 1.0 || s.coverage < 0.0 || s.coverage > 1.0) {
      throw StoreError("snapshot " + key + " out of [0, 1]");
    }
  }
  // Token-level stores may hold records whose tokens were not all visited yet
  // only through Apply(), which always writes the visited token's snapshot.
  if (granularity_ != Granularity::kToken) {
    for (const auto& [id, r] : records_) {
      if (Snapshot(r.stats_key) == nullptr) {
        throw StoreError("record " + id + " points at missing snapshot " + r.stats_key);
      }
    }
  }
}

std::string RecordStore::Serialize() const {
  std::ostringstream os;
  os << kMagic << ' ' << kVersion << '\n';
  os << "granularity " << ToString(granularity_) << '\n';
  os << "tolerance " << textio::FormatExact(tolerance_) << '\n';
  os << "frozen " << (frozen_ ? 1 : 0) << '\n';
  os << "records " << records_.size() << '\n';
  for (const auto& [id, r] : records_) {
    os << id << ' ' << r.frames << ' ' << r.triggers.size();
    for (int b : r.triggers) os << ' ' << b;
    os << ' ' << r.stats_key << '\n';
  }
  os << "snapshots " << snapshots_.size() << '\n';
  for (const auto& [key, s] : snapshots_) {
    os << key << ' ' << ToString(s.unit) << ' ' << textio::FormatExact(s.accuracy) << ' '
       << textio::FormatExact(s.coverage) << '\n';
  }
  return os.str();
}

RecordStore RecordStore::Parse(std::string_view text) {
  std::istringstream is{std::string(text)};
  auto fail = [](const std::string& what) -> StoreError {
    return StoreError("malformed record store: " + what);
  };
  std::string word;
  int version = 0;
  if (!(is >> word >> version) || word != kMagic) throw fail("missing header");
  if (version != kVersion) throw fail("unsupported version " + std::to_string(version));
  std::string gname, tol_text;
  int frozen = 0;
  if (!(is >> word >> gname) || word != "granularity") throw fail("missing granularity");
  if (!(is >> word >> tol_text) || word != "tolerance") throw fail("missing tolerance");
  if (!(is >> word >> frozen) || word != "frozen") throw fail("missing frozen flag");
  RecordStore store(ParseGranularity(gname), textio::ParseDouble(tol_text));
  store.frozen_ = frozen != 0;
  std::size_t n = 0;
  if (!(is >> word >> n) || word != "records") throw fail("missing record count");
  for (std::size_t i = 0; i < n; ++i) {
    BoundaryRecord r;
    std::size_t count = 0;
    if (!(is >> r.utterance_id >> r.frames >> count)) throw fail("truncated record " + std::to_string(i));
    r.triggers.resize(count);
    for (int& b : r.triggers) {
      if (!(is >> b)) throw fail("truncated triggers for " + r.utterance_id);
    }
    if (!(is >> r.stats_key)) throw fail("missing snapshot key for " + r.utterance_id);
    store.Put(std::move(r));
  }
  if (!(is >> word >> n) || word != "snapshots") throw fail("missing snapshot count");
  for (std::size_t i = 0; i < n; ++i) {
    std::string key, unit, acc, cov;
    if (!(is >> key >> unit >> acc >> cov)) throw fail("truncated snapshot " + std::to_string(i));
    store.PutSnapshot(key, StatsSnapshot{textio::ParseDouble(acc), textio::ParseDouble(cov),
                                         ParseGranularity(unit)});
  }
  store.Validate();
  return store;
}

void RecordStore::Save(const std::filesystem::path& path) const {
  textio::WriteFile(path, Serialize());
}

RecordStore RecordStore::Load(const std::filesystem::path& path) {
  return Parse(textio::ReadFile(path));
}

bool operator==(const RecordStore& a, const RecordStore& b) {
  if (a.granularity_ != b.granularity_ || a.tolerance_ != b.tolerance_ || a.frozen_ != b.frozen_ ||
      a.records_ != b.records_ || a.snapshots_.size() != b.snapshots_.size()) {
    return false;
  }
  for (auto ia = a.snapshots_.begin(), ib = b.snapshots_.begin(); ia != a.snapshots_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.accuracy != ib->second.accuracy ||
        ia->second.coverage != ib->second.coverage || ia->second.unit != ib->second.unit) {
      return false;
    }
  }
  return true;
}

// Statistics ----------------------------------------------------------------

double batch_accuracy(std::span<const std::vector<int>> predicted,
                      std::span<const std::vector<int>> reference) {
  if (predicted.size() != reference.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(reference.size()) + " references");
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t u = 0; u < reference.size(); ++u) {
    if (predicted[u].size() != reference[u].size()) {
      throw std::invalid_argument("accuracy: prediction and reference lengths differ");
    }
    for (std::size_t i = 0; i < reference[u].size(); ++i) correct += predicted[u][i] == reference[u][i];
    total += reference[u].size();
  }
  if (total == 0) throw UndefinedStat("accuracy over an empty unit");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double batch_coverage(std::span<const std::vector<int>> triggers, std::span<const int> lengths) {
  if (triggers.size() != lengths.size()) {
    throw std::invalid_argument("coverage: trigger lists and lengths differ in count");
  }
  double sum = 0.0;
  std::size_t total = 0;
  for (std::size_t u = 0; u < triggers.size(); ++u) {
    if (lengths[u] < 1) throw std::invalid_argument("coverage: utterance length < 1");
    for (int b : triggers[u]) {
      if (b > lengths[u]) throw std::invalid_argument("coverage: trigger beyond utterance length");
      sum += static_cast<double>(b) / static_cast<double>(lengths[u]);
      ++total;
    }
  }
  if (total == 0) throw UndefinedStat("coverage over an empty unit");
  return sum / static_cast<double>(total);
}

// Policy --------------------------------------------------------------------

Trend Classify(double before, double after, double tolerance) {
  const double d = after - before;
  if (d == 0.0 || std::abs(d) < tolerance) return Trend::kEqual;
  return d > 0.0 ? Trend::kUp : Trend::kDown;
}

bool update_decision(const StatsSnapshot& before, const StatsSnapshot& after, double tolerance) {
  switch (Classify(before.accuracy, after.accuracy, tolerance)) {
    case Trend::kUp: return true;
    case Trend::kDown: return false;
    case Trend::kEqual: return Classify(before.coverage, after.coverage, tolerance) == Trend::kDown;
  }
  return false;
}

std::optional<int> extract_trigger(std::span<const double> row) {
  if (row.empty()) throw std::invalid_argument("trigger extraction on an empty row");
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  if (row[best] <= 0.0) return std::nullopt;
  return static_cast<int>(best) + 1;
}

std::vector<std::optional<int>> extract_triggers(const attention::AlignmentMatrix& alpha) {
  std::vector<std::optional<int>> out;
  out.reserve(alpha.steps);
  for (std::size_t i = 0; i < alpha.steps; ++i) out.push_back(extract_trigger(alpha.row(i)));
  return out;
}

std::vector<int> mask_bounds(const BoundaryRecord& record, int delta) {
  if (delta < 0) throw std::invalid_argument("offset delta must be >= 0");
  std::vector<int> out;
  out.reserve(record.triggers.size());
  for (int b : record.triggers) out.push_back(std::min(b + delta, record.frames));
  return out;
}

bool maybe_update(RecordStore& store, const UnitResult& unit, Phase phase) {
  if (unit.stats.unit != store.granularity()) {
    throw StoreError("unit '" + unit.key + "' reports " + std::string(ToString(unit.stats.unit)) +
                     " statistics to a " + std::string(ToString(store.granularity())) + " store");
  }
  if (store.frozen()) return false;
  const StatsSnapshot* old = store.Snapshot(unit.key);
  bool update = old == nullptr;
  if (!update) {
    update = phase == Phase::kPretrain
                 ? Classify(old->accuracy, unit.stats.accuracy, store.tolerance()) == Trend::kUp
                 : update_decision(*old, unit.stats, store.tolerance());
  }
  if (update) store.Apply(unit);
  return update;
}

}  // namespace streamlat::srmlt
