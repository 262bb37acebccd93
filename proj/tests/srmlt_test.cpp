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

#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "streamlat/oracle.hpp"
#include "streamlat/srmlt.hpp"

namespace streamlat::srmlt {
namespace {

StatsSnapshot Snap(double acc, double cov, Granularity g = Granularity::kMinibatch) { return {acc, cov, g}; }

UnitResult Unit(std::string key, std::vector<MemberTriggers> members, double acc, double cov,
                Granularity g = Granularity::kMinibatch) {
  return {std::move(key), std::move(members), Snap(acc, cov, g)};
}

MemberTriggers Whole(std::string id, int frames, std::vector<int> triggers) {
  const std::size_t n = triggers.size();
  return {std::move(id), frames, n, 0, std::move(triggers)};
}

TEST(Policy, NineCellTable) {
  const double tol = 0.001;
  const double base = 0.5;
  const double up = base + 0.01, down = base - 0.01;
  struct Cell {
    double acc, cov;
    bool expect;
  };
  const Cell cells[] = {
      {up, up, true},     {up, base, true},     {up, down, true},
      {base, up, false},  {base, base, false},  {base, down, true},
      {down, up, false},  {down, base, false},  {down, down, false},
  };
  for (const auto& c : cells) {
    EXPECT_EQ(update_decision(Snap(base, base), Snap(c.acc, c.cov), tol), c.expect)
        << "acc " << c.acc << " cov " << c.cov;
  }
}

TEST(Policy, ToleranceBandIsEqual) {
  EXPECT_EQ(Classify(0.5, 0.5009, 0.001), Trend::kEqual);
  EXPECT_EQ(Classify(0.5, 0.4991, 0.001), Trend::kEqual);
  EXPECT_EQ(Classify(0.5, 0.502, 0.001), Trend::kUp);
  EXPECT_EQ(Classify(0.5, 0.498, 0.001), Trend::kDown);
  EXPECT_EQ(Classify(0.5, 0.5, 0.0), Trend::kEqual);
  // Accuracy change inside the band, coverage down by more than the band.
  EXPECT_TRUE(update_decision(Snap(0.9, 0.5), Snap(0.9005, 0.49), 0.001));
}

TEST(Policy, RandomCasesMatchStraightLineReference) {
  std::mt19937_64 rng(1000);
  std::uniform_real_distribution<double> u(0.0, 1.0), small(-0.003, 0.003);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a0 = u(rng), c0 = u(rng);
    // Mix large and near-tolerance changes.
    const double a1 = trial % 2 ? a0 + small(rng) : u(rng);
    const double c1 = trial % 3 ? c0 + small(rng) : u(rng);
    ASSERT_EQ(update_decision(Snap(a0, c0), Snap(a1, c1), 0.001), oracle::TableUpdate(a0, a1, c0, c1, 0.001));
  }
}

TEST(Stats, PooledAccuracyAndCoverage) {
  const std::vector<std::vector<int>> pred{{1, 2, 3}, {4}};
  const std::vector<std::vector<int>> ref{{1, 0, 3}, {5}};
  EXPECT_DOUBLE_EQ(batch_accuracy(pred, ref), 0.5);  // 2 of 4, not mean of (2/3, 0)
  const std::vector<std::vector<int>> trig{{2, 4}, {5}};
  const int lengths[] = {4, 10};
  EXPECT_DOUBLE_EQ(batch_coverage(trig, lengths), (0.5 + 1.0 + 0.5) / 3.0);
  const std::vector<std::vector<int>> empty;
  EXPECT_THROW(batch_accuracy(empty, empty), UndefinedStat);
  EXPECT_THROW(batch_coverage(empty, {}), UndefinedStat);
}

TEST(Triggers, ArgmaxWithEarliestTie) {
  EXPECT_EQ(extract_trigger(std::vector<double>{0.1, 0.4, 0.4, 0.1}), 2);
  EXPECT_EQ(extract_trigger(std::vector<double>{0.9, 0.05}), 1);
  EXPECT_FALSE(extract_trigger(std::vector<double>{0.0, 0.0}).has_value());
  attention::AlignmentMatrix m{2, 3, {0.0, 0.2, 0.1, 0.0, 0.0, 0.0}};
  const auto t = extract_triggers(m);
  EXPECT_EQ(t[0], 2);
  EXPECT_FALSE(t[1].has_value());
}

TEST(Masks, BoundsClipToLength) {
  const BoundaryRecord r{"u", 10, {3, 7, 9}, "u"};
  EXPECT_EQ(mask_bounds(r, 0), (std::vector<int>{3, 7, 9}));
  EXPECT_EQ(mask_bounds(r, 2), (std::vector<int>{5, 9, 10}));
  EXPECT_EQ(mask_bounds(r, 50), (std::vector<int>{10, 10, 10}));
  EXPECT_THROW(mask_bounds(r, -1), std::invalid_argument);
}

TEST(Store, FirstVisitAlwaysStores) {
  RecordStore store;
  EXPECT_TRUE(maybe_update(store, Unit("b0", {Whole("a", 8, {2, 5})}, 0.1, 0.9), Phase::kFinetune));
  ASSERT_NE(store.Find("a"), nullptr);
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{2, 5}));
  EXPECT_EQ(store.Find("a")->stats_key, "b0");
}

TEST(Store, PretrainRequiresHigherAccuracy) {
  RecordStore store;
  maybe_update(store, Unit("b0", {Whole("a", 8, {2, 5})}, 0.5, 0.5), Phase::kPretrain);
  EXPECT_FALSE(maybe_update(store, Unit("b0", {Whole("a", 8, {1, 2})}, 0.5, 0.1), Phase::kPretrain));
  EXPECT_FALSE(maybe_update(store, Unit("b0", {Whole("a", 8, {1, 2})}, 0.4, 0.1), Phase::kPretrain));
  EXPECT_TRUE(maybe_update(store, Unit("b0", {Whole("a", 8, {3, 6})}, 0.6, 0.7), Phase::kPretrain));
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{3, 6}));
  EXPECT_DOUBLE_EQ(store.Snapshot("b0")->accuracy, 0.6);
}

TEST(Store, FinetuneFollowsTable) {
  RecordStore store;
  maybe_update(store, Unit("b0", {Whole("a", 8, {4, 6})}, 0.8, 0.6), Phase::kPretrain);
  // Same accuracy, lower coverage: update.
  EXPECT_TRUE(maybe_update(store, Unit("b0", {Whole("a", 8, {3, 5})}, 0.8, 0.5), Phase::kFinetune));
  // Same accuracy, higher coverage: keep.
  EXPECT_FALSE(maybe_update(store, Unit("b0", {Whole("a", 8, {4, 7})}, 0.8, 0.7), Phase::kFinetune));
  // Lower accuracy: keep even with lower coverage.
  EXPECT_FALSE(maybe_update(store, Unit("b0", {Whole("a", 8, {1, 2})}, 0.7, 0.1), Phase::kFinetune));
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{3, 5}));
}

TEST(Store, MinibatchUnitUpdatesAllMembersOrNone) {
  RecordStore store(Granularity::kMinibatch);
  maybe_update(store, Unit("b0", {Whole("a", 8, {4}), Whole("b", 6, {5})}, 0.5, 0.5), Phase::kPretrain);
  EXPECT_FALSE(maybe_update(store, Unit("b0", {Whole("a", 8, {1}), Whole("b", 6, {1})}, 0.4, 0.2), Phase::kFinetune));
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{4}));
  EXPECT_EQ(store.Find("b")->triggers, (std::vector<int>{5}));
  // A bad member rejects the whole unit before anything is written.
  EXPECT_THROW(store.Apply(Unit("b0", {Whole("a", 8, {2}), Whole("b", 6, {9})}, 0.9, 0.1)), StoreError);
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{4}));
}

TEST(Store, TokenUnitsUpdateIndependently) {
  RecordStore store(Granularity::kToken);
  auto token = [](std::size_t i, int b, double acc, double cov) {
    return Unit(TokenUnitKey("a", i), {MemberTriggers{"a", 10, 2, i, {b}}}, acc, cov, Granularity::kToken);
  };
  maybe_update(store, token(0, 4, 1.0, 0.4), Phase::kPretrain);
  maybe_update(store, token(1, 8, 1.0, 0.8), Phase::kPretrain);
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{4, 8}));
  EXPECT_TRUE(maybe_update(store, token(1, 6, 1.0, 0.6), Phase::kFinetune));
  EXPECT_FALSE(maybe_update(store, token(0, 2, 0.0, 0.2), Phase::kFinetune));
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{4, 6}));
  EXPECT_EQ(UnitKeysOf(*store.Find("a"), Granularity::kToken),
            (std::vector<std::string>{"a#0", "a#1"}));
}

TEST(Store, NewRecordDefaultsToVacuousTriggers) {
  RecordStore store(Granularity::kToken);
  maybe_update(store, Unit(TokenUnitKey("a", 1), {MemberTriggers{"a", 10, 3, 1, {4}}}, 1.0, 0.4, Granularity::kToken),
               Phase::kPretrain);
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{10, 4, 10}));
}

TEST(Store, GranularityMismatchAndFrozen) {
  RecordStore store(Granularity::kUtterance);
  EXPECT_THROW(maybe_update(store, Unit("b0", {Whole("a", 8, {4})}, 0.5, 0.5), Phase::kPretrain), StoreError);
  store.Put({"a", 8, {4}, "a"});
  store.Freeze();
  EXPECT_FALSE(maybe_update(store, Unit("a", {Whole("a", 8, {1})}, 1.0, 0.1, Granularity::kUtterance),
                            Phase::kFinetune));
  EXPECT_EQ(store.Find("a")->triggers, (std::vector<int>{4}));
}

TEST(Store, ShapeMismatchIsRejected) {
  RecordStore store;
  maybe_update(store, Unit("b0", {Whole("a", 8, {4, 5})}, 0.5, 0.5), Phase::kPretrain);
  EXPECT_THROW(maybe_update(store, Unit("b0", {Whole("a", 8, {4})}, 0.9, 0.5), Phase::kPretrain), StoreError);
}

TEST(Store, AccuracyNeverDecreasesUnderPretrain) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RecordStore store;
  double best = -1.0;
  for (int visit = 0; visit < 200; ++visit) {
    const double acc = u(rng);
    maybe_update(store, Unit("b0", {Whole("a", 8, {1 + visit % 8})}, acc, u(rng)), Phase::kPretrain);
    const double recorded = store.Snapshot("b0")->accuracy;
    EXPECT_GE(recorded, best);
    best = recorded;
  }
}

TEST(Store, SerializationRoundTrip) {
  RecordStore store(Granularity::kUtterance, 0.0025);
  maybe_update(store, Unit("a", {Whole("a", 8, {2, 5})}, 1.0 / 3.0, 0.1 + 0.2, Granularity::kUtterance),
               Phase::kPretrain);
  maybe_update(store, Unit("b", {Whole("b", 4, {4})}, 0.5, 1.0, Granularity::kUtterance), Phase::kPretrain);
  const auto text = store.Serialize();
  const auto back = RecordStore::Parse(text);
  EXPECT_EQ(back, store);
  EXPECT_EQ(back.Serialize(), text);
  const auto path = std::filesystem::temp_directory_path() / "streamlat-records-test.txt";
  store.Save(path);
  EXPECT_EQ(RecordStore::Load(path), store);
  std::filesystem::remove(path);
  EXPECT_THROW(RecordStore::Parse("nonsense"), std::exception);
}

TEST(Names, GranularityParsing) {
  EXPECT_EQ(ParseGranularity("token"), Granularity::kToken);
  EXPECT_EQ(ParseGranularity("utterance"), Granularity::kUtterance);
  EXPECT_EQ(ParseGranularity("minibatch"), Granularity::kMinibatch);
  EXPECT_THROW(ParseGranularity("epoch"), std::invalid_argument);
  EXPECT_EQ(ToString(Granularity::kToken), "token");
}

}  // namespace
}  // namespace streamlat::srmlt
