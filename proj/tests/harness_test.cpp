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

#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "streamlat/harness.hpp"

namespace streamlat::harness {
namespace {

RunConfig TinyRun() {
  RunConfig cfg;
  cfg.task.vocab_size = 5;
  cfg.task.feature_dim = 3;
  cfg.task.min_tokens = 2;
  cfg.task.max_tokens = 4;
  cfg.model.vocab_size = 5;
  cfg.model.feature_dim = 3;
  cfg.model.model_dim = 8;
  cfg.model.encoder_layers = 1;
  cfg.model.decoder_layers = 1;
  cfg.model.ffn_dim = 8;
  cfg.model.heads = 2;
  cfg.model.subsample = 2;
  cfg.data = {24, 6, 6};
  cfg.batch_size = 8;
  cfg.pretrain_epochs = 2;
  cfg.finetune_epochs = 2;
  return cfg;
}

TEST(Config, DefaultsRoundTripThroughJson) {
  const RunConfig cfg;
  const auto text = ConfigToJson(cfg);
  const auto back = ParseConfig(text);
  EXPECT_EQ(ConfigToJson(back), text);
  EXPECT_EQ(back.pretrain_epochs, 30);
  EXPECT_EQ(back.finetune_epochs, 20);
  EXPECT_EQ(back.delta, 2);
  EXPECT_EQ(back.task.vocab_size, 20);
  EXPECT_EQ(back.data.train, 2000u);
}

TEST(Config, OverridesApplyToLeafKeys) {
  const std::vector<std::string> ov{"--train.delta=4", "--model.kind=mocha", "--task.noise_std=0.5",
                                    "--train.granularity=utterance"};
  const auto cfg = ParseConfig("{}", ov);
  EXPECT_EQ(cfg.delta, 4);
  EXPECT_EQ(cfg.model.kind, model::StreamingKind::kMocha);
  EXPECT_EQ(cfg.task.noise_std, 0.5);
  EXPECT_EQ(cfg.granularity, srmlt::Granularity::kUtterance);
}

TEST(Config, TaskDimensionsPropagateToModel) {
  const auto cfg = ParseConfig(R"({"task": {"vocab_size": 7, "feature_dim": 5}})");
  EXPECT_EQ(cfg.model.vocab_size, 7);
  EXPECT_EQ(cfg.model.feature_dim, 5);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(ParseConfig(R"({"model": {"widht": 3}})"), ConfigError);
  EXPECT_THROW(ParseConfig(R"({"extra": {}})"), ConfigError);
  EXPECT_THROW(ParseConfig("{not json"), ConfigError);
  const std::vector<std::string> bad{"--train.delta=-1"};
  EXPECT_THROW(ParseConfig("{}", bad), ConfigError);
  const std::vector<std::string> unknown{"--train.nope=1"};
  EXPECT_THROW(ParseConfig("{}", unknown), ConfigError);
  const std::vector<std::string> malformed{"train.delta"};
  EXPECT_THROW(ParseConfig("{}", malformed), ConfigError);
}

TEST(Corpus, SplitSizesAndDisjointIds) {
  const auto cfg = TinyRun();
  const auto c = MakeCorpus(cfg);
  EXPECT_EQ(c.train.size(), 24u);
  EXPECT_EQ(c.dev.size(), 6u);
  EXPECT_EQ(c.test.size(), 6u);
  std::set<std::string> ids;
  for (const auto* part : {&c.train, &c.dev, &c.test}) {
    for (const auto& u : *part) EXPECT_TRUE(ids.insert(u.id).second);
  }
}

TEST(Batches, CoverEveryUtteranceOnceAndAreDeterministic) {
  const auto c = MakeCorpus(TinyRun());
  const auto a = AssignBatches(c.train, 5, 3);
  EXPECT_EQ(a, AssignBatches(c.train, 5, 3));
  std::vector<int> seen(c.train.size(), 0);
  for (const auto& b : a) {
    EXPECT_LE(b.size(), 5u);
    for (auto i : b) ++seen[i];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Checkpoint, SerializationRoundTripsExactly) {
  auto cfg = TinyRun();
  const auto c = MakeCorpus(cfg);
  auto res = pretrain(cfg, c, InitialCheckpoint(cfg), srmlt::RecordStore(cfg.granularity, cfg.tolerance));
  const auto text = SerializeCheckpoint(res.checkpoint);
  const auto back = ParseCheckpoint(text);
  EXPECT_EQ(back.state.params, res.checkpoint.state.params);
  EXPECT_EQ(back.state.adam.m, res.checkpoint.state.adam.m);
  EXPECT_EQ(back.state.adam.v, res.checkpoint.state.adam.v);
  EXPECT_EQ(back.state.adam.step, res.checkpoint.state.adam.step);
  EXPECT_EQ(back.state.epoch, 2);
  EXPECT_EQ(SerializeCheckpoint(back), text);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto cfg = TinyRun();
  auto text = SerializeCheckpoint(InitialCheckpoint(cfg));
  EXPECT_THROW(ParseCheckpoint(text.substr(0, text.size() / 2)), CheckpointError);
  EXPECT_THROW(ParseCheckpoint("streamlat-checkpoint 99\n"), CheckpointError);
  EXPECT_THROW(LoadCheckpoint("/nonexistent/ckpt"), CheckpointError);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  auto cfg = TinyRun();
  cfg.pretrain_epochs = 3;
  const auto c = MakeCorpus(cfg);
  const auto full = pretrain(cfg, c, InitialCheckpoint(cfg), srmlt::RecordStore(cfg.granularity, cfg.tolerance));

  auto first_cfg = cfg;
  first_cfg.pretrain_epochs = 1;
  const auto part = pretrain(first_cfg, c, InitialCheckpoint(cfg), srmlt::RecordStore(cfg.granularity, cfg.tolerance));
  const auto reloaded = ParseCheckpoint(SerializeCheckpoint(part.checkpoint));
  const auto store = srmlt::RecordStore::Parse(part.store.Serialize());
  const auto rest = pretrain(cfg, c, reloaded, store);

  EXPECT_EQ(rest.checkpoint.state.params, full.checkpoint.state.params);
  EXPECT_EQ(rest.checkpoint.state.global_step, full.checkpoint.state.global_step);
  EXPECT_EQ(rest.store, full.store);
  ASSERT_EQ(rest.log.epochs.size(), 2u);
  EXPECT_EQ(rest.log.epochs.back().loss, full.log.epochs.back().loss);
}

TEST(Training, ZeroEpochsLeavesParametersUntouched) {
  auto cfg = TinyRun();
  cfg.pretrain_epochs = 0;
  const auto c = MakeCorpus(cfg);
  const auto start = InitialCheckpoint(cfg);
  const auto res = pretrain(cfg, c, start, srmlt::RecordStore(cfg.granularity, cfg.tolerance));
  EXPECT_EQ(res.checkpoint.state.params, start.state.params);
  EXPECT_TRUE(res.log.epochs.empty());
  EXPECT_TRUE(res.store.empty());
}

TEST(Training, PretrainRecordsEveryTrainUtterance) {
  auto cfg = TinyRun();
  cfg.pretrain_epochs = 1;
  const auto c = MakeCorpus(cfg);
  const auto res = pretrain(cfg, c, InitialCheckpoint(cfg), srmlt::RecordStore(cfg.granularity, cfg.tolerance));
  EXPECT_EQ(res.store.size(), c.train.size());
  for (const auto& u : c.train) {
    const auto* rec = res.store.Find(u.id);
    ASSERT_NE(rec, nullptr);
    EXPECT_EQ(rec->triggers.size(), u.tokens.size());
  }
  ASSERT_EQ(res.log.epochs.size(), 1u);
  EXPECT_GT(res.log.epochs[0].records_updated, 0u);
  EXPECT_TRUE(res.log.epochs[0].dev_token_error_rate.has_value());
}

TEST(Training, FixedMltUsesFrozenGroundTruth) {
  auto cfg = TinyRun();
  cfg.mode = Mode::kFixedMlt;
  const auto c = MakeCorpus(cfg);
  const auto gt = GroundTruthStore(cfg, c.train);
  EXPECT_TRUE(gt.frozen());
  for (const auto& u : c.train) {
    const auto* rec = gt.Find(u.id);
    ASSERT_NE(rec, nullptr);
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      EXPECT_EQ(rec->triggers[i], (u.boundaries[i] + cfg.model.subsample - 1) / cfg.model.subsample);
    }
  }
  const auto res = run_fixed_mlt(cfg, c, InitialCheckpoint(cfg));
  EXPECT_EQ(res.store, gt);
  for (const auto& e : res.log.epochs) EXPECT_EQ(e.records_updated, 0u);
}

TEST(Training, FinetuneChecksStoreAgainstTrainSplit) {
  auto cfg = TinyRun();
  cfg.finetune_epochs = 1;
  const auto c = MakeCorpus(cfg);
  // Missing records are allowed and train unmasked.
  EXPECT_NO_THROW(finetune(cfg, c, InitialCheckpoint(cfg), srmlt::RecordStore(cfg.granularity, cfg.tolerance)));
  srmlt::RecordStore foreign(cfg.granularity, cfg.tolerance);
  foreign.Put({c.dev.front().id, c.dev.front().num_frames(), std::vector<int>(c.dev.front().tokens.size(), 1), "k"});
  EXPECT_THROW(finetune(cfg, c, InitialCheckpoint(cfg), foreign), srmlt::StoreError);
}

TEST(Training, LogCsvHasOneRowPerEpoch) {
  auto cfg = TinyRun();
  const auto c = MakeCorpus(cfg);
  const auto res = pretrain(cfg, c, InitialCheckpoint(cfg), srmlt::RecordStore(cfg.granularity, cfg.tolerance));
  const auto csv = res.log.Csv();
  EXPECT_EQ(csv.rfind(TrainLog::CsvHeader(), 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Sweep, EmitsOneRowPerValueAndMode) {
  auto cfg = TinyRun();
  cfg.finetune_epochs = 1;
  const auto c = MakeCorpus(cfg);
  const auto pre = pretrain(cfg, c, InitialCheckpoint(cfg), srmlt::RecordStore(cfg.granularity, cfg.tolerance));
  const std::vector<std::string> values{"0", "2", "4"};
  const std::vector<Mode> modes{Mode::kSrmlt, Mode::kFixedMlt};
  const auto rows = sweep(cfg, c, pre.checkpoint, pre.store, SweepAxis::kDelta, values, modes);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    ASSERT_TRUE(r.summary.has_value());
    EXPECT_EQ(r.summary->utterances, c.test.size());
  }
  const auto csv = SweepCsv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(csv, SweepCsv(sweep(cfg, c, pre.checkpoint, pre.store, SweepAxis::kDelta, values, modes)));
  const std::vector<std::string> bad{"x"};
  const auto err = sweep(cfg, c, pre.checkpoint, pre.store, SweepAxis::kDelta, bad, modes);
  ASSERT_EQ(err.size(), 2u);
  EXPECT_FALSE(err[0].error.empty());
}

}  // namespace
}  // namespace streamlat::harness
