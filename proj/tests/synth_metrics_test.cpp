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

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "streamlat/oracle.hpp"
#include "streamlat/metrics.hpp"
#include "streamlat/synth.hpp"

namespace streamlat {
namespace {

using metrics::LatencyInput;

TEST(Synth, NoiselessFixedLengthTokens) {
  synth::TaskSpec spec;
  spec.noise_std = 0.0;
  spec.min_frames_per_token = spec.max_frames_per_token = 3;
  spec.min_silence = spec.max_silence = 0;
  const auto data = synth::generate(spec, 5);
  const auto means = synth::ClassMeans(spec);
  for (const auto& u : data) {
    for (std::size_t i = 0; i < u.boundaries.size(); ++i) EXPECT_EQ(u.boundaries[i], static_cast<int>(3 * (i + 1)));
    for (std::size_t r = 0; r < u.frames.rows(); ++r) {
      const auto& mean = means[static_cast<std::size_t>(u.tokens[r / 3])];
      for (std::size_t c = 0; c < u.frames.cols(); ++c) EXPECT_EQ(u.frames.at(r, c), mean[c]);
    }
  }
}

TEST(Synth, SameSeedSameData) {
  synth::TaskSpec spec;
  const auto a = synth::generate(spec, 20), b = synth::generate(spec, 20);
  EXPECT_EQ(synth::SerializeDataset(a), synth::SerializeDataset(b));
  spec.seed = 2;
  EXPECT_NE(synth::SerializeDataset(a), synth::SerializeDataset(synth::generate(spec, 20)));
  // Utterance k does not depend on how many come before it in the call.
  const auto tail = synth::generate(synth::TaskSpec{}, 5, 15);
  EXPECT_EQ(synth::SerializeDataset(tail), synth::SerializeDataset({a.begin() + 15, a.end()}));
}

TEST(Synth, InvariantsHold) {
  synth::TaskSpec spec;
  for (const auto& u : synth::generate(spec, 300)) {
    ASSERT_FALSE(u.tokens.empty());
    ASSERT_EQ(u.tokens.size(), u.boundaries.size());
    int prev = 0;
    for (std::size_t i = 0; i < u.boundaries.size(); ++i) {
      const int len = u.boundaries[i] - prev;
      EXPECT_GE(len, spec.min_frames_per_token);
      EXPECT_LE(len, spec.max_frames_per_token);
      if (i > 0) EXPECT_NE(u.tokens[i], u.tokens[i - 1]);
      prev = u.boundaries[i];
    }
    EXPECT_LE(u.boundaries.back(), u.num_frames());
    EXPECT_LE(u.num_frames() - u.boundaries.back(), spec.max_silence);
  }
}

TEST(Synth, TokenLengthsAreUniform) {
  // 10k token durations over 2..6: each count within 3 sigma of n/5.
  synth::TaskSpec spec;
  std::vector<int> counts(7, 0);
  int total = 0;
  for (const auto& u : synth::generate(spec, 1100)) {
    int prev = 0;
    for (int b : u.boundaries) {
      ++counts[static_cast<std::size_t>(b - prev)];
      prev = b;
      ++total;
    }
  }
  ASSERT_GE(total, 10000);
  const double p = 0.2, mean = p * total, sigma = std::sqrt(total * p * (1 - p));
  for (int len = 2; len <= 6; ++len) EXPECT_LT(std::fabs(counts[static_cast<std::size_t>(len)] - mean), 3 * sigma) << len;
}

TEST(Synth, NearestMeanIsPerfectOnNoiselessFrames) {
  synth::TaskSpec spec;
  spec.noise_std = 0.0;
  const auto means = synth::ClassMeans(spec);
  for (const auto& u : synth::generate(spec, 50)) {
    int prev = 0;
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      for (int r = prev; r < u.boundaries[i]; ++r) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t k = 0; k < means.size(); ++k) {
          double d = 0.0;
          for (std::size_t c = 0; c < means[k].size(); ++c) {
            d += std::pow(u.frames.at(static_cast<std::size_t>(r), c) - means[k][c], 2);
          }
          if (d < best_d) best_d = d, best = k;
        }
        EXPECT_EQ(static_cast<int>(best), u.tokens[i]);
      }
      prev = u.boundaries[i];
    }
  }
}

TEST(Synth, RejectsBadSpecs) {
  synth::TaskSpec spec;
  spec.vocab_size = synth::kMaxClasses + 1;
  EXPECT_THROW(synth::generate(spec, 1), synth::TaskError);
  spec = {};
  spec.min_frames_per_token = 0;
  EXPECT_THROW(synth::generate(spec, 1), synth::TaskError);
  spec = {};
  spec.noise_std = -1.0;
  EXPECT_THROW(synth::generate(spec, 1), synth::TaskError);
  EXPECT_THROW(synth::generate(synth::TaskSpec{}, 0), synth::TaskError);
}

TEST(Split, SizesDisjointAndStable) {
  const auto data = synth::generate(synth::TaskSpec{}, 100);
  const auto s = synth::split(data, {0.8, 0.1, 0.1});
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.dev.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.dev, &s.test}) {
    for (const auto& u : *part) EXPECT_TRUE(ids.insert(u.id).second) << u.id;
  }
  const auto again = synth::split(data, {0.8, 0.1, 0.1});
  EXPECT_EQ(synth::SerializeDataset(again.dev), synth::SerializeDataset(s.dev));
  EXPECT_THROW(synth::split(data, {0.5, 0.5, 0.1}), synth::TaskError);
  EXPECT_THROW(synth::split(data, {1.0, 0.0, 0.0}), synth::TaskError);
}

TEST(Dataset, FileRoundTrip) {
  const auto data = synth::generate(synth::TaskSpec{}, 10);
  const auto path = std::filesystem::temp_directory_path() / "streamlat-dataset-test.txt";
  synth::SaveDataset(path, data);
  const auto back = synth::LoadDataset(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].id, data[i].id);
    EXPECT_EQ(back[i].tokens, data[i].tokens);
    EXPECT_EQ(back[i].boundaries, data[i].boundaries);
    EXPECT_EQ(back[i].frames.values, data[i].frames.values);
  }
}

TEST(Latency, HandExamples) {
  {
    const std::vector<LatencyInput> in{{{4, 8}, {4, 8}}};
    EXPECT_EQ(metrics::corpus_latency(in).delta_corpus, 0.0);
  }
  {
    const std::vector<LatencyInput> in{{{5, 9}, {4, 8}}};
    EXPECT_NEAR(metrics::corpus_latency(in).delta_corpus, 1.0, 1e-12);
  }
  {
    // Token-pooled: (2 + 0 + 0 + 0) / 4, not the utterance mean (2 + 0) / 2.
    const std::vector<LatencyInput> in{{{7}, {5}}, {{3, 6, 9}, {3, 6, 9}}};
    const auto r = metrics::corpus_latency(in);
    EXPECT_NEAR(r.delta_corpus, 0.5, 1e-12);
    EXPECT_EQ(r.token_count, 4u);
    EXPECT_EQ(r.utterance_offsets, (std::vector<double>{2.0, 0.0}));
  }
  {
    const std::vector<LatencyInput> early{{{2, 5}, {4, 8}}};
    EXPECT_NEAR(metrics::corpus_latency(early).delta_corpus, -2.5, 1e-12);
  }
  EXPECT_THROW(metrics::corpus_latency(std::vector<LatencyInput>{{{}, {}}}), metrics::EmptyCorpus);
  EXPECT_THROW(metrics::corpus_latency(std::vector<LatencyInput>{{{1}, {}}}), std::invalid_argument);
}

TEST(Latency, TranslationEquivariantAndMatchesPooledOracle) {
  std::mt19937_64 rng(100);
  std::uniform_int_distribution<int> len(1, 12), frame(1, 400), shift(-50, 50);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LatencyInput> in(1 + trial % 5);
    std::vector<std::vector<int>> trig, truth;
    for (auto& u : in) {
      const int n = len(rng);
      for (int i = 0; i < n; ++i) {
        u.triggers.push_back(frame(rng));
        u.boundaries.push_back(frame(rng));
      }
      trig.push_back(u.triggers);
      truth.push_back(u.boundaries);
    }
    const double base = metrics::corpus_latency(in).delta_corpus;
    EXPECT_NEAR(base, oracle::PooledOffset(trig, truth), 1e-12);
    const int s = shift(rng);
    for (auto& u : in) {
      for (int& t : u.triggers) t += s;
    }
    EXPECT_NEAR(metrics::corpus_latency(in).delta_corpus, base + s, 1e-12);
  }
}

TEST(Latency, PairingUsesMatchesAndSubstitutions) {
  // Hypothesis drops token 2: pairs are (0,0), (1,2) after alignment.
  const std::vector<int> hyp{1, 3}, hyp_trig{4, 10}, ref{1, 2, 3}, ref_b{3, 6, 9};
  const auto pairs = metrics::pair_for_latency(hyp, hyp_trig, ref, ref_b);
  EXPECT_EQ(pairs.triggers, (std::vector<int>{4, 10}));
  EXPECT_EQ(pairs.boundaries, (std::vector<int>{3, 9}));
  // Equal counts pair positionally, substitutions included.
  const std::vector<int> sub{1, 7, 3}, sub_trig{3, 7, 9};
  const auto same = metrics::pair_for_latency(sub, sub_trig, ref, ref_b);
  EXPECT_EQ(same.boundaries, ref_b);
}

TEST(ErrorRate, Examples) {
  const std::vector<std::vector<int>> ref{{1, 2, 3}};
  EXPECT_EQ(metrics::token_error_rate(ref, ref), 0.0);
  EXPECT_NEAR(metrics::token_error_rate(std::vector<std::vector<int>>{{1, 9, 3}}, ref), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(metrics::token_error_rate(std::vector<std::vector<int>>{{}}, std::vector<std::vector<int>>{{1, 2, 3, 4}}),
            1.0);
  EXPECT_THROW(metrics::token_error_rate(std::vector<std::vector<int>>{{}}, std::vector<std::vector<int>>{{}}),
               metrics::EmptyCorpus);
}

TEST(ErrorRate, LevenshteinMatchesOracle) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(0, 9), tok(0, 3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (int& x : a) x = tok(rng);
    for (int& x : b) x = tok(rng);
    const auto al = metrics::levenshtein_align(a, b);
    ASSERT_EQ(static_cast<int>(al.distance), oracle::EditDistance(a, b));
    std::size_t subs = 0;
    for (std::size_t k = 0; k < al.paired.size(); ++k) {
      if (k > 0) {
        ASSERT_LT(al.paired[k - 1].first, al.paired[k].first);
        ASSERT_LT(al.paired[k - 1].second, al.paired[k].second);
      }
      subs += a[al.paired[k].first] != b[al.paired[k].second];
    }
    // Edits = substitutions + unpaired tokens on either side.
    ASSERT_EQ(al.distance, subs + (a.size() - al.paired.size()) + (b.size() - al.paired.size()));
  }
}

TEST(Report, KeyValueAndCsv) {
  metrics::EvalSummary s;
  s.label = "dev";
  s.token_error_rate = 0.25;
  s.latency.delta_corpus = -1.5;
  s.latency.token_count = 8;
  s.utterances = 2;
  s.reference_tokens = 8;
  const auto report = metrics::FormatReport(s);
  EXPECT_NE(report.find("token_error_rate=0.250000\n"), std::string::npos);
  EXPECT_NE(report.find("delta_corpus=-1.500000\n"), std::string::npos);
  EXPECT_EQ(metrics::ResultsCsvRow(s), "dev,2,8,0.250000,-1.500000,8");
  EXPECT_EQ(metrics::ResultsCsvHeader(), "label,utterances,reference_tokens,token_error_rate,delta_corpus,latency_tokens");
}

}  // namespace
}  // namespace streamlat
