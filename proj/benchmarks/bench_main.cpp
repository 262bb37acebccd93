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

#include <random>

#include <benchmark/benchmark.h>

#include "streamlat/attention.hpp"
#include "streamlat/model.hpp"
#include "streamlat/synth.hpp"

namespace {

using streamlat::diff::Tape;
using streamlat::diff::Tensor;
namespace attention = streamlat::attention;
namespace model = streamlat::model;

Tensor Uniform(std::size_t rows, std::size_t cols, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::Zeros({rows, cols});
  for (double& x : t.values) x = u(rng);
  return t;
}

void BM_AlignmentRow(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Tensor p = Uniform(1, t, 0.01, 0.99, 1);
  std::vector<double> prev(t, 1.0 / static_cast<double>(t));
  for (auto _ : state) {
    benchmark::DoNotOptimize(attention::expected_alignment_row(p.values, prev));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AlignmentRow)->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oN);

// L x T forward and backward.
void BM_AlignmentTape(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Tensor p = Uniform(t / 4, t, 0.01, 0.99, 2);
  for (auto _ : state) {
    Tape tape;
    const auto x = tape.variable(p);
    const auto alpha = attention::expected_alignment(x);
    tape.backward(streamlat::diff::sum(alpha));
    benchmark::DoNotOptimize(x.grad().data());
  }
}
BENCHMARK(BM_AlignmentTape)->RangeMultiplier(2)->Range(16, 256);

void BM_ChunkwiseBetaRow(benchmark::State& state) {
  const std::size_t t = 256;
  const int w = static_cast<int>(state.range(0));
  const Tensor a = Uniform(1, t, 0.0, 1.0, 3), u = Uniform(1, t, -2.0, 2.0, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(attention::chunkwise_beta_row(a.values, u.values, w));
  }
}
BENCHMARK(BM_ChunkwiseBetaRow)->Arg(1)->Arg(2)->Arg(8)->Arg(32)->Arg(256);

model::ModelConfig BenchModel(model::StreamingKind kind) {
  model::ModelConfig cfg;
  cfg.kind = kind;
  return cfg;
}

streamlat::synth::SyntheticUtterance BenchUtterance() {
  streamlat::synth::TaskSpec spec;
  spec.min_tokens = spec.max_tokens = 10;
  return streamlat::synth::generate(spec, 1).front();
}

// One utterance: encode, teacher-forced decode, loss, backward.
void BM_TrainStep(benchmark::State& state) {
  const auto cfg = BenchModel(static_cast<model::StreamingKind>(state.range(0)));
  const auto params = model::InitParams(cfg, 7);
  const auto utt = BenchUtterance();
  const auto targets = model::Targets(cfg, utt.tokens);
  attention::NoiseSource noise_src(9);
  for (auto _ : state) {
    Tape tape;
    const auto p = model::Bind(tape, params, true);
    const auto enc = model::encode(cfg, p, tape, utt.frames);
    const auto out = model::decode_train(cfg, p, enc, utt.tokens, std::nullopt,
                                         attention::NoiseOptions{true, cfg.noise_std, &noise_src});
    const auto l = model::loss(out.logits, targets, cfg.label_smoothing);
    tape.backward(l);
    benchmark::DoNotOptimize(l.item());
  }
  state.SetLabel(std::string(model::ToString(cfg.kind)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(model::StreamingKind::kCa))
    ->Arg(static_cast<int>(model::StreamingKind::kMocha))
    ->Arg(static_cast<int>(model::StreamingKind::kGlobal))
    ->Unit(benchmark::kMillisecond);

void BM_DecodeInfer(benchmark::State& state) {
  const auto cfg = BenchModel(static_cast<model::StreamingKind>(state.range(0)));
  const auto params = model::InitParams(cfg, 7);
  const auto utt = BenchUtterance();
  for (auto _ : state) {
    benchmark::DoNotOptimize(model::decode_infer(cfg, params, utt.frames, 16));
  }
  state.SetLabel(std::string(model::ToString(cfg.kind)));
}
BENCHMARK(BM_DecodeInfer)
    ->Arg(static_cast<int>(model::StreamingKind::kCa))
    ->Arg(static_cast<int>(model::StreamingKind::kMocha))
    ->Arg(static_cast<int>(model::StreamingKind::kGlobal))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
