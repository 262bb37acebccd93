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

#ifndef STREAMLAT_SYNTH_HPP_
#define STREAMLAT_SYNTH_HPP_

// Synthetic monotonic transduction task. Each token emits a run of frames
// around its class mean; trailing silence frames sit around the zero vector.
// A token's ground-truth boundary is the 1-based index of its last frame.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "streamlat/diff.hpp"

namespace streamlat::synth {

class TaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Upper limit on generated class means.
inline constexpr int kMaxClasses = 4096;

struct TaskSpec {
  int vocab_size = 20;
  int feature_dim = 8;
  int min_frames_per_token = 2;
  int max_frames_per_token = 6;
  int min_silence = 0;
  int max_silence = 4;
  int min_tokens = 5;
  int max_tokens = 15;
  double noise_std = 0.3;
  /// Consecutive identical tokens would merge into one unbroken run of frames.
  bool allow_repeats = false;
  /// Optional explicit means, one row per class; generated from `seed` when empty.
  std::vector<std::vector<double>> class_means;
  std::uint64_t seed = 1;

  void Validate() const;
};

struct SyntheticUtterance {
  std::string id;
  diff::Tensor frames;  // T x feature_dim
  std::vector<int> tokens;
  std::vector<int> boundaries;  // 1-based end frame per token

  int num_frames() const { return static_cast<int>(frames.rows()); }
};

using Dataset = std::vector<SyntheticUtterance>;

/// Class means in effect for a spec (explicit or generated).
std::vector<std::vector<double>> ClassMeans(const TaskSpec& spec);

std::string UtteranceId(std::size_t index);

/// Deterministic under spec.seed; utterance k depends only on (seed, k).
Dataset generate(const TaskSpec& spec, std::size_t count, std::size_t first_index = 0);

struct Splits {
  Dataset train, dev, test;
};

/// Orders utterances by a hash of their id and cuts by `ratios`.
Splits split(const Dataset& data, std::array<double, 3> ratios);

std::string SerializeDataset(const Dataset& data);
Dataset ParseDataset(std::string_view text);
void SaveDataset(const std::filesystem::path& path, const Dataset& data);
Dataset LoadDataset(const std::filesystem::path& path);

}  // namespace streamlat::synth

#endif  // STREAMLAT_SYNTH_HPP_
