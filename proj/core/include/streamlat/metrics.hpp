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

#ifndef STREAMLAT_METRICS_HPP_
#define STREAMLAT_METRICS_HPP_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace streamlat::metrics {

class EmptyCorpus : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Token-paired triggers and ground-truth boundaries of one utterance, in
/// original frame units.
struct LatencyInput {
  std::vector<int> triggers;
  std::vector<int> boundaries;
};

struct LatencyReport {
  /// Token-pooled mean of (trigger - boundary).
  double delta_corpus = 0.0;
  std::vector<double> utterance_offsets;  // mean signed offset per utterance (0 if no tokens)
  std::vector<std::size_t> utterance_tokens;
  std::size_t token_count = 0;
};

LatencyReport corpus_latency(std::span<const LatencyInput> utterances);

struct EditAlignment {
  std::size_t distance = 0;
  /// (hypothesis index, reference index) for every match or substitution.
  std::vector<std::pair<std::size_t, std::size_t>> paired;
};

EditAlignment levenshtein_align(std::span<const int> hypothesis, std::span<const int> reference);

/// Keeps the trigger/boundary pairs of matched or substituted tokens.
LatencyInput pair_for_latency(std::span<const int> hyp_tokens, std::span<const int> hyp_triggers,
                              std::span<const int> ref_tokens, std::span<const int> ref_boundaries);

/// Summed edit distance over total reference tokens.
double token_error_rate(std::span<const std::vector<int>> hypotheses,
                        std::span<const std::vector<int>> references);

struct EvalSummary {
  std::string label;
  double token_error_rate = 0.0;
  LatencyReport latency;
  std::size_t utterances = 0;
  std::size_t reference_tokens = 0;
};

/// key=value block, one pair per line.
std::string FormatReport(const EvalSummary& s);
std::string ResultsCsvHeader();
std::string ResultsCsvRow(const EvalSummary& s);

}  // namespace streamlat::metrics

#endif  // STREAMLAT_METRICS_HPP_
