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

#include "streamlat/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "streamlat/textio.hpp"

namespace streamlat::metrics {

LatencyReport corpus_latency(std::span<const LatencyInput> utterances) {
  LatencyReport r;
  long long total = 0;
  for (const auto& u : utterances) {
    if (u.triggers.size() != u.boundaries.size()) {
      throw std::invalid_argument("latency: trigger and boundary lists differ in length");
    }
    long long s = 0;
    for (std::size_t i = 0; i < u.triggers.size(); ++i) s += u.triggers[i] - u.boundaries[i];
    total += s;
    r.token_count += u.triggers.size();
    r.utterance_tokens.push_back(u.triggers.size());
    r.utterance_offsets.push_back(u.triggers.empty() ? 0.0
                                                     : static_cast<double>(s) / static_cast<double>(u.triggers.size()));
  }
  if (r.token_count == 0) throw EmptyCorpus("latency over zero aligned tokens");
  r.delta_corpus = static_cast<double>(total) / static_cast<double>(r.token_count);
  return r;
}

EditAlignment levenshtein_align(std::span<const int> hyp, std::span<const int> ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditAlignment out;
  out.distance = at(n, m);
  // Backtrace preferring the diagonal so pairings are deterministic.
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
      out.paired.emplace_back(i - 1, j - 1);
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(out.paired.begin(), out.paired.end());
  return out;
}

LatencyInput pair_for_latency(std::span<const int> hyp_tokens, std::span<const int> hyp_triggers,
                              std::span<const int> ref_tokens, std::span<const int> ref_boundaries) {
  if (hyp_tokens.size() != hyp_triggers.size() || ref_tokens.size() != ref_boundaries.size()) {
    throw std::invalid_argument("latency pairing: token and frame lists differ in length");
  }
  LatencyInput out;
  if (hyp_tokens.size() == ref_tokens.size()) {
    out.triggers.assign(hyp_triggers.begin(), hyp_triggers.end());
    out.boundaries.assign(ref_boundaries.begin(), ref_boundaries.end());
    return out;
  }
  for (const auto& [h, r] : levenshtein_align(hyp_tokens, ref_tokens).paired) {
    out.triggers.push_back(hyp_triggers[h]);
    out.boundaries.push_back(ref_boundaries[r]);
  }
  return out;
}

double token_error_rate(std::span<const std::vector<int>> hypotheses,
                        std::span<const std::vector<int>> references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("error rate: hypothesis and reference counts differ");
  }
  std::size_t errors = 0, total = 0;
  for (std::size_t u = 0; u < references.size(); ++u) {
    errors += levenshtein_align(hypotheses[u], references[u]).distance;
    total += references[u].size();
  }
  if (total == 0) throw EmptyCorpus("error rate over an empty reference set");
  return static_cast<double>(errors) / static_cast<double>(total);
}

std::string FormatReport(const EvalSummary& s) {
  std::ostringstream os;
  os << "label=" << s.label << '\n'
     << "utterances=" << s.utterances << '\n'
     << "reference_tokens=" << s.reference_tokens << '\n'
     << "token_error_rate=" << textio::FormatFixed(s.token_error_rate) << '\n'
     << "delta_corpus=" << textio::FormatFixed(s.latency.delta_corpus) << '\n'
     << "latency_tokens=" << s.latency.token_count << '\n';
  return os.str();
}

std::string ResultsCsvHeader() {
  return "label,utterances,reference_tokens,token_error_rate,delta_corpus,latency_tokens";
}

std::string ResultsCsvRow(const EvalSummary& s) {
  std::ostringstream os;
  os << s.label << ',' << s.utterances << ',' << s.reference_tokens << ','
     << textio::FormatFixed(s.token_error_rate) << ',' << textio::FormatFixed(s.latency.delta_corpus) << ','
     << s.latency.token_count;
  return os.str();
}

}  // namespace streamlat::metrics
