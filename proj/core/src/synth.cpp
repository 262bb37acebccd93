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

#include "streamlat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "streamlat/hashing.hpp"
#include "streamlat/textio.hpp"

namespace streamlat::synth {

namespace {

constexpr std::string_view kMagic = "streamlat-dataset";
constexpr int kVersion = 1;

int UniformInt(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

void TaskSpec::Validate() const {
  if (vocab_size < 1) throw TaskError("vocab_size must be >= 1");
  const int classes = class_means.empty() ? kMaxClasses : static_cast<int>(class_means.size());
  if (vocab_size > classes) {
    throw TaskError("vocab_size " + std::to_string(vocab_size) + " exceeds the " +
                    std::to_string(classes) + " representable classes");
  }
  if (!allow_repeats && vocab_size < 2 && max_tokens > 1) {
    throw TaskError("a single-token vocabulary needs allow_repeats for multi-token utterances");
  }
  if (feature_dim < 1) throw TaskError("feature_dim must be >= 1");
  for (const auto& m : class_means) {
    if (static_cast<int>(m.size()) != feature_dim) throw TaskError("class mean of wrong dimension");
  }
  if (min_frames_per_token < 1 || max_frames_per_token < min_frames_per_token) {
    throw TaskError("frames-per-token range must satisfy 1 <= min <= max");
  }
  if (min_silence < 0 || max_silence < min_silence) throw TaskError("bad silence range");
  if (min_tokens < 1 || max_tokens < min_tokens) throw TaskError("tokens-per-utterance range must satisfy 1 <= min <= max");
  if (!(noise_std >= 0.0)) throw TaskError("noise std must be >= 0");
}

std::vector<std::vector<double>> ClassMeans(const TaskSpec& spec) {
  if (!spec.class_means.empty()) return spec.class_means;
  std::mt19937_64 rng(DeriveSeed(spec.seed, {0xC1A55ULL}));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(spec.vocab_size),
                                         std::vector<double>(static_cast<std::size_t>(spec.feature_dim)));
  for (auto& m : means) {
    for (double& x : m) x = n01(rng);
  }
  return means;
}

std::string UtteranceId(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "utt-%06zu", index);
  return buf;
}

Dataset generate(const TaskSpec& spec, std::size_t count, std::size_t first_index) {
  spec.Validate();
  if (count < 1) throw TaskError("count must be >= 1");
  const auto means = ClassMeans(spec);
  const std::size_t f = static_cast<std::size_t>(spec.feature_dim);
  Dataset out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t index = first_index + k;
    std::mt19937_64 rng(DeriveSeed(spec.seed, {0x5EEDULL, index}));
    std::normal_distribution<double> noise(0.0, 1.0);
    SyntheticUtterance u;
    u.id = UtteranceId(index);
    const int n = UniformInt(rng, spec.min_tokens, spec.max_tokens);
    std::vector<double> values;
    int frame = 0;
    for (int i = 0; i < n; ++i) {
      int tok = 0;
      if (!spec.allow_repeats && !u.tokens.empty()) {
        // Uniform over the other vocab_size - 1 classes.
        tok = UniformInt(rng, 0, spec.vocab_size - 2);
        if (tok >= u.tokens.back()) ++tok;
      } else {
        tok = UniformInt(rng, 0, spec.vocab_size - 1);
      }
      u.tokens.push_back(tok);
      const int len = UniformInt(rng, spec.min_frames_per_token, spec.max_frames_per_token);
      for (int t = 0; t < len; ++t) {
        for (std::size_t d = 0; d < f; ++d) {
          values.push_back(means[static_cast<std::size_t>(tok)][d] + spec.noise_std * noise(rng));
        }
      }
      frame += len;
      u.boundaries.push_back(frame);
    }
    const int silence = UniformInt(rng, spec.min_silence, spec.max_silence);
    for (int t = 0; t < silence; ++t) {
      for (std::size_t d = 0; d < f; ++d) values.push_back(spec.noise_std * noise(rng));
    }
    frame += silence;
    u.frames = diff::Tensor({static_cast<std::size_t>(frame), f}, std::move(values));
    out.push_back(std::move(u));
  }
  return out;
}

Splits split(const Dataset& data, std::array<double, 3> ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw TaskError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw TaskError("split ratios must sum to 1");
  std::vector<const SyntheticUtterance*> order;
  order.reserve(data.size());
  for (const auto& u : data) order.push_back(&u);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    const auto ha = Fnv1a(a->id), hb = Fnv1a(b->id);
    return ha != hb ? ha < hb : a->id < b->id;
  });
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto n_dev = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  if (n_train + n_dev > n) throw TaskError("split sizes exceed the dataset");
  const std::size_t n_test = n - n_train - n_dev;
  if (n_train == 0 || n_dev == 0 || n_test == 0) {
    throw TaskError("split of " + std::to_string(n) + " utterances leaves an empty part");
  }
  Splits s;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = i < n_train ? s.train : (i < n_train + n_dev ? s.dev : s.test);
    dst.push_back(*order[i]);
  }
  // Keep each part in id order so downstream processing is order-stable.
  for (Dataset* d : {&s.train, &s.dev, &s.test}) {
    std::sort(d->begin(), d->end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  }
  return s;
}

// Dataset file: header line, then one utterance per line:
//   <id> | <tokens> | <boundaries> | <frame row> ; <frame row> ; ...
std::string SerializeDataset(const Dataset& data) {
  std::ostringstream os;
  const std::size_t f = data.empty() ? 0 : data.front().frames.cols();
  os << kMagic << ' ' << kVersion << ' ' << f << '\n';
  for (const auto& u : data) {
    os << u.id << " |";
    for (int t : u.tokens) os << ' ' << t;
    os << " |";
    for (int b : u.boundaries) os << ' ' << b;
    os << " |";
    for (std::size_t r = 0; r < u.frames.rows(); ++r) {
      if (r > 0) os << " ;";
      for (std::size_t c = 0; c < u.frames.cols(); ++c) os << ' ' << textio::FormatExact(u.frames.at(r, c));
    }
    os << '\n';
  }
  return os.str();
}

Dataset ParseDataset(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line)) throw textio::FormatError("empty dataset file");
  std::istringstream head(line);
  std::string magic;
  int version = 0;
  std::size_t f = 0;
  if (!(head >> magic >> version >> f) || magic != kMagic) throw textio::FormatError("missing dataset header");
  if (version != kVersion) throw textio::FormatError("unsupported dataset version " + std::to_string(version));
  Dataset out;
  while (std::getline(is, line)) {
    if (textio::Trim(line).empty()) continue;
    const auto fields = textio::Split(line, '|');
    if (fields.size() != 4) throw textio::FormatError("dataset line needs 4 '|' fields: " + line.substr(0, 40));
    SyntheticUtterance u;
    u.id = std::string(textio::Trim(fields[0]));
    auto ints = [](const std::string& s) {
      std::vector<int> v;
      std::istringstream in(s);
      std::string w;
      while (in >> w) v.push_back(static_cast<int>(textio::ParseInt(w)));
      return v;
    };
    u.tokens = ints(fields[1]);
    u.boundaries = ints(fields[2]);
    std::vector<double> values;
    std::size_t rows = 0;
    for (const auto& row : textio::Split(fields[3], ';')) {
      std::istringstream in(row);
      std::string w;
      std::size_t cols = 0;
      while (in >> w) {
        values.push_back(textio::ParseDouble(w));
        ++cols;
      }
      if (cols != f) throw textio::FormatError("frame row of " + std::to_string(cols) + " values in " + u.id);
      ++rows;
    }
    u.frames = diff::Tensor({rows, f}, std::move(values));
    if (u.tokens.size() != u.boundaries.size() || u.tokens.empty()) {
      throw textio::FormatError("token and boundary counts differ in " + u.id);
    }
    for (std::size_t i = 0; i < u.boundaries.size(); ++i) {
      if ((i > 0 && u.boundaries[i] <= u.boundaries[i - 1]) || u.boundaries[i] > static_cast<int>(rows)) {
        throw textio::FormatError("boundaries not increasing within the frames of " + u.id);
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

void SaveDataset(const std::filesystem::path& path, const Dataset& data) {
  textio::WriteFile(path, SerializeDataset(data));
}

Dataset LoadDataset(const std::filesystem::path& path) { return ParseDataset(textio::ReadFile(path)); }

}  // namespace streamlat::synth
