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

#include "streamlat/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <utility>

#include "streamlat/attention.hpp"
#include "streamlat/gradcheck.hpp"
#include "streamlat/hashing.hpp"
#include "streamlat/metrics.hpp"
#include "streamlat/oracle.hpp"
#include "streamlat/srmlt.hpp"
#include "streamlat/synth.hpp"

namespace streamlat::selfcheck {
namespace {

using diff::DiffArray;
using diff::Tape;
using oracle::Matrix;

struct Outcome {
  double worst = 0.0;
  std::size_t cases = 0;
};

Check Timed(std::string name, double threshold, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  const Outcome o = body();
  Check c;
  c.name = std::move(name);
  c.measured = o.worst;
  c.threshold = threshold;
  c.cases = o.cases;
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.passed = std::isfinite(o.worst) && o.worst < threshold;
  return c;
}

std::vector<double> Uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

std::vector<double> Flat(const Matrix& m) {
  std::vector<double> v;
  for (const auto& r : m) v.insert(v.end(), r.begin(), r.end());
  return v;
}

DiffArray Constant(Tape& t, const Matrix& m) { return t.constant({m.size(), m[0].size()}, Flat(m)); }

// Fixed irregular weights turn any output into a scalar without symmetric
// cancellation.
DiffArray Project(Tape& t, const DiffArray& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.37 * std::sin(1.3 * static_cast<double>(i) + 0.2);
  return diff::sum(diff::mul(y, t.constant(y.shape(), w)));
}

double Worst(double a, double b) { return std::isnan(b) ? b : std::max(a, b); }

}  // namespace

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::string Format(const Check& c) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s %-34s %.3e < %.1e  (%zu cases, %.2fs)", c.passed ? "PASS" : "FAIL",
                c.name.c_str(), c.measured, c.threshold, c.cases, c.seconds);
  return buf;
}

Check PrimitiveGradients(std::uint64_t seed, int seeds_per_op) {
  return Timed("gradient: primitives", 1e-4, [&] {
    using Fn = std::function<DiffArray(Tape&, const DiffArray&, const std::vector<double>&)>;
    const std::vector<Fn> ops = {
        [](Tape& t, const DiffArray& x, const std::vector<double>& o) { return diff::add(x, t.constant({3, 4}, o)); },
        [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
          return diff::add(t.constant({3, 4}, o), diff::slice_flat(x, 0, {4}));
        },
        [](Tape& t, const DiffArray& x, const std::vector<double>& o) { return diff::sub(t.constant({3, 4}, o), x); },
        [](Tape& t, const DiffArray& x, const std::vector<double>& o) { return diff::mul(x, t.constant({3, 4}, o)); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::mul(x, x); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::sigmoid(x); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::exp(x); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::scale(x, -1.7); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::relu(x); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::softmax(x); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::softmax(x, 0); },
        [](Tape&, const DiffArray& x, const std::vector<double>&) { return diff::transpose(x); },
        [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
          return diff::matmul(x, t.constant({4, 3}, std::vector<double>(o.begin(), o.begin() + 12)));
        },
        [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
          return diff::matmul(t.constant({4, 3}, std::vector<double>(o.begin(), o.begin() + 12)), x);
        },
        [](Tape&, const DiffArray& x, const std::vector<double>&) {
          const DiffArray parts[] = {diff::slice_cols(x, 0, 1), diff::sigmoid(x)};
          return diff::concat_cols(parts);
        },
        [](Tape&, const DiffArray& x, const std::vector<double>&) {
          const int idx[] = {2, 0, 2, 1};
          return diff::gather_rows(x, idx);
        },
        [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
          return diff::layer_norm(x, t.constant({4}, std::vector<double>(o.begin(), o.begin() + 4)),
                                  t.constant({4}, std::vector<double>(o.begin() + 4, o.begin() + 8)));
        },
        [](Tape&, const DiffArray& x, const std::vector<double>&) {
          const int targets[] = {1, 3, 0};
          return diff::smoothed_cross_entropy(x, targets, 0.1);
        },
    };
    Outcome out;
    for (std::size_t k = 0; k < ops.size(); ++k) {
      for (int s = 0; s < seeds_per_op; ++s) {
        std::mt19937_64 rng(DeriveSeed(seed, {0x6AD, k, static_cast<std::uint64_t>(s)}));
        const auto other = Uniform(rng, 12, 0.5, 1.5);
        const auto point = Uniform(rng, 12, -1.0, 1.0);
        const double err = diff::grad_check(
            [&](Tape& t, const DiffArray& x) { return Project(t, ops[k](t, x, other)); }, {3, 4}, point);
        out.worst = Worst(out.worst, err);
        ++out.cases;
      }
    }
    return out;
  });
}

Check SoftmaxAttentionGradient(std::uint64_t seed, int cases) {
  return Timed("gradient: softmax attention", 1e-4, [&] {
    Outcome out;
    for (int c = 0; c < cases; ++c) {
      std::mt19937_64 rng(DeriveSeed(seed, {0xA77, static_cast<std::uint64_t>(c)}));
      const auto x = Uniform(rng, 12, -1.0, 1.0);
      const auto point = Uniform(rng, 4 * 16, -0.7, 0.7);
      const double err = diff::grad_check(
          [&](Tape& t, const DiffArray& w) {
            const auto in = t.constant({3, 4}, x);
            const attention::MultiHeadWeights mw{diff::slice_flat(w, 0, {4, 4}), diff::slice_flat(w, 16, {4, 4}),
                                                 diff::slice_flat(w, 32, {4, 4}), diff::slice_flat(w, 48, {4, 4})};
            const auto mask = attention::AttentionMask::Causal(3);
            return Project(t, attention::multi_head(in, in, in, {2, 4}, mw, &mask));
          },
          {point.size()}, point);
      out.worst = Worst(out.worst, err);
      ++out.cases;
    }
    return out;
  });
}

Check MochaGradient(std::uint64_t seed, int cases) {
  return Timed("gradient: MoChA training path", 1e-4, [&] {
    Outcome out;
    const std::size_t dk = 3;
    for (int c = 0; c < cases; ++c) {
      std::mt19937_64 rng(DeriveSeed(seed, {0x30C4A, static_cast<std::uint64_t>(c)}));
      const auto point = Uniform(rng, 8 * dk + 15 + 10, -1.0, 1.0);
      const int w = 1 + c % 3;
      const double err = diff::grad_check(
          [&](Tape& t, const DiffArray& x) {
            const auto q = diff::slice_flat(x, 0, {3, dk});
            const auto k = diff::slice_flat(x, 3 * dk, {5, dk});
            const auto u = diff::slice_flat(x, 8 * dk, {3, 5});
            const auto v = diff::slice_flat(x, 8 * dk + 15, {5, 2});
            const auto alpha = attention::expected_alignment(attention::monotonic_p(q, k, {}));
            return Project(t, attention::mocha_context_train(alpha, u, v, w));
          },
          {point.size()}, point);
      out.worst = Worst(out.worst, err);
      ++out.cases;
    }
    return out;
  });
}

Check CaGradient(std::uint64_t seed, int cases) {
  return Timed("gradient: CA training path", 1e-4, [&] {
    Outcome out;
    const std::size_t dk = 3;
    for (int c = 0; c < cases; ++c) {
      std::mt19937_64 rng(DeriveSeed(seed, {0xCA, static_cast<std::uint64_t>(c)}));
      const auto point = Uniform(rng, 14 * dk + 1, -1.0, 1.0);
      const double err = diff::grad_check(
          [&](Tape& t, const DiffArray& x) {
            const auto q = diff::slice_flat(x, 0, {3, dk});
            const auto k = diff::slice_flat(x, 3 * dk, {5, dk});
            const auto v = diff::slice_flat(x, 8 * dk, {5, dk});
            const auto sel = diff::slice_flat(x, 13 * dk, {dk});
            const auto bias = diff::slice_flat(x, 14 * dk, {});
            const auto interim = attention::ca_interim_contexts(attention::monotonic_p(q, k, {}), v);
            const auto alpha = attention::expected_alignment(attention::ca_halting_p(interim, sel, bias, {}));
            return Project(t, attention::ca_context_train(alpha, interim));
          },
          {point.size()}, point);
      out.worst = Worst(out.worst, err);
      ++out.cases;
    }
    return out;
  });
}

Check ModelGradient(model::StreamingKind kind, std::uint64_t seed) {
  return Timed("gradient: full model (" + std::string(model::ToString(kind)) + ", d=16)", 1e-3, [&] {
    model::ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.feature_dim = 4;
    cfg.model_dim = 16;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 2;
    cfg.ffn_dim = 16;
    cfg.heads = 2;
    cfg.stream_heads = 1;
    cfg.kind = kind;
    cfg.subsample = 2;
    cfg.selector_bias_init = 0.0;
    synth::TaskSpec spec;
    spec.vocab_size = cfg.vocab_size;
    spec.feature_dim = cfg.feature_dim;
    spec.min_tokens = 3;
    spec.max_tokens = 3;
    spec.min_frames_per_token = 2;
    spec.max_frames_per_token = 3;
    spec.max_silence = 1;
    spec.seed = seed;
    const auto u = synth::generate(spec, 1).front();
    const auto params = model::InitParams(cfg, seed);
    const auto flat = params.Flatten();
    const std::vector<int> bounds{1, 2, 3};
    Outcome out;
    for (const bool masked : {false, true}) {
      const auto f = [&](Tape& t, const DiffArray& x) {
        const auto bound = model::BindFlat(x, params);
        const auto enc = model::encode(cfg, bound, t, u.frames);
        std::optional<std::span<const int>> mb;
        if (masked) mb = bounds;
        const auto dec = model::decode_train(cfg, bound, enc, u.tokens, mb, {});
        return model::loss(dec.logits, model::Targets(cfg, u.tokens), cfg.label_smoothing);
      };
      out.worst = Worst(out.worst, diff::grad_check(f, {flat.size()}, flat));
      ++out.cases;
    }
    return out;
  });
}

Check AlignmentOracle(std::uint64_t seed, int cases) {
  return Timed("oracle: expected alignment", 1e-8, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0xA1}));
    std::uniform_int_distribution<int> frames_d(1, 8), steps_d(1, 4);
    for (int c = 0; c < cases; ++c) {
      const auto frames = static_cast<std::size_t>(frames_d(rng));
      const auto steps = static_cast<std::size_t>(steps_d(rng));
      const Matrix p = oracle::RandomMatrix(rng, steps, frames, 1e-3, 1.0 - 1e-3);
      const Matrix brute = oracle::EnumerateHaltingPaths(p);
      Tape t;
      const auto alpha = attention::expected_alignment(Constant(t, p));
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < frames; ++j) {
          out.worst = Worst(out.worst, std::fabs(alpha.values()[i * frames + j] - brute[i][j]));
        }
      }
      ++out.cases;
    }
    return out;
  });
}

Check MaskedAlignmentOracle(std::uint64_t seed, int cases) {
  return Timed("oracle: masked expected alignment", 1e-8, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0xA2}));
    std::uniform_int_distribution<int> frames_d(1, 8), steps_d(1, 4);
    for (int c = 0; c < cases; ++c) {
      const int frames = frames_d(rng);
      const auto steps = static_cast<std::size_t>(steps_d(rng));
      std::uniform_int_distribution<int> bound_d(1, frames);
      std::vector<int> bounds(steps);
      for (int& b : bounds) b = bound_d(rng);
      const Matrix p = oracle::RandomMatrix(rng, steps, static_cast<std::size_t>(frames), 1e-3, 1.0 - 1e-3);
      const Matrix brute = oracle::EnumerateHaltingPaths(p, bounds);
      Tape t;
      const auto alpha = attention::expected_alignment(Constant(t, p), bounds);
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < static_cast<std::size_t>(frames); ++j) {
          out.worst = Worst(out.worst, std::fabs(alpha.values()[i * frames + j] - brute[i][j]));
        }
      }
      ++out.cases;
    }
    return out;
  });
}

Check MaskExactness(std::uint64_t seed, int cases) {
  // Any nonzero leak or bit difference counts as an error of 1.
  return Timed("oracle: mask exactness", 0.5, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0xA3}));
    std::uniform_int_distribution<int> frames_d(1, 30), steps_d(1, 12), delta_d(0, 4);
    for (int c = 0; c < cases; ++c) {
      const int frames = frames_d(rng);
      const auto steps = static_cast<std::size_t>(steps_d(rng));
      std::uniform_int_distribution<int> trig_d(1, frames);
      srmlt::BoundaryRecord rec;
      rec.utterance_id = "u";
      rec.frames = frames;
      for (std::size_t i = 0; i < steps; ++i) rec.triggers.push_back(trig_d(rng));
      std::sort(rec.triggers.begin(), rec.triggers.end());
      const auto bounds = srmlt::mask_bounds(rec, delta_d(rng));
      const Matrix p = oracle::RandomMatrix(rng, steps, static_cast<std::size_t>(frames), 0.0, 1.0);
      Tape t;
      const auto praw = Constant(t, p);
      const auto masked = attention::expected_alignment(praw, bounds);
      for (std::size_t i = 0; i < steps; ++i) {
        for (int j = bounds[i]; j < frames; ++j) {
          if (masked.values()[i * frames + static_cast<std::size_t>(j)] != 0.0) out.worst = 1.0;
        }
      }
      const std::vector<int> vacuous(steps, frames);
      const auto plain = attention::expected_alignment(praw);
      const auto vac = attention::expected_alignment(praw, vacuous);
      for (std::size_t k = 0; k < plain.size(); ++k) {
        if (plain.values()[k] != vac.values()[k]) out.worst = 1.0;
      }
      ++out.cases;
    }
    return out;
  });
}

Check BetaOracle(std::uint64_t seed, int cases) {
  return Timed("oracle: chunkwise beta", 1e-10, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0xB1}));
    std::uniform_int_distribution<int> frames_d(1, 10), steps_d(1, 4);
    for (int c = 0; c < cases; ++c) {
      const int frames = frames_d(rng);
      const auto steps = static_cast<std::size_t>(steps_d(rng));
      const int w = std::uniform_int_distribution<int>(1, frames)(rng);
      const Matrix a = oracle::RandomMatrix(rng, steps, static_cast<std::size_t>(frames), 0.0, 1.0);
      const Matrix u = oracle::RandomMatrix(rng, steps, static_cast<std::size_t>(frames), -3.0, 3.0);
      const Matrix direct = oracle::DirectChunkwiseBeta(a, u, w);
      Tape t;
      const auto beta = attention::chunkwise_beta(Constant(t, a), Constant(t, u), w);
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < static_cast<std::size_t>(frames); ++j) {
          out.worst = Worst(out.worst, std::fabs(beta.values()[i * frames + j] - direct[i][j]));
        }
      }
      ++out.cases;
    }
    return out;
  });
}

Check BetaMassConservation(std::uint64_t seed, int cases) {
  return Timed("oracle: beta mass conservation", 1e-9, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0xB2}));
    std::uniform_int_distribution<int> frames_d(1, 40), steps_d(1, 6);
    for (int c = 0; c < cases; ++c) {
      const int frames = frames_d(rng);
      const auto steps = static_cast<std::size_t>(steps_d(rng));
      // Cycle through w = 1, w = T and random widths.
      const int w = c % 3 == 0 ? 1 : c % 3 == 1 ? frames : std::uniform_int_distribution<int>(1, frames)(rng);
      const Matrix a = oracle::RandomMatrix(rng, steps, static_cast<std::size_t>(frames), 0.0, 1.0);
      const Matrix u = oracle::RandomMatrix(rng, steps, static_cast<std::size_t>(frames), -5.0, 5.0);
      Tape t;
      const auto beta = attention::chunkwise_beta(Constant(t, a), Constant(t, u), w);
      for (std::size_t i = 0; i < steps; ++i) {
        const auto row = beta.values().subspan(i * frames, static_cast<std::size_t>(frames));
        const double sb = std::accumulate(row.begin(), row.end(), 0.0);
        const double sa = std::accumulate(a[i].begin(), a[i].end(), 0.0);
        out.worst = Worst(out.worst, std::fabs(sb - sa));
        if (w == 1) {
          for (int j = 0; j < frames; ++j) out.worst = Worst(out.worst, std::fabs(row[j] - a[i][j]));
        }
      }
      ++out.cases;
    }
    return out;
  });
}

Check InterimContextOracle(std::uint64_t seed, int cases) {
  return Timed("oracle: CA interim contexts", 1e-12, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0xC1}));
    for (int c = 0; c < cases; ++c) {
      const std::size_t steps = 1 + c % 4, frames = 1 + c % 9, d = 1 + c % 5;
      const Matrix a = oracle::RandomMatrix(rng, steps, frames, 0.0, 1.0);
      const Matrix v = oracle::RandomMatrix(rng, frames, d, -1.0, 1.0);
      const auto direct = oracle::DirectInterimContexts(a, v);
      Tape t;
      const auto ctx = attention::ca_interim_contexts(Constant(t, a), Constant(t, v));
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < frames; ++j) {
          for (std::size_t k = 0; k < d; ++k) {
            out.worst = Worst(out.worst, std::fabs(ctx.values()[(i * frames + j) * d + k] - direct[i][j][k]));
          }
        }
      }
      ++out.cases;
    }
    return out;
  });
}

Check UpdateTableConformance(std::uint64_t seed, int cases) {
  return Timed("oracle: update table", 0.5, [&] {
    Outcome out;
    const double tol = srmlt::kDefaultTolerance;
    auto snap = [](double a, double c) { return srmlt::StatsSnapshot{a, c, srmlt::Granularity::kMinibatch}; };
    const double base = 0.5, up = 0.51, down = 0.49;
    const double levels[] = {up, base, down};
    for (double acc : levels) {
      for (double cov : levels) {
        const bool expect = acc == up || (acc == base && cov == down);
        if (srmlt::update_decision(snap(base, base), snap(acc, cov), tol) != expect) out.worst += 1.0;
        ++out.cases;
      }
    }
    std::mt19937_64 rng(DeriveSeed(seed, {0x7AB1E}));
    std::uniform_real_distribution<double> u(0.0, 1.0), near(-0.003, 0.003);
    for (int c = 0; c < cases; ++c) {
      const double a0 = u(rng), c0 = u(rng);
      const double a1 = c % 2 ? a0 + near(rng) : u(rng);
      const double c1 = c % 3 ? c0 + near(rng) : u(rng);
      if (srmlt::update_decision(snap(a0, c0), snap(a1, c1), tol) != oracle::TableUpdate(a0, a1, c0, c1, tol)) {
        out.worst += 1.0;
      }
      ++out.cases;
    }
    return out;
  });
}

Check LatencyOracle(std::uint64_t seed, int cases) {
  return Timed("oracle: corpus latency", 1e-12, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0x1A7}));
    std::uniform_int_distribution<int> utt_d(1, 5), tok_d(0, 12), frame_d(1, 200);
    for (int c = 0; c < cases; ++c) {
      std::vector<metrics::LatencyInput> in(static_cast<std::size_t>(utt_d(rng)));
      std::vector<std::vector<int>> trig, truth;
      for (auto& u : in) {
        const int n = tok_d(rng);
        for (int k = 0; k < n; ++k) {
          u.triggers.push_back(frame_d(rng));
          u.boundaries.push_back(frame_d(rng));
        }
        trig.push_back(u.triggers);
        truth.push_back(u.boundaries);
      }
      std::size_t total = 0;
      for (const auto& u : in) total += u.triggers.size();
      if (total == 0) continue;
      const auto r = metrics::corpus_latency(in);
      out.worst = Worst(out.worst, std::fabs(r.delta_corpus - oracle::PooledOffset(trig, truth)));
      ++out.cases;
    }
    return out;
  });
}

Check EditDistanceOracle(std::uint64_t seed, int cases) {
  return Timed("oracle: edit distance", 0.5, [&] {
    Outcome out;
    std::mt19937_64 rng(DeriveSeed(seed, {0xED17}));
    std::uniform_int_distribution<int> len_d(0, 10), tok_d(0, 4);
    for (int c = 0; c < cases; ++c) {
      std::vector<int> a(static_cast<std::size_t>(len_d(rng))), b(static_cast<std::size_t>(len_d(rng)));
      for (int& x : a) x = tok_d(rng);
      for (int& x : b) x = tok_d(rng);
      const auto al = metrics::levenshtein_align(a, b);
      if (static_cast<int>(al.distance) != oracle::EditDistance(a, b)) out.worst += 1.0;
      ++out.cases;
    }
    return out;
  });
}

Report GradientSuite(std::uint64_t seed) {
  Report r;
  r.checks.push_back(PrimitiveGradients(seed));
  r.checks.push_back(SoftmaxAttentionGradient(seed));
  r.checks.push_back(MochaGradient(seed));
  r.checks.push_back(CaGradient(seed));
  r.checks.push_back(ModelGradient(model::StreamingKind::kCa, seed));
  r.checks.push_back(ModelGradient(model::StreamingKind::kMocha, seed));
  return r;
}

Report OracleSuite(std::uint64_t seed) {
  Report r;
  r.checks.push_back(AlignmentOracle(seed));
  r.checks.push_back(MaskedAlignmentOracle(seed));
  r.checks.push_back(MaskExactness(seed));
  r.checks.push_back(BetaOracle(seed));
  r.checks.push_back(BetaMassConservation(seed));
  r.checks.push_back(InterimContextOracle(seed));
  r.checks.push_back(UpdateTableConformance(seed));
  r.checks.push_back(LatencyOracle(seed));
  r.checks.push_back(EditDistanceOracle(seed));
  return r;
}

}  // namespace streamlat::selfcheck
