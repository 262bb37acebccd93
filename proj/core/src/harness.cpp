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

#include "streamlat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "streamlat/hashing.hpp"
#include "streamlat/textio.hpp"

namespace streamlat::harness {

using json = nlohmann::ordered_json;
using srmlt::Granularity;
using srmlt::Phase;
using srmlt::RecordStore;

namespace {

constexpr std::string_view kCheckpointMagic = "streamlat-checkpoint";
constexpr int kCheckpointVersion = 1;

int SubsampledFrames(const RunConfig& cfg, const synth::SyntheticUtterance& u) {
  return (u.num_frames() + cfg.model.subsample - 1) / cfg.model.subsample;
}

// Config <-> JSON ---------------------------------------------------------

json ToJson(const RunConfig& c) {
  json j;
  const auto& m = c.model;
  j["model"] = {{"model_dim", m.model_dim},
                {"encoder_layers", m.encoder_layers},
                {"decoder_layers", m.decoder_layers},
                {"ffn_dim", m.ffn_dim},
                {"heads", m.heads},
                {"stream_heads", m.stream_heads},
                {"kind", std::string(model::ToString(m.kind))},
                {"chunk_width", m.chunk_width},
                {"subsample", m.subsample},
                {"noise_std", m.noise_std},
                {"selector_bias_init", m.selector_bias_init},
                {"label_smoothing", m.label_smoothing},
                {"mask_lower_layers", m.mask_lower_layers},
                {"fallback_context", m.fallback_context}};
  const auto& t = c.task;
  j["task"] = {{"vocab_size", t.vocab_size},
               {"feature_dim", t.feature_dim},
               {"min_frames_per_token", t.min_frames_per_token},
               {"max_frames_per_token", t.max_frames_per_token},
               {"min_silence", t.min_silence},
               {"max_silence", t.max_silence},
               {"min_tokens", t.min_tokens},
               {"max_tokens", t.max_tokens},
               {"noise_std", t.noise_std},
               {"allow_repeats", t.allow_repeats},
               {"seed", t.seed}};
  j["data"] = {{"train", c.data.train}, {"dev", c.data.dev}, {"test", c.data.test}};
  const auto& o = c.optim;
  j["optim"] = {{"peak_lr", o.peak_lr},
                {"warmup_steps", o.warmup_steps},
                {"beta1", o.beta1},
                {"beta2", o.beta2},
                {"epsilon", o.epsilon},
                {"finetune_lr_scale", o.finetune_lr_scale},
                {"clip_norm", o.clip_norm}};
  j["train"] = {{"pretrain_epochs", c.pretrain_epochs},
                {"finetune_epochs", c.finetune_epochs},
                {"delta", c.delta},
                {"granularity", std::string(srmlt::ToString(c.granularity))},
                {"tolerance", c.tolerance},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"mode", std::string(ToString(c.mode))},
                {"workers", c.workers},
                {"max_decode_steps", c.max_decode_steps},
                {"eval_every", c.eval_every}};
  return j;
}

template <typename T>
void Read(const json& section, const char* key, T& out) {
  out = section.at(key).get<T>();
}

RunConfig FromJson(const json& j) {
  RunConfig c;
  const json& m = j.at("model");
  Read(m, "model_dim", c.model.model_dim);
  Read(m, "encoder_layers", c.model.encoder_layers);
  Read(m, "decoder_layers", c.model.decoder_layers);
  Read(m, "ffn_dim", c.model.ffn_dim);
  Read(m, "heads", c.model.heads);
  Read(m, "stream_heads", c.model.stream_heads);
  c.model.kind = model::ParseStreamingKind(m.at("kind").get<std::string>());
  Read(m, "chunk_width", c.model.chunk_width);
  Read(m, "subsample", c.model.subsample);
  Read(m, "noise_std", c.model.noise_std);
  Read(m, "selector_bias_init", c.model.selector_bias_init);
  Read(m, "label_smoothing", c.model.label_smoothing);
  Read(m, "mask_lower_layers", c.model.mask_lower_layers);
  Read(m, "fallback_context", c.model.fallback_context);
  const json& t = j.at("task");
  Read(t, "vocab_size", c.task.vocab_size);
  Read(t, "feature_dim", c.task.feature_dim);
  Read(t, "min_frames_per_token", c.task.min_frames_per_token);
  Read(t, "max_frames_per_token", c.task.max_frames_per_token);
  Read(t, "min_silence", c.task.min_silence);
  Read(t, "max_silence", c.task.max_silence);
  Read(t, "min_tokens", c.task.min_tokens);
  Read(t, "max_tokens", c.task.max_tokens);
  Read(t, "noise_std", c.task.noise_std);
  Read(t, "allow_repeats", c.task.allow_repeats);
  Read(t, "seed", c.task.seed);
  const json& d = j.at("data");
  Read(d, "train", c.data.train);
  Read(d, "dev", c.data.dev);
  Read(d, "test", c.data.test);
  const json& o = j.at("optim");
  Read(o, "peak_lr", c.optim.peak_lr);
  Read(o, "warmup_steps", c.optim.warmup_steps);
  Read(o, "beta1", c.optim.beta1);
  Read(o, "beta2", c.optim.beta2);
  Read(o, "epsilon", c.optim.epsilon);
  Read(o, "finetune_lr_scale", c.optim.finetune_lr_scale);
  Read(o, "clip_norm", c.optim.clip_norm);
  const json& r = j.at("train");
  Read(r, "pretrain_epochs", c.pretrain_epochs);
  Read(r, "finetune_epochs", c.finetune_epochs);
  Read(r, "delta", c.delta);
  c.granularity = srmlt::ParseGranularity(r.at("granularity").get<std::string>());
  Read(r, "tolerance", c.tolerance);
  Read(r, "batch_size", c.batch_size);
  Read(r, "seed", c.seed);
  c.mode = ParseMode(r.at("mode").get<std::string>());
  Read(r, "workers", c.workers);
  Read(r, "max_decode_steps", c.max_decode_steps);
  Read(r, "eval_every", c.eval_every);
  c.model.vocab_size = c.task.vocab_size;
  c.model.feature_dim = c.task.feature_dim;
  return c;
}

// Overwrites leaves of `base` with `patch`; every patched key must exist.
void Merge(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object()) {
      Merge(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

void ApplyOverride(json& j, std::string_view flag) {
  while (!flag.empty() && flag.front() == '-') flag.remove_prefix(1);
  const auto eq = flag.find('=');
  const auto dot = flag.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw ConfigError("override '" + std::string(flag) + "' is not of the form --section.key=value");
  }
  const std::string section(flag.substr(0, dot));
  const std::string key(flag.substr(dot + 1, eq - dot - 1));
  const std::string raw(flag.substr(eq + 1));
  if (!j.contains(section) || !j[section].contains(key)) {
    throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  j[section][key] = value;
}

// Optimisation --------------------------------------------------------------

double LearningRate(const OptimConfig& o, Phase phase, long long step) {
  if (phase == Phase::kFinetune) return o.peak_lr * o.finetune_lr_scale;
  const double s = static_cast<double>(std::max<long long>(step, 1));
  const double w = static_cast<double>(std::max(o.warmup_steps, 1));
  return o.peak_lr * std::min(s / w, std::sqrt(w / s));
}

void AdamUpdate(const OptimConfig& o, double lr, AdamState& s, std::vector<double>& theta,
                const std::vector<double>& g) {
  if (s.m.size() != theta.size()) {
    s.m.assign(theta.size(), 0.0);
    s.v.assign(theta.size(), 0.0);
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    s.m[i] = o.beta1 * s.m[i] + (1.0 - o.beta1) * g[i];
    s.v[i] = o.beta2 * s.v[i] + (1.0 - o.beta2) * g[i] * g[i];
    theta[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + o.epsilon);
  }
}

// Fisher-Yates with a fixed generator, so the order is the same everywhere.
std::vector<std::size_t> Shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

// One utterance ----------------------------------------------------------------

struct Outcome {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<int> predicted;
  std::vector<int> triggers;
  int frames = 0;
};

Outcome RunUtterance(const RunConfig& cfg, const model::ParamSet& params, const synth::SyntheticUtterance& u,
                     const std::optional<std::vector<int>>& bounds, std::uint64_t noise_seed) {
  diff::Tape tape;
  const model::BoundParams p = model::Bind(tape, params, true);
  const model::EncodedUtterance enc = model::encode(cfg.model, p, tape, u.frames);
  attention::NoiseSource source(noise_seed);
  const attention::NoiseOptions noise{true, cfg.model.noise_std, &source};
  std::optional<std::span<const int>> mask;
  if (bounds) mask = std::span<const int>(*bounds);
  const model::DecodeTrainOutput out = model::decode_train(cfg.model, p, enc, u.tokens, mask, noise);
  const diff::DiffArray l = model::loss(out.logits, model::Targets(cfg.model, u.tokens), cfg.model.label_smoothing);
  tape.backward(l);
  Outcome o;
  o.loss = l.item();
  o.grad = p.FlatGrad(params);
  o.predicted = model::ArgmaxRows(out.logits, u.tokens.size());
  o.frames = enc.frames();
  // Recorded trigger: latest per-head argmax.
  o.triggers.assign(u.tokens.size(), 0);
  for (const auto& alpha : out.trace.alpha) {
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      o.triggers[i] = std::max(o.triggers[i], srmlt::extract_trigger(alpha.row(i)).value_or(o.frames));
    }
  }
  return o;
}

std::string BatchKey(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "batch-%05zu", index);
  return buf;
}

std::vector<srmlt::UnitResult> Units(Granularity g, std::size_t batch_index, const synth::Dataset& train,
                                     std::span<const std::size_t> members, std::span<const Outcome> outs) {
  auto member = [&](std::size_t k, std::size_t offset, std::size_t count) {
    const auto& u = train[members[k]];
    srmlt::MemberTriggers m;
    m.utterance_id = u.id;
    m.frames = outs[k].frames;
    m.token_count = u.tokens.size();
    m.token_offset = offset;
    m.triggers.assign(outs[k].triggers.begin() + static_cast<std::ptrdiff_t>(offset),
                      outs[k].triggers.begin() + static_cast<std::ptrdiff_t>(offset + count));
    return m;
  };
  auto stats = [&](std::span<const std::size_t> ks) {
    std::vector<std::vector<int>> pred, ref, trig;
    std::vector<int> lengths;
    for (std::size_t k : ks) {
      pred.push_back(outs[k].predicted);
      ref.push_back(train[members[k]].tokens);
      trig.push_back(outs[k].triggers);
      lengths.push_back(outs[k].frames);
    }
    return srmlt::StatsSnapshot{srmlt::batch_accuracy(pred, ref), srmlt::batch_coverage(trig, lengths), g};
  };
  std::vector<srmlt::UnitResult> units;
  switch (g) {
    case Granularity::kMinibatch: {
      srmlt::UnitResult unit{BatchKey(batch_index), {}, {}};
      std::vector<std::size_t> all;
      for (std::size_t k = 0; k < members.size(); ++k) {
        unit.members.push_back(member(k, 0, outs[k].triggers.size()));
        all.push_back(k);
      }
      unit.stats = stats(all);
      units.push_back(std::move(unit));
      break;
    }
    case Granularity::kUtterance:
      for (std::size_t k = 0; k < members.size(); ++k) {
        const std::size_t one[] = {k};
        units.push_back({train[members[k]].id, {member(k, 0, outs[k].triggers.size())}, stats(one)});
      }
      break;
    case Granularity::kToken:
      for (std::size_t k = 0; k < members.size(); ++k) {
        const auto& u = train[members[k]];
        for (std::size_t i = 0; i < u.tokens.size(); ++i) {
          const double acc = outs[k].predicted[i] == u.tokens[i] ? 1.0 : 0.0;
          const double cov = static_cast<double>(outs[k].triggers[i]) / static_cast<double>(outs[k].frames);
          units.push_back({srmlt::TokenUnitKey(u.id, i), {member(k, i, 1)}, {acc, cov, g}});
        }
      }
      break;
  }
  return units;
}

std::vector<Outcome> RunBatch(const RunConfig& cfg, const model::ParamSet& params, const synth::Dataset& train,
                              std::span<const std::size_t> members,
                              const std::vector<std::optional<std::vector<int>>>& bounds,
                              const std::vector<std::uint64_t>& seeds) {
  std::vector<Outcome> outs(members.size());
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.workers, 1)), members.size());
  auto work = [&](std::size_t w) {
    for (std::size_t k = w; k < members.size(); k += workers) {
      outs[k] = RunUtterance(cfg, params, train[members[k]], bounds[k], seeds[k]);
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return outs;
}

void CheckStoreMatches(const RecordStore& store, const synth::Dataset& train) {
  std::set<std::string, std::less<>> ids;
  for (const auto& u : train) ids.insert(u.id);
  for (const auto& [id, r] : store.records()) {
    if (!ids.contains(id)) throw srmlt::StoreError("record store holds " + id + ", which is not a training utterance");
  }
}

PhaseResult RunPhase(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& start, RecordStore store,
                     Phase phase, int target_epochs, const EpochHook& hook) {
  cfg.Validate();
  if (corpus.train.empty()) throw ConfigError("training split is empty");
  PhaseResult result{start, std::move(store), {}};
  result.checkpoint.config = cfg;
  TrainState& st = result.checkpoint.state;
  if (st.phase != phase) {
    if (phase == Phase::kPretrain) throw CheckpointError("cannot pretrain from a fine-tuned checkpoint");
    st.phase = phase;
    st.epoch = 0;
    st.adam = {};
  }
  const bool masked = phase == Phase::kFinetune && cfg.mode != Mode::kBaseline;
  const bool recording = phase == Phase::kPretrain || cfg.mode != Mode::kBaseline;
  const auto batches = AssignBatches(corpus.train, cfg.batch_size, cfg.seed);
  const auto phase_id = static_cast<std::uint64_t>(phase);

  while (st.epoch < target_epochs) {
    const auto epoch_id = static_cast<std::uint64_t>(st.epoch);
    EpochStats row;
    row.phase = phase;
    row.epoch = st.epoch + 1;
    double loss_sum = 0.0, cov_sum = 0.0;
    std::size_t correct = 0, tokens = 0;
    for (std::size_t b : Shuffled(batches.size(), DeriveSeed(cfg.seed, {0xBA7C4ULL, phase_id, epoch_id}))) {
      const auto& members = batches[b];
      std::vector<std::optional<std::vector<int>>> bounds(members.size());
      std::vector<std::uint64_t> seeds(members.size());
      for (std::size_t k = 0; k < members.size(); ++k) {
        const auto& u = corpus.train[members[k]];
        seeds[k] = DeriveSeed(cfg.seed, {0x0153ULL, phase_id, epoch_id, b, k});
        if (!masked) continue;
        if (const srmlt::BoundaryRecord* r = result.store.Find(u.id)) {
          bounds[k] = srmlt::mask_bounds(*r, cfg.delta);
        } else {
          bounds[k] = std::vector<int>(u.tokens.size(), SubsampledFrames(cfg, u));
        }
      }
      const std::vector<Outcome> outs = RunBatch(cfg, st.params, corpus.train, members, bounds, seeds);

      std::vector<double> grad(st.params.total_size(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < outs.size(); ++k) {
        if (!std::isfinite(outs[k].loss)) {
          throw DivergenceError("non-finite loss on " + corpus.train[members[k]].id + " in " +
                                std::string(ToString(phase)) + " epoch " + std::to_string(row.epoch));
        }
        batch_loss += outs[k].loss;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += outs[k].grad[i];
      }
      const double inv = 1.0 / static_cast<double>(outs.size());
      double norm = 0.0;
      for (double& g : grad) {
        g *= inv;
        norm += g * g;
      }
      norm = std::sqrt(norm);
      if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient in " + std::string(ToString(phase)));
      if (cfg.optim.clip_norm > 0.0 && norm > cfg.optim.clip_norm) {
        for (double& g : grad) g *= cfg.optim.clip_norm / norm;
      }
      std::vector<double> theta = st.params.Flatten();
      ++st.global_step;
      AdamUpdate(cfg.optim, LearningRate(cfg.optim, phase, st.adam.step + 1), st.adam, theta, grad);
      st.params.Unflatten(theta);

      loss_sum += batch_loss * inv;
      for (std::size_t k = 0; k < outs.size(); ++k) {
        const auto& ref = corpus.train[members[k]].tokens;
        for (std::size_t i = 0; i < ref.size(); ++i) {
          correct += outs[k].predicted[i] == ref[i] ? 1 : 0;
          cov_sum += static_cast<double>(outs[k].triggers[i]) / static_cast<double>(outs[k].frames);
        }
        tokens += ref.size();
      }
      if (recording) {
        for (const auto& unit : Units(result.store.granularity(), b, corpus.train, members, outs)) {
          if (srmlt::maybe_update(result.store, unit, phase)) ++row.records_updated;
        }
      }
    }
    ++st.epoch;
    row.loss = loss_sum / static_cast<double>(batches.size());
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
    row.train_coverage = cov_sum / static_cast<double>(tokens);
    if (!corpus.dev.empty() && cfg.eval_every > 0 && (st.epoch % cfg.eval_every == 0 || st.epoch == target_epochs)) {
      const auto dev = evaluate(cfg.model, st.params, corpus.dev, "dev", cfg.decode_limit());
      row.dev_token_error_rate = dev.token_error_rate;
      row.dev_delta_corpus = dev.latency.delta_corpus;
    }
    result.log.epochs.push_back(row);
    if (hook) hook(result.checkpoint, result.store, row);
  }
  return result;
}

std::string OptionalCell(const std::optional<double>& v) {
  if (!v) return "";
  if (std::isnan(*v)) return "nan";
  return textio::FormatFixed(*v);
}

void WriteValues(std::ostringstream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? " " : "") << textio::FormatExact(values[i]);
  os << '\n';
}

std::vector<double> ReadValues(std::istream& is, std::size_t n, const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("checkpoint truncated in " + what);
  std::istringstream in(line);
  std::vector<double> out;
  out.reserve(n);
  std::string w;
  while (in >> w) out.push_back(textio::ParseDouble(w));
  if (out.size() != n) {
    throw CheckpointError(what + " holds " + std::to_string(out.size()) + " values, expected " + std::to_string(n));
  }
  return out;
}

}  // namespace

// Names -----------------------------------------------------------------------

std::string_view ToString(Mode m) {
  switch (m) {
    case Mode::kSrmlt: return "srmlt";
    case Mode::kFixedMlt: return "fixed-mlt";
    case Mode::kBaseline: return "baseline";
  }
  return "srmlt";
}

Mode ParseMode(std::string_view s) {
  if (s == "srmlt") return Mode::kSrmlt;
  if (s == "fixed-mlt") return Mode::kFixedMlt;
  if (s == "baseline") return Mode::kBaseline;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected srmlt, fixed-mlt or baseline)");
}

std::string_view ToString(Phase p) { return p == Phase::kPretrain ? "pretrain" : "finetune"; }

std::string_view ToString(SweepAxis a) { return a == SweepAxis::kDelta ? "delta" : "granularity"; }

SweepAxis ParseSweepAxis(std::string_view s) {
  if (s == "delta") return SweepAxis::kDelta;
  if (s == "granularity") return SweepAxis::kGranularity;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected delta or granularity)");
}

// Config ----------------------------------------------------------------------

void RunConfig::Validate() const {
  if (pretrain_epochs < 0 || finetune_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (delta < 0) throw ConfigError("delta must be >= 0");
  if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (max_decode_steps < 0) throw ConfigError("max_decode_steps must be >= 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (data.train < 1) throw ConfigError("data.train must be >= 1");
  if (!(optim.peak_lr > 0.0) || optim.warmup_steps < 0 || !(optim.finetune_lr_scale > 0.0)) {
    throw ConfigError("learning rate settings must be positive");
  }
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (model.vocab_size != task.vocab_size || model.feature_dim != task.feature_dim) {
    throw ConfigError("model and task disagree on vocab_size or feature_dim");
  }
  try {
    model.Validate();
    task.Validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string ConfigToJson(const RunConfig& cfg, int indent) { return ToJson(cfg).dump(indent); }

RunConfig ParseConfig(std::string_view json_text, std::span<const std::string> overrides) {
  json merged = ToJson(RunConfig{});
  try {
    const std::string trimmed(textio::Trim(json_text));
    if (!trimmed.empty()) Merge(merged, json::parse(trimmed), "");
    for (const auto& flag : overrides) ApplyOverride(merged, flag);
    RunConfig cfg = FromJson(merged);
    cfg.Validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig LoadConfig(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::string text;
  try {
    text = textio::ReadFile(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  return ParseConfig(text, overrides);
}

Corpus MakeCorpus(const RunConfig& cfg) {
  const std::size_t n = cfg.data.train + cfg.data.dev + cfg.data.test;
  const synth::Dataset all = synth::generate(cfg.task, n);
  if (cfg.data.dev == 0 || cfg.data.test == 0) {
    // split() refuses empty parts; keep everything for training instead.
    Corpus c;
    c.train = all;
    return c;
  }
  const double total = static_cast<double>(n);
  auto parts = synth::split(all, {static_cast<double>(cfg.data.train) / total, static_cast<double>(cfg.data.dev) / total,
                                  static_cast<double>(cfg.data.test) / total});
  return {std::move(parts.train), std::move(parts.dev), std::move(parts.test)};
}

// Checkpoints -----------------------------------------------------------------

Checkpoint InitialCheckpoint(const RunConfig& cfg) {
  cfg.Validate();
  Checkpoint c;
  c.config = cfg;
  c.state.params = model::InitParams(cfg.model, cfg.seed);
  return c;
}

std::string SerializeCheckpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  const TrainState& s = ckpt.state;
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "config " << ConfigToJson(ckpt.config, -1) << '\n';
  os << "phase " << ToString(s.phase) << '\n';
  os << "epoch " << s.epoch << '\n';
  os << "global_step " << s.global_step << '\n';
  os << "noise_seed " << ckpt.config.seed << '\n';
  os << "tensors " << s.params.size() << '\n';
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const diff::Tensor& t = s.params.at(i);
    os << s.params.name(i) << ' ' << t.shape.size();
    for (std::size_t d : t.shape) os << ' ' << d;
    os << '\n';
    WriteValues(os, t.values);
  }
  os << "adam " << s.adam.step << ' ' << s.adam.m.size() << '\n';
  if (!s.adam.m.empty()) {
    WriteValues(os, s.adam.m);
    WriteValues(os, s.adam.v);
  }
  os << "end\n";
  return os.str();
}

Checkpoint ParseCheckpoint(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line, word;
  auto next = [&](const char* what) {
    if (!std::getline(is, line)) throw CheckpointError(std::string("checkpoint truncated before ") + what);
    return std::istringstream(line);
  };
  auto expect = [](std::istringstream& in, const char* key) {
    std::string w;
    if (!(in >> w) || w != key) throw CheckpointError(std::string("checkpoint: expected '") + key + "'");
  };
  Checkpoint c;
  {
    auto in = next("header");
    int version = 0;
    if (!(in >> word >> version) || word != kCheckpointMagic) throw CheckpointError("not a streamlat checkpoint");
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  {
    next("config");
    if (line.rfind("config ", 0) != 0) throw CheckpointError("checkpoint: expected 'config'");
    try {
      c.config = ParseConfig(line.substr(7));
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
  }
  TrainState& s = c.state;
  {
    auto in = next("phase");
    expect(in, "phase");
    in >> word;
    if (word == "pretrain") {
      s.phase = Phase::kPretrain;
    } else if (word == "finetune") {
      s.phase = Phase::kFinetune;
    } else {
      throw CheckpointError("checkpoint: unknown phase " + word);
    }
  }
  {
    auto in = next("epoch");
    expect(in, "epoch");
    if (!(in >> s.epoch)) throw CheckpointError("checkpoint: bad epoch");
  }
  {
    auto in = next("global_step");
    expect(in, "global_step");
    if (!(in >> s.global_step)) throw CheckpointError("checkpoint: bad global_step");
  }
  next("noise_seed");
  std::size_t count = 0;
  {
    auto in = next("tensors");
    expect(in, "tensors");
    if (!(in >> count)) throw CheckpointError("checkpoint: bad tensor count");
  }
  for (std::size_t i = 0; i < count; ++i) {
    auto in = next("tensor");
    std::string name;
    std::size_t rank = 0;
    if (!(in >> name >> rank)) throw CheckpointError("checkpoint: bad tensor header");
    diff::Shape shape(rank);
    for (auto& d : shape) {
      if (!(in >> d)) throw CheckpointError("checkpoint: bad shape for " + name);
    }
    auto values = ReadValues(is, diff::NumElements(shape), name);
    s.params.Add(name, diff::Tensor(std::move(shape), std::move(values)));
  }
  {
    auto in = next("adam");
    expect(in, "adam");
    std::size_t n = 0;
    if (!(in >> s.adam.step >> n)) throw CheckpointError("checkpoint: bad adam header");
    if (n > 0) {
      s.adam.m = ReadValues(is, n, "adam.m");
      s.adam.v = ReadValues(is, n, "adam.v");
    }
  }
  {
    auto in = next("end");
    expect(in, "end");
  }
  const model::ParamSet expected = model::InitParams(c.config.model, c.config.seed);
  if (expected.size() != s.params.size()) throw CheckpointError("checkpoint tensors do not match its model config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.name(i) != s.params.name(i) || expected.at(i).shape != s.params.at(i).shape) {
      throw CheckpointError("checkpoint tensor " + s.params.name(i) + " does not match its model config");
    }
  }
  return c;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  textio::WriteFile(path, SerializeCheckpoint(ckpt));
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint " + path.string() + " does not exist");
  return ParseCheckpoint(textio::ReadFile(path));
}

// Logs ------------------------------------------------------------------------

std::string TrainLog::CsvHeader() {
  return "phase,epoch,loss,train_accuracy,train_coverage,dev_token_error_rate,dev_delta_corpus,records_updated";
}

std::string TrainLog::Csv() const {
  std::ostringstream os;
  os << CsvHeader() << '\n';
  for (const auto& e : epochs) {
    os << ToString(e.phase) << ',' << e.epoch << ',' << textio::FormatFixed(e.loss) << ','
       << textio::FormatFixed(e.train_accuracy) << ',' << textio::FormatFixed(e.train_coverage) << ','
       << OptionalCell(e.dev_token_error_rate) << ',' << OptionalCell(e.dev_delta_corpus) << ','
       << e.records_updated << '\n';
  }
  return os.str();
}

// Evaluation ------------------------------------------------------------------

metrics::EvalSummary evaluate(const model::ModelConfig& cfg, const model::ParamSet& params,
                              const synth::Dataset& data, std::string label, int max_steps) {
  metrics::EvalSummary s;
  s.label = std::move(label);
  std::vector<std::vector<int>> hyps, refs;
  std::vector<metrics::LatencyInput> pairs;
  for (const auto& u : data) {
    const model::InferResult r = model::decode_infer(cfg, params, u.frames, max_steps);
    pairs.push_back(metrics::pair_for_latency(r.tokens, r.triggers, u.tokens, u.boundaries));
    hyps.push_back(r.tokens);
    refs.push_back(u.tokens);
    s.reference_tokens += u.tokens.size();
  }
  s.utterances = data.size();
  s.token_error_rate = metrics::token_error_rate(hyps, refs);
  try {
    s.latency = metrics::corpus_latency(pairs);
  } catch (const metrics::EmptyCorpus&) {
    s.latency.delta_corpus = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

// Training --------------------------------------------------------------------

std::vector<std::vector<std::size_t>> AssignBatches(const synth::Dataset& train, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const int la = train[a].num_frames(), lb = train[b].num_frames();
    if (la != lb) return la < lb;
    const auto ha = Fnv1a(train[a].id) ^ seed, hb = Fnv1a(train[b].id) ^ seed;
    return ha != hb ? ha < hb : train[a].id < train[b].id;
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

RecordStore GroundTruthStore(const RunConfig& cfg, const synth::Dataset& train) {
  RecordStore store(cfg.granularity, cfg.tolerance);
  for (const auto& u : train) {
    srmlt::BoundaryRecord r{u.id, SubsampledFrames(cfg, u), {}, u.id};
    for (int b : u.boundaries) r.triggers.push_back((b + cfg.model.subsample - 1) / cfg.model.subsample);
    store.Put(std::move(r));
  }
  store.Freeze();
  return store;
}

RecordStore Regranulate(const RecordStore& store, Granularity g) {
  RecordStore out(g, store.tolerance());
  for (const auto& [id, r] : store.records()) out.Put({id, r.frames, r.triggers, id});
  if (store.frozen()) out.Freeze();
  return out;
}

PhaseResult pretrain(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& start, RecordStore store,
                     const EpochHook& hook) {
  if (store.granularity() != cfg.granularity) store = Regranulate(store, cfg.granularity);
  return RunPhase(cfg, corpus, start, std::move(store), Phase::kPretrain, cfg.pretrain_epochs, hook);
}

PhaseResult finetune(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& start, RecordStore store,
                     const EpochHook& hook) {
  if (cfg.mode == Mode::kFixedMlt && !store.frozen()) store = GroundTruthStore(cfg, corpus.train);
  if (store.granularity() != cfg.granularity) store = Regranulate(store, cfg.granularity);
  CheckStoreMatches(store, corpus.train);
  return RunPhase(cfg, corpus, start, std::move(store), Phase::kFinetune, cfg.finetune_epochs, hook);
}

PhaseResult run_fixed_mlt(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& start,
                          const EpochHook& hook) {
  RunConfig c = cfg;
  c.mode = Mode::kFixedMlt;
  return finetune(c, corpus, start, GroundTruthStore(c, corpus.train), hook);
}

// Sweeps ----------------------------------------------------------------------

std::vector<SweepRow> sweep(const RunConfig& cfg, const Corpus& corpus, const Checkpoint& pretrained,
                            const RecordStore& store, SweepAxis axis, std::span<const std::string> values,
                            std::span<const Mode> modes) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (modes.empty()) throw ConfigError("sweep needs at least one mode");
  const synth::Dataset& eval_set = corpus.test.empty() ? corpus.dev : corpus.test;
  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    for (Mode mode : modes) {
      SweepRow row{axis, value, mode, std::nullopt, {}};
      try {
        RunConfig c = cfg;
        c.mode = mode;
        if (axis == SweepAxis::kDelta) {
          c.delta = static_cast<int>(textio::ParseInt(value));
        } else {
          c.granularity = srmlt::ParseGranularity(value);
        }
        c.Validate();
        const PhaseResult r = mode == Mode::kFixedMlt ? run_fixed_mlt(c, corpus, pretrained)
                                                      : finetune(c, corpus, pretrained, store);
        row.summary = evaluate(c.model, r.checkpoint.state.params, eval_set,
                               std::string(ToString(mode)) + ":" + std::string(ToString(axis)) + "=" + value,
                               c.decode_limit());
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string SweepCsvHeader() {
  return "axis,value,mode,utterances,reference_tokens,token_error_rate,delta_corpus,latency_tokens,error";
}

std::string SweepCsv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << SweepCsvHeader() << '\n';
  for (const auto& r : rows) {
    os << ToString(r.axis) << ',' << r.value << ',' << ToString(r.mode) << ',';
    if (r.summary) {
      const auto& s = *r.summary;
      os << s.utterances << ',' << s.reference_tokens << ',' << textio::FormatFixed(s.token_error_rate) << ','
         << OptionalCell(s.latency.delta_corpus) << ',' << s.latency.token_count << ',';
    } else {
      os << ",,,,,";
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << err << '\n';
  }
  return os.str();
}

}  // namespace streamlat::harness
