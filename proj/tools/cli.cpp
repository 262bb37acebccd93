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

#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "streamlat/harness.hpp"
#include "streamlat/selfcheck.hpp"
#include "streamlat/textio.hpp"

#ifndef STREAMLAT_VERSION
#define STREAMLAT_VERSION "0.0.0"
#endif

namespace streamlat::cli {
namespace {

namespace fs = std::filesystem;
using harness::Checkpoint;
using harness::ConfigError;
using harness::Corpus;
using harness::RunConfig;
using json = nlohmann::ordered_json;

// Bad input the user can fix: exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // --section.key=value, in command-line order
};

bool IsOverride(const std::string& arg) {
  if (arg.rfind("--", 0) != 0) return false;
  const auto eq = arg.find('=');
  const auto dot = arg.find('.');
  return dot != std::string::npos && (eq == std::string::npos || dot < eq);
}

void RequireFile(const std::string& path, const std::string& what, const std::string& flag) {
  if (path.empty()) throw UsageError(what + " is required; pass " + flag + " <path>");
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path + " (check " + flag + ")");
}

std::vector<std::string> AllOverrides(const Common& c) {
  auto ov = c.overrides;
  if (c.seed) ov.push_back("--train.seed=" + std::to_string(*c.seed));
  return ov;
}

RunConfig ResolveConfig(const Common& c, const RunConfig* fallback) {
  const auto ov = AllOverrides(c);
  if (!c.config.empty()) {
    RequireFile(c.config, "config file", "--config");
    return harness::LoadConfig(c.config, ov);
  }
  if (fallback != nullptr) return harness::ParseConfig(harness::ConfigToJson(*fallback), ov);
  return harness::ParseConfig("{}", ov);
}

fs::path OutputDir(const Common& c, const std::string& sub) {
  if (!c.out.empty()) return c.out;
  const char* root = std::getenv(kOutputRootEnv);
  return fs::path(root != nullptr && *root != '\0' ? root : "streamlat-out") / sub;
}

Checkpoint LoadCheckpointArg(const std::string& path) {
  RequireFile(path, "checkpoint", "--checkpoint");
  return harness::LoadCheckpoint(path);
}

void CheckCompatible(const RunConfig& cfg, const Checkpoint& ckpt) {
  const auto expect = model::InitParams(cfg.model, 0);
  bool same = expect.size() == ckpt.state.params.size();
  for (std::size_t i = 0; same && i < expect.size(); ++i) {
    same = expect.name(i) == ckpt.state.params.name(i) && expect.at(i).shape == ckpt.state.params.at(i).shape;
  }
  if (!same) {
    throw ConfigError("model section does not match the checkpoint's parameters; drop model overrides or use "
                      "the config the checkpoint was trained with");
  }
}

Corpus LoadCorpus(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return harness::MakeCorpus(cfg);
  Corpus c;
  const fs::path dir(data_dir);
  for (auto [name, part] : {std::pair{"train", &c.train}, {"dev", &c.dev}, {"test", &c.test}}) {
    const fs::path p = dir / (std::string(name) + ".txt");
    if (!fs::is_regular_file(p)) throw UsageError("dataset split missing: " + p.string() + " (run gen-data first)");
    *part = synth::LoadDataset(p);
  }
  return c;
}

json Manifest(const std::string& sub, const RunConfig& cfg, const Common& c, const json& inputs,
              const std::vector<std::string>& outputs) {
  json m;
  m["tool"] = "streamlat";
  m["subcommand"] = sub;
  m["seed"] = cfg.seed;
  m["overrides"] = AllOverrides(c);
  m["config_file"] = c.config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["config"] = json::parse(harness::ConfigToJson(cfg));
  json v;
  v["streamlat"] = STREAMLAT_VERSION;
  v["compiler"] = __VERSION__;
  v["cplusplus"] = __cplusplus;
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                       "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  v["cli11"] = CLI11_VERSION;
  m["versions"] = v;
  return m;
}

void WriteManifest(const fs::path& dir, const json& m) { textio::WriteFile(dir / "manifest.json", m.dump(2) + "\n"); }

std::string Fmt(std::optional<double> v) { return v ? textio::FormatFixed(*v, 4) : "-"; }

harness::EpochHook Progress(std::ostream& out, const fs::path& dir, int save_every, const std::string& stem) {
  return [&out, dir, save_every, stem](const Checkpoint& ck, const srmlt::RecordStore& store,
                                       const harness::EpochStats& e) {
    out << harness::ToString(e.phase) << " epoch " << e.epoch << "  loss " << textio::FormatFixed(e.loss, 4)
        << "  acc " << textio::FormatFixed(e.train_accuracy, 4) << "  cov " << textio::FormatFixed(e.train_coverage, 4)
        << "  dev_ter " << Fmt(e.dev_token_error_rate) << "  dev_delta " << Fmt(e.dev_delta_corpus) << "  updated "
        << e.records_updated << '\n';
    if (save_every > 0 && e.epoch % save_every == 0) {
      char tag[32];
      std::snprintf(tag, sizeof(tag), "-e%03d", e.epoch);
      harness::SaveCheckpoint(dir / "epochs" / (stem + tag + ".ckpt"), ck);
      store.Save(dir / "epochs" / (stem + tag + ".records"));
    }
  };
}

void WritePhase(const fs::path& dir, const std::string& stem, const harness::PhaseResult& r,
                std::vector<std::string>& outputs) {
  harness::SaveCheckpoint(dir / (stem + ".ckpt"), r.checkpoint);
  r.store.Save(dir / (stem + ".records"));
  textio::WriteFile(dir / "train_log.csv", r.log.Csv());
  outputs.insert(outputs.end(), {stem + ".ckpt", stem + ".records", "train_log.csv"});
}

int ReportChecks(const selfcheck::Report& r, const fs::path& dir, const std::string& file, std::ostream& out) {
  std::ostringstream os;
  for (const auto& c : r.checks) os << selfcheck::Format(c) << '\n';
  os << (r.passed() ? "all checks passed" : "CHECK FAILURES") << '\n';
  out << os.str();
  textio::WriteFile(dir / file, os.str());
  return r.passed() ? kExitOk : kExitRuntime;
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> v;
  for (const auto& part : textio::Split(s, ',')) {
    const auto t = textio::Trim(part);
    if (!t.empty()) v.emplace_back(t);
  }
  return v;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Common common;
  std::vector<std::string> rest;
  for (const auto& a : args) {
    if (IsOverride(a)) {
      if (a.find('=') == std::string::npos) {
        err << "error: override " << a << " needs a value, e.g. " << a << "=VALUE\n";
        return kExitUsage;
      }
      common.overrides.push_back(a);
    } else {
      rest.push_back(a);
    }
  }

  CLI::App app{"streamlat: streaming-attention latency laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  auto add_common = [&](CLI::App* s, bool config) {
    if (config) s->add_option("--config", common.config, "JSON config file (overrides apply on top)");
    s->add_option("--out", common.out, std::string("Output directory (default $") + kOutputRootEnv + "/<subcommand>)");
    s->add_option("--seed", common.seed, "Shortcut for --train.seed=N");
  };

  std::string data_dir, checkpoint, records, split = "test", axis = "delta", values, modes = "srmlt,fixed-mlt";
  int save_every = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate train/dev/test splits of the synthetic task");
  add_common(gen, true);
  auto* pre = app.add_subcommand("pretrain", "Pre-train and record triggering points");
  add_common(pre, true);
  pre->add_option("--data", data_dir, "Directory written by gen-data (default: regenerate from config)");
  pre->add_option("--save-every", save_every, "Also save checkpoint and records every N epochs");
  auto* fine = app.add_subcommand("finetune", "SR-MLT fine-tuning from a pre-trained checkpoint");
  add_common(fine, true);
  fine->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint")->required();
  fine->add_option("--records", records, "Record store written by pretrain (required in srmlt mode)");
  fine->add_option("--data", data_dir, "Directory written by gen-data");
  fine->add_option("--save-every", save_every, "Also save checkpoint and records every N epochs");
  auto* fixed = app.add_subcommand("fixed-mlt", "Fine-tune with ground-truth boundaries (vanilla MLT)");
  add_common(fixed, true);
  fixed->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint")->required();
  fixed->add_option("--data", data_dir, "Directory written by gen-data");
  fixed->add_option("--save-every", save_every, "Also save checkpoint every N epochs");
  auto* eval = app.add_subcommand("eval", "Greedy decoding: token error rate and corpus latency");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--split", split, "dev or test")->check(CLI::IsMember({"dev", "test"}));
  eval->add_option("--data", data_dir, "Directory written by gen-data");
  auto* sw = app.add_subcommand("sweep", "Fine-tune per value and mode from one checkpoint");
  add_common(sw, true);
  sw->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint")->required();
  sw->add_option("--records", records, "Record store written by pretrain");
  sw->add_option("--axis", axis, "delta or granularity")->check(CLI::IsMember({"delta", "granularity"}));
  sw->add_option("--values", values, "Comma-separated values (default: 0,1,2,3,4 or all granularities)");
  sw->add_option("--modes", modes, "Comma-separated modes from srmlt, fixed-mlt, baseline");
  sw->add_option("--data", data_dir, "Directory written by gen-data");
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_common(gc, false);
  auto* oc = app.add_subcommand("oracle-check", "Brute-force oracle suite");
  add_common(oc, false);

  std::vector<const char*> argv{"streamlat"};
  for (const auto& a : rest) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun 'streamlat --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (gc->parsed() || oc->parsed()) {
      const RunConfig cfg = ResolveConfig(common, nullptr);
      const std::string sub = gc->parsed() ? "gradcheck" : "oracle-check";
      const fs::path dir = OutputDir(common, sub);
      const auto report = gc->parsed() ? selfcheck::GradientSuite(cfg.seed) : selfcheck::OracleSuite(cfg.seed);
      const std::string file = sub + ".txt";
      const int code = ReportChecks(report, dir, file, out);
      WriteManifest(dir, Manifest(sub, cfg, common, json::object(), {file}));
      return code;
    }

    if (gen->parsed()) {
      const RunConfig cfg = ResolveConfig(common, nullptr);
      const fs::path dir = OutputDir(common, "gen-data");
      const Corpus c = harness::MakeCorpus(cfg);
      synth::SaveDataset(dir / "train.txt", c.train);
      synth::SaveDataset(dir / "dev.txt", c.dev);
      synth::SaveDataset(dir / "test.txt", c.test);
      textio::WriteFile(dir / "config.json", harness::ConfigToJson(cfg) + "\n");
      WriteManifest(dir, Manifest("gen-data", cfg, common, json::object(),
                                  {"train.txt", "dev.txt", "test.txt", "config.json"}));
      out << "wrote " << c.train.size() << '/' << c.dev.size() << '/' << c.test.size()
          << " train/dev/test utterances to " << dir.string() << '\n';
      return kExitOk;
    }

    if (pre->parsed()) {
      const RunConfig cfg = ResolveConfig(common, nullptr);
      const fs::path dir = OutputDir(common, "pretrain");
      const Corpus c = LoadCorpus(cfg, data_dir);
      const auto r = harness::pretrain(cfg, c, harness::InitialCheckpoint(cfg),
                                       srmlt::RecordStore(cfg.granularity, cfg.tolerance),
                                       Progress(out, dir, save_every, "pretrain"));
      std::vector<std::string> outputs;
      WritePhase(dir, "pretrain", r, outputs);
      WriteManifest(dir, Manifest("pretrain", cfg, common, json{{"data", data_dir}}, outputs));
      return kExitOk;
    }

    const Checkpoint ckpt = LoadCheckpointArg(checkpoint);
    RunConfig cfg = ResolveConfig(common, &ckpt.config);
    CheckCompatible(cfg, ckpt);
    const Corpus c = LoadCorpus(cfg, data_dir);
    json inputs{{"checkpoint", checkpoint}, {"records", records}, {"data", data_dir}};

    auto load_store = [&]() {
      if (records.empty()) {
        throw UsageError("--records is required in " + std::string(harness::ToString(cfg.mode)) +
                         " mode; pass the .records file written by pretrain");
      }
      RequireFile(records, "record store", "--records");
      return srmlt::RecordStore::Load(records);
    };

    if (fine->parsed() || fixed->parsed()) {
      if (fixed->parsed()) cfg.mode = harness::Mode::kFixedMlt;
      const std::string sub = fixed->parsed() ? "fixed-mlt" : "finetune";
      const std::string stem = fixed->parsed() ? "fixed_mlt" : "finetune";
      const fs::path dir = OutputDir(common, sub);
      const auto hook = Progress(out, dir, save_every, stem);
      harness::PhaseResult r;
      if (cfg.mode == harness::Mode::kFixedMlt) {
        r = harness::run_fixed_mlt(cfg, c, ckpt, hook);
      } else if (cfg.mode == harness::Mode::kBaseline) {
        r = harness::finetune(cfg, c, ckpt, records.empty() ? srmlt::RecordStore(cfg.granularity, cfg.tolerance)
                                                            : load_store(), hook);
      } else {
        r = harness::finetune(cfg, c, ckpt, load_store(), hook);
      }
      std::vector<std::string> outputs;
      WritePhase(dir, stem, r, outputs);
      WriteManifest(dir, Manifest(sub, cfg, common, inputs, outputs));
      return kExitOk;
    }

    if (eval->parsed()) {
      const fs::path dir = OutputDir(common, "eval");
      const auto& set = split == "dev" ? c.dev : c.test;
      if (set.empty()) throw UsageError("the " + split + " split is empty; set data." + split + " > 0");
      const auto s = harness::evaluate(cfg.model, ckpt.state.params, set,
                                       fs::path(checkpoint).stem().string() + ":" + split, cfg.decode_limit());
      const std::string report = metrics::FormatReport(s);
      out << report;
      textio::WriteFile(dir / "report.txt", report);
      textio::WriteFile(dir / "results.csv", metrics::ResultsCsvHeader() + "\n" + metrics::ResultsCsvRow(s) + "\n");
      inputs["split"] = split;
      WriteManifest(dir, Manifest("eval", cfg, common, inputs, {"results.csv", "report.txt"}));
      return kExitOk;
    }

    // sweep
    const fs::path dir = OutputDir(common, "sweep");
    const auto ax = harness::ParseSweepAxis(axis);
    std::vector<std::string> vals = SplitList(values);
    if (vals.empty()) {
      vals = ax == harness::SweepAxis::kDelta ? std::vector<std::string>{"0", "1", "2", "3", "4"}
                                              : std::vector<std::string>{"token", "utterance", "minibatch"};
    }
    std::vector<harness::Mode> mode_list;
    for (const auto& m : SplitList(modes)) mode_list.push_back(harness::ParseMode(m));
    if (mode_list.empty()) throw UsageError("--modes lists no modes");
    bool needs_store = false;
    for (auto m : mode_list) needs_store = needs_store || m == harness::Mode::kSrmlt;
    const srmlt::RecordStore store = needs_store ? load_store() : srmlt::RecordStore(cfg.granularity, cfg.tolerance);
    const auto rows = harness::sweep(cfg, c, ckpt, store, ax, vals, mode_list);
    const std::string csv = harness::SweepCsv(rows);
    textio::WriteFile(dir / "sweep.csv", csv);
    out << csv;
    inputs["axis"] = axis;
    inputs["values"] = vals;
    inputs["modes"] = SplitList(modes);
    WriteManifest(dir, Manifest("sweep", cfg, common, inputs, {"sweep.csv"}));
    for (const auto& r : rows) {
      if (!r.error.empty()) {
        err << "error: sweep row " << r.value << '/' << harness::ToString(r.mode) << " failed: " << r.error << '\n';
        return kExitRuntime;
      }
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace streamlat::cli
