/*
 * Copyright 2026 The bmae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// bmae command-line entry point. Exit codes: 0 ok, 1 usage or config error,
// 2 data error, 3 numeric failure.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bmae/commands.hpp"
#include "bmae/error.hpp"

namespace {

using namespace bmae;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void report(const StageResult& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  Json j;
  j["run_dir"] = r.run_dir.string();
  j["summary"] = r.summary;
  std::cout << j.dump() << "\n";
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "Run config JSON (defaults when omitted)");
  sub->add_option("--seed", c.seed, "Override the config seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked spectrogram autoencoder experiments"};
  app.require_subcommand(1);

  Common common;
  StageFlags flags;
  std::string init, resume, scorer, train_manifest, mix, mode;
  std::optional<double> fraction, threshold, drop_fraction;
  std::string axis, values, seeds = "0";

  auto* synth = app.add_subcommand("synth", "Write the synthetic corpus and manifest");
  auto* prep = app.add_subcommand("prep", "Compute the spectrogram cache");
  auto* pre = app.add_subcommand("pretrain", "Masked-reconstruction pretraining");
  auto* fine = app.add_subcommand("finetune", "Finetune encoder and head");
  auto* probe = app.add_subcommand("probe", "Linear probe on a frozen encoder");
  auto* curate = app.add_subcommand("curate", "Score and filter training segments");
  auto* eval = app.add_subcommand("evaluate", "File-level metrics of a checkpoint");
  auto* grid = app.add_subcommand("grid", "Sweep one axis over seeds");
  auto* show = app.add_subcommand("config", "Print the resolved config and its hash");
  for (auto* s : {show, synth, prep, pre, fine, probe, curate, eval, grid}) add_common(s, common);

  for (auto* s : {pre, fine, probe, curate, eval, grid})
    s->add_option("--init", init, "Checkpoint to start from (curate/evaluate: model to use)");
  for (auto* s : {pre, fine, probe}) {
    s->add_option("--resume", resume, "Continue from a checkpoint with optimizer state");
    s->add_flag("--encoder-only-export", flags.encoder_only_export, "Also write encoder.bmae");
  }
  for (auto* s : {pre, fine, probe, curate})
    s->add_option("--train-manifest", train_manifest, "Training rows (e.g. a filtered manifest)");
  pre->add_flag("--freeze-decoder", flags.freeze_decoder, "Keep decoder weights fixed");
  pre->add_flag("--reinit-decoder", flags.reinit_decoder, "Fresh decoder on top of --init");
  pre->add_option("--mix", mix, "General:bio batch ratio, e.g. 15:1");
  for (auto* s : {fine, probe}) s->add_option("--fraction", fraction, "Labeled fraction in (0, 1]");
  for (auto* s : {curate, grid})
    s->add_option("--mode", mode, "conf | recon")->check(CLI::IsMember({"conf", "recon", "conf_keep_high", "recon_keep_high"}));
  curate->add_option("--threshold", threshold, "Keep segments with score >= threshold");
  curate->add_option("--drop-fraction", drop_fraction, "Threshold at this score quantile")
      ->excludes("--threshold");
  eval->add_option("--split", flags.split, "val | test")->check(CLI::IsMember({"train", "val", "test"}));
  grid->add_option("--axis", axis, "fraction | mix_ratio | threshold")->required();
  grid->add_option("--values", values, "Comma-separated axis values")->required();
  grid->add_option("--seeds", seeds, "Comma-separated seeds");
  grid->add_option("--scorer", scorer, "Classifier checkpoint for the threshold axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (!init.empty()) flags.init = init;
    if (!resume.empty()) flags.resume = resume;
    if (!scorer.empty()) flags.scorer = scorer;
    if (!train_manifest.empty()) flags.train_manifest = train_manifest;
    if (!mix.empty()) flags.mix = MixSpec::parse(mix);
    if (!mode.empty()) flags.mode = parse_filter_mode(mode);
    flags.fraction = fraction;
    flags.threshold = threshold;
    flags.drop_fraction = drop_fraction;
    const auto cfg = load(common);

    if (*show) {
      cfg.validate();
      Json j;
      j["config_hash"] = config_hash(cfg);
      j["config"] = to_json(cfg.resolved());
      std::cout << j.dump(2) << "\n";
    } else if (*synth) {
      const auto rows = cmd_synth(cfg);
      std::cout << "{\"manifest_rows\": " << rows.size() << "}\n";
    } else if (*prep) {
      const auto r = cmd_prep(cfg);
      std::cout << "{\"written\": " << r.n_written << ", \"skipped\": " << r.n_skipped
                << ", \"segments\": " << r.n_segments << "}\n";
    } else if (*pre) {
      report(cmd_pretrain(cfg, flags));
    } else if (*fine) {
      report(cmd_finetune(cfg, flags));
    } else if (*probe) {
      report(cmd_probe(cfg, flags));
    } else if (*curate) {
      report(cmd_curate(cfg, flags));
    } else if (*eval) {
      report(cmd_evaluate(cfg, flags));
    } else if (*grid) {
      std::vector<std::uint64_t> seed_list;
      for (const auto& s : split_list(seeds)) seed_list.push_back(std::stoull(s));
      report(cmd_grid(cfg, parse_grid_axis(axis), split_list(values), seed_list, flags));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: bad number: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
