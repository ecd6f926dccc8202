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

#include "bmae/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bmae/checkpoint.hpp"
#include "bmae/error.hpp"
#include "bmae/prng.hpp"

namespace bmae {

namespace fs = std::filesystem;

Json StageFlags::to_json() const {
  Json j = Json::object();
  auto path = [](const std::optional<fs::path>& p) { return p ? Json(p->string()) : Json(nullptr); };
  j["init"] = path(init);
  j["resume"] = path(resume);
  j["scorer"] = path(scorer);
  j["train_manifest"] = path(train_manifest);
  j["freeze_decoder"] = freeze_decoder;
  j["reinit_decoder"] = reinit_decoder;
  j["encoder_only_export"] = encoder_only_export;
  j["mix"] = mix ? Json(mix->str()) : Json(nullptr);
  j["fraction"] = fraction ? Json(*fraction) : Json(nullptr);
  j["mode"] = mode ? Json(std::string(bmae::to_string(*mode))) : Json(nullptr);
  j["threshold"] = threshold ? Json(*threshold) : Json(nullptr);
  j["drop_fraction"] = drop_fraction ? Json(*drop_fraction) : Json(nullptr);
  j["split"] = split;
  return j;
}

namespace {

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

fs::path corpus_manifest(const RunConfig& cfg) {
  const fs::path p = fs::path(cfg.paths.corpus_dir) / "manifest.jsonl";
  if (!fs::exists(p)) throw DataError("missing artifact " + p.string() + " (run synth first)");
  return p;
}

CacheSource open_cache(const RunConfig& cfg) {
  const fs::path dir = cfg.paths.cache_dir;
  if (!fs::exists(dir / "segments.jsonl"))
    throw DataError("missing artifact " + (dir / "segments.jsonl").string() + " (run prep first)");
  return CacheSource(dir, cfg.dsp);
}

Checkpoint load_required(const std::optional<fs::path>& p, const char* what) {
  if (!p) throw ConfigError(std::string(what) + " requires --init <checkpoint>");
  if (!fs::exists(*p)) throw DataError("missing artifact " + p->string());
  return load_checkpoint(*p);
}

Manifest split_rows(const RunConfig& cfg, Split split) {
  return filter_split(read_manifest(corpus_manifest(cfg)), split);
}

Manifest train_rows(const RunConfig& cfg, const StageFlags& flags) {
  if (!flags.train_manifest) return split_rows(cfg, Split::kTrain);
  if (!fs::exists(*flags.train_manifest))
    throw DataError("missing artifact " + flags.train_manifest->string());
  return filter_split(read_manifest(*flags.train_manifest), Split::kTrain);
}

CheckpointMeta meta_for(const RunConfig& cfg, const TrainConfig* tcfg, std::int64_t epoch,
                        const std::string& stage) {
  CheckpointMeta m;
  m.model = cfg.model;
  m.train = tcfg ? to_json(*tcfg) : Json(nullptr);
  m.epoch = epoch;
  m.extra["stage"] = stage;
  m.extra["config_hash"] = config_hash(cfg);
  m.extra["seed"] = cfg.seed;
  return m;
}

// Creates the run directory and records the resolved config and flags.
fs::path open_run(const RunConfig& cfg, const std::string& stage, const StageFlags& flags) {
  const auto dir = run_dir_for(cfg, stage, flags);
  fs::create_directories(dir);
  save_run_config(dir / "config.json", cfg);
  Json run;
  run["stage"] = stage;
  run["config_hash"] = config_hash(cfg);
  run["seed"] = cfg.seed;
  run["flags"] = flags.to_json();
  write_json(dir / "run.json", run);
  if (!flags.resume) {
    fs::remove(dir / "trace.jsonl");
    fs::remove(dir / "steps.jsonl");
  }
  return dir;
}

std::string epoch_file(std::int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04lld.bmae", static_cast<long long>(epoch));
  return buf;
}

std::optional<TrainState> resume_state(const StageFlags& flags) {
  if (!flags.resume) return std::nullopt;
  if (!fs::exists(*flags.resume)) throw DataError("missing artifact " + flags.resume->string());
  auto ck = load_checkpoint(*flags.resume);
  if (!ck.optim) throw DataError(flags.resume->string() + " holds no optimizer state; cannot resume");
  return TrainState{std::move(ck.params), std::move(*ck.optim), ck.meta.epoch};
}

EpochHook checkpoint_hook(const fs::path& dir, const RunConfig& cfg, const TrainConfig& tcfg,
                          const std::string& stage) {
  return [dir, cfg, tcfg, stage](const TrainState& s, const std::vector<TraceRecord>&) {
    const auto meta = meta_for(cfg, &tcfg, s.epoch, stage);
    if (tcfg.save_every > 0 && s.epoch % tcfg.save_every == 0)
      save_checkpoint(dir / epoch_file(s.epoch), s.params, meta, &s.optim);
  };
}

Json metrics_json(const MetricsReport& r) {
  Json j;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["loss"] = r.loss;
  j["n_files"] = r.n_files;
  j["n_eval_classes"] = r.n_eval_classes;
  return j;
}

StageResult supervised(const RunConfig& raw, const StageFlags& flags, bool probe) {
  const auto cfg = raw.resolved();
  cfg.validate();
  const std::string stage = probe ? "probe" : "finetune";
  const auto& tcfg = probe ? cfg.train.probe : cfg.train.finetune;
  const auto rows = train_rows(cfg, flags);
  const auto val = split_rows(cfg, Split::kVal);
  const auto src = open_cache(cfg);

  Parameters init;
  if (probe || flags.init) {
    init = load_required(flags.init, stage.c_str()).params;
  } else {
    init = init_parameters<float>(cfg.model, cfg.seed);
  }
  const auto resume = resume_state(flags);
  const auto dir = open_run(cfg, stage, flags);

  SupervisedOptions o;
  if (flags.fraction) o.fraction = FractionSpec{*flags.fraction, cfg.seed, true};
  if (resume) o.resume = &*resume;
  o.eval = cfg.eval;
  o.on_epoch = checkpoint_hook(dir, cfg, tcfg, stage);
  const auto res = probe ? linear_probe(rows, val, src, cfg.model, tcfg, init, o)
                         : finetune(rows, val, src, cfg.model, tcfg, init, o);

  save_checkpoint(dir / "best.bmae", res.best, meta_for(cfg, &tcfg, res.best_epoch, stage));
  save_checkpoint(dir / "last.bmae", res.last.params, meta_for(cfg, &tcfg, res.last.epoch, stage),
                  &res.last.optim);
  if (flags.encoder_only_export)
    export_encoder(dir / "encoder.bmae", res.best, meta_for(cfg, &tcfg, res.best_epoch, stage));
  append_trace(dir / "trace.jsonl", res.trace);
  write_report_json(dir / "metrics_val.json", res.best_val, "val", dir.filename().string());

  StageResult out;
  out.run_dir = dir;
  out.summary = metrics_json(res.best_val);
  out.summary["best_epoch"] = res.best_epoch;
  out.summary["n_train_files"] = res.n_train_files;
  return out;
}

}  // namespace

fs::path run_dir_for(const RunConfig& cfg, const std::string& stage, const StageFlags& flags) {
  auto f = flags.to_json();
  f.erase("resume");  // a resumed run continues in the same directory
  const auto h = fnv1a64(stage + "|" + config_hash(cfg) + "|" + f.dump());
  return fs::path(cfg.paths.runs_dir) /
         (stage + "-" + hex16(h) + "-seed" + std::to_string(cfg.resolved().seed));
}

Manifest cmd_synth(const RunConfig& raw) {
  const auto cfg = raw.resolved();
  cfg.corpus.validate();
  const fs::path dir = cfg.paths.corpus_dir;
  fs::create_directories(dir);
  auto rows = synthesize_to_disk(cfg.corpus, dir);
  save_run_config(dir / "config.json", cfg);
  return rows;
}

PrepReport cmd_prep(const RunConfig& raw) {
  const auto cfg = raw.resolved();
  cfg.dsp.validate();
  const auto manifest = corpus_manifest(cfg);
  const fs::path cache = cfg.paths.cache_dir;
  fs::create_directories(cache);
  auto report = prep_cache(read_manifest(manifest), manifest.parent_path(), cache, cfg.dsp);
  save_run_config(cache / "config.json", cfg);
  if (!report.failed.empty()) {
    std::string msg = std::to_string(report.failed.size()) + " recording(s) failed:";
    for (const auto& f : report.failed) msg += "\n  " + f;
    throw DataError(msg);
  }
  return report;
}

StageResult cmd_pretrain(const RunConfig& raw, const StageFlags& flags) {
  const auto cfg = raw.resolved();
  cfg.validate();
  const auto& tcfg = cfg.train.pretrain;
  const auto rows = train_rows(cfg, flags);
  const auto src = open_cache(cfg);
  std::optional<Parameters> init;
  if (flags.init) init = load_required(flags.init, "pretrain").params;
  const auto resume = resume_state(flags);
  const auto dir = open_run(cfg, "pretrain", flags);

  PretrainOptions o;
  o.mix = flags.mix ? flags.mix : cfg.mix;
  o.freeze_decoder = flags.freeze_decoder;
  o.reinit_decoder = flags.reinit_decoder;
  if (init) o.init = &*init;
  if (resume) o.resume = &*resume;
  o.on_epoch = checkpoint_hook(dir, cfg, tcfg, "pretrain");
  const auto res = pretrain(rows, src, cfg.model, tcfg, o);

  const auto meta = meta_for(cfg, &tcfg, res.state.epoch, "pretrain");
  save_checkpoint(dir / "last.bmae", res.state.params, meta, &res.state.optim);
  if (flags.encoder_only_export) export_encoder(dir / "encoder.bmae", res.state.params, meta);
  append_trace(dir / "trace.jsonl", res.trace);
  {
    std::ofstream steps(dir / "steps.jsonl", std::ios::app);
    for (const auto& s : res.steps) {
      Json j;
      j["step"] = s.step;
      j["epoch"] = s.epoch;
      j["loss"] = s.loss;
      j["lr"] = s.lr;
      j["n_general"] = s.n_general;
      j["n_bio"] = s.n_bio;
      steps << j.dump() << "\n";
    }
  }
  StageResult out;
  out.run_dir = dir;
  out.warnings = res.warnings;
  out.summary["steps"] = res.steps.size();
  if (!res.steps.empty()) {
    out.summary["first_loss"] = res.steps.front().loss;
    out.summary["last_loss"] = res.steps.back().loss;
  }
  if (!res.trace.empty()) out.summary["final_epoch_loss"] = res.trace.back().loss;
  return out;
}

StageResult cmd_finetune(const RunConfig& cfg, const StageFlags& flags) {
  return supervised(cfg, flags, false);
}

StageResult cmd_probe(const RunConfig& cfg, const StageFlags& flags) {
  return supervised(cfg, flags, true);
}

StageResult cmd_evaluate(const RunConfig& raw, const StageFlags& flags) {
  const auto cfg = raw.resolved();
  cfg.validate();
  const auto split = parse_split(flags.split);
  const auto rows = split_rows(cfg, split);
  const auto src = open_cache(cfg);
  const auto ck = load_required(flags.init, "evaluate");
  const auto ds = build_dataset(rows, src);
  const auto report = evaluate(ds, src, ck.params, cfg.model, cfg.eval);
  const auto dir = open_run(cfg, "evaluate", flags);
  const auto id = dir.filename().string();
  write_report_json(dir / ("metrics_" + flags.split + ".json"), report, flags.split, id);
  write_report_csv(dir / ("metrics_" + flags.split + ".csv"), report, flags.split, id);
  StageResult out;
  out.run_dir = dir;
  out.summary = metrics_json(report);
  return out;
}

StageResult cmd_curate(const RunConfig& raw, const StageFlags& flags) {
  const auto cfg = raw.resolved();
  cfg.validate();
  const auto mode = flags.mode ? *flags.mode : cfg.curation.mode;
  const auto rows = train_rows(cfg, flags);
  const auto src = open_cache(cfg);
  const auto ck = load_required(flags.init, "curate");
  const auto ds = build_dataset(rows, src);
  const auto scores =
      mode == FilterMode::kConfKeepHigh
          ? score_segments_classifier(ds, src, ck.params, cfg.model, cfg.curation.batch_size)
          : score_segments_recon(ds, src, ck.params, cfg.model, cfg.curation.n_draws,
                                 cfg.curation.seed, cfg.curation.batch_size);
  double tau = cfg.curation.threshold;
  if (flags.threshold) tau = *flags.threshold;
  if (flags.drop_fraction) {
    if (!(*flags.drop_fraction >= 0.0 && *flags.drop_fraction <= 1.0))
      throw ConfigError("drop fraction must be in [0, 1]");
    tau = score_quantile(scores, mode, *flags.drop_fraction);
  }
  const auto res = filter_segments(scores, mode, tau);

  const auto dir = open_run(cfg, "curate", flags);
  write_scores_csv(dir / "scores.csv", scores);
  {
    std::ofstream out(dir / "retention.json", std::ios::trunc);
    out << report_json(res.report, mode) << "\n";
  }
  StageResult out;
  out.run_dir = dir;
  out.warnings = res.warnings;
  out.summary = Json::parse(report_json(res.report, mode));
  if (!res.kept.empty()) {
    write_manifest(emit_filtered_manifest(scores, res.kept, rows), dir / "manifest_filtered.jsonl");
  } else {
    fs::remove(dir / "manifest_filtered.jsonl");
    out.warnings.push_back("no segments kept; manifest_filtered.jsonl not written");
  }
  return out;
}

GridAxis parse_grid_axis(std::string_view s) {
  if (s == "fraction") return GridAxis::kFraction;
  if (s == "mix_ratio" || s == "mix") return GridAxis::kMixRatio;
  if (s == "threshold") return GridAxis::kThreshold;
  throw ConfigError("grid: unknown axis '" + std::string(s) + "'");
}

std::string_view to_string(GridAxis a) {
  switch (a) {
    case GridAxis::kFraction: return "fraction";
    case GridAxis::kMixRatio: return "mix_ratio";
    case GridAxis::kThreshold: return "threshold";
  }
  return "?";
}

namespace {

double parse_number(const std::string& v, const char* what) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty())
    throw ConfigError(std::string("grid: bad ") + what + " value '" + v + "'");
  return x;
}

GridCell run_cell(const RunConfig& base, GridAxis axis, const std::string& value,
                  std::uint64_t seed, const StageFlags& flags) {
  GridCell cell;
  cell.value = value;
  cell.seed = seed;
  RunConfig cfg = base;
  cfg.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    StageFlags ft;
    ft.init = flags.init;
    ft.encoder_only_export = false;
    StageResult r;
    switch (axis) {
      case GridAxis::kFraction:
        ft.fraction = parse_number(value, "fraction");
        r = cmd_finetune(cfg, ft);
        break;
      case GridAxis::kMixRatio: {
        StageFlags pt;
        pt.init = flags.init;
        pt.mix = MixSpec::parse(value);
        const auto p = cmd_pretrain(cfg, pt);
        ft.init = p.run_dir / "last.bmae";
        r = cmd_finetune(cfg, ft);
        break;
      }
      case GridAxis::kThreshold: {
        if (!flags.scorer) throw ConfigError("grid threshold axis requires --scorer <checkpoint>");
        StageFlags cu;
        cu.init = flags.scorer;
        cu.mode = flags.mode ? flags.mode : FilterMode::kConfKeepHigh;
        cu.threshold = parse_number(value, "threshold");
        const auto c = cmd_curate(cfg, cu);
        ft.train_manifest = c.run_dir / "manifest_filtered.jsonl";
        r = cmd_finetune(cfg, ft);
        break;
      }
    }
    cell.top1 = r.summary["top1"].get<double>();
    cell.top5 = r.summary["top5"].get<double>();
  } catch (const std::exception& e) {
    cell.status = std::string("error: ") + e.what();
  }
  cell.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return cell;
}

}  // namespace

StageResult cmd_grid(const RunConfig& raw, GridAxis axis, const std::vector<std::string>& values,
                     const std::vector<std::uint64_t>& seeds, const StageFlags& flags,
                     std::vector<GridCell>* cells_out) {
  const auto cfg = raw.resolved();
  cfg.validate();
  if (values.empty() || seeds.empty()) throw ConfigError("grid: need at least one value and one seed");
  if (axis == GridAxis::kMixRatio)
    for (const auto& v : values) MixSpec::parse(v).validate(cfg.train.pretrain.batch_size);

  Json key;
  key["axis"] = std::string(to_string(axis));
  key["values"] = values;
  key["seeds"] = seeds;
  key["flags"] = flags.to_json();
  const auto dir = fs::path(cfg.paths.runs_dir) /
                   ("grid-" + std::string(to_string(axis)) + "-" +
                    hex16(fnv1a64(config_hash(cfg) + "|" + key.dump())));
  fs::create_directories(dir);
  save_run_config(dir / "config.json", cfg);
  write_json(dir / "grid.json", key);

  std::vector<GridCell> cells;
  std::ofstream csv(dir / "grid.csv", std::ios::trunc);
  std::ofstream log(dir / "grid_cells.jsonl", std::ios::trunc);
  csv << "value,seed,top1,top5,wall_s\n";
  csv.precision(10);
  for (const auto& v : values)
    for (auto s : seeds) {
      auto cell = run_cell(cfg, axis, v, s, flags);
      csv << cell.value << "," << cell.seed << ",";
      if (cell.top1) csv << *cell.top1;
      csv << ",";
      if (cell.top5) csv << *cell.top5;
      csv << "," << cell.wall_s << "\n";
      csv.flush();
      Json j;
      j["value"] = cell.value;
      j["seed"] = cell.seed;
      j["top1"] = cell.top1 ? Json(*cell.top1) : Json(nullptr);
      j["top5"] = cell.top5 ? Json(*cell.top5) : Json(nullptr);
      j["wall_s"] = cell.wall_s;
      j["status"] = cell.status;
      log << j.dump() << "\n";
      log.flush();
      cells.push_back(std::move(cell));
    }
  StageResult out;
  out.run_dir = dir;
  std::int64_t failed = 0;
  for (const auto& c : cells) failed += c.status != "ok";
  out.summary["cells"] = cells.size();
  out.summary["failed"] = failed;
  if (failed > 0) out.warnings.push_back(std::to_string(failed) + " grid cell(s) failed; see grid_cells.jsonl");
  if (cells_out) *cells_out = std::move(cells);
  return out;
}

std::vector<GridCell> read_grid_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read grid " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "value,seed,top1,top5,wall_s")
    throw FormatError("grid csv: unexpected header '" + line + "'", 0);
  std::vector<GridCell> out;
  std::int64_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw DataError("grid csv: row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
    GridCell c;
    c.value = f[0];
    c.seed = std::stoull(f[1]);
    if (!f[2].empty()) c.top1 = std::stod(f[2]);
    if (!f[3].empty()) c.top5 = std::stod(f[3]);
    c.wall_s = std::stod(f[4]);
    if (!c.top1) c.status = "failed";
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace bmae
