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

#include "bmae/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <type_traits>

#include "bmae/error.hpp"
#include "bmae/prng.hpp"

namespace bmae {

namespace {

class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, where_ + "." + key);
  }

  const Json* sub(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    auto bad = [&](const char* want) {
      return ConfigError(path + ": expected " + std::string(want) + ", got " + v.dump());
    };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw bad("an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<std::int64_t>() < 0) throw bad("a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw bad("a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw bad("a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      if (v.is_null()) return std::nullopt;
      if (!v.is_number()) throw bad("a number or null");
      return v.get<double>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> used_;
};

// Converts ConfigError from a module validate() into one naming the section.
template <typename F>
void validate_section(const std::string& where, F fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

Json to_json(const CorpusSpec& c) {
  return Json{{"n_classes", c.n_classes},
              {"recordings_per_class", c.recordings_per_class},
              {"min_s", c.min_s},
              {"max_s", c.max_s},
              {"snr_lo_db", c.snr_lo_db},
              {"snr_hi_db", c.snr_hi_db},
              {"seed", c.seed},
              {"domain_mix", c.domain_mix},
              {"val_frac", c.val_frac},
              {"test_frac", c.test_frac},
              {"sample_rate", c.sample_rate}};
}

CorpusSpec corpus_from_json(const Json& j, const std::string& where) {
  CorpusSpec c;
  Reader r(j, where);
  r.get("n_classes", c.n_classes);
  r.get("recordings_per_class", c.recordings_per_class);
  r.get("min_s", c.min_s);
  r.get("max_s", c.max_s);
  r.get("snr_lo_db", c.snr_lo_db);
  r.get("snr_hi_db", c.snr_hi_db);
  r.get("seed", c.seed);
  r.get("domain_mix", c.domain_mix);
  r.get("val_frac", c.val_frac);
  r.get("test_frac", c.test_frac);
  r.get("sample_rate", c.sample_rate);
  r.done();
  validate_section(where, [&] { c.validate(); });
  return c;
}

Json to_json(const DspConfig& c) {
  return Json{{"sample_rate", c.sample_rate}, {"win", c.win},           {"hop", c.hop},
              {"n_mels", c.n_mels},           {"fmin", c.fmin},         {"fmax", c.fmax},
              {"segment_s", c.segment_s},     {"stride_s", c.stride_s}, {"log_floor", c.log_floor},
              {"n_frames", c.n_frames}};
}

DspConfig dsp_from_json(const Json& j, const std::string& where) {
  DspConfig c;
  Reader r(j, where);
  r.get("sample_rate", c.sample_rate);
  r.get("win", c.win);
  r.get("hop", c.hop);
  r.get("n_mels", c.n_mels);
  r.get("fmin", c.fmin);
  r.get("fmax", c.fmax);
  r.get("segment_s", c.segment_s);
  r.get("stride_s", c.stride_s);
  r.get("log_floor", c.log_floor);
  r.get("n_frames", c.n_frames);
  r.done();
  validate_section(where, [&] { c.validate(); });
  return c;
}

Json to_json(const ModelConfig& c) {
  return Json{{"input_h", c.input_h},
              {"input_w", c.input_w},
              {"patch_h", c.patch_h},
              {"patch_w", c.patch_w},
              {"embed_dim", c.embed_dim},
              {"enc_depth", c.enc_depth},
              {"enc_heads", c.enc_heads},
              {"dec_dim", c.dec_dim},
              {"dec_depth", c.dec_depth},
              {"dec_heads", c.dec_heads},
              {"mlp_ratio", c.mlp_ratio},
              {"mask_ratio", c.mask_ratio},
              {"n_classes", c.n_classes},
              {"decoder_attn", std::string(to_string(c.decoder_attn))},
              {"win_h", c.win_h},
              {"win_w", c.win_w},
              {"norm_eps", c.norm_eps},
              {"ln_eps", c.ln_eps},
              {"input_mean", c.input_mean},
              {"input_std", c.input_std}};
}

ModelConfig model_from_json(const Json& j, const std::string& where) {
  ModelConfig c = ModelConfig::tiny();
  Reader r(j, where);
  std::string preset;
  r.get("preset", preset);
  if (preset == "base") c = ModelConfig::base();
  else if (!preset.empty() && preset != "tiny")
    throw ConfigError(where + ".preset: expected \"tiny\" or \"base\"");
  r.get("input_h", c.input_h);
  r.get("input_w", c.input_w);
  r.get("patch_h", c.patch_h);
  r.get("patch_w", c.patch_w);
  r.get("embed_dim", c.embed_dim);
  r.get("enc_depth", c.enc_depth);
  r.get("enc_heads", c.enc_heads);
  r.get("dec_dim", c.dec_dim);
  r.get("dec_depth", c.dec_depth);
  r.get("dec_heads", c.dec_heads);
  r.get("mlp_ratio", c.mlp_ratio);
  r.get("mask_ratio", c.mask_ratio);
  r.get("n_classes", c.n_classes);
  std::string attn(to_string(c.decoder_attn));
  r.get("decoder_attn", attn);
  validate_section(where, [&] { c.decoder_attn = parse_decoder_attn(attn); });
  r.get("win_h", c.win_h);
  r.get("win_w", c.win_w);
  r.get("norm_eps", c.norm_eps);
  r.get("ln_eps", c.ln_eps);
  r.get("input_mean", c.input_mean);
  r.get("input_std", c.input_std);
  r.done();
  validate_section(where, [&] { c.validate(); });
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"base_lr", c.base_lr},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"warmup_frac", c.warmup_frac},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"schedule", c.schedule},
              {"grad_clip", c.grad_clip ? Json(*c.grad_clip) : Json(nullptr)},
              {"steps_per_epoch", c.steps_per_epoch},
              {"constant_steps", c.constant_steps},
              {"segments_per_file", c.segments_per_file},
              {"save_every", c.save_every}};
}

TrainConfig train_from_json(const Json& j, const TrainConfig& defaults, const std::string& where) {
  TrainConfig c = defaults;
  Reader r(j, where);
  r.get("base_lr", c.base_lr);
  r.get("weight_decay", c.weight_decay);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("warmup_frac", c.warmup_frac);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("seed", c.seed);
  r.get("schedule", c.schedule);
  r.get("grad_clip", c.grad_clip);
  r.get("steps_per_epoch", c.steps_per_epoch);
  r.get("constant_steps", c.constant_steps);
  r.get("segments_per_file", c.segments_per_file);
  r.get("save_every", c.save_every);
  r.done();
  validate_section(where, [&] { c.validate(); });
  return c;
}

Json to_json(const MixSpec& c) {
  return Json{{"ratio_general", c.ratio_general}, {"ratio_bio", c.ratio_bio}};
}

MixSpec mix_from_json(const Json& j, const std::string& where) {
  MixSpec c;
  Reader r(j, where);
  r.get("ratio_general", c.ratio_general);
  r.get("ratio_bio", c.ratio_bio);
  r.done();
  if (c.ratio_general < 0 || c.ratio_bio < 0 || c.ratio_general + c.ratio_bio == 0)
    throw ConfigError(where + ": ratio parts must be >= 0 and not both 0");
  return c;
}

Json to_json(const CurationConfig& c) {
  return Json{{"mode", std::string(to_string(c.mode))},
              {"threshold", c.threshold},
              {"n_draws", c.n_draws},
              {"seed", c.seed},
              {"batch_size", c.batch_size}};
}

CurationConfig curation_from_json(const Json& j, const std::string& where) {
  CurationConfig c;
  Reader r(j, where);
  std::string mode(to_string(c.mode));
  r.get("mode", mode);
  validate_section(where, [&] { c.mode = parse_filter_mode(mode); });
  r.get("threshold", c.threshold);
  r.get("n_draws", c.n_draws);
  r.get("seed", c.seed);
  r.get("batch_size", c.batch_size);
  r.done();
  validate_section(where, [&] { c.validate(); });
  return c;
}

Json to_json(const EvalConfig& c) {
  return Json{{"aggregation", std::string(to_string(c.aggregation))},
              {"batch_size", c.batch_size}};
}

EvalConfig eval_from_json(const Json& j, const std::string& where) {
  EvalConfig c;
  Reader r(j, where);
  std::string agg(to_string(c.aggregation));
  r.get("aggregation", agg);
  validate_section(where, [&] { c.aggregation = parse_aggregation(agg); });
  r.get("batch_size", c.batch_size);
  r.done();
  validate_section(where, [&] { c.validate(); });
  return c;
}

Json to_json(const RunConfig& c) {
  Json j;
  j["corpus"] = to_json(c.corpus);
  j["dsp"] = to_json(c.dsp);
  j["model"] = to_json(c.model);
  j["train"] = Json{{"pretrain", to_json(c.train.pretrain)},
                    {"finetune", to_json(c.train.finetune)},
                    {"probe", to_json(c.train.probe)}};
  j["mix"] = c.mix ? to_json(*c.mix) : Json(nullptr);
  j["curation"] = to_json(c.curation);
  j["eval"] = to_json(c.eval);
  j["paths"] = Json{{"corpus_dir", c.paths.corpus_dir},
                    {"cache_dir", c.paths.cache_dir},
                    {"runs_dir", c.paths.runs_dir}};
  j["seed"] = c.seed;
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Reader r(j, "config");
  if (auto* s = r.sub("corpus")) c.corpus = corpus_from_json(*s);
  if (auto* s = r.sub("dsp")) c.dsp = dsp_from_json(*s);
  if (auto* s = r.sub("model")) c.model = model_from_json(*s);
  if (auto* s = r.sub("train")) {
    Reader t(*s, "train");
    if (auto* p = t.sub("pretrain")) c.train.pretrain = train_from_json(*p, c.train.pretrain, "train.pretrain");
    if (auto* p = t.sub("finetune")) c.train.finetune = train_from_json(*p, c.train.finetune, "train.finetune");
    if (auto* p = t.sub("probe")) c.train.probe = train_from_json(*p, c.train.probe, "train.probe");
    t.done();
  }
  if (auto* s = r.sub("mix"); s && !s->is_null()) c.mix = mix_from_json(*s);
  if (auto* s = r.sub("curation")) c.curation = curation_from_json(*s);
  if (auto* s = r.sub("eval")) c.eval = eval_from_json(*s);
  if (auto* s = r.sub("paths")) {
    Reader p(*s, "paths");
    p.get("corpus_dir", c.paths.corpus_dir);
    p.get("cache_dir", c.paths.cache_dir);
    p.get("runs_dir", c.paths.runs_dir);
    p.done();
  }
  r.get("seed", c.seed);
  r.done();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  validate_section("corpus", [&] { corpus.validate(); });
  validate_section("dsp", [&] { dsp.validate(); });
  validate_section("model", [&] { model.validate(); });
  validate_section("train.pretrain", [&] { train.pretrain.validate(mix.has_value()); });
  validate_section("train.finetune", [&] { train.finetune.validate(); });
  validate_section("train.probe", [&] { train.probe.validate(); });
  if (mix) validate_section("mix", [&] { mix->validate(train.pretrain.batch_size); });
  validate_section("curation", [&] { curation.validate(); });
  validate_section("eval", [&] { eval.validate(); });
  if (model.input_h != dsp.n_mels || model.input_w != dsp.n_frames)
    throw ConfigError("model: input " + std::to_string(model.input_h) + "x" +
                      std::to_string(model.input_w) + " does not match dsp output " +
                      std::to_string(dsp.n_mels) + "x" + std::to_string(dsp.n_frames));
  if (model.n_classes < corpus.n_classes)
    throw ConfigError("model: n_classes is smaller than corpus.n_classes");
}

RunConfig RunConfig::resolved() const {
  RunConfig c = *this;
  c.train.pretrain.seed = seed;
  c.train.finetune.seed = seed;
  c.train.probe.seed = seed;
  c.curation.seed = seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config " + path.string());
  out << to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json(cfg.resolved()).dump())));
  return buf;
}

}  // namespace bmae
