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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bmae/checkpoint.hpp"
#include "bmae/commands.hpp"
#include "bmae/dsp.hpp"
#include "bmae/error.hpp"
#include "bmae/eval.hpp"
#include "bmae/model.hpp"

namespace py = pybind11;
using namespace bmae;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

RunConfig parse_config(const std::string& text) {
  return text.empty() ? RunConfig{} : run_config_from_json(Json::parse(text));
}

DspConfig parse_dsp(const std::string& text) {
  return text.empty() ? DspConfig{} : dsp_from_json(Json::parse(text));
}

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::array_t<float> to_numpy(std::span<const float> v, std::vector<py::ssize_t> shape) {
  py::array_t<float> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

StageFlags parse_flags(const py::dict& d) {
  StageFlags f;
  for (auto item : d) {
    const auto key = item.first.cast<std::string>();
    const auto val = item.second;
    if (val.is_none()) continue;
    if (key == "init") f.init = val.cast<std::string>();
    else if (key == "resume") f.resume = val.cast<std::string>();
    else if (key == "scorer") f.scorer = val.cast<std::string>();
    else if (key == "train_manifest") f.train_manifest = val.cast<std::string>();
    else if (key == "freeze_decoder") f.freeze_decoder = val.cast<bool>();
    else if (key == "reinit_decoder") f.reinit_decoder = val.cast<bool>();
    else if (key == "encoder_only_export") f.encoder_only_export = val.cast<bool>();
    else if (key == "mix") f.mix = MixSpec::parse(val.cast<std::string>());
    else if (key == "fraction") f.fraction = val.cast<double>();
    else if (key == "mode") f.mode = parse_filter_mode(val.cast<std::string>());
    else if (key == "threshold") f.threshold = val.cast<double>();
    else if (key == "drop_fraction") f.drop_fraction = val.cast<double>();
    else if (key == "split") f.split = val.cast<std::string>();
    else throw ConfigError("unknown flag '" + key + "'");
  }
  return f;
}

std::string stage_result(const StageResult& r) {
  Json j;
  j["run_dir"] = r.run_dir.string();
  j["summary"] = r.summary;
  j["warnings"] = r.warnings;
  return j.dump();
}

}  // namespace

PYBIND11_MODULE(_bmae, m) {
  m.doc() = "Bindings for the bmae library";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<DataError> data_error(m, "DataError", PyExc_RuntimeError);
  static py::exception<NumericError> numeric_error(m, "NumericError", PyExc_ArithmeticError);
  static py::exception<ContractError> contract_error(m, "ContractError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(config_error.ptr(), e.what());
    } catch (const NumericError& e) {
      PyErr_SetString(numeric_error.ptr(), e.what());
    } catch (const DataError& e) {
      PyErr_SetString(data_error.ptr(), e.what());
    } catch (const ContractError& e) {
      PyErr_SetString(contract_error.ptr(), e.what());
    } catch (const nlohmann::json::exception& e) {
      PyErr_SetString(config_error.ptr(), e.what());
    }
  });

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def("resolve_config", [](const std::string& text) {
    const auto c = parse_config(text);
    c.validate();
    return to_json(c.resolved()).dump();
  });
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); });

  m.def("segment_count", [](std::int64_t n, const std::string& dsp) {
    return segment_count(n, parse_dsp(dsp));
  }, py::arg("n_samples"), py::arg("dsp") = "");
  m.def("mel_filterbank", [](const std::string& dsp) { return to_numpy(mel_filterbank(parse_dsp(dsp))); },
        py::arg("dsp") = "");
  m.def("stft_power", [](FloatArray seg, const std::string& dsp) {
    return to_numpy(stft_power({seg.data(), static_cast<std::size_t>(seg.size())}, parse_dsp(dsp)));
  }, py::arg("segment"), py::arg("dsp") = "");
  m.def("log_mel", [](FloatArray samples, const std::string& dsp) {
    const auto cfg = parse_dsp(dsp);
    std::vector<Spectrogram> specs;
    {
      py::gil_scoped_release release;
      specs = recording_spectrograms({samples.data(), static_cast<std::size_t>(samples.size())}, "py", cfg);
    }
    py::array_t<float> out({static_cast<py::ssize_t>(specs.size()),
                            static_cast<py::ssize_t>(cfg.n_mels), static_cast<py::ssize_t>(cfg.n_frames)});
    float* dst = out.mutable_data();
    for (const auto& s : specs) dst = std::copy(s.values.begin(), s.values.end(), dst);
    return out;
  }, py::arg("samples"), py::arg("dsp") = "",
     "Log-mel spectrogram of every segment window: (segments, n_mels, n_frames).");

  m.def("patchify", [](FloatArray image, std::int64_t ph, std::int64_t pw) {
    if (image.ndim() != 2) throw ContractError("patchify: expected a 2-D array");
    const auto p = patchify({image.data(), static_cast<std::size_t>(image.size())},
                            image.shape(0), image.shape(1), ph, pw);
    return to_numpy(p.values, {static_cast<py::ssize_t>(p.count()), static_cast<py::ssize_t>(p.dim())});
  });
  m.def("n_masked", [](std::int64_t k, double ratio) {
    ModelConfig c;
    c.input_h = 16;
    c.input_w = 16 * k;
    c.mask_ratio = ratio;
    return c.n_masked();
  });

  m.def("topk_hit", [](DoubleArray probs, std::int64_t label, std::int64_t k) {
    return topk_hit({probs.data(), static_cast<std::size_t>(probs.size())}, label, k);
  });
  m.def("aggregate_file", [](const std::vector<std::vector<double>>& probs, const std::string& mode) {
    return aggregate_file(probs, parse_aggregation(mode));
  }, py::arg("segment_probs"), py::arg("mode") = "mean");
  m.def("class_averaged", [](const std::vector<std::int32_t>& labels, const std::vector<bool>& hit1,
                             const std::vector<bool>& hit5, const std::vector<std::int32_t>& classes) {
    if (labels.size() != hit1.size() || labels.size() != hit5.size())
      throw ContractError("class_averaged: labels and hits differ in length");
    std::vector<FileOutcome> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      out.push_back({std::to_string(i), labels[i], hit1[i], hit5[i]});
    const auto r = class_averaged(out, classes);
    py::dict d;
    d["top1"] = r.top1;
    d["top5"] = r.top5;
    d["n_eval_classes"] = r.n_eval_classes;
    d["excluded_classes"] = r.excluded_classes;
    return d;
  });

  m.def("lr_at", [](std::int64_t step, std::int64_t total, double base_lr, double warmup_frac) {
    TrainConfig c;
    c.base_lr = base_lr;
    c.warmup_frac = warmup_frac;
    return lr_at(step, total, c);
  }, py::arg("step"), py::arg("total"), py::arg("base_lr") = 1e-3, py::arg("warmup_frac") = 0.1);
  m.def("mix_counts", [](const std::string& ratio, std::int64_t batch) {
    const auto mix = MixSpec::parse(ratio);
    mix.validate(batch);
    return std::make_pair(mix.n_general(batch), mix.n_bio(batch));
  });

  m.def("load_checkpoint", [](const std::string& path) {
    const auto ck = load_checkpoint(path);
    py::dict arrays;
    for (const auto& e : ck.params.entries()) {
      std::vector<py::ssize_t> shape(e.tensor.shape().begin(), e.tensor.shape().end());
      arrays[py::str(e.name)] = to_numpy(e.tensor.data(), shape);
    }
    Json meta;
    meta["model"] = to_json(ck.meta.model);
    meta["train"] = ck.meta.train;
    meta["epoch"] = ck.meta.epoch;
    meta["extra"] = ck.meta.extra;
    meta["has_optimizer"] = ck.optim.has_value();
    return py::make_tuple(arrays, meta.dump());
  });

  m.def("synth", [](const std::string& cfg) {
    const auto c = parse_config(cfg);
    py::gil_scoped_release release;
    return static_cast<std::int64_t>(cmd_synth(c).size());
  });
  m.def("prep", [](const std::string& cfg) {
    const auto c = parse_config(cfg);
    PrepReport r;
    {
      py::gil_scoped_release release;
      r = cmd_prep(c);
    }
    py::dict d;
    d["written"] = r.n_written;
    d["skipped"] = r.n_skipped;
    d["segments"] = r.n_segments;
    return d;
  });
  m.def("run_stage", [](const std::string& stage, const std::string& cfg, const py::dict& flags) {
    const auto c = parse_config(cfg);
    const auto f = parse_flags(flags);
    StageResult r;
    {
      py::gil_scoped_release release;
      if (stage == "pretrain") r = cmd_pretrain(c, f);
      else if (stage == "finetune") r = cmd_finetune(c, f);
      else if (stage == "probe") r = cmd_probe(c, f);
      else if (stage == "curate") r = cmd_curate(c, f);
      else if (stage == "evaluate") r = cmd_evaluate(c, f);
      else throw ConfigError("unknown stage '" + stage + "'");
    }
    return stage_result(r);
  });
}
