# Copyright 2026 The bmae Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python interface to the bmae masked spectrogram autoencoder library.

Configs are plain dicts using the same schema as the command-line tool's JSON
files; missing keys take their defaults.
"""

import json

import numpy as np

from . import _bmae
from ._bmae import (
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    aggregate_file,
    class_averaged,
    lr_at,
    mix_counts,
    n_masked,
    patchify,
    segment_count,
    topk_hit,
)

__all__ = [
    "ConfigError", "ContractError", "DataError", "NumericError",
    "aggregate_file", "class_averaged", "config_hash", "default_config",
    "evaluate", "finetune", "load_checkpoint", "log_mel", "lr_at",
    "mel_filterbank", "mix_counts", "n_masked", "patchify", "prep", "pretrain",
    "probe", "curate", "resolve_config", "segment_count", "stft_power", "synth",
    "topk_hit",
]


def _dump(cfg):
    return "" if cfg is None else json.dumps(cfg)


def default_config():
    return json.loads(_bmae.default_config())


def resolve_config(cfg):
    return json.loads(_bmae.resolve_config(_dump(cfg)))


def config_hash(cfg):
    return _bmae.config_hash(_dump(cfg))


def mel_filterbank(dsp=None):
    return _bmae.mel_filterbank(_dump(dsp))


def stft_power(segment, dsp=None):
    return _bmae.stft_power(np.asarray(segment, dtype=np.float32), _dump(dsp))


def log_mel(samples, dsp=None):
    return _bmae.log_mel(np.asarray(samples, dtype=np.float32), _dump(dsp))


def load_checkpoint(path):
    """Returns (arrays, meta): a name -> ndarray dict and the header metadata."""
    arrays, meta = _bmae.load_checkpoint(str(path))
    return arrays, json.loads(meta)


def synth(cfg=None):
    return _bmae.synth(_dump(cfg))


def prep(cfg=None):
    return _bmae.prep(_dump(cfg))


def _stage(name, cfg, flags):
    flags = {k: (str(v) if k in ("init", "resume", "scorer", "train_manifest") and v is not None else v)
             for k, v in flags.items()}
    return json.loads(_bmae.run_stage(name, _dump(cfg), flags))


def pretrain(cfg=None, **flags):
    return _stage("pretrain", cfg, flags)


def finetune(cfg=None, **flags):
    return _stage("finetune", cfg, flags)


def probe(cfg=None, **flags):
    return _stage("probe", cfg, flags)


def curate(cfg=None, **flags):
    return _stage("curate", cfg, flags)


def evaluate(cfg=None, **flags):
    return _stage("evaluate", cfg, flags)
