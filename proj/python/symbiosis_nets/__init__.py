# Copyright 2026 The Symbiosis Networks Authors
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

"""Symbiosis networks: train, evaluate and inspect from Python.

Run configurations are plain dicts with the same sections as the JSON
config files used by the ``symbiosis`` command-line tool.
"""

import json
import os

from . import _core
from ._core import (
    BOS,
    EOS,
    PAD,
    UNK,
    CheckpointError,
    ConfigError,
    DivergenceError,
    bleu,
    code_version_hash,
    generate,
    layer_map,
    length_penalty,
    lr_at,
    margin_hinge,
)

__all__ = [
    "BOS", "EOS", "PAD", "UNK",
    "CheckpointError", "ConfigError", "DivergenceError",
    "bleu", "code_version_hash", "generate", "layer_map", "length_penalty", "lr_at", "margin_hinge",
    "normalize_config", "describe_layer_map", "train", "list_checkpoints", "evaluate", "verify",
    "load_checkpoint", "checkpoint_sha1", "gradient_suite",
]


def _dump(config):
    return json.dumps(config if config is not None else {})


def normalize_config(config=None):
    """Validated config with every default filled in."""
    return json.loads(_core.normalize_config(_dump(config)))


def describe_layer_map(config=None):
    return _core.describe_layer_map(_dump(config))


def train(config, run_dir):
    """Train into run_dir and return the run manifest."""
    return json.loads(_core.train(_dump(config), os.fspath(run_dir)))


def list_checkpoints(run_dir):
    return [str(p) for p in _core.list_checkpoints(os.fspath(run_dir))]


def evaluate(config, checkpoints, subnet=False, split="test"):
    """Beam-search BLEU and token accuracies; several checkpoints are averaged."""
    if isinstance(checkpoints, (str, os.PathLike)):
        checkpoints = [checkpoints]
    return json.loads(_core.evaluate(_dump(config), [os.fspath(p) for p in checkpoints], subnet, split))


def verify(config, checkpoint):
    """(passed, summary) of the parameter-sharing check on a checkpoint."""
    return _core.verify(_dump(config), os.fspath(checkpoint))


def load_checkpoint(path):
    """Parameter name -> (shape, flat values)."""
    return _core.load_checkpoint(os.fspath(path))


def checkpoint_sha1(path):
    return _core.checkpoint_sha1(os.fspath(path))


def gradient_suite():
    """(passed, summary) of the finite-difference gradient suite."""
    return _core.gradient_suite()
