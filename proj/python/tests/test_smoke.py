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

import math

import pytest

import symbiosis_nets as sn

TINY = {
    "model": {"d_model": 16, "n_heads": 2, "d_ffn": 32, "vocab_size": 10, "max_len": 8, "dropout": 0.1},
    "symbiosis": {"main_depth": 2, "sub_depth": 1, "decoder_depth": 1},
    "train": {
        "stage1_steps": 20,
        "stage2_steps": 10,
        "batch_token_budget": 64,
        "keep_checkpoints": 2,
        "schedule": {"warmup_steps": 10, "lr_peak": 0.003},
    },
    "data": {"task": "copy", "vocab_size": 10, "min_len": 2, "max_len": 5, "pairs": 200,
             "valid_fraction": 0.1, "test_fraction": 0.1},
    "beam": {"beam_size": 2, "max_decode_len": 8},
}


def test_reserved_ids():
    assert (sn.PAD, sn.BOS, sn.EOS, sn.UNK) == (0, 1, 2, 3)


def test_layer_maps():
    assert sn.layer_map("bottom", 12, 6) == [0, 1, 2, 3, 4, 5]
    assert sn.layer_map("top", 12, 6) == [6, 7, 8, 9, 10, 11]
    assert sn.layer_map("top_bottom", 12, 6) == [0, 1, 2, 9, 10, 11]
    assert sn.layer_map("linear", 12, 6) == [0, 2, 4, 6, 8, 10]
    with pytest.raises(ValueError):
        sn.layer_map("bottom", 4, 4)


def test_scalar_helpers():
    assert sn.lr_at(0) == 1e-7
    assert sn.lr_at(8000) == 5e-4
    assert math.isclose(sn.lr_at(32000), 2.5e-4, rel_tol=1e-12)
    assert math.isclose(sn.margin_hinge(-2.0, -1.5, 0.1), 0.6, rel_tol=1e-15)
    assert sn.margin_hinge(-1.0, -1.2, 0.1) == 0.0
    assert sn.length_penalty(1, 0.6) == 1.0


def test_bleu():
    ref = [["the", "cat", "sat", "on", "the", "mat"]]
    assert sn.bleu(ref, ref) == 100.0
    assert abs(sn.bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e"]]) - 77.88) < 0.01
    with pytest.raises(ValueError):
        sn.bleu([], [])


def test_generate():
    d = sn.generate("reverse", vocab_size=12, min_len=2, max_len=4, pairs=100, seed=3)
    src, tgt = d["train"]
    assert len(src) == len(tgt) > 0
    for s, t in zip(src, tgt):
        assert t == list(reversed(s)) + [sn.EOS]
    assert sn.generate("reverse", vocab_size=12, min_len=2, max_len=4, pairs=100, seed=3) == d


def test_config():
    cfg = sn.normalize_config(TINY)
    assert cfg["train"]["adam"]["beta2"] == 0.997
    assert sn.normalize_config(cfg) == cfg
    with pytest.raises(sn.ConfigError, match="model.dropuot: unknown key"):
        sn.normalize_config({"model": {"dropuot": 0.1}})
    assert "S-Net encoder layer 0 <- M-Net encoder layer 0" in sn.describe_layer_map(TINY)


def test_train_evaluate_verify(tmp_path):
    manifest = sn.train(TINY, tmp_path / "a")
    assert manifest["status"] == "completed"
    assert manifest["final_metrics"]["steps"] == 30
    ckpts = sn.list_checkpoints(tmp_path / "a")
    assert 1 <= len(ckpts) <= 2
    assert sn.checkpoint_sha1(ckpts[-1]) == manifest["final_checkpoint_sha1"]

    again = sn.train(TINY, tmp_path / "b")
    assert again["final_checkpoint_sha1"] == manifest["final_checkpoint_sha1"]

    report = sn.evaluate(TINY, ckpts[-1])
    assert 0.0 <= report["bleu"] <= 100.0
    assert report["n_sentences"] == len(report["hypotheses"])
    sub = sn.evaluate(TINY, ckpts, subnet=True, split="valid")
    assert 0.0 <= sub["token_acc"] <= 1.0

    ok, summary = sn.verify(TINY, ckpts[-1])
    assert ok, summary
    params = sn.load_checkpoint(ckpts[-1])
    shape, values = params["embed"]
    assert shape == [10, 16]
    assert len(values) == 160


def test_gradient_suite():
    ok, summary = sn.gradient_suite()
    assert ok, summary
