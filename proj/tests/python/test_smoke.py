# Copyright 2026 The qilin-desk Authors
# SPDX-License-Identifier: Apache-2.0

import json
import math
import pathlib

import pytest

import qilin

ROOT = pathlib.Path(__file__).resolve().parents[2]


def test_metrics_worked_examples():
    assert qilin.bleu("abcd", "abce", 1) == pytest.approx(0.75, abs=1e-15)
    assert qilin.bleu("ab", "abcd", 1) == pytest.approx(math.exp(-1), abs=1e-15)
    assert qilin.rouge_l("abcd", "acbd") == pytest.approx(0.75, abs=1e-15)
    assert qilin.rouge_n("多喝水", "多喝水", 2) == 1.0
    assert qilin.weighted_f1(["A", "A", "B"], ["A", "B", "B"]) == pytest.approx(2 / 3)
    assert qilin.accuracy(["A", "C"], ["A", "B"]) == 0.5
    assert qilin.extract_choice("选 A、C 因为") == "AC"
    with pytest.raises(qilin.InputError):
        qilin.accuracy([], [])


def test_vocab_round_trip():
    v = qilin.Vocab.build(["感冒发烧", "abc"])
    assert len(v) == 4 + 7
    text = "发烧abc"
    ids = v.encode(text)
    assert v.decode(ids) == text
    assert qilin.Vocab.parse(v.serialize()) == v
    with pytest.raises(qilin.InputError):
        v.encode("😀")


def test_dedup():
    rep = "0123456789abcdefghijklmnopqrstuvwxyz"
    kept, report = qilin.dedup(["head " + rep + " tail", "other " + rep + " end"],
                               min_span=20, min_residual=1)
    assert kept == ["head " + rep + " tail", "otherend"]
    assert report["spans"] == [(1, 5, 43)]
    again, _ = qilin.dedup(kept, min_span=20, min_residual=1, method="suffix_array")
    assert again == kept


def test_validate_config(tmp_path):
    cfg, errors, warnings = qilin.validate_config(ROOT / "configs" / "desk.json")
    assert errors == [] and warnings == []
    assert cfg["seed"] == 1234
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"stages": {"cpt": {"learning_rate": -1}}}))
    cfg, errors, _ = qilin.validate_config(bad)
    assert cfg is None
    assert any("stages.cpt.learning_rate" in e for e in errors)
    assert any("paths.data" in e for e in errors)


def test_tiny_pipeline(tmp_path):
    cfg = {
        "paths": {"data": "data", "checkpoints": "ckpt", "reports": "reports"},
        "seed": 3,
        "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "max_seq_len": 96, "ffn_mult": 2},
        "synth": {"diseases": 2, "seed": 1},
        "stages": {
            "cpt": {"epochs": 1, "block_size": 48, "learning_rate": 1e-3},
            "sft": {"epochs": 1, "max_source_length": 64, "max_target_length": 24,
                    "lora": {"rank": 2}},
            "dpo": {"epochs": 1, "max_source_length": 64, "max_target_length": 24,
                    "lora": {"rank": 2}},
        },
        "eval": {"max_new_tokens": 4, "few_shot_k": 0},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    qilin.data_build(str(path))
    losses = qilin.train(str(path), "cpt")
    assert len(losses) > 0 and all(math.isfinite(x) for x in losses)
    ckpt = tmp_path / "ckpt" / "cpt.ckpt"
    first = ckpt.read_bytes()
    qilin.train(str(path), "cpt")
    assert ckpt.read_bytes() == first

    info = qilin.checkpoint_info(ckpt)
    assert info["stage"] == "cpt"
    assert info["config"]["d_model"] == 8

    qilin.train(str(path), "sft")
    report = qilin.evaluate(path, "mcq", tmp_path / "ckpt" / "sft.ckpt")
    assert 0.0 <= report["accuracy"] <= 100.0
    instruction = json.loads((tmp_path / "data" / "sft.jsonl").read_text().splitlines()[0])
    out = qilin.generate(str(path), instruction["instruction"],
                         str(tmp_path / "ckpt" / "sft.ckpt"), 3)
    assert isinstance(out, str)

    bad = tmp_path / "bad.ckpt"
    damaged = bytearray(first)
    damaged[len(damaged) // 2] ^= 0x10
    bad.write_bytes(bytes(damaged))
    with pytest.raises(qilin.IntegrityError, match="offset"):
        qilin.checkpoint_info(bad)
    with pytest.raises(qilin.ConfigError):
        qilin.train(str(path), "ppo")
