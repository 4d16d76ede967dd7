from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from tvkit import tvck
from tvkit.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROTOCOL, _threads, build_parser
from tvkit.data import TaskSpec
from tvkit.evalx import ACCURACY_HEADER

from tests.cliutil import build, tvkit, write_spec


@pytest.fixture(scope="module")
def ws_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    old = os.getcwd()
    os.chdir(root)
    try:
        files = build(root)
    finally:
        os.chdir(old)
    return root, files


@pytest.fixture
def ws(ws_root, monkeypatch):
    root, files = ws_root
    monkeypatch.chdir(root)
    return files


def _weights(path):
    return tvck.load(path)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_finetune_zero_epochs_returns_base(ws):
    assert tvkit("finetune", "--base", ws["base"], "--task", ws["data"][0], "--epochs", 0, "--out", "zero.tvck") == 0
    assert _weights("zero.tvck").identical(_weights(ws["base"]))


def test_finetune_is_deterministic(ws):
    for out in ("a.tvck", "b.tvck"):
        assert tvkit("finetune", "--base", ws["base"], "--task", ws["data"][1], "--epochs", 2, "--seed", 3,
                     "--out", out) == 0
    assert Path("a.tvck").read_bytes() == Path("b.tvck").read_bytes()


def test_finetune_reaches_95_percent_on_low_noise_task(ws, capsys):
    write_spec("easy.json", TaskSpec("easy", seed=5, family=1, rotation=1.0, shift=1.0, noise=0.1))
    assert tvkit("finetune", "--base", ws["base"], "--task", "easy.json", "--out", "easy.tvck") == 0
    acc = float(capsys.readouterr().out.split("test accuracy")[1])
    assert acc >= 95.0


def test_missing_input_is_config_error(ws, capsys):
    assert tvkit("finetune", "--base", "missing.tvck", "--task", ws["data"][0], "--out", "x.tvck") == EXIT_CONFIG
    assert tvkit("finetune", "--base", ws["base"], "--task", ws["data"][0], "--epochs", -1,
                 "--out", "x.tvck") == EXIT_CONFIG
    assert tvkit("learn", "sideways", "--base", ws["base"], "--data", ws["data"][0], "--out", "x.json") == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_wrong_file_kind_is_config_error(ws):
    assert tvkit("diff", "--base", ws["base"], "--finetuned", ws["tvs"][0], "--out", "x.tvck") == EXIT_CONFIG


def test_divergent_training_is_numeric_failure(ws, capsys):
    with np.errstate(all="ignore"):
        code = tvkit("finetune", "--base", ws["base"], "--task", ws["data"][0], "--lr", 1e200, "--out", "nan.tvck")
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_fewshot_with_target_vector_is_leakage(ws):
    code = tvkit("learn", "fewshot", "--base", ws["base"], "--tv", *ws["tvs"], "--data", ws["data"][0],
                 "--k", 2, "--epochs", 1, "--out", "leak.json")
    assert code == EXIT_PROTOCOL
    assert not Path("leak.json").exists()


def test_replay_detects_changed_input(ws, tmp_path):
    assert tvkit("gen", "--task", "t0.json", "--out", "regen.tvck") == 0
    spec = json.loads(Path("t0.json").read_text())
    write_spec("t0_copy.json", TaskSpec.from_json(spec))
    assert tvkit("gen", "--task", "t0_copy.json", "--out", "copy.tvck") == 0
    assert tvkit("replay", "copy.tvck.manifest.json") == 0
    write_spec("t0_copy.json", TaskSpec.from_json({**spec, "seed": spec["seed"] + 1}))
    assert tvkit("replay", "copy.tvck.manifest.json") == EXIT_PROTOCOL


def test_replay_detects_changed_output(ws):
    assert tvkit("diff", "--base", ws["base"], "--finetuned", ws["ft"][0], "--out", "d.tvck") == 0
    assert tvkit("replay", "d.tvck.manifest.json") == 0
    man = json.loads(Path("d.tvck.manifest.json").read_text())
    man["outputs"]["d.tvck"] = "0" * 64
    Path("d.tvck.manifest.json").write_text(json.dumps(man))
    assert tvkit("replay", "d.tvck.manifest.json") == EXIT_PROTOCOL


def test_manifest_contents(ws):
    assert tvkit("eval", "acc", "--base", ws["base"], "--data", ws["data"][0], "--out", "acc.csv") == 0
    man = json.loads(Path("acc.csv.manifest.json").read_text())
    assert man["command"] == "eval" and man["argv"][0] == "eval"
    assert set(man["inputs"]) == {ws["base"], ws["data"][0]} and list(man["outputs"]) == ["acc.csv"]
    assert man["config"]["seed"] == 0 and man["seeds"] == {"seed": 0} and man["threads"] == 1
    assert man["wall_clock_s"] >= 0


def test_threads_flag_and_environment(monkeypatch):
    p = build_parser()
    args = p.parse_args(["gen", "--task", "x", "--out", "y"])
    monkeypatch.delenv("TVKIT_THREADS", raising=False)
    assert _threads(args) == 1
    monkeypatch.setenv("TVKIT_THREADS", "3")
    assert _threads(args) == 3
    assert _threads(p.parse_args(["--threads", "2", "gen", "--task", "x", "--out", "y"])) == 2


def test_thread_count_does_not_change_outputs(ws, monkeypatch):
    args = ("eval", "acc", "--base", ws["base"], "--data", *ws["data"])
    assert tvkit(*args, "--out", "one.csv") == 0
    monkeypatch.setenv("TVKIT_THREADS", "2")
    assert tvkit(*args, "--out", "two.csv") == 0
    assert Path("one.csv").read_bytes() == Path("two.csv").read_bytes()


def test_bad_threads_environment_is_config_error(ws, monkeypatch):
    monkeypatch.setenv("TVKIT_THREADS", "many")
    assert tvkit("eval", "acc", "--base", ws["base"], "--data", ws["data"][0], "--out", "x.csv") == EXIT_CONFIG


def test_accuracy_csv_rows(ws):
    assert tvkit("eval", "relacc", "--base", ws["base"], "--data", *ws["data"][:2], "--reference", *ws["ft"][:2],
                 "--out", "rel.csv") == 0
    rows = _rows("rel.csv")
    assert rows[0] == list(ACCURACY_HEADER) and len(rows) == 3
    assert [r[0] for r in rows[1:]] == ["t0", "t1"]


def test_disentangle_csv_has_one_row_per_pair(ws):
    assert tvkit("eval", "disentangle", "--base", ws["base"], "--tv", *ws["tvs"], "--data", *ws["data"],
                 "--alpha", 0.5, "--out", "xi.csv") == 0
    rows = _rows("xi.csv")
    assert len(rows) == 1 + 9
    diag = [r for r in rows[1:] if r[1] == r[2]]
    assert len(diag) == 3 and all(r[3] == "" for r in diag)


def test_intrinsic_zero_bases_is_zero_shot(ws, capsys):
    assert tvkit("eval", "acc", "--base", ws["base"], "--data", ws["data"][0], "--out", "zs.csv") == 0
    zs = float(_rows("zs.csv")[1][1])
    assert tvkit("eval", "intrinsic", "--basis", "random", "--bases", 0, 1, "--base", ws["base"],
                 "--data", ws["data"][0], "--reference", ws["ft"][0], "--epochs", 1, "--out", "id.csv") == 0
    rows = _rows("id.csv")
    assert rows[0] == ["basis_kind", "d", "seed", "abs_acc", "rel_acc"] and len(rows) == 3
    assert float(rows[1][3]) == zs


def test_K1_composite_is_reproducible(ws):
    for out in ("k1a.json", "k1b.json"):
        assert tvkit("learn", "add", "--base", ws["base"], "--tv", *ws["tvs"][:2], "--data", *ws["data"][:2],
                     "--K", 1, "--epochs", 2, "--out", out) == 0
    # the weight files differ only in the coefficient file name stored in their metadata
    assert _weights("k1a.tvck").identical(_weights("k1b.tvck"))
    assert Path("k1a.json").read_bytes() == Path("k1b.json").read_bytes()


def test_learned_coefficients_recompose(ws):
    assert tvkit("learn", "add", "--base", ws["base"], "--tv", *ws["tvs"][:2], "--data", *ws["data"][:2],
                 "--K", 2, "--epochs", 2, "--out", "k2.json") == 0
    assert tvkit("eval", "acc", "--base", ws["base"], "--coeffs", "k2.json", "--tv", *ws["tvs"][:2],
                 "--data", ws["data"][0], "--out", "via_coeffs.csv") == 0
    assert tvkit("eval", "acc", "--base", ws["base"], "--weights", "k2.tvck", "--data", ws["data"][0],
                 "--out", "via_weights.csv") == 0
    assert _rows("via_coeffs.csv") == _rows("via_weights.csv")
    report = json.loads(Path("k2.json").read_text())
    assert report["K"] == 2 and report["mode"] == "add"


def test_coefficients_need_their_vectors(ws):
    assert tvkit("learn", "add", "--base", ws["base"], "--tv", ws["tvs"][0], "--data", ws["data"][0],
                 "--epochs", 1, "--out", "one.json") == 0
    assert tvkit("eval", "acc", "--base", ws["base"], "--coeffs", "one.json", "--data", ws["data"][0],
                 "--out", "x.csv") == EXIT_CONFIG


def test_negate_reports_control_retention(ws, capsys):
    assert tvkit("learn", "negate", "--base", ws["base"], "--tv", ws["tvs"][0], "--data", ws["data"][0],
                 "--control", ws["control"], "--epochs", 3, "--out", "neg.json") == 0
    assert "control retention" in capsys.readouterr().out
    assert tvkit("eval", "negation", "--base", ws["base"], "--weights", "neg.tvck", "--data", ws["data"][0],
                 "--control", ws["control"], "--out", "neg_eval.json") == 0
    out = json.loads(Path("neg_eval.json").read_text())
    assert set(out) == {"target", "control", "target_pretrained", "control_pretrained", "retention", "passed"}
    assert tvkit("learn", "negate", "--base", ws["base"], "--tv", *ws["tvs"][:2], "--data", ws["data"][0],
                 "--control", ws["control"], "--out", "x.json") == EXIT_CONFIG


def test_fewshot_with_selection_writes_plan(ws):
    assert tvkit("learn", "fewshot", "--base", ws["base"], "--tv", *ws["tvs"][1:], "--data", ws["data"][0],
                 "--k", 2, "--epochs", 1, "--budget", 1, "--strategy", "gradient-blockwise", "--out", "fs.json") == 0
    report = json.loads(Path("fs.json").read_text())
    assert report["selection"]["strategy"] == "gradient-blockwise" and report["k"] == 2


def test_lora_command(ws):
    assert tvkit("lora", "--base", ws["base"], "--task", ws["data"][0], "--rank", 2, "--epochs", 1,
                 "--out", "lora.tvck") == 0
    tv = tvck.load("lora.tvck")
    assert tv.id == "t0" and tv.factors


def test_version_and_help_exit_zero(capsys):
    assert tvkit("--version") == 0
    assert tvkit("--help") == 0
    assert "tvkit" in capsys.readouterr().out
