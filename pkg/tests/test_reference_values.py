"""Published figures and constants checked against the method write-up shipped with the repository."""

from __future__ import annotations

import re
from pathlib import Path

import pytest

from tvkit.evalx import CONTROL_RETENTION
from tvkit.tta import UfmConfig

SOURCE = Path(__file__).resolve().parents[1] / "paper.md"

pytestmark = pytest.mark.skipif(not SOURCE.is_file(), reason="write-up not present")


@pytest.fixture(scope="module")
def text():
    return SOURCE.read_text(encoding="utf-8")


def _rows(text, label):
    """Cells after the method columns of every table row whose first cells mention ``label``."""
    out = []
    for line in text.splitlines():
        cells = [c.strip() for c in line.split("&")]
        if len(cells) > 3 and any(label in c for c in cells[:3]):
            nums = [re.sub(r"\\textbf\{([^}]*)\}", r"\1", c).rstrip("\\ ").strip() for c in cells[3:]]
            out.append(nums)
    return out


def test_addition_headline_learned_beats_search(text):
    learned = [r for r in _rows(text, "(ours)") if r[:2] == ["84.98", "93.79"]]
    search = [r for r in _rows(text, "Search") if r[:2] == ["70.12", "77.24"]]
    assert learned and search
    assert float(learned[0][0]) > float(search[0][0])


def test_negation_headline_keeps_control(text):
    pre = [r for r in _rows(text, "Pre-trained") if r[:2] == ["48.14", "63.35"]]
    learned = [r for r in _rows(text, "(ours)") if r[:2] == ["18.76", "61.21"]]
    assert pre and learned
    target_pre, control_pre = map(float, pre[0][:2])
    target, control = map(float, learned[0][:2])
    assert target < target_pre and control >= CONTROL_RETENTION * control_pre


def test_control_threshold_is_95_percent(text):
    assert re.search(r"95\\%[^.]{0,80}control", text)
    assert CONTROL_RETENTION == 0.95


def test_disentanglement_means(text):
    means = dict(re.findall(r"\\caption\{Std\.([^$]*)\$\\Bar\{\\xi\}=([\d.]+)\\%", text))
    searched = [float(v) for k, v in means.items() if "ours" not in k]
    learned = [float(v) for k, v in means.items() if "ours" in k]
    assert searched == [6.67] and learned == [4.28]


def test_selection_at_budget_one(text):
    block = re.search(r"name path=blockwise_16[^\n]*coordinates \{\(1,([\d.]+)\)", text)
    whole = re.search(r"name path=gradbest_16[^\n]*coordinates \{\(1,([\d.]+)\)", text)
    assert float(block.group(1)) == 68.3 and float(whole.group(1)) == 65.2


def test_ufm_accuracy_over_zero_shot(text):
    row = next(line for line in text.splitlines() if line.strip().startswith("Accuracy & $60.4$"))
    assert "\\mathbf{66.9}" in row


def test_ufm_constants(text):
    cfg = UfmConfig()
    assert "\\min(N/C, 100)" in text and cfg.trusted_cap == 100
    assert re.search(r"\\hat\{\\by\}\^\{0\.5\}", text) and cfg.temperature == 0.5
    assert re.search(r"\\omega\$[^.]{0,80}0\.9 to 1\b", text)
    assert (cfg.omega_start, cfg.omega_end) == (0.9, 1.0)
