from __future__ import annotations

import numpy as np
import pytest

from tvkit.optim import AdamW


def test_first_step_is_lr_times_sign_plus_decay():
    opt = AdamW(3, lr=0.1, weight_decay=0.5)
    p = np.array([1.0, -2.0, 0.0])
    g = np.array([0.3, -4.0, 1e-3])
    new = opt.step(p, g)
    # bias-corrected m/sqrt(v) is g/|g| on the first step
    expect = p * (1 - 0.05) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(new, expect, rtol=1e-12)


def test_two_steps_by_hand():
    opt = AdamW(1, lr=0.01, weight_decay=0.0, betas=(0.9, 0.99), eps=0.0)
    p = np.array([0.0])
    p = opt.step(p, np.array([1.0]))
    p = opt.step(p, np.array([3.0]))
    m = 0.1 * 0.9 + 0.1 * 3.0
    v = 0.01 * 0.99 + 0.01 * 9.0
    step2 = (m / (1 - 0.81)) / np.sqrt(v / (1 - 0.99 ** 2))
    assert p[0] == pytest.approx(-0.01 - 0.01 * step2)


def test_frozen_entries_untouched():
    opt = AdamW(2, lr=0.1, weight_decay=0.1)
    p = np.array([1.0, 1.0])
    new = opt.step(p, np.array([1.0, 1.0]), np.array([True, False]))
    assert new[1] == 1.0 and new[0] != 1.0


def test_zero_gradient_only_decays():
    opt = AdamW(1, lr=0.1, weight_decay=0.2, eps=1e-8)
    assert opt.step(np.array([2.0]), np.array([0.0]))[0] == pytest.approx(2.0 * 0.98)


def test_rejects_non_positive_lr():
    with pytest.raises(ValueError):
        AdamW(1, lr=0.0)
