from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvkit.data import TaskSpec, generate, kshot, load_idx, plane_rotation, universe, write_idx
from tvkit.errors import ConfigError, FormatError


def _spec(**kw):
    base = dict(task_id="t", seed=3, num_classes=4, n_train=20, n_val=5, n_test=10)
    base.update(kw)
    return TaskSpec(**base)


def test_generation_is_deterministic():
    a, b = generate(_spec()), generate(_spec())
    for split in ("train", "val", "test"):
        assert np.array_equal(a[split].inputs, b[split].inputs)
        assert np.array_equal(a[split].labels, b[split].labels)
    assert not np.array_equal(a.train.inputs, generate(_spec(seed=4)).train.inputs)


def test_split_sizes_and_balance():
    ds = generate(_spec())
    assert len(ds.train) == 80 and len(ds.val) == 20 and len(ds.test) == 40
    assert np.bincount(ds.test.labels).tolist() == [10] * 4


def test_splits_are_disjoint():
    ds = generate(_spec())
    rows = [set(map(bytes, ds[s].inputs.astype(np.float32))) for s in ("train", "val", "test")]
    assert not (rows[0] & rows[1]) and not (rows[0] & rows[2]) and not (rows[1] & rows[2])


def test_changing_test_size_leaves_train_unchanged():
    assert np.array_equal(generate(_spec()).train.inputs, generate(_spec(n_test=3)).train.inputs)


def test_non_positive_noise_rejected():
    with pytest.raises(ConfigError):
        _spec(noise=0.0)
    with pytest.raises(ConfigError):
        _spec(noise=-1.0)


def test_bad_class_count_rejected():
    with pytest.raises(ConfigError):
        _spec(num_classes=1)
    with pytest.raises(ConfigError):
        _spec(num_classes=41)


def test_spec_json_roundtrip_and_unknown_fields(tmp_path):
    s = _spec(rotation=0.3)
    assert TaskSpec.from_json(s.to_json()) == s
    with pytest.raises(ConfigError):
        TaskSpec.from_json({**s.to_json(), "colour": "red"})
    p = tmp_path / "s.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        TaskSpec.read(p)


def test_heads_are_unit_norm_and_shared_concepts_share_embeddings():
    a = generate(_spec(seed=1))
    b = generate(_spec(seed=2))
    assert np.allclose(np.linalg.norm(a.head, axis=1), 1, atol=1e-6)
    shared = set(a.concepts) & set(b.concepts)
    for c in shared:
        assert np.array_equal(a.head[a.concepts.index(c)], b.head[b.concepts.index(c)])


def test_class_means_follow_anchors():
    spec = _spec(n_train=2000, noise=0.5)
    ds = generate(spec)
    uni = universe(0, 40, 16, 16)
    for c, concept in enumerate(ds.concepts):
        mean = ds.train.inputs[ds.train.labels == c].mean(axis=0)
        assert np.linalg.norm(mean - uni.anchors[concept]) < 0.1


@pytest.mark.parametrize("angle", [0.0, 0.7, np.pi / 2, 3.0])
def test_rotation_cosine_oracle(angle):
    rng = np.random.default_rng(0)
    R = plane_rotation(6, angle, np.random.default_rng(5))
    assert np.allclose(R @ R.T, np.eye(6), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    # a vector inside the rotation plane turns by exactly ``angle``
    basis, _ = np.linalg.qr(np.random.default_rng(5).normal(size=(6, 2)))
    u = basis @ rng.normal(size=2)
    assert u @ R @ u / (u @ u) == pytest.approx(np.cos(angle), abs=1e-12)
    # and one orthogonal to it is untouched
    w = rng.normal(size=6)
    w -= basis @ (basis.T @ w)
    assert np.allclose(R @ w, w, atol=1e-12)


def test_kshot_exact_k_and_within_train():
    ds = generate(_spec())
    s = kshot(ds, 3, seed=0)
    b = s.batch(ds)
    assert np.bincount(b.labels).tolist() == [3] * 4
    assert len(set(s.all_indices().tolist())) == 12


def test_kshot_needs_enough_examples():
    with pytest.raises(ConfigError, match="need 21"):
        kshot(generate(_spec()), 21, seed=0)
    with pytest.raises(ConfigError):
        kshot(generate(_spec()), 0, seed=0)


def test_kshot_seeds_give_distinct_draws():
    ds = generate(_spec())
    draws = {tuple(kshot(ds, 4, seed=s).all_indices().tolist()) for s in range(100)}
    assert len(draws) >= 99
    assert np.array_equal(kshot(ds, 4, 7).all_indices(), kshot(ds, 4, 7).all_indices())


def test_idx_two_by_two_fixture(tmp_path):
    write_idx(tmp_path / "img", np.array([[[0, 255], [51, 102]]], dtype=np.uint8))
    write_idx(tmp_path / "lab", np.array([1], dtype=np.uint8))
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    assert np.array_equal(ds.train.inputs, np.float32([[0.0, 1.0, 0.2, 0.4]]))
    assert ds.train.labels.tolist() == [1] and ds.num_classes == 2


def test_idx_wrong_magic(tmp_path):
    write_idx(tmp_path / "img", np.zeros((1, 2, 2)))
    write_idx(tmp_path / "lab", np.zeros(1))
    with pytest.raises(FormatError, match="magic"):
        load_idx(tmp_path / "lab", tmp_path / "img")


def test_idx_count_mismatch(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 2, 2)))
    write_idx(tmp_path / "lab", np.zeros(3))
    with pytest.raises(FormatError, match="2 images but 3 labels"):
        load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_truncated_payload_reports_offset(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 2, 2)))
    write_idx(tmp_path / "lab", np.zeros(2))
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "img").write_bytes(raw[:-3])
    with pytest.raises(FormatError) as exc:
        load_idx(tmp_path / "img", tmp_path / "lab")
    assert exc.value.offset == len(raw) - 3


def test_idx_trailing_bytes(tmp_path):
    (tmp_path / "lab").write_bytes(struct.pack(">II", 0x801, 1) + b"\x00\x00")
    write_idx(tmp_path / "img", np.zeros((1, 1, 1)))
    with pytest.raises(FormatError, match="trailing"):
        load_idx(tmp_path / "img", tmp_path / "lab")


@given(st.integers(0, 10 ** 6), st.integers(1, 5))
def test_property_kshot_balanced_for_any_seed(seed, k):
    ds = generate(_spec())
    b = kshot(ds, k, seed).batch(ds)
    assert np.all(np.bincount(b.labels, minlength=4) == k)
