# Copyright (c) 2026 The EAR Attention Authors.
# SPDX-License-Identifier: Apache-2.0

import json

import numpy as np
import pytest

import ear_attention as ear


def _instance(seed=0, nq=24, nk=32, d=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(nq, d)), rng.normal(size=(nk, d)), rng.normal(size=(nk, d))


def _naive_attention(q, k, v):
    s = q @ k.T / np.sqrt(q.shape[1])
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


def test_full_attention_matches_numpy():
    q, k, v = _instance()
    out, probs = ear.full_attention(q, k, v)
    np.testing.assert_allclose(out, _naive_attention(q, k, v), atol=1e-12)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_all_selected_mask_is_exact():
    q, k, v = _instance(1)
    qa, _ = ear.kmeans(q, 3, seed=1)
    ka, _ = ear.kmeans(k, 5, seed=2)
    mask = np.ones((3, 5), dtype=bool)
    out, lse, flops = ear.sparse_attention(q, k, v, qa, ka, mask)
    np.testing.assert_allclose(out, _naive_attention(q, k, v), atol=1e-10)
    assert lse.shape == (24,)
    assert flops["compensation"] == 0
    assert flops["exact_block"] == 4 * 4 * 24 * 32


def test_empty_mask_uses_centroids():
    q, k, v = _instance(2)
    qa = np.arange(24) % 2
    ka = np.arange(32) % 4
    out, _, flops = ear.sparse_attention(q, k, v, qa, ka, np.zeros((2, 4), dtype=bool))
    kbar = np.stack([k[ka == c].mean(axis=0) for c in range(4)])
    vbar = np.stack([v[ka == c].mean(axis=0) for c in range(4)])
    logits = q @ kbar.T / 2.0 + np.log(np.bincount(ka))
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    np.testing.assert_allclose(out, (w / w.sum(axis=1, keepdims=True)) @ vbar, atol=1e-12)
    assert flops["exact_block"] == 0


def test_error_table_is_nonnegative():
    q, k, v = _instance(3)
    qa, _ = ear.kmeans(q, 3)
    ka, _ = ear.kmeans(k, 4)
    for mode in ("plain", "valueAware"):
        table = ear.estimate_errors(q, k, v, qa, ka, mode)
        assert table.shape == (3, 4)
        assert (table >= 0).all()


def test_pipeline_full_density_is_exact():
    q, k, v = _instance(4)
    cfg = json.dumps({"budgetMode": "globalDensity", "rho": 1.0, "cQ": 3, "cK": 6})
    res = ear.run_pipeline(q, k, v, cfg, seed=1)
    assert res["density"] == 1.0
    assert res["mask"].all()
    np.testing.assert_allclose(res["output"], _naive_attention(q, k, v), atol=1e-10)


def test_pipeline_respects_density_budget():
    q, k, v = _instance(5, 64, 64, 8)
    cfg = json.dumps({"budgetMode": "globalDensity", "rho": 0.25, "cQ": 4, "cK": 8})
    res = ear.run_pipeline(q, k, v, cfg)
    assert 0 < res["density"] <= 0.25
    assert res["flops"]["total"] > 0


def test_errors_map_to_exception_types():
    q, k, v = _instance(6)
    with pytest.raises(ear.ConfigError):
        ear.run_pipeline(q, k, v, json.dumps({"rho": 3.0, "budgetMode": "globalDensity"}))
    with pytest.raises(ear.ShapeError):
        ear.full_attention(q, k[:, :2], v)
    assert issubclass(ear.ConfigError, ear.EarError)


def test_tensor_file_round_trip(tmp_path):
    q, k, v = _instance(7)
    path = str(tmp_path / "x.qkvt")
    ear.write_tensor_file(path, q, k, v)
    q2, k2, v2, dtype = ear.read_tensor_file(path)
    assert dtype == "float64"
    assert np.array_equal(q, q2) and np.array_equal(k, k2) and np.array_equal(v, v2)
    with open(path, "ab") as f:
        f.write(b"\0")
    with pytest.raises(ear.InputError):
        ear.read_tensor_file(path)


def test_harness_run_in_process(tmp_path):
    q, k, v = _instance(8, 32, 32, 4)
    path = str(tmp_path / "x.qkvt")
    ear.write_tensor_file(path, q, k, v)
    code, out, err = ear.harness(["run", path, "--no-timing"])
    assert code == 0, err
    record = json.loads(out.splitlines()[0])
    assert record["policy"] == "errorAwareCompensated"
    code, _, _ = ear.harness(["run", str(tmp_path / "missing.qkvt")])
    assert code == 3
