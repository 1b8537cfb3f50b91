import os

import numpy as np
import pytest

import qft_engine as qe


def test_roundtrip_error_stays_under_half_a_step():
    rng = np.random.default_rng(7)
    x = rng.uniform(-2.0, 2.0, size=(16, 128)).astype(np.float32)
    y = qe.quantize_roundtrip(x, bit_width=8)
    assert y.shape == x.shape
    scale = np.asarray(qe.quantize_params(x, bit_width=8)["scale"])[:, None]
    assert np.all(np.abs(x - y) <= scale / 2 + 1e-6)


def test_quantize_params_are_per_row():
    x = np.zeros((4, 8), dtype=np.float32)
    x[2] = 3.5
    p = qe.quantize_params(x, bit_width=4)
    assert len(p["scale"]) == 4
    assert len(p["zero_point"]) == 4
    assert p["bit_width"] == 4
    assert all(s > 0 for s in p["scale"])


def test_decompose_keeps_outliers_exact():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 256)).astype(np.float32)
    x[3, 10] = 500.0
    split = qe.decompose(x, outlier_fraction=0.02)
    dense_only = qe.decompose(x, outlier_fraction=0.0)
    assert split["nnz"] > 0
    assert dense_only["nnz"] == 0
    assert split["bytes"] > dense_only["bytes"]
    assert split["l2_error"] < dense_only["l2_error"]
    assert split["reconstructed"][3, 10] == np.float32(500.0)


def test_threshold_sweep_is_monotone():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(16, 512)).astype(np.float32)
    flat = x.reshape(-1)
    flat[rng.integers(0, flat.size, size=40)] = 300.0
    rows = qe.threshold_sweep(x, [0.0, 0.01, 0.05])
    assert [r["fraction"] for r in rows] == [0.0, 0.01, 0.05]
    assert rows[0]["l2_error"] >= rows[1]["l2_error"] >= rows[2]["l2_error"]
    assert rows[0]["bytes"] < rows[1]["bytes"] < rows[2]["bytes"]


def test_analytic_profile_matches_known_ratios():
    n = 6_738_000_000
    adam = qe.analytic_profile(n, "adam")
    lion = qe.analytic_profile(n, "lion")
    qft = qe.analytic_profile(n, "qft")
    assert adam["ratio_vs_adam"] == 1.0
    assert adam["model_state_bytes"] == 4 * 4 * n
    assert abs(lion["ratio_vs_adam"] - 0.75) < 1e-9
    assert 0.19 <= qft["ratio_vs_adam"] <= 0.24


def test_distribution_stats_basics():
    x = np.array([[1.0, 2.0, 3.0, 4.0]], dtype=np.float32)
    s = qe.distribution_stats(x)
    assert s["min"] == 1.0
    assert s["max"] == 4.0
    assert s["mean"] == 2.5
    assert s["outlier_count"] == 0


def test_bad_inputs_raise():
    with pytest.raises(ValueError):
        qe.analytic_profile(10, "sgd")
    with pytest.raises(ValueError):
        qe.quantize_roundtrip(np.zeros(5, dtype=np.float32))
    with pytest.raises(ValueError):
        qe.decompose(np.zeros((2, 2), dtype=np.float32), threshold_kind="nearest")


def test_train_runs_from_a_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "model.dims = 8, 16, 1\n"
        "dataset = synthetic:reg-8-1-n256\n"
        "batch_size = 16\n"
        "epochs = 1\n"
        "steps_per_epoch = 20\n"
        f"out_dir = {tmp_path / 'out'}\n"
    )
    s = qe.train(str(cfg))
    assert s["optimizer_kind"] == "qft-lion"
    assert s["steps"] == 20
    assert len(s["losses"]) == 20
    assert s["final_state_bytes"] > 0
    assert os.path.exists(s["metrics_path"])
    assert os.path.exists(s["checkpoint_path"])
