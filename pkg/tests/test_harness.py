import numpy as np
import pytest

from scatterdense import harness
from scatterdense.config import ExperimentConfig
from scatterdense.encoder import count_channels
from scatterdense.tensor import ConfigError

TINY = ExperimentConfig(J=2, L=4, image_size=32, patch=16, batch=2, steps=3, n_train=2, n_test=1,
                        c_bn=4, gate_hidden=4)


@pytest.fixture(scope="module")
def trained():
    return harness.train(TINY.replace(steps=5), seed=0)


def test_steps_zero_evaluates_initial_model():
    res = harness.train(TINY.replace(steps=0))
    assert res.losses == []
    assert np.isfinite(res.psnr) and np.isfinite(res.metrics.ssim)
    assert np.isfinite(res.identity.psnr_db)


def test_training_is_bit_reproducible(tmp_path):
    a = harness.train(TINY, seed=3, checkpoint_dir=tmp_path / "a")
    b = harness.train(TINY, seed=3, checkpoint_dir=tmp_path / "b")
    assert a.psnr == b.psnr and a.losses == b.losses
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name
    c = harness.train(TINY, seed=4)
    assert c.losses != a.losses


def test_identity_baseline_is_direct_psnr():
    from scatterdense.metrics import psnr

    res = harness.train(TINY.replace(steps=0))
    prep = harness.prepare(res.cfg)
    i = prep.test_idx[0]
    assert res.identity.psnr_db == pytest.approx(psnr(prep.noisy[i], prep.clean[i]), abs=1e-12)


def test_train_fraction_limits_training_images():
    prep = harness.prepare(TINY.replace(n_train=4, train_fraction=0.5))
    assert list(prep.train_idx) == [0, 1]
    assert list(prep.test_idx) == [4]


def test_divergence_is_reported():
    with pytest.raises(harness.DivergenceError, match="non-finite"):
        harness.train(TINY.replace(lr=1e200, steps=20))


def test_crops_wrap_periodically(rng):
    a = rng.standard_normal((3, 2, 8, 8))
    out = harness._crop(a, np.array([1, 2]), np.array([6, 0]), np.array([7, 3]), 4)
    assert out.shape == (2, 2, 4, 4)
    np.testing.assert_array_equal(out[0], np.roll(a[1], (-6, -7), axis=(1, 2))[:, :4, :4])
    np.testing.assert_array_equal(out[1], a[2][:, 0:4, 3:7])


def test_checkpoint_reload_predicts_identically(trained, tmp_path):
    harness.save_model(trained.model, tmp_path / "ck")
    model = harness.load_model(tmp_path / "ck")
    assert model.cfg == trained.cfg
    prep = harness.prepare(trained.cfg)
    x = prep.noisy[prep.test_idx]
    np.testing.assert_array_equal(model.denoise(x), trained.model.denoise(x))


def test_shuffle_plane_preserves_multisets(rng):
    plane = rng.standard_normal((2, 3, 8, 8))
    out = harness.shuffle_plane(plane, np.random.default_rng(0))
    assert not np.array_equal(out, plane)
    for b in range(2):
        for c in range(3):
            np.testing.assert_array_equal(np.sort(out[b, c].ravel()), np.sort(plane[b, c].ravel()))


def test_shuffle_all_uses_independent_permutations(rng):
    idx = np.arange(64.0).reshape(1, 1, 8, 8)
    (a, p), = harness.shuffled_planes([(idx, idx.copy())], "all", np.random.default_rng(1))
    assert not np.array_equal(a, p)
    (a1, p1), = harness.shuffled_planes([(idx, idx.copy())], "phase", np.random.default_rng(1))
    np.testing.assert_array_equal(a1, idx)
    assert not np.array_equal(p1, idx)
    with pytest.raises(ConfigError):
        harness.shuffled_planes([(idx, idx)], "both", np.random.default_rng(1))


def test_shuffle_none_is_plain_evaluation(trained):
    r = harness.shuffle_ablation(trained.model, "none", [0, 1, 2])
    assert r.delta == 0.0
    assert r.psnr_mean == pytest.approx(trained.psnr, abs=1e-12)
    moved = harness.shuffle_ablation(trained.model, "phase", [0, 1])
    assert moved.delta != 0.0 and len(moved.per_seed) == 2


def test_shuffle_needs_polar_model():
    res = harness.train(TINY.replace(skip_mode="cartesian", gating=False, steps=0))
    with pytest.raises(ConfigError):
        harness.shuffle_ablation(res.model, "phase", [0])


def test_perturbation_zero_and_translation_at_init():
    res = harness.train(TINY.replace(steps=0))
    rows = harness.perturbation_sweep(res.model, rotations=[0.0], translations=[0, 1, 5])
    assert [r["drop"] for r in rows] == [0.0, 0.0, rows[2]["drop"], rows[3]["drop"]]
    assert all(abs(r["drop"]) < 1e-6 for r in rows)
    with pytest.raises(ConfigError):
        harness.perturbation_sweep(res.model, rotations=[], translations=[0.5])


def test_ladder_configurations():
    cfgs = harness.ladder_configs(TINY)
    assert list(cfgs) == ["i", "ii", "iii", "iv"]
    assert cfgs["i"].encoder_mode == "invariant" and cfgs["i"].skip_mode == "modulus_only"
    assert cfgs["ii"].encoder_mode == "stride1" and cfgs["ii"].skip_mode == "modulus_only"
    assert cfgs["iii"].skip_mode == "cartesian" and not cfgs["iii"].gating
    assert cfgs["iv"].skip_mode == "polar" and cfgs["iv"].gating
    with pytest.raises(ConfigError):
        harness.ablation_ladder(TINY, [0, 1])


def test_ladder_runs_and_chains_deltas():
    res = harness.ablation_ladder(TINY.replace(steps=1), [0, 1, 2])
    assert [r.config_id for r in res] == ["i", "ii", "iii", "iv"]
    assert res[0].delta == 0.0
    for prev, cur in zip(res[:-1], res[1:]):
        assert cur.baseline == prev.config_id
        assert cur.delta == pytest.approx(cur.psnr_mean - prev.psnr_mean)
    assert all(len(r.per_seed) == 3 for r in res)


def test_sensitivity_channel_counts():
    rows = harness.sensitivity_sweep(TINY.replace(steps=1), "J", [1, 2], [0])
    assert [r["k_in"] for r in rows] == [count_channels(1, 1, 4), count_channels(1, 2, 4)]
    assert all(np.isfinite(r["gate_var_mean"]) for r in rows)
    with pytest.raises(ConfigError):
        harness.sensitivity_sweep(TINY, "depth", [1], [0])


def test_worker_count(monkeypatch):
    monkeypatch.setenv("SCATTERDENSE_THREADS", "3")
    assert harness.worker_count() == 3
    monkeypatch.setenv("SCATTERDENSE_THREADS", "x")
    with pytest.raises(ConfigError):
        harness.worker_count()


def test_parallel_results_match_serial(monkeypatch):
    monkeypatch.setenv("SCATTERDENSE_THREADS", "1")
    serial = [r.psnr for r in harness.train_seeds(TINY, [0, 1])]
    monkeypatch.setenv("SCATTERDENSE_THREADS", "2")
    threaded = [r.psnr for r in harness.train_seeds(TINY, [0, 1])]
    assert serial == threaded


def test_csv_is_round_trip_exact(tmp_path):
    harness.write_csv(tmp_path / "t.csv", ["a", "b"], [[0.1 + 0.2, [1.0, 2.5]], ["x", 3]])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["a,b", "0.30000000000000004,1.0;2.5", "x,3"]


def test_two_hundred_steps_beat_identity():
    res = harness.train(ExperimentConfig(steps=200))
    assert res.psnr > res.identity.psnr_db
