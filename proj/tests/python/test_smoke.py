import math

import numpy as np
import pytest

import nadapt


def test_lambda_schedule_endpoints():
    assert nadapt.lambda_schedule(0, 60) == 0.0
    assert abs(nadapt.lambda_schedule(60, 60) - 0.197322) <= 1e-6
    assert abs(nadapt.lambda_schedule(30, 60) - 0.169656) <= 1e-6


def test_schedule_and_forward_sample():
    s = nadapt.linear_schedule()
    assert s.steps == 1000
    assert math.isclose(s.beta[0], 1e-6)
    assert math.isclose(s.alpha_bar[-1], float(np.prod(1.0 - np.linspace(1e-6, 1e-2, 1000))), rel_tol=1e-6)
    rng = np.random.default_rng(0)
    clean = rng.random((2, 3, 4, 4), dtype=np.float32)
    eps = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    noisy, sab = nadapt.forward_sample(clean, [0, 999], eps, s)
    for i, t in enumerate([0, 999]):
        ab = s.alpha_bar[t]
        np.testing.assert_allclose(noisy[i], math.sqrt(ab) * clean[i] + math.sqrt(1 - ab) * eps[i], rtol=1e-5, atol=1e-6)
        assert math.isclose(sab[i], math.sqrt(ab), rel_tol=1e-6)


def test_losses_match_numpy():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    b = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    want = np.mean(np.sqrt((a.astype(np.float64) - b) ** 2 + 1e-6))
    assert math.isclose(nadapt.charbonnier_loss(a, b), want, rel_tol=1e-6)
    e, p, n = (rng.standard_normal((4, 1, 3, 3)).astype(np.float32) for _ in range(3))
    dp = np.linalg.norm((e - p).reshape(4, -1).astype(np.float64), axis=1)
    dn = np.linalg.norm((e - n).reshape(4, -1).astype(np.float64), axis=1)
    want = np.mean(np.maximum(dp - dn + 0.05, 0))
    assert math.isclose(nadapt.contrastive_loss(e, p, n, 0.05), want, rel_tol=1e-5)
    assert nadapt.combined_loss(0.5, 2.0, 1.0, 0.2) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        nadapt.contrastive_loss(e, p, n, -1.0)


def test_metrics():
    rng = np.random.default_rng(2)
    x = rng.random((3, 16, 16), dtype=np.float32)
    assert nadapt.psnr(x, x) == 100.0
    assert nadapt.ssim(x, x) == pytest.approx(1.0)
    y = np.clip(x + 0.1, 0, 1).astype(np.float32)
    assert 15 < nadapt.psnr(y, x) < 25
    assert nadapt.spearman([0, 1, 2], [1, 5, 9]) == pytest.approx(1.0)


def test_restorer_identity_and_checkpoint(tmp_path):
    net = nadapt.Restorer("T", 3)
    assert net.variant == "T"
    assert net.parameter_count > 100_000
    x = np.random.default_rng(3).random((1, 3, 20, 20), dtype=np.float32)
    restored, residual = net.restore(x)
    assert restored.shape == x.shape
    np.testing.assert_array_equal(residual, 0)
    np.testing.assert_allclose(restored, x, atol=1e-6)
    net.save(str(tmp_path / "r.ckpt"))
    again = nadapt.Restorer.load(str(tmp_path / "r.ckpt"))
    np.testing.assert_array_equal(again.restore(x)[0], restored)


def test_config_and_cli(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text('{"train": {"epochs": 7}}')
    cfg = nadapt.load_config(cfg_path, ["seed=3"])
    assert cfg["train"]["epochs"] == 7
    assert cfg["seed"] == 3
    with pytest.raises(ValueError):
        nadapt.load_config(cfg_path, ["seed=1", "seed=2"])
    code, _, err = nadapt.run_cli("train", "--out", tmp_path / "o", "--override", "bogus=1")
    assert code == 3
    assert "unknown config key" in err


def test_degrade_train_eval_roundtrip(tmp_path):
    data = tmp_path / "data"
    code, _, err = nadapt.run_cli(
        "degrade", "--out", data, "--override", "degrade.procedural.count=8", "degrade.procedural.size=32",
        "degrade.split.syn=4", "degrade.split.real=2", "degrade.split.pool=0", "degrade.split.eval=2")
    assert code == 0, err
    run = tmp_path / "run"
    code, _, err = nadapt.run_cli(
        "train", "--out", run, "--override", f"data.root={data}", "data.patch=16", "train.epochs=1", "train.batch=2",
        "train.steps_per_epoch=1", "train.val_count=2", "diffusion.base_channels=4")
    assert code == 0, err
    report = nadapt.evaluate(run / "restorer.ckpt", data)
    assert len(report["per_image"]) == 2
    assert report["psnr_db"] > 0
