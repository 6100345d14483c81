import math

import numpy as np
import pytest

import mmdino


def test_config_round_trip():
    cfg = mmdino.Config("train.epochs = 12\n", desk_scale=True)
    assert cfg.get("train.epochs") == "12"
    assert cfg.get("train.batch_size") == "32"
    again = mmdino.Config(cfg.text())
    assert again.fingerprint() == cfg.fingerprint()
    cfg.set("train.seed", "5")
    assert cfg.fingerprint() != again.fingerprint()
    assert "model.pos_mode" in mmdino.Config.keys()
    with pytest.raises(mmdino.ConfigError):
        mmdino.Config("no.such.key = 1\n")


def test_metrics_match_numpy_references():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, 60)
    p = np.where(rng.random(60) < 0.7, y, rng.integers(0, 3, 60))
    # multiclass MCC as the Pearson correlation of one-hot matrices
    Y, P = np.eye(3)[y], np.eye(3)[p]
    Yc, Pc = Y - Y.mean(0), P - P.mean(0)
    ref = (Yc * Pc).sum() / math.sqrt((Yc**2).sum() * (Pc**2).sum())
    assert mmdino.mcc(y, p) == pytest.approx(ref, abs=1e-12)
    assert mmdino.mcc(y, np.zeros_like(y)) == 0.0

    value, defined = mmdino.f1(y, p, 1)
    tp = np.sum((y == 1) & (p == 1))
    assert defined
    assert value == pytest.approx(2 * tp / (np.sum(y == 1) + np.sum(p == 1)))

    scores = rng.random((60, 3))
    per_class = []
    for k in range(3):
        pos, neg = scores[y == k, k], scores[y != k, k]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        per_class.append(wins / (len(pos) * len(neg)))
    assert mmdino.auroc(y, scores) == pytest.approx(np.mean(per_class), abs=1e-12)


def test_schedules():
    assert mmdino.lr_at(0, 100, 10, 1e-3, 1e-5) == pytest.approx(1e-4)
    assert mmdino.lr_at(100, 100, 10, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert mmdino.ema_momentum_at(0, 100, 0.992, 1.0) == pytest.approx(0.992)
    assert mmdino.teacher_temp_at(5, 10, 0.04, 0.07) == pytest.approx(0.055)


def test_model_forward_token_count():
    cfg = mmdino.Config("model.embed_dim = 16\nmodel.depth = 1\nmodel.num_heads = 2\n")
    model = mmdino.Model(cfg)
    params = model.init_params(1)
    assert params.shape == (model.num_params,)
    rng = np.random.default_rng(1)
    images = [rng.standard_normal((98, 98)).astype(np.float32) for _ in range(4)]
    out = model.forward(images, params)
    assert out["tokens"] == 197
    assert out["patch_logits"].shape == (196, 3)
    assert out["image_probs"].sum() == pytest.approx(1.0, abs=1e-6)
    # one modality absent
    out3 = model.forward(images[:3] + [None], params)
    assert out3["tokens"] == 148
    with pytest.raises(mmdino.ShapeError):
        model.forward(images, params[:-1])


def test_synth_pretrain_evaluate(tmp_path):
    data = tmp_path / "data"
    n = mmdino.synth(data, subjects=40, external=10, prevalence=(0.4, 0.3, 0.3), seed=3)
    assert n == 50
    ds = mmdino.Dataset(data)
    assert len(ds) == 50
    counts = ds.split_counts()
    assert counts["test_external"] == 10
    s = ds.subject(0)
    assert len(s["images"]) == 4
    assert s["mask"].sum() >= 500

    cfg = mmdino.Config(
        "model.embed_dim = 16\nmodel.depth = 1\nmodel.num_heads = 2\nhead.hidden = 16\n"
        "train.epochs = 2\ntrain.steps_per_epoch = 2\ntrain.batch_size = 2\n"
        "train.head_warmup_epochs = 1\ntrain.lr_warmup_epochs = 1\ntrain.teacher_temp_warmup_epochs = 1\n"
        "view.n_local = 2\n"
    )
    run = tmp_path / "run"
    steps = mmdino.pretrain(cfg, data, run, max_steps=2)
    assert [r["step"] for r in steps] == [0, 1]
    assert all(math.isfinite(r["total"]) for r in steps)
    rest = mmdino.pretrain(cfg, data, run, resume=True)
    assert [r["step"] for r in rest] == [2, 3]
    assert (run / "checkpoint.safetensors").exists()

    rep = mmdino.evaluate(run, data)
    assert rep["internal"]["split"] == "internal"
    assert -1.0 <= rep["internal"]["mcc"] <= 1.0
    assert "external" in rep
    dropped = mmdino.evaluate(run, data, missing_seed=7)
    assert dropped["internal"]["missing_modality_seed"] == 7
