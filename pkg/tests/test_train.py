import csv
import math

import numpy as np
import pytest

from crispedge.config import RunConfig, load_config
from crispedge.data import AugmentConfig, gen_synthetic
from crispedge.network import LUSNet, NetConfig
from crispedge.train import TrainingError, make_batch, train


def small_cfg(**train_kw) -> RunConfig:
    cfg = RunConfig()
    cfg.net = NetConfig(stage_widths=(8, 16), decoder_width=4, expert_count=2)
    cfg.data.augment = AugmentConfig(crop_size=(32, 32))
    cfg.eval.thresholds = 9
    for k, v in {"epochs": 1, "batch_size": 4, "lr": 1e-3, **train_kw}.items():
        setattr(cfg.train, k, v)
    return cfg


@pytest.fixture(scope="module")
def pairs():
    return gen_synthetic(8, 48, 0)


def test_one_epoch_writes_log_and_checkpoints(tmp_path, pairs):
    res = train(small_cfg(), pairs, pairs[:2], tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "train_log.csv")))
    assert len(rows) == 1 and list(rows[0]) == ["epoch", "lr", "loss", "val_ods", "seconds"]
    # the focal Tversky term alone is >= 1
    assert float(rows[0]["loss"]) >= 1.0
    assert 0.0 <= float(rows[0]["val_ods"]) <= 1.0
    for name in ("config.yaml", "best.ckpt", "final.ckpt"):
        assert (tmp_path / name).exists()
    assert load_config(tmp_path / "config.yaml") == small_cfg()
    assert res.best_epoch == 0 and len(res.history) == 1


def test_same_seed_same_weights(tmp_path, pairs):
    train(small_cfg(), pairs, (), tmp_path / "a")
    train(small_cfg(), pairs, (), tmp_path / "b")
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    train(small_cfg(seed=1), pairs, (), tmp_path / "c")
    assert (tmp_path / "a" / "final.ckpt").read_bytes() != (tmp_path / "c" / "final.ckpt").read_bytes()


def test_checkpoint_reloads_predictions(tmp_path, pairs):
    res = train(small_cfg(), pairs, (), tmp_path)
    fresh = LUSNet(small_cfg().net, seed=99)
    fresh.load(tmp_path / "final.ckpt")
    fresh.eval()
    x = pairs[0].image
    np.testing.assert_array_equal(fresh.predict(x), res.model.predict(x))


def test_lr_schedule_in_log(tmp_path, pairs):
    res = train(small_cfg(epochs=3, lr_step=2, lr_decay=0.5), pairs[:4], (), None)
    assert [r.lr for r in res.history] == [1e-3, 1e-3, 5e-4]


def test_nan_loss_aborts(pairs, monkeypatch):
    import crispedge.train as tr

    real = tr.get_loss("hfl")
    monkeypatch.setattr(tr, "get_loss", lambda name: lambda p, g, c: real(p, g, c) * math.nan)
    with pytest.raises(TrainingError, match="loss became nan at epoch 0, batch 0"):
        train(small_cfg(), pairs[:4], ())


def test_empty_training_set():
    with pytest.raises(TrainingError):
        train(small_cfg(), [], ())


def test_make_batch_prefers_crops_with_edges(pairs):
    cfg = small_cfg(min_crop_edges=30)
    x, g = make_batch(pairs, [0, 1, 2, 3], cfg, np.random.default_rng(0))
    assert x.shape == (4, 3, 32, 32) and g.shape == (4, 1, 32, 32)
    assert all(g[i].sum() >= 30 for i in range(4))
