import math

import numpy as np
import pytest

import csunet

TINY = {"stage_channels": [2, 2, 4, 4], "input_extent": 16, "seed": 1}


def test_network_shapes_and_config():
    net = csunet.Network(TINY)
    assert net.config["stage_channels"] == [2, 2, 4, 4]
    assert net.config["variant"] == "base_cr"
    names = [s[0] for s in net.summary()]
    assert names[0] == "en1" and names[4] == "bottleneck" and names[-1] == "head"
    x = np.random.default_rng(0).standard_normal((2, 1, 16, 16, 16)).astype(np.float32)
    logits = net.predict_logits(x)
    assert logits.shape == (2, 2, 16, 16, 16)
    labels = net.predict_labels(x)
    assert labels.shape == (2, 1, 16, 16, 16)
    assert labels.dtype == np.uint8
    assert np.array_equal(labels[:, 0], logits.argmax(axis=1).astype(np.uint8))
    assert net.census()["mini_us"] == 17


def test_default_network_layout():
    net = csunet.Network()
    summary = net.summary()
    assert summary[4][1] == [1, 256, 4, 4, 4]
    assert summary[-1][2] == [1, 2, 64, 64, 64]


def test_bad_config_raises():
    with pytest.raises(ValueError):
        csunet.Network({"input_extent": 24})
    with pytest.raises(ValueError):
        csunet.Network({"depth": 3})
    with pytest.raises(csunet.ShapeError):
        csunet.Network(TINY).predict_logits(np.zeros((1, 2, 16, 16, 16), np.float32))


def test_checkpoint_roundtrip(tmp_path):
    net = csunet.Network(TINY)
    path = tmp_path / "m.csuc"
    net.save(str(path))
    back = csunet.load(path)
    x = np.ones((1, 1, 16, 16, 16), np.float32)
    assert np.array_equal(back.predict_logits(x), net.predict_logits(x))
    with pytest.raises(csunet.FormatError):
        csunet.load(tmp_path / "missing.csuc")


def test_conv3d_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 4, 5, 3))
    w = rng.standard_normal((3, 2, 2, 2, 2))
    b = rng.standard_normal(3)
    y = csunet.conv3d(x, w, b)
    assert y.shape == (1, 3, 3, 4, 2)
    ref = np.empty_like(y)
    for o in range(3):
        for d in range(3):
            for h in range(4):
                for k in range(2):
                    ref[0, o, d, h, k] = np.sum(x[0, :, d : d + 2, h : h + 2, k : k + 2] * w[o]) + b[o]
    assert np.allclose(y, ref, atol=1e-12)


def test_losses_and_metrics():
    y = (np.random.default_rng(2).random((1, 1, 4, 4, 4)) > 0.5).astype(np.float64)
    assert csunet.dice_loss(y, y) == 0.0
    logits = np.zeros((1, 2, 2, 2, 2))
    onehot = np.concatenate([1 - y[:, :, :2, :2, :2], y[:, :, :2, :2, :2]], axis=1)
    assert abs(csunet.ce_loss(logits, onehot) - math.log(2)) < 1e-12
    pred = np.zeros(64, np.uint8)
    target = np.zeros(64, np.uint8)
    pred[[0, 1, 2, 3]] = 1
    target[[0, 1, 4, 5]] = 1
    m = csunet.metrics(pred, target)
    assert m["dsc"] == 0.5 and m["sen"] == 0.5 and m["pre"] == 0.5
    assert abs(m["miou"] - (2 / 6 + 58 / 62) / 2) < 1e-15


def test_phantom_and_volume_io(tmp_path):
    image, mask, center = csunet.generate_phantom(extent=16, radius=3, center=(8, 8, 8), seed=4)
    assert image.shape == mask.shape == (1, 16, 16, 16)
    assert int(mask.sum()) == 123
    assert tuple(center) == (8, 8, 8)
    csunet.write_volume(str(tmp_path / "p.image.csuv"), image)
    csunet.write_volume(str(tmp_path / "p.mask.csuv"), mask, "uint8")
    assert np.array_equal(csunet.read_volume(str(tmp_path / "p.image.csuv")), image)
    assert (tmp_path / "p.image.csuv").stat().st_size == 25 + 4 * 16**3
    csunet.build_manifest(str(tmp_path))
    assert (tmp_path / "manifest.json").exists()


def test_kfold_split():
    ids = [f"id{i}" for i in range(751)]
    folds = csunet.kfold_split(ids, 5, 0)
    assert sorted(len(val) for _, val in folds) == [150, 150, 150, 150, 151]
    assert sorted(v for _, val in folds for v in val) == sorted(ids)


def test_cross_validate_runs(tmp_path):
    for i in range(4):
        image, mask, _ = csunet.generate_phantom(extent=16, radius=2.5, seed=10 + i)
        csunet.write_volume(str(tmp_path / f"s{i}.image.csuv"), image)
        csunet.write_volume(str(tmp_path / f"s{i}.mask.csuv"), mask, "uint8")
    csunet.build_manifest(str(tmp_path))
    report = csunet.cross_validate(
        {"network": TINY, "train": {"max_epochs": 1, "folds": 2}}, tmp_path / "manifest.json"
    )
    assert len(report["folds"]) == 2
    assert set(report["mean"]) == {"sen", "dsc", "pre", "miou"}
