import json

import numpy as np
import pytest

import tofdetect as td


def tube(side=32, radius=3.0, peak=800.0):
    z, y, x = np.mgrid[0:side, 0:side, 0:side].astype(np.float32)
    d2 = (x - side / 2) ** 2 + (y - side / 2) ** 2
    return (100.0 + peak * np.exp(-d2 / (2 * (radius / 2.3548) ** 2 * 4))).astype(np.float32)


def test_default_config_is_json():
    c = json.loads(td.default_config())
    assert c["detection"]["threshold"] == 0.5
    assert json.loads(td.config(train={"max_epochs": 2}))["train"]["max_epochs"] == 2


def test_metrics():
    assert td.format_percent(td.sensitivity(61, 6)) == "91.0%"
    assert not td.is_hit(3, 10)
    assert td.is_hit(4, 10)


def test_binarize_is_strict():
    p = np.array([0.5, 0.51, 0.49], dtype=np.float32).reshape(1, 1, 3)
    assert td.binarize_likelihood(p, 0.5).ravel().tolist() == [False, True, False]


def test_dilate_radius_one():
    m = np.zeros((5, 5, 5), dtype=bool)
    m[2, 2, 2] = True
    assert td.spherical_dilate(m, 1.0).sum() == 7


def test_region_grow_matches_flood():
    v = np.zeros((4, 4, 4), dtype=np.float32)
    v[1, 1, :] = 500
    seeds = np.zeros_like(v, dtype=bool)
    seeds[1, 1, 0] = True
    grown = td.region_grow(v, seeds, 400, 600)
    assert grown.sum() == 4 and grown[1, 1].all()


def test_extract_voi_on_tube():
    mask, masked, (lo, hi) = td.extract_voi(tube())
    assert mask.shape == (32, 32, 32)
    assert lo < hi
    # The flanks of the profile sit inside the intensity window.
    assert mask[:, 16, 13].all() and mask[:, 16, 19].all()
    assert not mask[:, 0, 0].any()
    assert (masked[~mask] == 0).all()


def test_extract_voi_errors_carry_kind():
    with pytest.raises(td.Error) as e:
        td.extract_voi(np.full((16, 16, 16), 100, dtype=np.float32))
    assert e.value.args[0] == "ConstantVolume"


def test_boxes_single_voxel():
    m = np.zeros((3, 100, 100), dtype=bool)
    m[1, 50, 50] = True
    full = td.config(detection={"min_box_side": 60, "planar_radius_limit": 30.0})
    (box,) = td.boxes_from_mask(m, full)
    assert box["box_size"] == (60, 60, 1)


def test_train_detect_evaluate(tmp_path):
    data = tmp_path / "data"
    assert td.generate_dataset(4, 0.75, seed=5, out_dir=str(data)) == 4
    cfg = td.config(train={"max_epochs": 2}, network={"levels": 2})
    model = td.train(str(data), cfg)
    assert model.count_parameters() > 0
    model.save(str(tmp_path / "m.tfw"))
    again = td.Model.load(str(tmp_path / "m.tfw"))

    vol, spacing = td.load_volume(str(data / "case_000.vhdr"))
    dets = again.detect(vol, spacing, cfg)
    assert dets == model.detect(vol, spacing, cfg)
    for d in dets:
        assert all(0 <= a and a + s <= n for a, s, n in zip(d["box_min"], d["box_size"], vol.shape[::-1]))

    report = td.evaluate(again, str(data), cfg)
    assert report["aggregate"]["n_cases"] == 4


def test_crossval_deterministic(tmp_path):
    data = tmp_path / "data"
    td.generate_dataset(4, 1.0, seed=8, out_dir=str(data))
    cfg = td.config(train={"max_epochs": 1}, network={"levels": 2})
    assert td.crossval(str(data), 2, 3, cfg) == td.crossval(str(data), 2, 3, cfg)
