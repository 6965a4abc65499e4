import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import random_instances
from hcmseg import metrics

INSTANCES = random_instances(200, (8, 8), seed=1)


@pytest.mark.parametrize("s,y", INSTANCES[:40])
def test_mae_oracle(s, y):
    assert metrics.mae(s, y) == pytest.approx(oracles.mae(s, y), abs=1e-9)


def test_mae_trivial():
    y = np.random.default_rng(0).random((8, 8)) > 0.5
    assert metrics.mae(y.astype(float), y) == 0
    assert metrics.mae(1 - y.astype(float), y) == 1


def test_mae_size_mismatch():
    with pytest.raises(ValueError):
        metrics.mae(np.zeros((4, 4)), np.zeros((4, 5)))


def test_f_adaptive_oracle():
    for s, y in INSTANCES:
        assert metrics.f_adaptive(s, y) == pytest.approx(oracles.f_adaptive(s, y), abs=1e-9)


def test_f_curve_oracle():
    for s, y in INSTANCES[:60]:
        np.testing.assert_allclose(metrics.f_curve(s, y), oracles.f_curve(s, y), atol=1e-9)


@pytest.mark.parametrize("mode", ["adaptive", "max", "weighted"])
def test_f_perfect_and_zero(mode):
    y = np.zeros((16, 16), bool)
    y[4:10, 3:12] = True
    assert metrics.f_measure(y.astype(float), y, mode) == pytest.approx(1.0, abs=1e-9)
    assert metrics.f_measure(np.zeros_like(y, float), y, mode) == 0.0


def test_f_empty_gt_convention():
    y = np.zeros((8, 8), bool)
    assert metrics.f_adaptive(np.zeros((8, 8)), y) == 1.0
    # constant 0.7 has threshold 1 and binarizes to nothing
    assert metrics.f_adaptive(np.full((8, 8), 0.7), y) == 1.0
    spot = np.zeros((8, 8))
    spot[2, 2] = 1.0
    assert metrics.f_adaptive(spot, y) == 0.0
    assert metrics.f_weighted(np.zeros((8, 8)), y) == 1.0


def test_f_weighted_oracle():
    # constant error over the object keeps nearest-foreground ties harmless
    rng = np.random.default_rng(3)
    for _ in range(30):
        y = rng.random((8, 8)) < rng.uniform(0.2, 0.7)
        if not y.any() or y.all():
            continue
        s = rng.random((8, 8))
        s[y] = rng.uniform(0.3, 1.0)
        assert metrics.f_weighted(s, y) == pytest.approx(oracles.f_weighted(s, y), abs=1e-9)


def test_e_curve_oracle():
    for s, y in INSTANCES[:80]:
        np.testing.assert_allclose(metrics.e_curve(s, y), oracles.e_curve(s, y), atol=1e-6)


def test_e_measure_perfect_binary():
    y = np.zeros((8, 8), bool)
    y[2:6, 1:5] = True
    curve = metrics.e_curve(y.astype(float), y)
    # every threshold below 1 reproduces y exactly
    np.testing.assert_allclose(curve[:-1], 1.0, atol=1e-12)


def test_e_measure_complement_2x2():
    # y = [[1,0],[0,0]]; the complement map has phi_pred = -phi_gt everywhere,
    # so every alignment term is -1 and the enhanced value is 0
    y = np.array([[1, 0], [0, 0]], bool)
    s = 1 - y.astype(float)
    assert metrics.enhanced_alignment(s > 0.5, y) == pytest.approx(0.0, abs=1e-12)
    assert metrics.e_curve(s, y)[0] == pytest.approx(0.0, abs=1e-12)


def test_e_measure_degenerate():
    empty = np.zeros((4, 4), bool)
    assert metrics.enhanced_alignment(empty, empty) == 1.0
    half = np.zeros((4, 4), bool)
    half[:2] = True
    assert metrics.enhanced_alignment(half, empty) == 0.5
    assert metrics.enhanced_alignment(half, ~empty) == 0.5


def test_e_measure_modes():
    s, y = INSTANCES[5]
    curve = metrics.e_curve(s, y)
    assert metrics.e_measure(s, y, "mean") == pytest.approx(curve.mean())
    assert metrics.e_measure(s, y, "max") == pytest.approx(curve.max())
    with pytest.raises(ValueError):
        metrics.e_measure(s, y, "median")


def test_s_measure_oracle():
    for s, y in random_instances(200, (16, 16), seed=2):
        assert metrics.s_measure(s, y) == pytest.approx(oracles.s_measure(s, y), abs=1e-6)


def test_s_measure_special_cases():
    y = np.zeros((16, 16), bool)
    assert metrics.s_measure(np.zeros((16, 16)), y) == 1.0
    y[3:9, 5:13] = True
    assert metrics.s_measure(y.astype(float), y) == pytest.approx(1.0, abs=1e-6)


def test_dice_iou_oracle():
    for s, y in INSTANCES:
        d, i = metrics.dice_iou(s, y)
        od, oi = oracles.dice_iou(s, y)
        assert d == pytest.approx(od, abs=1e-9)
        assert i == pytest.approx(oi, abs=1e-9)


def test_dice_iou_half_overlap():
    a = np.zeros((8, 8))
    b = np.zeros((8, 8), bool)
    a[0:4, 0:4] = 1
    b[2:6, 0:4] = True
    d, i = metrics.dice_iou(a, b)
    assert d == pytest.approx(0.5)
    assert i == pytest.approx(1 / 3)
    assert metrics.dice_iou(np.zeros((3, 3)), np.zeros((3, 3), bool)) == (1.0, 1.0)


def test_ber_oracle_and_cases():
    for s, y in INSTANCES:
        assert metrics.ber(s, y) == pytest.approx(oracles.ber(s, y), abs=1e-9)
    y = np.eye(6, dtype=bool)
    assert metrics.ber(y.astype(float), y) == 0
    assert metrics.ber(1 - y.astype(float), y) == 100


def test_flip_invariance():
    for s, y in INSTANCES[:30]:
        a, b = metrics.score_image(s, y), metrics.score_image(s[:, ::-1], y[:, ::-1])
        for key in ("mae", "dice", "iou", "ber"):
            assert getattr(a, key) == getattr(b, key)
        assert a.f_adp == pytest.approx(b.f_adp, abs=1e-6)
        np.testing.assert_allclose(a.f_curve, b.f_curve, atol=1e-6)
        np.testing.assert_allclose(a.e_curve, b.e_curve, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
    arrays(np.bool_, (6, 6)),
    st.integers(0, 35),
)
def test_dice_monotone_toward_gt(s, y, k):
    i, j = divmod(k, 6)
    moved = s.copy()
    moved[i, j] = 1.0 if y[i, j] else 0.0
    assert metrics.dice_iou(moved, y)[0] >= metrics.dice_iou(s, y)[0]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)), arrays(np.bool_, (8, 8)))
def test_score_ranges(s, y):
    sc = metrics.score_image(s, y)
    for key in ("mae", "f_adp", "f_w", "s_alpha", "dice", "iou", "f_max", "e_mean", "e_max"):
        assert 0.0 <= getattr(sc, key) <= 1.0 + 1e-12, key
    assert 0.0 <= sc.ber <= 100.0


def _scores(seed, n=5):
    return [metrics.score_image(s, y) for s, y in random_instances(n, (8, 8), seed=seed)]


def test_aggregate_single_and_pair():
    (one,) = _scores(4, 1)
    rep = metrics.aggregate([one])
    assert rep.mae == one.mae and rep.f_max == one.f_max and rep.e_max == one.e_max
    assert rep.mdice == one.dice and rep.n_images == 1

    a, b = _scores(5, 2)
    a.mae, b.mae = 0.1, 0.3
    assert metrics.aggregate([a, b]).mae == pytest.approx(0.2)


def test_aggregate_order_independent():
    sc = _scores(6, 6)
    r1 = metrics.aggregate(sc)
    r2 = metrics.aggregate(sc[::-1])
    for k, v in r1.to_dict().items():
        assert v == pytest.approx(r2.to_dict()[k], abs=1e-12)
    with pytest.raises(ValueError):
        metrics.aggregate([])


def test_report_files(tmp_path):
    sc = _scores(7, 3)
    rep = metrics.aggregate(sc)
    paths = metrics.write_report(rep, tmp_path, "toy", [(f"im{i}", s) for i, s in enumerate(sc)])
    assert [p.name for p in paths] == ["metrics.txt", "metrics.json", "per_image.csv"]
    data = json.loads((tmp_path / "metrics.json").read_text())
    assert data["n_images"] == 3 and data["mae"] == pytest.approx(rep.mae)
    table = (tmp_path / "metrics.txt").read_text().splitlines()
    assert table[0].split()[:3] == ["Dataset", "M", "F_beta"]
    assert len((tmp_path / "per_image.csv").read_text().splitlines()) == 4
