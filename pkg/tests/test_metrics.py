import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from toydiff import data, metrics

images16 = arrays(np.float64, (16, 16), elements=st.floats(0, 1))


def sk_ssim(a, b):
    return structural_similarity(a, b, win_size=7, gaussian_weights=False, use_sample_covariance=True,
                                 data_range=1.0)


@settings(max_examples=40, deadline=None)
@given(images16, images16)
def test_ssim_matches_reference_implementation(a, b):
    assert metrics.ssim(a, b) == pytest.approx(sk_ssim(a, b), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(images16, images16)
def test_ssim_symmetric_and_bounded(a, b):
    s = metrics.ssim(a, b)
    assert s == pytest.approx(metrics.ssim(b, a), abs=1e-15)
    assert -1.0 <= s <= 1.0 + 1e-12
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_images_hand_value():
    C1 = (0.01 * 1.0) ** 2
    # means 0 and 1, zero (co)variance: (C1 * C2) / ((1 + C1) * C2)
    assert metrics.ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(C1 / (1 + C1), rel=1e-12)


def test_ssim_rejects_small_or_mismatched():
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((6, 6)), np.zeros((6, 6)))
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((8, 8)), np.zeros((8, 9)))


def test_mse_psnr_examples():
    x = np.random.default_rng(0).uniform(size=(5, 5))
    assert metrics.mse(x, x) == 0 and metrics.psnr(x, x) == math.inf
    a, b = np.zeros(100), np.full(100, 0.1)
    assert metrics.mse(a, b) == pytest.approx(0.01)
    assert metrics.psnr(a, b) == pytest.approx(20.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_psnr_strictly_decreasing_in_mse(e1, e2):
    a = np.zeros(4)
    p1, p2 = metrics.psnr(a, np.full(4, math.sqrt(e1))), metrics.psnr(a, np.full(4, math.sqrt(e2)))
    if e1 < e2 * (1 - 1e-9):
        assert p1 > p2


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-5, 5)), arrays(np.float64, 8, elements=st.floats(-5, 5)),
       st.floats(1e-3, 1e3))
def test_rel_displacement_scale_invariant(z, zr, alpha):
    if np.linalg.norm(z) < 1e-3:
        return
    assert metrics.rel_displacement(z, z) == 0
    assert metrics.rel_displacement(alpha * z, alpha * zr) == pytest.approx(metrics.rel_displacement(z, zr), rel=1e-9)


def test_rel_displacement_zero_reference():
    with pytest.raises(ValueError):
        metrics.rel_displacement(np.zeros(3), np.ones(3))


@pytest.fixture(scope="module")
def oracle():
    ds = data.generate(data.DatasetSpec())
    return ds, metrics.train_oracle(ds.images, ds.labels, seed=0)


def test_oracle_accuracy_and_determinism(oracle):
    ds, clf = oracle
    assert clf.heldout_accuracy >= 0.95
    correct = np.mean([metrics.classify(clf, im)[0] == lab for im, lab in zip(ds.images, ds.labels)])
    assert correct >= 0.95
    again = metrics.train_oracle(ds.images, ds.labels, seed=0)
    assert again.weights.tobytes() == clf.weights.tobytes()


def test_oracle_probabilities_normalized(oracle):
    ds, clf = oracle
    p = clf.probabilities(ds.images[:50])
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-12
    lab, score = metrics.classify(clf, ds.images[0])
    assert score == pytest.approx(metrics.class_score(clf, ds.images[0], lab))


def test_report_csv_round_trip(tmp_path, oracle):
    ds, clf = oracle
    rep = metrics.MetricReport()
    for i in range(3):
        rep.add(f"{i:05d}", ds.images[i], np.clip(ds.images[i] + 0.05, 0, 1), clf)
    path = tmp_path / "r.csv"
    rep.write_csv(path, title="demo")
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {metrics.SUBSTITUTION_NOTE}"
    assert lines[2] == ",".join(metrics.COLUMNS)
    rows, agg = metrics.read_report(path)
    assert [r["image_id"] for r in rows] == ["00000", "00001", "00002"]
    assert rows[1]["ssim"] == rep.rows[1]["ssim"]
    assert agg["mean_mse"] == pytest.approx(np.mean([r["mse"] for r in rep.rows]))
    assert agg["median_ssim"] == rep.aggregate()["median_ssim"]
