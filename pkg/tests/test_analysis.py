"""RSA, neighbour purity and linear probes."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from limber.metrics import probes, purity, rsa


def _features(seed, n=20, d=6):
    return np.random.default_rng(seed).normal(size=(n, d))


def _rotation(seed, d):
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def test_rsa_self_is_one():
    x = _features(0)
    assert abs(rsa.rsa(x, x) - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100))
def test_rsa_rotation_scale_and_symmetry(seed, c):
    x, y = _features(seed), _features(seed + 1, d=3)
    base = rsa.rsa(x, y)
    assert abs(rsa.rsa(x @ _rotation(seed, 6), y) - base) < 1e-9
    assert abs(rsa.rsa(c * x, y) - base) < 1e-9
    assert abs(rsa.rsa(y, x) - base) < 1e-12


def test_rsa_against_shuffled_rows_is_near_zero():
    x = _features(3, n=60)
    rng = np.random.default_rng(0)
    vals = [rsa.rsa(x, x[rng.permutation(60)]) for _ in range(50)]
    assert abs(np.mean(vals)) < 0.05


def test_rsa_errors():
    with pytest.raises(ValueError):
        rsa.rsa(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(rsa.UndefinedError):
        rsa.rsa(np.ones((5, 3)), _features(0, n=5))
    x = _features(0, n=5)
    x[2] = 0
    with pytest.raises(rsa.UndefinedError):
        rsa.rsa(x, _features(1, n=5))


def test_purity_extremes():
    assert purity.neighbor_purity(np.ones((6, 3)), [0] * 6, k=3) == 1.0
    assert purity.neighbor_purity(np.eye(4), [0, 1, 2, 3], k=1) == 0.0
    with pytest.raises(purity.ConfigError):
        purity.neighbor_purity(np.eye(4), [0, 1, 2, 3], k=4)


def test_purity_two_clusters_hand_case():
    x = np.array([[1, 0.0], [1, 0.1], [1, 0.2], [0, 1.0], [0.1, 1], [0.2, 1]])
    labels = [0, 0, 1, 1, 1, 1]
    # k=2: rows 0,1 see {1,2}/{0,2}: 1/2 each; row 2 sees {1,0}: 0; rows 3-5 see only label 1 rows
    assert purity.neighbor_purity(x, labels, k=2) == pytest.approx((0.5 + 0.5 + 0 + 1 + 1 + 1) / 6)


def test_purity_ties_go_to_lower_index():
    x = np.ones((4, 2))
    assert purity.neighbor_purity(x, [0, 0, 1, 1], k=1) == pytest.approx((1 + 1 + 0 + 0) / 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100))
def test_purity_scale_invariant(seed, c):
    x = _features(seed, n=30)
    labels = np.random.default_rng(seed).integers(0, 3, 30)
    assert purity.neighbor_purity(x, labels, k=5) == purity.neighbor_purity(c * x, labels, k=5)


def test_purity_blocking_does_not_change_result():
    x = _features(5, n=50)
    labels = np.arange(50) % 4
    assert purity.neighbor_purity(x, labels, k=7, block=8) == purity.neighbor_purity(x, labels, k=7)


def _separable(seed, n=400, classes=2):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, classes, n)
    centers = rng.normal(0, 5, size=(classes, 8))
    return centers[y] + rng.normal(size=(n, 8)), y


def test_probe_separable_two_class():
    x, y = _separable(0)
    cfg = probes.ProbeConfig(lr=1e-2, max_epochs=60, seed=0)
    p = probes.train_probe(x[:300], y[:300], cfg)
    assert probes.eval_probe(p, x[300:], y[300:])["macro_f1"] == 1.0


def test_probe_multilabel_threshold():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(400, 4))
    y = np.stack([x[:, 0] > 0, x[:, 1] > 0], axis=1).astype(int)
    cfg = probes.ProbeConfig(task="multilabel", lr=1e-2, max_epochs=80, seed=0)
    p = probes.train_probe(x[:300], y[:300], cfg)
    assert set(np.unique(p.predict(x))) <= {0, 1}
    assert probes.eval_probe(p, x[300:], y[300:])["macro_f1"] > 0.9


def test_shuffled_control_is_near_chance():
    x, y = _separable(2, n=1000, classes=4)
    cfg = probes.ProbeConfig(lr=1e-2, max_epochs=40, seed=0)
    res = probes.shuffled_control(x[:800], y[:800], x[800:], y[800:], cfg, seed=3, n_classes=4)
    assert abs(res["accuracy"] - 0.25) < 0.1


def test_probe_config_and_degenerate_data():
    with pytest.raises(probes.ConfigError):
        probes.ProbeConfig(threshold=1.0)
    with pytest.raises(probes.ConfigError):
        probes.ProbeConfig(task="regression")
    with pytest.raises(probes.ConfigError):
        probes.train_probe(np.ones((10, 2)), np.zeros(10))
    with pytest.raises(probes.ConfigError):
        probes.train_probe(np.ones((10, 2)), np.ones((10, 3)), probes.ProbeConfig(task="multilabel"))


def test_prf_hand_case():
    res = probes.prf(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 3)
    np.testing.assert_allclose(res["precision"][:2], [0.5, 1.0])
    np.testing.assert_allclose(res["recall"][:2], [1.0, 2 / 3])
    # class 2 never occurs in gold, so it stays out of the macro mean
    assert res["macro_f1"] == pytest.approx((2 / 3 + 0.8) / 2)
    assert res["accuracy"] == 0.75


def test_probe_training_is_deterministic():
    x, y = _separable(4)
    cfg = probes.ProbeConfig(lr=1e-2, max_epochs=5, seed=9)
    a, b = probes.train_probe(x, y, cfg), probes.train_probe(x, y, cfg)
    np.testing.assert_array_equal(a.weight, b.weight)
