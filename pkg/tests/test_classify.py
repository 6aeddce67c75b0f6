import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msdiff import classify as cl
from msdiff import numkit as nk


def _brute(cm):
    """Independent recomputation with plain Python loops."""
    n = len(cm)
    total = sum(sum(row) for row in cm)
    diag = sum(cm[i][i] for i in range(n))
    recalls = [cm[i][i] / sum(cm[i]) for i in range(n) if sum(cm[i]) > 0]
    rows = [sum(cm[i]) for i in range(n)]
    cols = [sum(cm[i][j] for i in range(n)) for j in range(n)]
    p_o = diag / total
    p_e = sum(rows[i] * cols[i] for i in range(n)) / (total * total)
    kappa = 0.0 if p_e == 1 else (p_o - p_e) / (1 - p_e)
    return p_o, sum(recalls) / len(recalls), kappa


def test_confusion_examples():
    cm = cl.confusion([0, 1, 2, 1], [0, 1, 2, 1], 3)
    np.testing.assert_array_equal(cm, np.diag([1, 2, 1]))
    np.testing.assert_array_equal(cl.confusion([], [], 3), np.zeros((3, 3)))
    cm = cl.confusion([1, 1, 0], [0, 1, 0], 2)
    np.testing.assert_array_equal(cm, [[1, 1], [0, 1]])
    assert cm.sum() == 3


def test_confusion_rejects_bad_input():
    with pytest.raises(ValueError):
        cl.confusion([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        cl.confusion([0], [0, 1], 3)


@pytest.mark.parametrize("cm,oa,aa,kappa", [
    ([[50, 0], [0, 50]], 1.0, 1.0, 1.0),
    ([[25, 25], [25, 25]], 0.5, 0.5, 0.0),
    ([[40, 10], [20, 30]], 0.7, 0.7, 0.4),
])
def test_metric_worked_examples(cm, oa, aa, kappa):
    r = cl.metrics(np.array(cm))
    assert r.oa == pytest.approx(oa, abs=1e-15)
    assert r.aa == pytest.approx(aa, abs=1e-15)
    assert r.kappa == pytest.approx(kappa, abs=1e-15)


def test_metrics_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        cm = rng.integers(0, 50, size=(n, n))
        if rng.uniform() < 0.2:
            cm[rng.integers(n)] = 0
        if cm.sum() == 0:
            cm[0, 0] = 1
        r = cl.metrics(cm)
        oa, aa, kappa = _brute(cm.tolist())
        assert abs(r.oa - oa) < 1e-12 and abs(r.aa - aa) < 1e-12 and abs(r.kappa - kappa) < 1e-12


def test_metrics_edge_conventions():
    r = cl.metrics([[5, 0, 0], [0, 0, 0], [1, 0, 4]])
    assert r.aa == pytest.approx((1.0 + 0.8) / 2)
    assert np.isnan(r.recalls[1])
    assert cl.metrics([[7, 0], [0, 0]]).kappa == 0.0
    with pytest.raises(ValueError):
        cl.metrics(np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_ranges_and_chance_predictor(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    cm = rng.integers(0, 20, size=(n, n)) + np.eye(n, dtype=int)
    r = cl.metrics(cm)
    assert 0 <= r.oa <= 1 and 0 <= r.aa <= 1 and -1 <= r.kappa <= 1
    # rows proportional to the column marginals: chance-level agreement
    cols = rng.integers(1, 10, size=n)
    scale = rng.integers(1, 5, size=n)
    assert abs(cl.metrics(np.outer(scale, cols)).kappa) < 1e-12
    diag = np.diag(rng.integers(1, 10, size=n))
    assert cl.metrics(diag).kappa == 1.0


def test_balanced_uniform_accuracy_aa_equals_oa():
    cm = np.array([[8, 1, 1], [1, 8, 1], [0, 2, 8]])
    r = cl.metrics(cm)
    assert r.aa == pytest.approx(r.oa, abs=1e-15)


def test_report_line_and_table():
    r = cl.metrics([[40, 10], [20, 30]])
    assert r.line("C-9") == "case=C-9 oa=0.7000 aa=0.7000 kappa=0.4000"
    assert "kappa" in cl.format_table(r, "C-9")
    assert cl.cm_to_csv(np.array([[1, 2], [3, 4]])).splitlines() == ["truth\\pred,1,2", "1,1,2", "2,3,4"]


def _separable(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(128, 4))
    w = rng.normal(size=4)
    y = (x @ w > 0).astype(int)
    x += np.outer(2 * y - 1, w) * 0.3
    return x, y


def test_separable_toy_reaches_full_accuracy():
    x, y = _separable(0)
    params, _ = cl.train_classifier(x, y, 2, epochs=250, seed=0, batch_size=64, lr=1e-2)
    assert len(x) // 64 * 250 == 500
    assert np.mean(cl.predict(x, params) == y) == 1.0


def test_classifier_deterministic_and_loss_decreases():
    x, y = _separable(1)
    a, hist = cl.train_classifier(x, y, 2, epochs=5, seed=3)
    b, _ = cl.train_classifier(x, y, 2, epochs=5, seed=3)
    assert nk.params_digest(a) == nk.params_digest(b)
    assert hist[-1] < hist[0]
    assert a["l1.weight"].shape == (4, 8)


def test_classifier_rejects_misaligned():
    with pytest.raises(ValueError):
        cl.train_classifier(np.zeros((3, 2)), np.zeros(2, dtype=int), 2)
