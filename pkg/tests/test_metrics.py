"""Clustering-metric tests with brute-force oracles and frozen examples."""

import json
import math

import numpy as np
import pytest

from laminae.errors import ValidationError
from laminae.metrics import MetricsReport, ari, bcubed, evaluate_labels, nmi, save_report


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------

def bcubed_itemwise(pred, truth):
    """Average per-item overlap ratios by direct enumeration."""
    n = len(pred)
    p_terms, r_terms = [], []
    for i in range(n):
        same_pred = [j for j in range(n) if pred[j] == pred[i]]
        same_truth = [j for j in range(n) if truth[j] == truth[i]]
        both = [j for j in same_pred if truth[j] == truth[i]]
        p_terms.append(len(both) / len(same_pred))
        r_terms.append(len(both) / len(same_truth))
    p = sum(p_terms) / n
    r = sum(r_terms) / n
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


def ari_pairwise(pred, truth):
    """Adjusted Rand from explicit agreement counts over all item pairs."""
    n = len(pred)
    a = b = c = d = 0
    for i in range(n):
        for j in range(i + 1, n):
            sp = pred[i] == pred[j]
            st = truth[i] == truth[j]
            if sp and st:
                a += 1
            elif sp and not st:
                b += 1
            elif st:
                c += 1
            else:
                d += 1
    total = a + b + c + d
    expected = (a + b) * (a + c) / total
    maximum = 0.5 * ((a + b) + (a + c))
    if maximum == expected:
        return 1.0
    return (a - expected) / (maximum - expected)


def nmi_entropy(pred, truth):
    """NMI via H(A) + H(B) - H(A,B), a different decomposition of MI."""
    n = len(pred)

    def h(counts):
        return -sum((c / n) * math.log(c / n) for c in counts if c)

    from collections import Counter

    ha = h(Counter(pred).values())
    hb = h(Counter(truth).values())
    hab = h(Counter(zip(pred, truth)).values())
    if ha == 0 and hb == 0:
        return 1.0
    return (ha + hb - hab) / (0.5 * (ha + hb))


def random_labelings(rng, n, kmax=5, count=40):
    for _ in range(count):
        yield rng.integers(0, kmax, size=n), rng.integers(0, kmax, size=n)


# ---------------------------------------------------------------------------
# frozen examples
# ---------------------------------------------------------------------------

def test_bcubed_worked_example():
    p, r, f1 = bcubed([0, 0, 1, 1], [0, 0, 0, 1])
    assert p == pytest.approx(0.75, abs=1e-12)
    assert r == pytest.approx(2 / 3, abs=1e-12)
    assert f1 == pytest.approx(12 / 17, abs=1e-12)


def test_bcubed_perfect_and_inverted():
    assert bcubed([0, 0, 1, 1], [5, 5, 9, 9]) == (1.0, 1.0, 1.0)
    p, r, _ = bcubed([0, 1, 2, 3], [0, 0, 0, 0])
    assert p == 1.0 and r == 0.25


def test_ari_anticorrelated_example():
    assert ari([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(-0.5, abs=1e-12)


def test_ari_identical_partitions_is_one():
    assert ari([0, 0, 1, 2], [7, 7, 3, 5]) == 1.0
    # degenerate cases where max == expected
    assert ari([0, 1, 2], [4, 5, 6]) == 1.0
    assert ari([1, 1, 1], [2, 2, 2]) == 1.0


def test_ari_singletons_vs_one_cluster_is_zero():
    assert ari([0, 1, 2, 3], [0, 0, 0, 0]) == pytest.approx(0.0, abs=1e-12)


def test_ari_random_labelings_center_on_zero():
    rng = np.random.default_rng(11)
    truth = rng.integers(0, 5, size=200)
    values = []
    for _ in range(1000):
        values.append(ari(rng.integers(0, 5, size=200), truth))
    assert abs(np.mean(values)) < 0.02


def test_nmi_independent_product_design_is_zero():
    # balanced 4x4 product design: joint exactly equals product of marginals
    pred = [i // 4 for i in range(16)]
    truth = [i % 4 for i in range(16)]
    assert nmi(pred, truth) == 0.0


def test_nmi_identical_and_constant():
    assert nmi([0, 1, 1, 2], [5, 3, 3, 0]) == pytest.approx(1.0, abs=1e-12)
    assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
    # one side constant, the other informative: no shared information
    assert nmi([0, 0, 0, 0], [0, 1, 2, 3]) == 0.0


# ---------------------------------------------------------------------------
# oracle cross-checks on random inputs
# ---------------------------------------------------------------------------

def test_bcubed_matches_itemwise_enumeration():
    rng = np.random.default_rng(3)
    for pred, truth in random_labelings(rng, n=17):
        got = bcubed(pred, truth)
        want = bcubed_itemwise(list(pred), list(truth))
        assert got == pytest.approx(want, abs=1e-12)


def test_ari_matches_pairwise_enumeration():
    rng = np.random.default_rng(4)
    for pred, truth in random_labelings(rng, n=15):
        assert ari(pred, truth) == pytest.approx(ari_pairwise(list(pred), list(truth)), abs=1e-12)


def test_nmi_matches_entropy_decomposition():
    rng = np.random.default_rng(5)
    for pred, truth in random_labelings(rng, n=19):
        assert nmi(pred, truth) == pytest.approx(nmi_entropy(list(pred), list(truth)), abs=1e-12)


# ---------------------------------------------------------------------------
# invariances
# ---------------------------------------------------------------------------

def test_relabeling_invariance():
    rng = np.random.default_rng(6)
    pred = rng.integers(0, 4, size=30)
    truth = rng.integers(0, 3, size=30)
    shuffled_pred = (pred * 7 + 13) % 29  # injective on 0..3
    shuffled_truth = 5 - truth
    for fn in (bcubed, ari, nmi):
        assert fn(pred, truth) == pytest.approx(fn(shuffled_pred, shuffled_truth), abs=1e-12)


def test_bcubed_role_symmetry():
    rng = np.random.default_rng(7)
    for pred, truth in random_labelings(rng, n=12, count=10):
        p1, r1, _ = bcubed(pred, truth)
        p2, r2, _ = bcubed(truth, pred)
        assert p1 == pytest.approx(r2, abs=1e-12)
        assert r1 == pytest.approx(p2, abs=1e-12)


def test_ari_nmi_argument_symmetry():
    rng = np.random.default_rng(8)
    for pred, truth in random_labelings(rng, n=14, count=10):
        assert ari(pred, truth) == pytest.approx(ari(truth, pred), abs=1e-12)
        assert nmi(pred, truth) == pytest.approx(nmi(truth, pred), abs=1e-12)


# ---------------------------------------------------------------------------
# report object and errors
# ---------------------------------------------------------------------------

def test_length_mismatch_and_empty_raise():
    with pytest.raises(ValueError):
        bcubed([0, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        ari([0], [0])
    with pytest.raises(ValueError):
        nmi([], [])
    with pytest.raises(ValueError):
        bcubed(np.zeros((2, 2), dtype=int), np.zeros((2, 2), dtype=int))


def test_report_round_trips_json(tmp_path):
    report = evaluate_labels([0, 0, 1, 1], [0, 0, 0, 1])
    path = tmp_path / "metrics.json"
    save_report(report, path)
    data = json.loads(path.read_text())
    assert set(data) == {"bcubed_p", "bcubed_r", "bcubed_f1", "ari", "nmi"}
    assert data["bcubed_p"] == 0.75
    assert data["bcubed_f1"] == round(12 / 17, 4)
    assert all(abs(v) <= 1 for v in data.values())


def test_report_table_row_format():
    row = evaluate_labels([0, 1], [0, 1]).table_row()
    assert row.startswith("BCubed P 1.000")
    assert "ARI 1.000" in row and "NMI 1.000" in row


def test_report_rejects_out_of_range():
    with pytest.raises(ValidationError):
        MetricsReport(bcubed_p=1.2, bcubed_r=0.5, bcubed_f1=0.5, ari=0.0, nmi=0.5)
    with pytest.raises(ValidationError):
        MetricsReport(bcubed_p=0.5, bcubed_r=0.5, bcubed_f1=0.5, ari=-1.5, nmi=0.5)
