"""Extrinsic clustering metrics: BCubed P/R/F1, adjusted Rand index, NMI.

All functions take two equal-length integer label vectors and are invariant
to any permutation of the label ids.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class MetricsReport:
    bcubed_p: float
    bcubed_r: float
    bcubed_f1: float
    ari: float
    nmi: float

    def __post_init__(self):
        for name in ("bcubed_p", "bcubed_r", "bcubed_f1", "nmi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if not -1.0 <= self.ari <= 1.0:
            raise ValidationError(f"ari={self.ari} outside [-1, 1]")

    def to_json(self) -> str:
        return json.dumps({k: round(v, 4) for k, v in asdict(self).items()}, indent=2)

    def table_row(self) -> str:
        """One evaluation line in the style of a results-table row."""
        return (
            f"BCubed P {self.bcubed_p:.3f}  R {self.bcubed_r:.3f}  "
            f"F1 {self.bcubed_f1:.3f}  ARI {self.ari:.3f}  NMI {self.nmi:.3f}"
        )


def _as_labels(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError("labels must be a 1-D integer vector")
    return arr


def _contingency(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def _check_lengths(pred, truth):
    if len(pred) != len(truth):
        raise ValueError(f"label vectors differ in length: {len(pred)} vs {len(truth)}")
    if len(pred) == 0:
        raise ValueError("empty labelings")


def bcubed(pred, truth) -> tuple[float, float, float]:
    """Item-averaged precision/recall/F1; each item counts itself."""
    pred, truth = _as_labels(pred), _as_labels(truth)
    _check_lengths(pred, truth)
    n = len(pred)
    table = _contingency(pred, truth)
    pred_sizes = table.sum(axis=1)
    truth_sizes = table.sum(axis=0)
    sq = table.astype(np.float64) ** 2
    precision = float((sq.sum(axis=1) / pred_sizes).sum() / n)
    recall = float((sq.sum(axis=0) / truth_sizes).sum() / n)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def ari(pred, truth) -> float:
    """Pair-counting adjusted Rand index; degenerate 0/0 defined as 1."""
    pred, truth = _as_labels(pred), _as_labels(truth)
    _check_lengths(pred, truth)
    n = len(pred)
    if n < 2:
        raise ValueError("ARI needs at least two items")
    table = _contingency(pred, truth)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return x * (x - 1.0) / 2.0

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the entropies."""
    pred, truth = _as_labels(pred), _as_labels(truth)
    _check_lengths(pred, truth)
    n = len(pred)
    table = _contingency(pred, truth).astype(np.float64)
    joint = table / n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)

    def entropy(p):
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    ha, hb = entropy(pa), entropy(pb)
    if ha == 0.0 and hb == 0.0:
        return 1.0  # both constant: identical trivial partitions
    nz = joint > 0
    mi = float((joint[nz] * (np.log(joint[nz]) - np.log(np.outer(pa, pb)[nz]))).sum())
    value = mi / (0.5 * (ha + hb))
    return float(min(1.0, max(0.0, value)))


def evaluate_labels(pred, truth) -> MetricsReport:
    p, r, f1 = bcubed(pred, truth)
    return MetricsReport(bcubed_p=p, bcubed_r=r, bcubed_f1=f1, ari=ari(pred, truth), nmi=nmi(pred, truth))


def save_report(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json() + "\n")


def load_labels(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a 'cell_id,<label>' CSV (partition or truth exports) as two arrays."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("cell_id,"):
        raise ParseError(f"{path}: expected a 'cell_id,<label>' header")
    ids, labels = [], []
    for line in lines[1:]:
        a, sep, b = line.partition(",")
        if not sep:
            raise ParseError(f"{path}: malformed row {line!r}")
        try:
            ids.append(int(a))
            labels.append(int(b))
        except ValueError as exc:
            raise ParseError(f"{path}: malformed row {line!r}") from exc
    if not ids:
        raise ValidationError(f"{path}: no label rows")
    id_arr = np.asarray(ids, dtype=np.int64)
    if len(np.unique(id_arr)) != len(id_arr):
        raise ValidationError(f"{path}: duplicate cell ids")
    return id_arr, np.asarray(labels, dtype=np.int64)
