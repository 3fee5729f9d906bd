"""Self-supervised node embeddings for cell graphs.

A two-layer mean-aggregation graph convolutional encoder is trained against
two objectives: a local/global mutual-information discriminator (corrupted
rows vs. a graph-level summary) and a depth-guided contrastive term whose
positive pairs share similar Laplace coordinates.  All gradients are
analytic; the training loop is plain Adam.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .cellgraph import CellGraph
from .errors import ParseError, TrainingError, ValidationError

_EPS_NORM = 1e-12


# ---------------------------------------------------------------------------
# configuration and parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContrastiveConfig:
    """Hyper-parameters of the embedding stage.

    ``alpha`` controls the batch fraction, ``alpha_p``/``alpha_n`` the number
    of positives/negatives per anchor as a fraction of the batch.  ``d_hidden``
    and ``d_embed`` size the encoder; both are deliberate choices rather than
    published values (see README).
    """

    alpha: float = 1.0 / 50.0
    alpha_p: float = 1.0 / 10.0
    alpha_n: float = 6.0 / 10.0
    tau: float = 0.1
    lambda2: float = 0.1
    epochs: int = 1000
    learning_rate: float = 1e-3
    seed: int = 0
    d_hidden: int = 64
    d_embed: int = 20

    def __post_init__(self):
        if not 0.0 < self.alpha_p < 1.0:
            raise ValidationError(f"alpha_p={self.alpha_p} outside (0, 1)")
        if not 0.0 < self.alpha_n < 1.0:
            raise ValidationError(f"alpha_n={self.alpha_n} outside (0, 1)")
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if not self.lambda2 < 1.0:
            raise ValidationError("lambda2 must be < 1")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValidationError("epochs must be >= 0 and learning_rate > 0")
        if self.d_hidden < 1 or self.d_embed < 1:
            raise ValidationError("encoder widths must be positive")


@dataclass(frozen=True)
class GcnParams:
    """Encoder weights: two linear layers, one PReLU slope per layer, and the
    bilinear discriminator matrix.  The second slope is carried for shape
    symmetry but unused because the output layer is linear."""

    omega1: np.ndarray  # d x d_hidden
    omega2: np.ndarray  # d_hidden x d_embed
    prelu_slopes: np.ndarray  # (2,)
    disc_w: np.ndarray  # d_embed x d_embed

    def __post_init__(self):
        for name in ("omega1", "omega2", "prelu_slopes", "disc_w"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} contains non-finite values")
        if self.omega1.ndim != 2 or self.omega2.ndim != 2:
            raise ValidationError("omega1/omega2 must be matrices")
        if self.omega1.shape[1] != self.omega2.shape[0]:
            raise ValidationError(
                f"hidden width mismatch: omega1 {self.omega1.shape} vs omega2 {self.omega2.shape}")
        if self.prelu_slopes.shape != (2,):
            raise ValidationError("prelu_slopes must have one entry per layer")
        de = self.omega2.shape[1]
        if self.disc_w.shape != (de, de):
            raise ValidationError(f"disc_w must be {de} x {de}")

    @property
    def d(self) -> int:
        return self.omega1.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.omega1.shape[1]

    @property
    def d_embed(self) -> int:
        return self.omega2.shape[1]


@dataclass
class GcnGrads:
    omega1: np.ndarray
    omega2: np.ndarray
    prelu_slopes: np.ndarray
    disc_w: np.ndarray

    @staticmethod
    def zeros_like(params: GcnParams) -> "GcnGrads":
        return GcnGrads(
            omega1=np.zeros_like(params.omega1),
            omega2=np.zeros_like(params.omega2),
            prelu_slopes=np.zeros_like(params.prelu_slopes),
            disc_w=np.zeros_like(params.disc_w),
        )

    def blocks(self) -> list[np.ndarray]:
        return [self.omega1, self.omega2, self.prelu_slopes, self.disc_w]


@dataclass(frozen=True)
class EmbeddingSet:
    """Final node embeddings plus the (L1, L2, total) loss trace per epoch.

    ``params`` holds the trained encoder weights when the set came out of
    :func:`train`, for diagnostics such as discriminator scores.
    """

    matrix: np.ndarray
    epoch_losses: list[tuple[float, float, float]] = field(default_factory=list)
    params: "GcnParams | None" = None

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=np.float64))
        if self.matrix.ndim != 2:
            raise ValidationError("embedding matrix must be 2-D")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("embedding matrix contains non-finite values")
        for triple in self.epoch_losses:
            if not all(np.isfinite(v) for v in triple):
                raise ValidationError("loss trace contains non-finite values")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Batch:
    """One contrastive batch: anchor cell ids with positive/negative cell ids.

    ``positives[t]``/``negatives[t]`` belong to ``anchors[t]``; the loss is
    normalized by ``n_anchors * n_positives_nominal`` even when an anchor had
    its positive set reduced to keep the negative pool non-empty.
    """

    anchors: np.ndarray
    positives: tuple[np.ndarray, ...]
    negatives: tuple[np.ndarray, ...]
    n_positives_nominal: int

    def __post_init__(self):
        if len(self.positives) != len(self.anchors) or len(self.negatives) != len(self.anchors):
            raise ValidationError("batch lists must align with anchors")
        if self.n_positives_nominal < 1:
            raise ValidationError("nominal positive count must be >= 1")


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def _feature_values(X) -> np.ndarray:
    values = getattr(X, "values", X)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    return arr


def mean_aggregator(graph: CellGraph) -> sp.csr_matrix:
    """Row-stochastic matrix averaging each node with its neighbors."""
    n = graph.n
    e = graph.edge_array
    rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n)])
    cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n)])
    m = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    inv = 1.0 / np.asarray(m.sum(axis=1)).ravel()
    return sp.diags(inv) @ m


def _encode(params: GcnParams, values: np.ndarray, m: sp.csr_matrix) -> dict:
    z1 = m @ values
    p1 = z1 @ params.omega1
    h1 = np.where(p1 >= 0.0, p1, params.prelu_slopes[0] * p1)
    z2 = m @ h1
    h = z2 @ params.omega2
    return {"z1": z1, "p1": p1, "h1": h1, "z2": z2, "h": h}


def _backprop(params: GcnParams, cache: dict, mt: sp.csr_matrix,
              dh: np.ndarray, grads: GcnGrads) -> None:
    """Accumulate encoder gradients for one forward pass into ``grads``."""
    grads.omega2 += cache["z2"].T @ dh
    dz2 = dh @ params.omega2.T
    dh1 = mt @ dz2
    p1 = cache["p1"]
    neg = p1 < 0.0
    grads.prelu_slopes[0] += float((dh1 * np.where(neg, p1, 0.0)).sum())
    dp1 = dh1 * np.where(neg, params.prelu_slopes[0], 1.0)
    grads.omega1 += cache["z1"].T @ dp1


def gcn_forward(params: GcnParams, X, graph: CellGraph) -> EmbeddingSet:
    """Two-layer mean-aggregation encoder; PReLU then linear output."""
    values = _feature_values(X)
    if values.shape[0] != graph.n:
        raise ValueError(f"feature rows ({values.shape[0]}) != graph nodes ({graph.n})")
    if values.shape[1] != params.d:
        raise ValueError(f"feature width ({values.shape[1]}) != encoder input ({params.d})")
    cache = _encode(params, values, mean_aggregator(graph))
    return EmbeddingSet(matrix=cache["h"])


def init_params(n_features: int, cfg: ContrastiveConfig, rng: np.random.Generator) -> GcnParams:
    """Uniform Glorot initialization; PReLU slopes start at 0.25."""

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return GcnParams(
        omega1=glorot(n_features, cfg.d_hidden),
        omega2=glorot(cfg.d_hidden, cfg.d_embed),
        prelu_slopes=np.array([0.25, 0.25]),
        disc_w=glorot(cfg.d_embed, cfg.d_embed),
    )


# ---------------------------------------------------------------------------
# corruption, readout, discriminator loss
# ---------------------------------------------------------------------------

def _nonidentity_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise ValueError("corruption needs at least two rows")
    while True:
        perm = rng.permutation(n)
        if np.any(perm != np.arange(n)):
            return perm


def corrupt(X, rng: np.random.Generator) -> np.ndarray:
    """Row-shuffled copy of the feature matrix (never the identity order)."""
    values = _feature_values(X)
    return values[_nonidentity_permutation(values.shape[0], rng)]


def readout(h: np.ndarray) -> np.ndarray:
    """Graph summary: logistic of the column means."""
    h = np.asarray(h, dtype=np.float64)
    return expit(h.mean(axis=0))


def _dgi_terms(params: GcnParams, values: np.ndarray, m: sp.csr_matrix,
               mt: sp.csr_matrix, perm: np.ndarray, grads: GcnGrads):
    """Discriminator BCE and its gradients; returns the loss, the clean-pass
    cache, and the extra dH on the clean pass still to be backpropagated."""
    n = values.shape[0]
    clean = _encode(params, values, m)
    corrupted = _encode(params, values[perm], m)
    h, ht = clean["h"], corrupted["h"]

    mu = h.mean(axis=0)
    s = expit(mu)
    ws = params.disc_w @ s
    a = h @ ws
    at = ht @ ws
    # loss = mean softplus(-a) + mean softplus(at), the stable BCE form
    loss = float(np.logaddexp(0.0, -a).mean() + np.logaddexp(0.0, at).mean())

    ga = (expit(a) - 1.0) / n          # dL/da
    gb = expit(at) / n                 # dL/dat

    grads.disc_w += np.outer(h.T @ ga + ht.T @ gb, s)
    ds = params.disc_w.T @ (h.T @ ga + ht.T @ gb)
    dmu = s * (1.0 - s) * ds
    dh = np.outer(ga, ws) + dmu[None, :] / n
    dht = np.outer(gb, ws)
    _backprop(params, corrupted, mt, dht, grads)
    return loss, clean, dh


def dgi_loss(params: GcnParams, X, graph: CellGraph,
             rng: np.random.Generator) -> tuple[float, GcnGrads]:
    """Local/global discrimination loss with analytic parameter gradients."""
    values = _feature_values(X)
    if values.shape[0] != graph.n:
        raise ValueError("feature rows != graph nodes")
    m = mean_aggregator(graph)
    mt = m.T.tocsr()
    perm = _nonidentity_permutation(values.shape[0], rng)
    grads = GcnGrads.zeros_like(params)
    loss, clean, dh = _dgi_terms(params, values, m, mt, perm, grads)
    _backprop(params, clean, mt, dh, grads)
    return loss, grads


def discriminator_scores(params: GcnParams, h: np.ndarray,
                         summary: np.ndarray) -> np.ndarray:
    """Probability each row is judged to belong to the summarized graph."""
    return expit(h @ (params.disc_w @ summary))


# ---------------------------------------------------------------------------
# contrastive batch and loss
# ---------------------------------------------------------------------------

def sample_batch(ell, cfg: ContrastiveConfig, rng: np.random.Generator) -> Batch:
    """Draw anchors with replacement; positives are the batch members nearest
    in Laplace coordinate, negatives are resampled from the remainder."""
    values = np.asarray(getattr(ell, "ell", ell), dtype=np.float64).ravel()
    n = values.size
    if n < 2:
        raise ValueError("batch sampling needs at least two cells")
    b = max(2, round(cfg.alpha * n))
    n_pos = max(1, round(cfg.alpha_p * b))
    n_neg = max(1, round(cfg.alpha_n * b))

    members = rng.integers(0, n, size=b)
    positives: list[np.ndarray] = []
    negatives: list[np.ndarray] = []
    for t in range(b):
        anchor = int(members[t])
        # candidate pool is the distinct batch cells other than the anchor,
        # so a repeated draw can never be its own positive or negative
        pool = np.unique(members[members != anchor])
        if pool.size == 0:
            warnings.warn(f"batch anchor {anchor}: no other cells in batch; skipping its pairs")
            positives.append(np.empty(0, dtype=np.int64))
            negatives.append(np.empty(0, dtype=np.int64))
            continue
        gaps = np.abs(values[pool] - values[anchor])
        order = np.lexsort((pool, gaps))
        take = min(n_pos, pool.size)
        pos_cells = pool[order[:take]]
        rest = pool[order[take:]]
        while rest.size == 0 and pos_cells.size > 0:
            warnings.warn(
                f"batch anchor {anchor}: negative pool empty; reducing positive count")
            rest = pos_cells[-1:]
            pos_cells = pos_cells[:-1]
        draws = rest[rng.integers(0, rest.size, size=n_neg)]
        positives.append(pos_cells.astype(np.int64))
        negatives.append(draws.astype(np.int64))
    return Batch(
        anchors=members.astype(np.int64),
        positives=tuple(positives),
        negatives=tuple(negatives),
        n_positives_nominal=n_pos,
    )


def ntxent_loss(h: np.ndarray, batch: Batch, cfg: ContrastiveConfig) -> tuple[float, np.ndarray]:
    """Temperature-scaled contrastive loss over cosine similarities.

    Returns the loss and its gradient with respect to the embedding rows.
    """
    h = np.asarray(h, dtype=np.float64)
    n, _ = h.shape
    norms = np.maximum(np.linalg.norm(h, axis=1), _EPS_NORM)
    u = h / norms[:, None]
    dh = np.zeros_like(h)
    tau = cfg.tau
    total = 0.0

    def sim_grad(i, j, g):
        """Accumulate g * d sim(h_i, h_j) / dh into rows i and j."""
        s = float(u[i] @ u[j])
        dh[i] += g * (u[j] - s * u[i]) / norms[i]
        dh[j] += g * (u[i] - s * u[j]) / norms[j]

    for anchor, pos, neg in zip(batch.anchors, batch.positives, batch.negatives):
        if pos.size == 0:
            continue
        i = int(anchor)
        sims_n = u[neg] @ u[i] if neg.size else np.empty(0)
        for j in pos:
            s_p = float(u[i] @ u[j])
            logits = np.concatenate(([s_p], sims_n)) / tau
            m = logits.max()
            w = np.exp(logits - m)
            z = w.sum()
            total += float(-logits[0] + m + np.log(z))
            w /= z
            sim_grad(i, int(j), (w[0] - 1.0) / tau)
            for t, k in enumerate(neg):
                sim_grad(i, int(k), w[1 + t] / tau)

    scale = 1.0 / (len(batch.anchors) * batch.n_positives_nominal)
    return total * scale, dh * scale


# ---------------------------------------------------------------------------
# combined objective and training
# ---------------------------------------------------------------------------

def combined_loss(params: GcnParams, X, graph: CellGraph, perm: np.ndarray,
                  batch: Batch, cfg: ContrastiveConfig) -> tuple[float, float, GcnGrads]:
    """Deterministic core of one training step: L1, L2, and full gradients
    for a fixed corruption permutation and a fixed contrastive batch."""
    values = _feature_values(X)
    m = mean_aggregator(graph)
    mt = m.T.tocsr()
    grads = GcnGrads.zeros_like(params)
    l1, clean, dh = _dgi_terms(params, values, m, mt, perm, grads)
    l2, dh2 = ntxent_loss(clean["h"], batch, cfg)
    _backprop(params, clean, mt, dh + cfg.lambda2 * dh2, grads)
    return l1, l2, grads


class _Adam:
    def __init__(self, blocks: list[np.ndarray], lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = [np.zeros_like(b) for b in blocks]
        self.v = [np.zeros_like(b) for b in blocks]
        self.t = 0

    def step(self, blocks: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        out = []
        for i, (b, g) in enumerate(zip(blocks, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1 ** self.t)
            vhat = self.v[i] / (1 - self.beta2 ** self.t)
            out.append(b - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


def train(X, graph: CellGraph, ell, cfg: ContrastiveConfig) -> EmbeddingSet:
    """Fit the encoder on one image and return embeddings plus loss trace."""
    values = _feature_values(X)
    ell_values = np.asarray(getattr(ell, "ell", ell), dtype=np.float64).ravel()
    if values.shape[0] != graph.n or ell_values.size != graph.n:
        raise ValueError("features, graph, and Laplace coordinates disagree on n")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(values.shape[1], cfg, rng)
    adam = _Adam([params.omega1, params.omega2, params.prelu_slopes, params.disc_w],
                 cfg.learning_rate)
    trace: list[tuple[float, float, float]] = []
    last_finite = float("nan")
    for epoch in range(cfg.epochs):
        perm = _nonidentity_permutation(values.shape[0], rng)
        batch = sample_batch(ell_values, cfg, rng)
        l1, l2, grads = combined_loss(params, values, graph, perm, batch, cfg)
        total = l1 + cfg.lambda2 * l2
        if not np.isfinite(total):
            raise TrainingError("loss diverged to NaN/Inf", epoch=epoch,
                                last_finite_loss=last_finite)
        last_finite = total
        trace.append((l1, l2, total))
        new_blocks = adam.step(
            [params.omega1, params.omega2, params.prelu_slopes, params.disc_w],
            grads.blocks())
        params = GcnParams(*new_blocks)

    final = _encode(params, values, mean_aggregator(graph))["h"]
    return EmbeddingSet(matrix=final, epoch_losses=trace, params=params)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def save_embeddings(emb: EmbeddingSet, cell_ids, path: str | Path) -> None:
    """CSV with one row per cell id (ascending), one column per dimension."""
    ids = np.asarray(cell_ids, dtype=np.int64)
    if ids.size != emb.n:
        raise ValueError("cell id count != embedding rows")
    order = np.argsort(ids)
    d = emb.matrix.shape[1]
    lines = ["id," + ",".join(f"h{i}" for i in range(d))]
    for r in order:
        lines.append(str(ids[r]) + "," + ",".join(repr(float(v)) for v in emb.matrix[r]))
    Path(path).write_text("\n".join(lines) + "\n")


def save_loss_trace(emb: EmbeddingSet, path: str | Path) -> None:
    lines = ["epoch,l1,l2,total"]
    for e, (l1, l2, total) in enumerate(emb.epoch_losses):
        lines.append(f"{e},{repr(l1)},{repr(l2)},{repr(total)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a save_embeddings CSV back as (cell_ids, matrix), exact to the bit."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",") if lines else []
    if len(header) < 2 or header[0] != "id" or header[1:] != [f"h{i}" for i in range(len(header) - 1)]:
        raise ParseError(f"{path}: expected an 'id,h0,...' header")
    d = len(header) - 1
    ids, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != d + 1:
            raise ParseError(f"{path}: row has {len(parts)} fields, expected {d + 1}")
        try:
            ids.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}: malformed row {line!r}") from exc
    ids = np.asarray(ids, dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate cell ids")
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), d)
    if not np.all(np.isfinite(matrix)):
        raise ParseError(f"{path}: non-finite embedding values")
    return ids, matrix
