"""Log-linear distribution over non-projective dependency trees.

The partition function is the determinant of the root-deleted Laplacian
minor (Matrix-Tree Theorem); edge marginals come from its inverse. Both
unlabeled (``L == 1``) and labeled models share one code path: labels are
summed into the adjacency weights before the O(n^3) factorization.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import SingularMatrixError, log_det_and_inverse, mmatrix_eliminate
from .structures import DependencyTree, EdgeScores, InvalidTreeError, edge_mask

MARGINAL_SLACK = 1e-8
BRUTE_FORCE_MAX_N = 8


class InferenceError(ArithmeticError):
    pass


@dataclass
class MarginalTable:
    """Edge marginals ``mu[h, m, l]`` laid out like :class:`EdgeScores`."""

    mu: np.ndarray

    @property
    def collapsed(self) -> np.ndarray:
        return self.mu.sum(axis=2)

    @property
    def n(self) -> int:
        return self.mu.shape[0] - 1


@dataclass
class LogPartitionResult:
    log_z: float
    shift: np.ndarray  # per-modifier offset subtracted before exponentiation
    marginals: MarginalTable


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(mx, axis=axis) + np.log(np.sum(np.exp(x - mx), axis=axis))


def _label_posterior(scores: EdgeScores) -> np.ndarray:
    s = np.where(edge_mask(scores.n)[:, :, None], scores.s, 0.0)
    e = np.exp(s - s.max(axis=2, keepdims=True))
    return e / e.sum(axis=2, keepdims=True)


def stability_shift(scores: EdgeScores) -> np.ndarray:
    """Per-modifier maximum over incoming edges and labels (0 for the root column).

    Every tree has exactly one incoming edge per modifier, so subtracting a
    per-column constant moves every tree score by the same amount.
    """
    n = scores.n
    masked = np.where(edge_mask(n)[:, :, None], scores.s, -np.inf)
    shift = masked.max(axis=(0, 2))
    shift[0] = 0.0
    return shift


def build_adjacency(scores: EdgeScores, shift=None) -> np.ndarray:
    """Label-summed weighted adjacency ``A[h, m] = sum_l exp(s[h, m, l] - shift[m])``.

    ``shift`` defaults to :func:`stability_shift`; a scalar applies one
    offset to every edge.
    """
    n = scores.n
    if shift is None:
        shift = stability_shift(scores)
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (n + 1,))
    mask = edge_mask(n)
    s = np.where(mask[:, :, None], scores.s, -np.inf)
    a = np.exp(s - shift[None, :, None]).sum(axis=2)
    a[~mask] = 0.0
    return a


def laplacian(adjacency: np.ndarray) -> np.ndarray:
    return np.diag(adjacency.sum(axis=0)) - adjacency


def _inverse_marginals(adj: np.ndarray):
    """logdet and collapsed marginals from the LU inverse of the Laplacian minor."""
    n = adj.shape[0] - 1
    sign, logdet, inv = log_det_and_inverse(laplacian(adj)[1:, 1:])
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularMatrixError(n - 1)
    diag = np.diag(inv)
    collapsed = np.zeros((n + 1, n + 1))
    collapsed[0, 1:] = adj[0, 1:] * diag
    collapsed[1:, 1:] = adj[1:, 1:] * (diag[None, :] - inv.T)
    return logdet, collapsed


def _absorption_marginals(adj: np.ndarray):
    """Cancellation-free logdet and marginals for nearly singular minors.

    The transposed minor is a row diagonally dominant M-matrix whose row
    excess is the root weight. Its log-determinant comes from subtraction-free
    elimination. For the marginals, walk from a modifier to a sampled head:
    with ``g_m(h)`` the probability that a walk from ``h`` reaches the root
    before ``m``, ``mu[h, m]`` is proportional to ``A[h, m] * g_m(h)`` and
    ``mu[0, m]`` to ``A[0, m]``. All ``g_m`` are solved in one batch.
    """
    n = adj.shape[0] - 1
    root = adj[0, 1:]
    out = adj[1:, 1:].T
    pivots, _ = mmatrix_eliminate(out, root)
    logdet = float(np.log(pivots).sum())

    idx = np.arange(n)
    off = np.repeat(out[None], n, axis=0)
    excess = root[None, :] + adj[1:, 1:]
    rhs = np.repeat(root[None], n, axis=0)
    off[idx, :, idx] = 0.0
    off[idx, idx, :] = 0.0
    excess[idx, idx] = 1.0
    rhs[idx, idx] = 0.0
    _, g = mmatrix_eliminate(off, excess, rhs)

    weighted = adj[1:, 1:] * g.T
    denom = root + weighted.sum(axis=0)
    collapsed = np.zeros((n + 1, n + 1))
    collapsed[0, 1:] = root / denom
    collapsed[1:, 1:] = weighted / denom[None, :]
    return logdet, collapsed


def _marginals_ok(collapsed: np.ndarray) -> bool:
    if collapsed.min() < -MARGINAL_SLACK or collapsed.max() > 1 + MARGINAL_SLACK:
        return False
    return bool(np.all(np.abs(collapsed[:, 1:].sum(axis=0) - 1.0) <= MARGINAL_SLACK))


def log_partition(scores: EdgeScores, name: str = "sentence") -> LogPartitionResult:
    """log Z and labeled marginals.

    The LU inverse is used first. When its marginals leave [0, 1] or fail to
    normalize by more than :data:`MARGINAL_SLACK`, which happens once the
    model is confident and the minor becomes ill-conditioned, the result is
    recomputed by the cancellation-free absorption method.
    """
    shift = stability_shift(scores)
    adj = build_adjacency(scores, shift)
    try:
        logdet, collapsed = _inverse_marginals(adj)
        ok = _marginals_ok(collapsed)
    except SingularMatrixError:
        ok = False
    if not ok:
        try:
            logdet, collapsed = _absorption_marginals(adj)
        except SingularMatrixError as exc:
            raise InferenceError(
                f"{name}: singular Laplacian minor (pivot {exc.pivot_index})") from exc
        if not _marginals_ok(collapsed):
            raise InferenceError(f"{name}: marginals left [0, 1] by more than {MARGINAL_SLACK:g}")
    collapsed = np.clip(collapsed, 0.0, 1.0)
    mu = collapsed[:, :, None] * _label_posterior(scores)
    return LogPartitionResult(logdet + float(shift.sum()), shift, MarginalTable(mu))


def marginal_gradient_of_logZ(scores: EdgeScores) -> np.ndarray:
    """d logZ / d s, which equals the labeled edge marginals."""
    return log_partition(scores).marginals.mu


def _check_gold(scores: EdgeScores, gold: DependencyTree) -> None:
    if gold.n != scores.n:
        raise InvalidTreeError(f"gold tree has {gold.n} tokens, scores have {scores.n}")
    gold.validate(scores.n_labels)


def gold_indicator(scores: EdgeScores, gold: DependencyTree) -> np.ndarray:
    ind = np.zeros_like(scores.s)
    m = np.arange(1, gold.n + 1)
    ind[gold.heads[1:], m, gold.labels[1:]] = 1.0
    return ind


def nll_loss_and_grad(scores: EdgeScores, gold: DependencyTree, name: str = "sentence"):
    """Negative log-likelihood of ``gold`` and its gradient w.r.t. the scores."""
    _check_gold(scores, gold)
    result = log_partition(scores, name)
    ind = gold_indicator(scores, gold)
    loss = result.log_z - float(np.sum(scores.s * ind))
    return loss, result.marginals.mu - ind


def head_selection_loss(scores: EdgeScores, gold: DependencyTree):
    """Per-token cross-entropy over (head, label) pairs, with no tree constraint."""
    _check_gold(scores, gold)
    n = scores.n
    mask = edge_mask(n)[:, :, None]
    logits = np.where(mask, scores.s, -np.inf)[:, 1:, :]  # (n+1, n, L)
    flat = logits.transpose(1, 0, 2).reshape(n, -1)
    lse = _logsumexp(flat, axis=1)
    m = np.arange(1, n + 1)
    gold_scores = scores.s[gold.heads[1:], m, gold.labels[1:]]
    loss = float(np.sum(lse - gold_scores))
    probs = np.exp(flat - lse[:, None]).reshape(n, n + 1, -1).transpose(1, 0, 2)
    grad = np.zeros_like(scores.s)
    grad[:, 1:, :] = probs
    return loss, grad - gold_indicator(scores, gold)


@lru_cache(maxsize=None)
def enumerate_trees(n: int) -> np.ndarray:
    """All arborescences rooted at 0 over ``n`` tokens, as rows of heads for ``1..n``.

    Rows come in lexicographic order of the head vector. Validity is tested
    by pointer jumping: every token must reach the absorbing root within
    ``n`` steps.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"refusing to enumerate trees for n={n} > {BRUTE_FORCE_MAX_N}")
    total = (n + 1) ** n
    chunk = 1 << 20
    weights = (n + 1) ** np.arange(n - 1, -1, -1)
    found = []
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        heads = (codes[:, None] // weights[None, :]) % (n + 1)
        heads = heads[np.all(heads != np.arange(1, n + 1)[None, :], axis=1)]
        full = np.concatenate([np.zeros((len(heads), 1), dtype=np.int64), heads], axis=1)
        pos = np.broadcast_to(np.arange(n + 1), full.shape).copy()
        for _ in range(n):
            pos = np.take_along_axis(full, pos, axis=1)
        found.append(heads[np.all(pos == 0, axis=1)])
    trees = np.concatenate(found).astype(np.int8)
    trees.setflags(write=False)
    return trees


def brute_force_partition(scores: EdgeScores):
    """Exact ``(logZ, MarginalTable)`` by summing over every tree.

    Labels are summed out per edge, which is exact because tree weights
    factor over edges and each edge carries its label independently.
    """
    n = scores.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute-force partition refuses n={n} > {BRUTE_FORCE_MAX_N}")
    trees = enumerate_trees(n).astype(np.int64)
    edge_lse = _logsumexp(np.where(edge_mask(n)[:, :, None], scores.s, 0.0), axis=2)
    m = np.arange(1, n + 1)
    tree_scores = edge_lse[trees, m[None, :]].sum(axis=1)
    log_z = float(_logsumexp(tree_scores, axis=0))
    probs = np.exp(tree_scores - log_z)
    collapsed = np.zeros((n + 1, n + 1))
    for j in range(n):
        collapsed[:, j + 1] = np.bincount(trees[:, j], weights=probs, minlength=n + 1)
    mu = collapsed[:, :, None] * _label_posterior(scores)
    return log_z, MarginalTable(mu)
