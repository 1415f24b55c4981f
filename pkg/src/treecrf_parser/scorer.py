"""Bilinear edge scoring shared across labels.

For every label ``l``::

    s[h, m, l] = r_h' W_l r_m + U_l' r_h + V_l' r_m + b_l

where ``r_i`` is the encoder representation of token ``i`` (row ``i`` of
``repr``; row 0 is the root). Labels differ only through their parameter
block, never through the word representations.
"""
from dataclasses import dataclass

import numpy as np

from .structures import EdgeScores, edge_mask


class ConfigurationError(ValueError):
    pass


@dataclass
class ScorerParams:
    W: np.ndarray  # (L, d, d)
    U: np.ndarray  # (L, d)
    V: np.ndarray  # (L, d)
    b: np.ndarray  # (L,)

    @property
    def n_labels(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def as_dict(self) -> dict:
        return {"scorer.W": self.W, "scorer.U": self.U, "scorer.V": self.V, "scorer.b": self.b}

    @classmethod
    def zeros(cls, n_labels: int, dim: int) -> "ScorerParams":
        return cls(np.zeros((n_labels, dim, dim)), np.zeros((n_labels, dim)),
                   np.zeros((n_labels, dim)), np.zeros(n_labels))


def _check(repr_: np.ndarray, params: ScorerParams) -> np.ndarray:
    r = np.asarray(repr_, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] < 2:
        raise ConfigurationError(f"representation must be (n+1, d) with n >= 1, got {r.shape}")
    if r.shape[1] != params.dim:
        raise ConfigurationError(f"representation dim {r.shape[1]} != scorer dim {params.dim}")
    L, d = params.n_labels, params.dim
    if params.W.shape != (L, d, d) or params.U.shape != (L, d) or params.V.shape != (L, d) \
            or params.b.shape != (L,):
        raise ConfigurationError("inconsistent scorer parameter shapes")
    return r


def score_all_edges(repr_: np.ndarray, params: ScorerParams) -> EdgeScores:
    """Scores for every edge; non-edges (root column, diagonal) are set to 0."""
    r = _check(repr_, params)
    s = (np.matmul(r[None], params.W) @ r.T).transpose(1, 2, 0)
    s += (r @ params.U.T)[:, None, :]
    s += (r @ params.V.T)[None, :, :]
    s += params.b[None, None, :]
    s[~edge_mask(r.shape[0] - 1)] = 0.0
    return EdgeScores(s)


def score_backward(repr_: np.ndarray, params: ScorerParams, grad_scores: np.ndarray):
    """Gradients of ``sum(grad_scores * s)`` w.r.t. the representations and each parameter block."""
    r = _check(repr_, params)
    g = np.asarray(grad_scores, dtype=np.float64)
    if g.shape != (r.shape[0], r.shape[0], params.n_labels):
        raise ConfigurationError(f"grad_scores shape {g.shape} does not match scores")
    g = np.where(edge_mask(r.shape[0] - 1)[:, :, None], g, 0.0)

    g_head = g.sum(axis=1)  # (n+1, L): total weight per head and label
    g_mod = g.sum(axis=0)  # (n+1, L): per modifier
    gl = g.transpose(2, 0, 1)  # (L, n+1, n+1)
    grad_W = np.matmul(r.T[None], gl) @ r
    grad = ScorerParams(grad_W, g_head.T @ r, g_mod.T @ r, g.sum(axis=(0, 1)))

    w = params.W
    grad_r = (gl @ (r[None] @ w.transpose(0, 2, 1))).sum(axis=0)
    grad_r += (gl.transpose(0, 2, 1) @ (r[None] @ w)).sum(axis=0)
    grad_r += g_head @ params.U + g_mod @ params.V
    return grad_r, grad
