"""Per-sentence value types shared by inference, decoding and training."""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class InvalidTreeError(ValueError):
    pass


def edge_mask(n: int) -> np.ndarray:
    """Boolean ``(n+1, n+1)`` mask of real edges ``h -> m``: ``m >= 1`` and ``h != m``."""
    mask = ~np.eye(n + 1, dtype=bool)
    mask[:, 0] = False
    return mask


@dataclass
class EdgeScores:
    """Edge scores ``s[h, m, l]`` for heads ``0..n``, modifiers ``1..n`` and labels ``0..L-1``.

    Stored densely as ``(n+1, n+1, L)``. Column 0 (root as modifier) and the
    diagonal are not edges; consumers ignore them.
    """

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim == 2:
            s = s[:, :, None]
        if s.ndim != 3 or s.shape[0] != s.shape[1] or s.shape[0] < 2 or s.shape[2] < 1:
            raise ValueError(f"edge scores must have shape (n+1, n+1, L) with n >= 1, got {s.shape}")
        if not np.all(np.isfinite(s[edge_mask(s.shape[0] - 1)])):
            raise ValueError("edge scores contain non-finite entries")
        self.s = s

    @property
    def n(self) -> int:
        return self.s.shape[0] - 1

    @property
    def n_labels(self) -> int:
        return self.s.shape[2]

    @property
    def mask(self) -> np.ndarray:
        return edge_mask(self.n)

    def shifted(self, c: float) -> "EdgeScores":
        return EdgeScores(self.s + c)


@dataclass
class DependencyTree:
    """Head and label per token; index 0 is the root and holds ``-1`` in both arrays."""

    heads: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.heads = np.asarray(self.heads, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.heads.shape != self.labels.shape or self.heads.ndim != 1:
            raise InvalidTreeError("heads and labels must be 1-D arrays of equal length")

    @classmethod
    def from_heads(cls, heads: Sequence[int], labels: Optional[Sequence[int]] = None) -> "DependencyTree":
        """Build from heads of tokens ``1..n`` (the root entry is prepended)."""
        heads = list(heads)
        labels = [0] * len(heads) if labels is None else list(labels)
        return cls(np.array([-1] + heads), np.array([-1] + labels))

    @property
    def n(self) -> int:
        return len(self.heads) - 1

    def edges(self):
        return [(int(self.heads[m]), m, int(self.labels[m])) for m in range(1, self.n + 1)]

    def validate(self, n_labels: Optional[int] = None) -> "DependencyTree":
        n = self.n
        if n < 1:
            raise InvalidTreeError("tree has no tokens")
        heads = self.heads[1:]
        if np.any(heads < 0) or np.any(heads > n):
            raise InvalidTreeError(f"head index out of range 0..{n}: {heads.tolist()}")
        if n_labels is not None and np.any((self.labels[1:] < 0) | (self.labels[1:] >= n_labels)):
            raise InvalidTreeError(f"label id out of range 0..{n_labels - 1}")
        for m in range(1, n + 1):
            seen = set()
            node = m
            while node != 0:
                if node in seen:
                    raise InvalidTreeError(f"token {m} does not reach the root (cycle through {sorted(seen)})")
                seen.add(node)
                node = int(self.heads[node])
        return self

    def is_valid(self) -> bool:
        try:
            self.validate()
        except InvalidTreeError:
            return False
        return True

    def root_children(self) -> list[int]:
        return [m for m in range(1, self.n + 1) if self.heads[m] == 0]


def tree_score(scores: EdgeScores, tree: DependencyTree) -> float:
    """Total score of a labeled tree, summed over modifiers in order."""
    s = scores.s
    total = 0.0
    for m in range(1, tree.n + 1):
        total += s[tree.heads[m], m, tree.labels[m]]
    return float(total)
