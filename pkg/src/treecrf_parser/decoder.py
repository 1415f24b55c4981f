"""Maximum spanning arborescence decoding (Chu-Liu-Edmonds)."""
import numpy as np

from .structures import DependencyTree, EdgeScores, edge_mask
from .tree_crf import BRUTE_FORCE_MAX_N, enumerate_trees


class EmptySentenceError(ValueError):
    pass


def best_label_per_edge(scores: EdgeScores):
    """Collapse labels: ``(max_l s[h, m, l], argmax_l s[h, m, l])``, ties to the smallest label."""
    best = np.argmax(scores.s, axis=2)
    collapsed = np.take_along_axis(scores.s, best[:, :, None], axis=2)[:, :, 0]
    return collapsed, best


def _find_cycle(heads: np.ndarray):
    n = len(heads)
    color = np.zeros(n, dtype=np.int8)  # 0 new, 1 on current path, 2 done
    color[0] = 2
    for start in range(1, n):
        path = []
        node = start
        while color[node] == 0:
            color[node] = 1
            path.append(node)
            node = heads[node]
        if color[node] == 1:
            return path[path.index(node):]
        for v in path:
            color[v] = 2
    return None


def _chu_liu_edmonds(scores: np.ndarray) -> np.ndarray:
    """Heads of the max arborescence rooted at 0; ``scores[h, m]`` is ``-inf`` for forbidden edges."""
    n = scores.shape[0]
    heads = np.argmax(scores, axis=0)
    heads[0] = 0
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    cycle_idx = np.array(cycle)
    rest = np.flatnonzero(~in_cycle)  # includes the root at position 0
    c = len(rest)
    cycle_in_score = scores[heads[cycle_idx], cycle_idx]

    sub = np.full((c + 1, c + 1), -np.inf)
    sub[:c, :c] = scores[np.ix_(rest, rest)]
    # edges into the cycle: gain of replacing the cycle edge at the entry point
    enter = scores[np.ix_(rest, cycle_idx)] - cycle_in_score[None, :]
    enter_at = np.argmax(enter, axis=1)
    sub[:c, c] = enter[np.arange(c), enter_at]
    # edges out of the cycle
    leave = scores[np.ix_(cycle_idx, rest)]
    leave_from = np.argmax(leave, axis=0)
    sub[c, :c] = leave[leave_from, np.arange(c)]
    sub[c, 0] = -np.inf
    np.fill_diagonal(sub, -np.inf)

    sub_heads = _chu_liu_edmonds(sub)

    result = heads.copy()
    for j, node in enumerate(rest):
        if j == 0:
            continue
        h = sub_heads[j]
        result[node] = cycle_idx[leave_from[j]] if h == c else rest[h]
    entry_head = sub_heads[c]
    entry = cycle_idx[enter_at[entry_head]]
    result[entry] = rest[entry_head]
    return result


def _prepare(collapsed) -> np.ndarray:
    s = np.array(collapsed, dtype=np.float64)
    if s.ndim == 3:
        s = s[:, :, 0]
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"collapsed scores must be (n+1, n+1), got {s.shape}")
    if s.shape[0] < 2:
        raise EmptySentenceError("cannot decode a sentence with no tokens")
    n = s.shape[0] - 1
    mask = edge_mask(n)
    if not np.all(np.isfinite(s[mask])):
        raise ValueError("collapsed scores contain non-finite edge entries")
    return np.where(mask, s, -np.inf)


def _total(s: np.ndarray, heads: np.ndarray) -> float:
    return float(sum(s[heads[m], m] for m in range(1, len(heads))))


def decode_mst(collapsed, single_root: bool = False) -> DependencyTree:
    """Maximum-score spanning arborescence over collapsed scores ``s[h, m]``.

    With ``single_root`` the root gets exactly one child: the unconstrained
    decoder runs once per candidate child with the other root edges masked,
    and the best total wins (ties go to the smaller child index).
    """
    s = _prepare(collapsed)
    n = s.shape[0] - 1
    if not single_root:
        heads = _chu_liu_edmonds(s)
        return DependencyTree.from_heads(heads[1:])
    best_heads, best_total = None, -np.inf
    for child in range(1, n + 1):
        masked = s.copy()
        masked[0, :] = -np.inf
        masked[0, child] = s[0, child]
        heads = _chu_liu_edmonds(masked)
        total = _total(s, heads)
        if total > best_total:
            best_heads, best_total = heads, total
    return DependencyTree.from_heads(best_heads[1:])


def decode(scores: EdgeScores, single_root: bool = False) -> DependencyTree:
    """Best labeled tree: per-edge best label, then MST over the collapsed scores."""
    collapsed, labels = best_label_per_edge(scores)
    tree = decode_mst(collapsed, single_root)
    m = np.arange(1, tree.n + 1)
    return DependencyTree(tree.heads, np.concatenate([[-1], labels[tree.heads[1:], m]]))


def brute_force_argmax(collapsed) -> DependencyTree:
    """Exhaustive maximum; ties go to the lexicographically smallest head vector."""
    s = _prepare(collapsed)
    n = s.shape[0] - 1
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute-force argmax refuses n={n} > {BRUTE_FORCE_MAX_N}")
    trees = enumerate_trees(n).astype(np.int64)
    totals = s[trees, np.arange(1, n + 1)[None, :]].sum(axis=1)
    return DependencyTree.from_heads(trees[int(np.argmax(totals))])


def collapsed_tree_score(collapsed, tree: DependencyTree) -> float:
    return _total(_prepare(collapsed), tree.heads)
