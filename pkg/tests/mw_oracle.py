"""Exhaustive permutation oracle for the two-sided Mann-Whitney p-value.

Enumerates every way to assign the pooled values to a group of size n_a and
counts pairwise comparisons directly, so it shares no code with the
rank-sum recursion under test.
"""

import itertools
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def group_masks(n_a: int, n: int) -> np.ndarray:
    combos = list(itertools.combinations(range(n), n_a))
    mask = np.zeros((len(combos), n), dtype=np.int64)
    for row, idx in enumerate(combos):
        mask[row, list(idx)] = 1
    return mask


def doubled_u(pooled: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """2U for every assignment in ``mask``; ``pooled`` may be batched ``(P, n)``."""
    pooled = np.atleast_2d(pooled)
    gt = (pooled[:, :, None] > pooled[:, None, :]).astype(np.int64)
    eq = (pooled[:, :, None] == pooled[:, None, :]).astype(np.int64)
    g2 = 2 * gt + eq
    # sum_{i in A, j not in A} g2[i, j]
    return np.einsum("ci,pij,cj->pc", mask, g2, 1 - mask, optimize=True)


def exhaustive_p(a, b) -> np.ndarray | float:
    """p-value(s) for one pair or a batch of equally sized pairs (rows)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n_a, n_b = a.shape[1], b.shape[1]
    pooled = np.concatenate([a, b], axis=1)
    mask = group_masks(n_a, n_a + n_b)
    u2 = doubled_u(pooled, mask)
    observed = u2[:, 0]  # combination 0 is (0, .., n_a - 1), the actual split
    centre = n_a * n_b
    hits = (np.abs(u2 - centre) >= np.abs(observed - centre)[:, None]).sum(axis=1)
    p = hits / mask.shape[0]
    return p if p.size > 1 else float(p[0])


def multisets(max_size: int, alphabet=(1, 2, 3, 4)):
    """All sorted samples of size 1..max_size over ``alphabet``, grouped by size."""
    return {
        k: np.array(list(itertools.combinations_with_replacement(alphabet, k)), dtype=np.float64)
        for k in range(1, max_size + 1)
    }
