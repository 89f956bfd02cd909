"""Independent reference implementations used by the test suite.

Nothing here shares code with the package: these are brute-force or
textbook constructions chosen to be obviously correct rather than fast.
"""

import itertools

import numba
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path


def all_strings(max_len, alphabet):
    """Every string over ``alphabet`` of length <= max_len, longest first."""
    return [s for n in range(max_len, -1, -1) for s in itertools.product(alphabet, repeat=n)]


def subsequence_bitsets(strings):
    """Row ``i`` has bit ``j`` set iff ``strings[j]`` is a subsequence of ``strings[i]``.

    Subsequences are found by enumerating index subsets, so no DP is involved.
    With strings ordered longest first, the LCS length of two strings is the
    length of the first string whose bit is set in both rows.
    """
    index = {s: i for i, s in enumerate(strings)}
    words = (len(strings) + 63) // 64
    bits = np.zeros((len(strings), words), dtype=np.uint64)
    for i, s in enumerate(strings):
        subs = {
            tuple(s[k] for k in combo)
            for r in range(len(s) + 1)
            for combo in itertools.combinations(range(len(s)), r)
        }
        for sub in subs:
            j = index[sub]
            bits[i, j >> 6] |= np.uint64(1) << np.uint64(j & 63)
    return bits


@numba.njit
def first_common_bit(bits, a, b):
    w = 0
    while True:
        x = bits[a, w] & bits[b, w]
        if x:
            k = 0
            while not (x >> np.uint64(k)) & np.uint64(1):
                k += 1
            return w * 64 + k
        w += 1


def brute_lcs_length(a, b):
    """Longest common subsequence length by trying subsequences of ``a``, longest first."""
    for r in range(len(a), -1, -1):
        for combo in itertools.combinations(range(len(a)), r):
            it = iter(b)
            if all(a[k] in it for k in combo):
                return r
    return 0


def edit_distance_graph(max_len, alphabet):
    """All-pairs minimal edit cost among word strings of length <= max_len.

    Nodes are strings; edges are single substitutions, insertions and
    deletions of unit cost. Any optimal edit script can perform deletions
    before insertions, so intermediate strings never need to exceed
    ``max(len(a), len(b))`` and the bounded graph gives exact distances.
    """
    strings = all_strings(max_len, alphabet)
    index = {s: i for i, s in enumerate(strings)}
    rows, cols = [], []
    for s, i in index.items():
        for k in range(len(s)):
            # deletion (insertion is the reverse edge)
            rows.append(i)
            cols.append(index[s[:k] + s[k + 1:]])
            for c in alphabet:
                if c != s[k]:
                    rows.append(i)
                    cols.append(index[s[:k] + (c,) + s[k + 1:]])
    n = len(strings)
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    dist = shortest_path(graph, method="D", directed=False, unweighted=True)
    return strings, dist.astype(np.int64)


def levenshtein_reference(a, b):
    """Plain recursive edit distance with memoisation, for spot checks."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] != b[j]))

    return go(0, 0)


def central_difference_grad(loss_fn, param, eps=1e-5):
    """Numerical gradient of ``loss_fn()`` wrt every entry of ``param`` (float64)."""
    import torch

    grad = torch.zeros_like(param)
    flat, gflat = param.data.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor) taken over the whole tensor norm."""
    diff = (analytic - numeric).norm().item()
    scale = max(analytic.norm().item(), numeric.norm().item(), floor)
    return diff / scale
