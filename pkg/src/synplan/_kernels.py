"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``SYNPLAN_DISABLE_NUMBA`` is unset (or ``0``). Both paths are
kept bit-compatible; ``tests/test_kernels.py`` runs them side by side.
"""

from __future__ import annotations

import os

import numpy as np

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
_MASK64 = (1 << 64) - 1


def _numba_requested() -> bool:
    return os.environ.get("SYNPLAN_DISABLE_NUMBA", "0").lower() in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by SYNPLAN_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy / pure-python reference implementations
# ---------------------------------------------------------------------------


def fnv1a_rows_numpy(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """FNV-1a 64-bit hash of each row of a ragged int64 array.

    Row ``i`` is ``values[offsets[i]:offsets[i+1]]``; every integer is fed to
    the hash as 8 little-endian bytes.
    """
    raw = np.ascontiguousarray(values, dtype="<i8").view(np.uint8)
    n = len(offsets) - 1
    out = np.empty(n, dtype=np.uint64)
    prime = int(FNV_PRIME)
    for i in range(n):
        h = int(FNV_OFFSET)
        for byte in raw[offsets[i] * 8 : offsets[i + 1] * 8].tolist():
            h = ((h ^ byte) * prime) & _MASK64
        out[i] = h
    return out


def tanimoto_many_numpy(query: np.ndarray, packed: np.ndarray) -> np.ndarray:
    """Tanimoto of one packed uint64 fingerprint against each packed row."""
    inter = np.bitwise_count(packed & query).sum(axis=1)
    union = np.bitwise_count(packed | query).sum(axis=1)
    out = np.zeros(len(packed), dtype=np.float64)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def cosine_scores_numpy(matrix: np.ndarray, norms: np.ndarray, query: np.ndarray) -> np.ndarray:
    qn = float(np.sqrt(np.dot(query, query)))
    dots = matrix @ query
    out = np.zeros(len(matrix), dtype=np.float64)
    if qn == 0.0:
        return out
    nz = norms > 0
    out[nz] = dots[nz] / (norms[nz] * qn)
    return out


def topk_desc_numpy(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Indices into ``candidates`` ordered by descending score, ascending id."""
    sub = scores[candidates]
    order = np.lexsort((candidates, -sub))
    return candidates[order[:k]]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _fnv1a_rows_nb(values, offsets):
        n = offsets.shape[0] - 1
        out = np.empty(n, dtype=np.uint64)
        prime = np.uint64(0x100000001B3)
        for i in range(n):
            h = np.uint64(0xCBF29CE484222325)
            for j in range(offsets[i], offsets[i + 1]):
                v = np.uint64(values[j])
                for b in range(8):
                    byte = (v >> np.uint64(8 * b)) & np.uint64(0xFF)
                    h = (h ^ byte) * prime
            out[i] = h
        return out

    @numba.njit(cache=True)
    def _popcount64(x):
        x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
        x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
        x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
        return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)

    @numba.njit(cache=True)
    def _tanimoto_many_nb(query, packed):
        n, w = packed.shape
        out = np.zeros(n, dtype=np.float64)
        for i in range(n):
            inter = 0
            union = 0
            for j in range(w):
                inter += _popcount64(packed[i, j] & query[j])
                union += _popcount64(packed[i, j] | query[j])
            if union > 0:
                out[i] = inter / union
        return out

    @numba.njit(cache=True)
    def _cosine_scores_nb(matrix, norms, query):
        n, d = matrix.shape
        qq = 0.0
        for j in range(d):
            qq += query[j] * query[j]
        qn = np.sqrt(qq)
        out = np.zeros(n, dtype=np.float64)
        if qn == 0.0:
            return out
        for i in range(n):
            if norms[i] > 0.0:
                s = 0.0
                for j in range(d):
                    s += matrix[i, j] * query[j]
                out[i] = s / (norms[i] * qn)
        return out

    @numba.njit(cache=True)
    def _topk_desc_nb(scores, candidates, k):
        m = candidates.shape[0]
        sub = np.empty(m, dtype=np.float64)
        for i in range(m):
            sub[i] = -scores[candidates[i]]
        # candidates arrive sorted by id, so a stable sort keeps id order on ties
        order = np.argsort(sub, kind="mergesort")
        kk = min(k, m)
        out = np.empty(kk, dtype=candidates.dtype)
        for i in range(kk):
            out[i] = candidates[order[i]]
        return out


def fnv1a_rows(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if HAVE_NUMBA:
        return _fnv1a_rows_nb(values, offsets)
    return fnv1a_rows_numpy(values, offsets)


def tanimoto_many(query: np.ndarray, packed: np.ndarray) -> np.ndarray:
    if HAVE_NUMBA:
        return _tanimoto_many_nb(np.ascontiguousarray(query), np.ascontiguousarray(packed))
    return tanimoto_many_numpy(query, packed)


def cosine_scores(matrix: np.ndarray, norms: np.ndarray, query: np.ndarray) -> np.ndarray:
    query = np.ascontiguousarray(query, dtype=np.float64)
    if HAVE_NUMBA:
        return _cosine_scores_nb(matrix, norms, query)
    return cosine_scores_numpy(matrix, norms, query)


def topk_desc(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    candidates = np.sort(np.asarray(candidates, dtype=np.int64))
    if HAVE_NUMBA:
        return _topk_desc_nb(scores, candidates, k)
    return topk_desc_numpy(scores, candidates, k)


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
