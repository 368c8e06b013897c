"""Exact cosine k-nearest-neighbour search over building-block fingerprints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from synplan import _kernels
from synplan.errors import DimensionError, EmptyCandidateSet


@dataclass(frozen=True)
class KnnIndex:
    matrix: np.ndarray  # (n_blocks, d) float64
    ids: np.ndarray  # block id per row
    norms: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]


def knn_build(fingerprints, ids=None) -> KnnIndex:
    M = np.ascontiguousarray(np.asarray(fingerprints, dtype=np.float64))
    if M.ndim != 2:
        raise DimensionError("fingerprint matrix must be 2-D")
    ids = np.arange(len(M), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(ids) != len(M):
        raise DimensionError("one id per fingerprint row required")
    if np.any(np.diff(ids) < 0):
        order = np.argsort(ids, kind="stable")
        M, ids = np.ascontiguousarray(M[order]), ids[order]
    norms = np.sqrt((M * M).sum(axis=1))
    M.setflags(write=False)
    return KnnIndex(M, ids, norms)


def knn_query(index: KnnIndex, q, k: int = 1, mask: np.ndarray | None = None) -> list[tuple[int, float]]:
    """Top-``k`` ``(block id, cosine)`` pairs, descending cosine, ties by ascending id.

    ``mask`` (bool per row) restricts the candidates.
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.shape[0] != index.dim:
        raise DimensionError(f"query length {q.shape[0]} != index dimension {index.dim}")
    if mask is None:
        cand = np.arange(len(index), dtype=np.int64)
    else:
        cand = np.flatnonzero(np.asarray(mask, dtype=bool))
    if len(cand) == 0:
        raise EmptyCandidateSet("no building block passes the mask")
    scores = _kernels.cosine_scores(index.matrix, index.norms, q)
    # rows are stored in ascending-id order by construction, so row order breaks ties
    top = _kernels.topk_desc(scores, cand, k)
    return [(int(index.ids[r]), float(scores[r])) for r in top]


def brute_force_knn(index: KnnIndex, q, k: int = 1, mask=None) -> list[tuple[int, float]]:
    """Reference scan: sort every candidate by (-cosine, id) in plain Python."""
    q = np.asarray(q, dtype=np.float64).ravel()
    rows = range(len(index)) if mask is None else np.flatnonzero(mask)
    qn = float(np.linalg.norm(q))
    scored = []
    for r in rows:
        row = index.matrix[r]
        rn = float(np.linalg.norm(row))
        c = 0.0 if rn == 0 or qn == 0 else float(np.dot(row, q)) / (rn * qn)
        scored.append((-c, int(index.ids[r])))
    scored.sort()
    return [(i, -c) for c, i in scored[:k]]
