"""Morgan (circular) fingerprints and vector similarities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synplan import _kernels
from synplan.errors import DimensionError
from synplan.molgraph.molecule import ATOMIC_NUMBER, Molecule


@dataclass(frozen=True, eq=False)
class Fingerprint:
    bits: np.ndarray  # bool, read-only
    length: int
    radius: int

    def __post_init__(self):
        if self.length < 64 or self.length & (self.length - 1):
            raise DimensionError(f"fingerprint length must be a power of two >= 64, got {self.length}")
        if self.bits.shape != (self.length,):
            raise DimensionError("bit array does not match declared length")
        self.bits.setflags(write=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return (
            self.length == other.length
            and self.radius == other.radius
            and bool(np.array_equal(self.bits, other.bits))
        )

    def __hash__(self) -> int:
        return hash((self.length, self.radius, self.bits.tobytes()))

    @property
    def on_bits(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def as_float(self, dtype=np.float32) -> np.ndarray:
        return self.bits.astype(dtype)

    def packed(self) -> np.ndarray:
        return pack_bits(self.bits[None, :])[0]

    @classmethod
    def from_bits(cls, bits, radius: int = 2) -> "Fingerprint":
        arr = np.array(bits, dtype=bool)
        return cls(arr, len(arr), radius)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack an ``(n, L)`` bool matrix into ``(n, L/64)`` uint64 words."""
    bits = np.asarray(bits, dtype=bool)
    by = np.packbits(bits, axis=1, bitorder="little")
    return np.ascontiguousarray(by).view("<u8").astype(np.uint64)


def _as_int64(values) -> np.ndarray:
    return np.asarray(values, dtype=np.uint64).view(np.int64)


def environment_ids(mol: Molecule, radius: int) -> list[np.ndarray]:
    """Per-round uint64 identifiers of every atom's circular environment."""
    n = len(mol.atoms)
    rows = []
    for i, a in enumerate(mol.atoms):
        rows.append([ATOMIC_NUMBER[a.element], a.charge, len(mol.neighbors[i]), a.hcount, int(a.aromatic)])
    ids = _hash_rows(rows)
    rounds = [ids]
    for r in range(1, radius + 1):
        prev = rounds[-1]
        prev_int = _as_int64(prev).tolist()
        rows = []
        for i in range(n):
            env = sorted((o, prev_int[j]) for j, o in mol.neighbors[i])
            row = [r, prev_int[i]]
            for o, h in env:
                row.append(o)
                row.append(h)
            rows.append(row)
        rounds.append(_hash_rows(rows))
    return rounds


def _hash_rows(rows: list[list[int]]) -> np.ndarray:
    offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum([len(r) for r in rows], out=offsets[1:])
    flat = np.fromiter((v for r in rows for v in r), dtype=np.int64, count=int(offsets[-1]))
    return _kernels.fnv1a_rows(flat, offsets)


def morgan_fingerprint(mol: Molecule, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Boolean Morgan fingerprint with a fixed FNV-1a 64-bit hash."""
    if nbits <= 0 or nbits & (nbits - 1):
        raise DimensionError(f"nbits must be a power of two, got {nbits}")
    if radius < 0:
        raise DimensionError("radius must be >= 0")
    key = ("fp", radius, nbits)
    fp = mol._cache.get(key)
    if fp is not None:
        return fp
    bits = np.zeros(nbits, dtype=bool)
    mask = np.uint64(nbits - 1)
    for ids in environment_ids(mol, radius):
        bits[(ids & mask).astype(np.int64)] = True
    fp = Fingerprint(bits, nbits, radius)
    mol._cache[key] = fp
    return fp


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.length != b.length or a.radius != b.radius:
        raise DimensionError(f"fingerprint mismatch: ({a.length}, {a.radius}) vs ({b.length}, {b.radius})")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def tanimoto_bits(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError("bit vectors differ in length")
    union = int(np.count_nonzero(a | b))
    return 0.0 if union == 0 else int(np.count_nonzero(a & b)) / union


def tanimoto_many(query: Fingerprint | np.ndarray, packed: np.ndarray) -> np.ndarray:
    """Tanimoto of ``query`` against every row of a packed fingerprint matrix."""
    q = query.packed() if isinstance(query, Fingerprint) else pack_bits(np.asarray(query)[None, :])[0]
    if packed.shape[1] != q.shape[0]:
        raise DimensionError("packed matrix width does not match query")
    return _kernels.tanimoto_many(q, packed)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"vector length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
