"""Molecule value type, valence rules and simple descriptors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from synplan.errors import ValenceError

SINGLE, DOUBLE, TRIPLE, AROMATIC = 1, 2, 3, 4
BOND_ORDERS = (SINGLE, DOUBLE, TRIPLE, AROMATIC)

ATOMIC_NUMBER = {"B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "P": 15, "S": 16, "Cl": 17, "Br": 35, "I": 53}
ATOMIC_MASS = {
    "H": 1.008,
    "B": 10.81,
    "C": 12.011,
    "N": 14.007,
    "O": 15.999,
    "F": 18.998,
    "P": 30.974,
    "S": 32.06,
    "Cl": 35.45,
    "Br": 79.904,
    "I": 126.904,
}
ORGANIC_SUBSET = frozenset(ATOMIC_NUMBER)
AROMATIC_ELEMENTS = frozenset({"C", "N", "O", "S"})

_NEUTRAL_VALENCE = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}


def allowed_valences(element: str, charge: int = 0) -> tuple[int, ...]:
    base = _NEUTRAL_VALENCE[element]
    if charge == 0:
        return base
    if element == "C":
        return (4 - abs(charge),) if abs(charge) <= 2 else ()
    if element == "B":
        return (3 + charge,) if 3 + charge >= 0 else ()
    # group 15-17: a cation behaves like the element to its left, an anion to its right
    return tuple(v + charge for v in base if v + charge >= 0)


@dataclass(frozen=True, slots=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    hcount: int = 0
    map_index: int | None = None


@dataclass(frozen=True, slots=True)
class Bond:
    a: int
    b: int
    order: int


def bond_valence(element: str, orders: Iterable[int]) -> int:
    """Valence contributed by bonds; aromatic bonds count 1.5 on C/B, 1 elsewhere."""
    total = 0
    n_arom = 0
    for o in orders:
        if o == AROMATIC:
            n_arom += 1
        else:
            total += o
    if n_arom:
        if element in ("C", "B"):
            total += (3 * n_arom) // 2
        else:
            total += n_arom
    return total


def default_hcount(element: str, aromatic: bool, orders: Iterable[int]) -> int:
    """Implicit hydrogens of an unbracketed organic-subset atom."""
    used = bond_valence(element, orders)
    if aromatic:
        if element == "C":
            return max(0, 4 - used)
        return 0
    for v in _NEUTRAL_VALENCE[element]:
        if v >= used:
            return v - used
    return 0


class Molecule:
    """Immutable attributed molecular graph.

    ``atoms`` and ``bonds`` are tuples; ``neighbors[i]`` lists ``(j, order)``
    pairs. Construction validates simplicity, connectivity and valence.
    Derived values (canonical SMILES, ranks) are cached on first use.
    """

    __slots__ = ("atoms", "bonds", "neighbors", "_cache")

    def __init__(self, atoms: Iterable[Atom], bonds: Iterable[Bond], *, validate: bool = True):
        atoms = tuple(atoms)
        norm = []
        for bd in bonds:
            a, b = (bd.a, bd.b) if bd.a < bd.b else (bd.b, bd.a)
            norm.append(Bond(a, b, bd.order))
        norm.sort(key=lambda x: (x.a, x.b))
        bonds_t = tuple(norm)
        nbrs: list[list[tuple[int, int]]] = [[] for _ in atoms]
        for bd in bonds_t:
            nbrs[bd.a].append((bd.b, bd.order))
            nbrs[bd.b].append((bd.a, bd.order))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "bonds", bonds_t)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(x)) for x in nbrs))
        object.__setattr__(self, "_cache", {})
        if validate:
            self.validate()

    def __setattr__(self, name, value):
        raise AttributeError("Molecule is immutable")

    def __len__(self) -> int:
        return len(self.atoms)

    def __repr__(self) -> str:
        return f"Molecule({self.smiles!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Molecule):
            return NotImplemented
        return self.smiles == other.smiles

    def __hash__(self) -> int:
        return hash(self.smiles)

    @property
    def smiles(self) -> str:
        s = self._cache.get("smiles")
        if s is None:
            from synplan.molgraph.smiles import write_canonical_smiles

            s = write_canonical_smiles(self)
        return s

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def bond_order(self, i: int, j: int) -> int | None:
        for k, o in self.neighbors[i]:
            if k == j:
                return o
        return None

    def valence(self, i: int) -> int:
        at = self.atoms[i]
        return bond_valence(at.element, (o for _, o in self.neighbors[i])) + at.hcount

    def is_connected(self) -> bool:
        n = len(self.atoms)
        if n == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j, _ in self.neighbors[i]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == n

    def validate(self) -> None:
        n = len(self.atoms)
        if n == 0:
            raise ValenceError("empty molecule")
        seen = set()
        for bd in self.bonds:
            if bd.a == bd.b:
                raise ValenceError(f"self-loop on atom {bd.a}")
            if not (0 <= bd.a < n and 0 <= bd.b < n):
                raise ValenceError(f"bond endpoint out of range: {bd}")
            if (bd.a, bd.b) in seen:
                raise ValenceError(f"duplicate bond {bd.a}-{bd.b}")
            if bd.order not in BOND_ORDERS:
                raise ValenceError(f"bad bond order {bd.order}")
            seen.add((bd.a, bd.b))
        for i, at in enumerate(self.atoms):
            if at.element not in ORGANIC_SUBSET:
                raise ValenceError(f"unsupported element {at.element}")
            if at.hcount < 0:
                raise ValenceError(f"negative hydrogen count on atom {i}")
            allowed = allowed_valences(at.element, at.charge)
            if not allowed or self.valence(i) > max(allowed):
                raise ValenceError(
                    f"atom {i} ({at.element}, charge {at.charge}) has valence {self.valence(i)}"
                    f" above {max(allowed) if allowed else 'any allowed value'}"
                )
        if not self.is_connected():
            raise ValenceError("molecule has more than one connected component")


def ring_bonds(mol: Molecule) -> frozenset[tuple[int, int]]:
    """Bonds lying on at least one cycle (i.e. non-bridges), as (low, high) pairs."""
    cached = mol._cache.get("ring_bonds")
    if cached is not None:
        return cached
    n = len(mol.atoms)
    disc = [-1] * n
    low = [0] * n
    bridges = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(mol.neighbors[root]))]
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for w, _ in it:
                if w == parent:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, v, iter(mol.neighbors[w])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[w])
            if not advanced:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        bridges.add((min(u, v), max(u, v)))
    result = frozenset((b.a, b.b) for b in mol.bonds if (b.a, b.b) not in bridges)
    mol._cache["ring_bonds"] = result
    return result


def descriptors(mol: Molecule) -> dict:
    heavy = len(mol.atoms)
    hetero = sum(1 for a in mol.atoms if a.element not in ("C",))
    weight = sum(ATOMIC_MASS[a.element] + a.hcount * ATOMIC_MASS["H"] for a in mol.atoms)
    return {
        "heavy_atoms": heavy,
        "rings": len(mol.bonds) - heavy + 1,
        "hetero_fraction": hetero / heavy,
        "mol_weight": round(weight, 6),
    }
