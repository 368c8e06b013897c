"""Canonical atom ranking by iterative refinement plus tie-break search."""

from __future__ import annotations

from synplan.molgraph.molecule import ATOMIC_NUMBER, Molecule

# Upper bound on fully-individualized leaves explored per molecule. Only very
# symmetric inputs come near it; past the cap the best leaf found so far wins.
MAX_LEAVES = 4096


def atom_invariants(mol: Molecule) -> list[tuple]:
    return [
        (
            len(mol.neighbors[i]),
            ATOMIC_NUMBER[a.element],
            int(a.aromatic),
            a.charge,
            a.hcount,
            a.map_index or 0,
        )
        for i, a in enumerate(mol.atoms)
    ]


def _rank_by_key(keys: list) -> list[int]:
    # rank = number of atoms with a strictly smaller key; tied atoms share it
    order = sorted(range(len(keys)), key=keys.__getitem__)
    ranks = [0] * len(keys)
    for pos, i in enumerate(order):
        if pos and keys[i] == keys[order[pos - 1]]:
            ranks[i] = ranks[order[pos - 1]]
        else:
            ranks[i] = pos
    return ranks


def refine(mol: Molecule, ranks: list[int]) -> list[int]:
    """Split rank classes by neighbour ranks until the partition is stable."""
    nbrs = mol.neighbors
    n_classes = len(set(ranks))
    while True:
        keys = [(ranks[i], tuple(sorted((ranks[j], o) for j, o in nbrs[i]))) for i in range(len(ranks))]
        new = _rank_by_key(keys)
        n_new = len(set(new))
        if n_new == n_classes:
            return new
        ranks, n_classes = new, n_new


def _encode(mol: Molecule, inv: list[tuple], ranks: list[int]) -> tuple:
    by_rank = sorted(range(len(ranks)), key=ranks.__getitem__)
    atoms = tuple(inv[i] for i in by_rank)
    bonds = tuple(
        sorted((min(ranks[b.a], ranks[b.b]), max(ranks[b.a], ranks[b.b]), b.order) for b in mol.bonds)
    )
    return atoms, bonds


def canonical_ranks(mol: Molecule) -> list[int]:
    """Permutation-invariant atom ranks ``0..n-1``.

    Atoms are first partitioned by local invariants and refined through
    their neighbourhoods. Remaining ties are broken by individualizing a
    member of the lowest tied class and refining again; every choice is
    explored and the labelling with the smallest graph encoding is kept,
    so isomorphic inputs always receive equivalent labellings.
    """
    cached = mol._cache.get("ranks")
    if cached is not None:
        return list(cached)
    inv = atom_invariants(mol)
    start = refine(mol, _rank_by_key(inv))
    best: list = [None, None]
    leaves = 0

    def search(ranks: list[int]) -> None:
        nonlocal leaves
        if leaves >= MAX_LEAVES:
            return
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = [r for r, c in counts.items() if c > 1]
        if not tied:
            leaves += 1
            enc = _encode(mol, inv, ranks)
            if best[0] is None or enc < best[0]:
                best[0], best[1] = enc, ranks
            return
        r = min(tied)
        members = [i for i, x in enumerate(ranks) if x == r]
        for m in members:
            child = [x + 1 if (x == r and i != m) else x for i, x in enumerate(ranks)]
            search(refine(mol, child))

    search(start)
    ranks = best[1]
    mol._cache["ranks"] = tuple(ranks)
    return list(ranks)
