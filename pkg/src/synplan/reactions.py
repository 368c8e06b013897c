"""Reaction templates: pattern grammar, substructure matching and graph rewriting.

Pattern grammar (a strict SMARTS subset)::

    atom      := organic-symbol | '[' symbol primitives* (':' map)? ']'
    symbol    := B C N O P S F Cl Br I | c n o s | '#' atomic-number
    primitive := 'H' n? | 'D' n | '+' n? | '-' n? | ';' | '&'
    bond      := '-' | '=' | '#' | ':' | '~'   (omitted: single or aromatic)

A template is ``reactant ('.' reactant)? '>>' product``. Lowercase symbols
match aromatic atoms, uppercase aliphatic ones, ``#n`` either.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from synplan.errors import (
    ArityError,
    ChemSyntaxError,
    FormatError,
    MappingError,
    NoMatch,
    UnsupportedFeature,
    ValenceError,
)
from synplan.molgraph import AROMATIC, DOUBLE, SINGLE, TRIPLE, Atom, Bond, Molecule, canonical_ranks, parse_smiles
from synplan.molgraph.molecule import ATOMIC_NUMBER, bond_valence, default_hcount
from synplan.molgraph.smiles import read_charge, read_element, read_int

log = logging.getLogger(__name__)

ANY_BOND = 0
SINGLE_OR_AROMATIC = -1
_PATTERN_BONDS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC, "~": ANY_BOND}
_ELEMENT_BY_Z = {z: el for el, z in ATOMIC_NUMBER.items()}


@dataclass(frozen=True, slots=True)
class PatternAtom:
    element: str
    aromatic: bool | None = None  # None: either
    charge: int | None = None
    degree: int | None = None
    hcount: int | None = None
    map_index: int | None = None

    def accepts(self, atom: Atom, degree: int) -> bool:
        return (
            atom.element == self.element
            and (self.aromatic is None or atom.aromatic == self.aromatic)
            and (self.charge is None or atom.charge == self.charge)
            and (self.degree is None or degree == self.degree)
            and (self.hcount is None or atom.hcount == self.hcount)
        )


def bond_accepts(pattern_order: int, order: int) -> bool:
    if pattern_order == ANY_BOND:
        return True
    if pattern_order == SINGLE_OR_AROMATIC:
        return order in (SINGLE, AROMATIC)
    return pattern_order == order


@dataclass(frozen=True)
class Pattern:
    atoms: tuple[PatternAtom, ...]
    bonds: tuple[tuple[int, int, int], ...]
    text: str = ""
    neighbors: tuple = field(init=False, repr=False, compare=False)
    search_order: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nbrs: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for a, b, o in self.bonds:
            nbrs[a].append((b, o))
            nbrs[b].append((a, o))
        object.__setattr__(self, "neighbors", tuple(tuple(x) for x in nbrs))
        # BFS order so every atom after the first has an already-placed neighbour
        order, seen = [0], {0}
        k = 0
        while k < len(order):
            for j, _ in nbrs[order[k]]:
                if j not in seen:
                    seen.add(j)
                    order.append(j)
            k += 1
        object.__setattr__(self, "search_order", tuple(order))

    @property
    def is_connected(self) -> bool:
        return len(self.search_order) == len(self.atoms)

    @property
    def map_indices(self) -> dict[int, int]:
        return {a.map_index: i for i, a in enumerate(self.atoms) if a.map_index is not None}

    def bond_between(self, i: int, j: int) -> int | None:
        for k, o in self.neighbors[i]:
            if k == j:
                return o
        return None


def _parse_pattern_bracket(text: str, pos: int) -> tuple[PatternAtom, int]:
    if text[pos] == "#":
        z, pos = read_int(text, pos + 1)
        if z not in _ELEMENT_BY_Z:
            raise ChemSyntaxError("unsupported atomic number", text, pos)
        element, aromatic = _ELEMENT_BY_Z[z], None
    else:
        element, aromatic, pos = read_element(text, pos, bracket=True)
    charge = degree = hcount = map_index = None
    while pos < len(text) and text[pos] != "]":
        ch = text[pos]
        if ch in ";&":
            pos += 1
        elif ch == "H":
            n, pos = read_int(text, pos + 1)
            hcount = 1 if n is None else n
        elif ch == "D":
            degree, pos = read_int(text, pos + 1)
            if degree is None:
                raise ChemSyntaxError("'D' needs a count", text, pos)
        elif ch in "+-":
            charge, pos = read_charge(text, pos)
        elif ch == ":":
            map_index, pos = read_int(text, pos + 1)
            if not map_index:
                raise ChemSyntaxError("bad atom-map index", text, pos)
        else:
            raise ChemSyntaxError("unsupported pattern primitive", text, pos)
    if pos >= len(text):
        raise ChemSyntaxError("expected ']'", text, pos)
    return PatternAtom(element, aromatic, charge, degree, hcount, map_index), pos + 1


def parse_pattern(text: str) -> Pattern:
    text = text.strip()
    if not text:
        raise ChemSyntaxError("empty pattern", text, 0)
    atoms: list[PatternAtom] = []
    bonds: list[tuple[int, int, int]] = []
    stack: list[int] = []
    rings: dict[int, tuple[int, int | None]] = {}
    prev = None
    pending = None
    pos = 0
    while pos < len(text):
        ch = text[pos]
        if ch == "(":
            if prev is None:
                raise ChemSyntaxError("branch without atom", text, pos)
            stack.append(prev)
            pos += 1
        elif ch == ")":
            if not stack:
                raise ChemSyntaxError("unbalanced ')'", text, pos)
            prev = stack.pop()
            pos += 1
        elif ch in _PATTERN_BONDS:
            if prev is None or pending is not None:
                raise ChemSyntaxError("misplaced bond", text, pos)
            pending = _PATTERN_BONDS[ch]
            pos += 1
        elif ch.isdigit():
            if prev is None:
                raise ChemSyntaxError("ring closure without atom", text, pos)
            label = int(ch)
            if label in rings:
                other, order = rings.pop(label)
                order = pending if pending is not None else order
                bonds.append((other, prev, SINGLE_OR_AROMATIC if order is None else order))
            else:
                rings[label] = (prev, pending)
            pending = None
            pos += 1
        elif ch == "[":
            atom, pos = _parse_pattern_bracket(text, pos + 1)
            atoms.append(atom)
            if prev is not None:
                bonds.append((prev, len(atoms) - 1, SINGLE_OR_AROMATIC if pending is None else pending))
            prev, pending = len(atoms) - 1, None
        elif ch == ".":
            raise ArityError(f"'.' inside a single pattern: {text!r}")
        else:
            element, aromatic, pos = read_element(text, pos, bracket=False)
            atoms.append(PatternAtom(element, aromatic))
            if prev is not None:
                bonds.append((prev, len(atoms) - 1, SINGLE_OR_AROMATIC if pending is None else pending))
            prev, pending = len(atoms) - 1, None
    if pending is not None or stack or rings:
        raise ChemSyntaxError("incomplete pattern", text, len(text))
    pat = Pattern(tuple(atoms), tuple(bonds), text)
    maps = [a.map_index for a in atoms if a.map_index is not None]
    if len(maps) != len(set(maps)):
        raise MappingError(f"duplicate map index within pattern {text!r}")
    return pat


@dataclass(frozen=True)
class ReactionTemplate:
    id: int
    name: str
    reactant_patterns: tuple[Pattern, ...]
    product_pattern: Pattern
    text: str
    tags: tuple[str, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.reactant_patterns)

    @property
    def is_bimolecular(self) -> bool:
        return self.arity == 2


def parse_template(text: str, id: int = 0, name: str = "", tags: Sequence[str] = ()) -> ReactionTemplate:
    parts = text.split(">>")
    if len(parts) != 2:
        raise ChemSyntaxError("template needs exactly one '>>'", text, text.find(">>"))
    lhs, rhs = parts[0].strip(), parts[1].strip()
    reactant_texts = [t for t in lhs.split(".")]
    product_texts = [t for t in rhs.split(".")]
    if any(not t.strip() for t in reactant_texts + product_texts):
        raise ChemSyntaxError("empty reactant or product", text, -1)
    if len(reactant_texts) > 2:
        raise ArityError(f"{len(reactant_texts)} reactants; only uni- and bi-molecular templates are allowed")
    if len(product_texts) != 1:
        raise ArityError(f"{len(product_texts)} products; exactly one is required")
    reactants = tuple(parse_pattern(t) for t in reactant_texts)
    product = parse_pattern(product_texts[0])
    for p in reactants + (product,):
        if not p.is_connected:
            raise ChemSyntaxError(f"pattern {p.text!r} is not connected", text, -1)
    seen: dict[int, int] = {}
    for r, p in enumerate(reactants):
        for m in p.map_indices:
            if m in seen:
                raise MappingError(f"map index {m} appears in more than one reactant")
            seen[m] = r
    for m in product.map_indices:
        if m not in seen:
            raise MappingError(f"product map index {m} is absent from the reactants")
    return ReactionTemplate(id, name, reactants, product, text.strip(), tuple(tags))


def load_templates(path: str | Path) -> list[ReactionTemplate]:
    """Read ``name<TAB>template[<TAB>tag,tag]`` lines.

    A ``#`` at the start of a line, or after whitespace, starts a comment;
    ``#`` inside a pattern (triple bond, ``[#6]``) is left alone.
    """
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.lstrip().startswith("#"):
            continue
        line = re.sub(r"[ \t]+#.*$", "", line)
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 2:
            raise FormatError(f"{path}:{lineno}: expected 'name<TAB>template'")
        tags = tuple(t.strip() for t in cols[2].split(",") if t.strip()) if len(cols) > 2 else ()
        try:
            out.append(parse_template(cols[1], id=len(out), name=cols[0].strip(), tags=tags))
        except (ChemSyntaxError, MappingError, ArityError) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from exc
    return out


def load_blocks(path: str | Path) -> list[Molecule]:
    """One SMILES per line, optionally followed by whitespace and a name; ``#`` lines skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        try:
            out.append(parse_smiles(fields[0]))
        except (ChemSyntaxError, ValenceError, UnsupportedFeature) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def templates_hash(templates: Sequence[ReactionTemplate]) -> str:
    h = hashlib.sha256()
    for t in templates:
        h.update(f"{t.id}\t{t.name}\t{t.text}\n".encode())
    return h.hexdigest()


def blocks_hash(blocks: Sequence[Molecule]) -> str:
    h = hashlib.sha256()
    for m in blocks:
        h.update(m.smiles.encode() + b"\n")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


def match_pattern(p: Pattern, mol: Molecule, limit: int | None = None) -> list[tuple[int, ...]]:
    """All label-compatible subgraph embeddings of ``p`` in ``mol``.

    Each embedding is a tuple mapping pattern atom ``i`` to molecule atom
    ``emb[i]``. Candidates are tried in canonical-rank order, so the output
    order depends only on the molecule's graph, not its atom numbering.
    """
    n_p = len(p.atoms)
    if n_p and not p.is_connected:
        raise ValueError(f"pattern {p.text!r} is not connected")
    if n_p == 0 or n_p > len(mol.atoms):
        return []
    ranks = canonical_ranks(mol)
    degrees = [len(x) for x in mol.neighbors]
    order = p.search_order
    # for each placed pattern atom, the earlier-placed neighbours it must bond to
    pos_of = {a: k for k, a in enumerate(order)}
    back = [[(j, o) for j, o in p.neighbors[a] if pos_of[j] < pos_of[a]] for a in order]
    mapping = [-1] * n_p
    used = [False] * len(mol.atoms)
    results: list[tuple[int, ...]] = []
    first_candidates = sorted(range(len(mol.atoms)), key=ranks.__getitem__)
    sorted_nbrs = [sorted(nb, key=lambda x: ranks[x[0]]) for nb in mol.neighbors]

    def extend(k: int) -> bool:
        if k == n_p:
            results.append(tuple(mapping))
            return limit is not None and len(results) >= limit
        a = order[k]
        patom = p.atoms[a]
        if back[k]:
            anchor, _ = back[k][0]
            cands = [j for j, _ in sorted_nbrs[mapping[anchor]]]
        else:
            cands = first_candidates
        for c in cands:
            if used[c] or not patom.accepts(mol.atoms[c], degrees[c]):
                continue
            ok = True
            for j, po in back[k]:
                mo = mol.bond_order(mapping[j], c)
                if mo is None or not bond_accepts(po, mo):
                    ok = False
                    break
            if not ok:
                continue
            mapping[a] = c
            used[c] = True
            stop = extend(k + 1)
            used[c] = False
            mapping[a] = -1
            if stop:
                return True
        return False

    extend(0)
    return results


def has_match(p: Pattern, mol: Molecule) -> bool:
    return bool(match_pattern(p, mol, limit=1))


# ---------------------------------------------------------------------------
# rewriting
# ---------------------------------------------------------------------------


def _rewrite(t: ReactionTemplate, reactants: Sequence[Molecule], embs: Sequence[tuple[int, ...]]) -> Molecule | None:
    product = t.product_pattern
    prod_maps = product.map_indices
    # (reactant, atom) -> pattern atom index, for matched atoms
    matched: dict[tuple[int, int], int] = {}
    map_src: dict[int, tuple[int, int]] = {}
    for r, (pat, emb) in enumerate(zip(t.reactant_patterns, embs)):
        for pi, mi in enumerate(emb):
            matched[(r, mi)] = pi
            m = pat.atoms[pi].map_index
            if m is not None:
                map_src[m] = (r, mi)
    kept = {src for m, src in map_src.items() if m in prod_maps}
    out_atoms: list[dict] = []
    index: dict[tuple[int, int], int] = {}
    for r, mol in enumerate(reactants):
        for i, atom in enumerate(mol.atoms):
            key = (r, i)
            if key in matched and key not in kept:
                continue
            index[key] = len(out_atoms)
            out_atoms.append(dict(src=key, atom=atom))
    # product-pattern atom -> output atom
    prod_index: list[int] = []
    for pa in product.atoms:
        if pa.map_index is not None:
            prod_index.append(index[map_src[pa.map_index]])
        else:
            prod_index.append(len(out_atoms))
            out_atoms.append(dict(src=None, atom=None, pattern=pa))
    bonds: dict[tuple[int, int], int] = {}
    for r, mol in enumerate(reactants):
        pat = t.reactant_patterns[r]
        for bd in mol.bonds:
            ka, kb = (r, bd.a), (r, bd.b)
            if ka not in index or kb not in index:
                continue
            if ka in matched and kb in matched and pat.bond_between(matched[ka], matched[kb]) is not None:
                continue  # pattern bond: the product pattern decides
            a, b = index[ka], index[kb]
            bonds[(min(a, b), max(a, b))] = bd.order
    for pa_i, pb_i, po in product.bonds:
        a, b = prod_index[pa_i], prod_index[pb_i]
        order = po
        if po in (ANY_BOND, SINGLE_OR_AROMATIC):
            order = SINGLE
            sa, sb = out_atoms[a]["src"], out_atoms[b]["src"]
            if sa is not None and sb is not None and sa[0] == sb[0]:
                prev = reactants[sa[0]].bond_order(sa[1], sb[1])
                if prev is not None:
                    order = prev
        bonds[(min(a, b), max(a, b))] = order

    orders: list[list[int]] = [[] for _ in out_atoms]
    for (a, b), o in bonds.items():
        orders[a].append(o)
        orders[b].append(o)

    prod_pattern_of = {oi: product.atoms[k] for k, oi in enumerate(prod_index)}
    final: list[Atom] = []
    for oi, rec in enumerate(out_atoms):
        if rec["src"] is None:
            pa = rec["pattern"]
            aromatic = bool(pa.aromatic)
            h = pa.hcount if pa.hcount is not None else default_hcount(pa.element, aromatic, orders[oi])
            final.append(Atom(pa.element, pa.charge or 0, aromatic, h))
            continue
        atom: Atom = rec["atom"]
        pa = prod_pattern_of.get(oi)
        if pa is None:
            final.append(Atom(atom.element, atom.charge, atom.aromatic, atom.hcount))
            continue
        r, mi = rec["src"]
        rpa = t.reactant_patterns[r].atoms[matched[(r, mi)]]
        aromatic = atom.aromatic
        if pa.aromatic is not None and pa.aromatic != rpa.aromatic:
            aromatic = pa.aromatic
        charge = atom.charge if pa.charge is None else pa.charge
        if pa.hcount is not None:
            h = pa.hcount
        else:
            old = bond_valence(atom.element, (o for _, o in reactants[r].neighbors[mi]))
            new = bond_valence(atom.element, orders[oi])
            h = atom.hcount - (new - old)
            if h < 0:
                return None
        final.append(Atom(atom.element, charge, aromatic, h))
    try:
        return Molecule(final, [Bond(a, b, o) for (a, b), o in bonds.items()])
    except ValenceError:
        return None


def apply_template(t: ReactionTemplate, reactants: Sequence[Molecule]) -> list[Molecule]:
    """Apply ``t`` over every combination of reactant embeddings.

    Returns the distinct single-component, valence-valid products sorted by
    canonical SMILES. Raises ``NoMatch`` when some reactant has no embedding.
    """
    if len(reactants) != t.arity:
        raise ArityError(f"template {t.name or t.id} takes {t.arity} reactant(s), got {len(reactants)}")
    embs = []
    for pos, (pat, mol) in enumerate(zip(t.reactant_patterns, reactants)):
        e = match_pattern(pat, mol)
        if not e:
            raise NoMatch(f"reactant {pos + 1} ({mol.smiles}) does not match template {t.name or t.id}")
        embs.append(e)
    products: dict[str, Molecule] = {}
    for combo in itertools.product(*embs):
        m = _rewrite(t, reactants, combo)
        if m is not None:
            products.setdefault(m.smiles, m)
    return [products[k] for k in sorted(products)]


# ---------------------------------------------------------------------------
# compatibility masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompatibilityMasks:
    """``position[t][p]`` is a bool vector over blocks: block matches template
    ``t`` at reactant position ``p``."""

    position: tuple[tuple[np.ndarray, ...], ...]
    n_blocks: int

    @property
    def n_templates(self) -> int:
        return len(self.position)

    def block_templates(self) -> np.ndarray:
        """``(n_blocks, n_templates)`` bool: block matches any position of the template."""
        out = np.zeros((self.n_blocks, self.n_templates), dtype=bool)
        for t, per_pos in enumerate(self.position):
            for v in per_pos:
                out[:, t] |= v
        return out

    def admitted(self) -> np.ndarray:
        return np.flatnonzero(self.block_templates().any(axis=1))

    def first_reactant_blocks(self) -> np.ndarray:
        out = np.zeros(self.n_blocks, dtype=bool)
        for per_pos in self.position:
            out |= per_pos[0]
        return out

    def restrict(self, keep: Sequence[int]) -> "CompatibilityMasks":
        keep = np.asarray(keep, dtype=np.int64)
        pos = tuple(tuple(v[keep].copy() for v in per_pos) for per_pos in self.position)
        return CompatibilityMasks(pos, len(keep))

    def to_json(self, templates_digest: str, blocks_digest: str) -> str:
        return json.dumps(
            {
                "version": 1,
                "templates_hash": templates_digest,
                "blocks_hash": blocks_digest,
                "n_blocks": self.n_blocks,
                "position": [[np.flatnonzero(v).tolist() for v in per_pos] for per_pos in self.position],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str, templates_digest: str, blocks_digest: str) -> "CompatibilityMasks":
        try:
            data = json.loads(text)
            if data["version"] != 1:
                raise FormatError(f"unsupported mask cache version {data['version']}")
            if data["templates_hash"] != templates_digest or data["blocks_hash"] != blocks_digest:
                raise FormatError("mask cache keyed to different templates or blocks")
            n = data["n_blocks"]
            pos = []
            for per_pos in data["position"]:
                row = []
                for ids in per_pos:
                    v = np.zeros(n, dtype=bool)
                    v[ids] = True
                    row.append(v)
                pos.append(tuple(row))
            return cls(tuple(pos), n)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"corrupt mask cache: {exc}") from exc


def build_compatibility_masks(
    templates: Sequence[ReactionTemplate], blocks: Sequence[Molecule]
) -> tuple[CompatibilityMasks, list[int]]:
    """Match every block against every template position.

    Returns the masks (indexed like ``blocks``) and the sorted indices of
    admitted blocks, i.e. those matching at least one template position.
    """
    position = []
    for t in templates:
        position.append(
            tuple(np.array([has_match(p, m) for m in blocks], dtype=bool) for p in t.reactant_patterns)
        )
    masks = CompatibilityMasks(tuple(position), len(blocks))
    admitted = masks.admitted().tolist()
    log.debug("admitted %d of %d building blocks", len(admitted), len(blocks))
    return masks, admitted


def load_or_build_masks(
    templates: Sequence[ReactionTemplate], blocks: Sequence[Molecule], cache: str | Path | None = None
) -> tuple[CompatibilityMasks, list[int]]:
    th, bh = templates_hash(templates), blocks_hash(blocks)
    if cache is not None and Path(cache).exists():
        try:
            masks = CompatibilityMasks.from_json(Path(cache).read_text(), th, bh)
            return masks, masks.admitted().tolist()
        except FormatError as exc:
            log.warning("ignoring mask cache %s: %s", cache, exc)
    masks, admitted = build_compatibility_masks(templates, blocks)
    if cache is not None:
        Path(cache).write_text(masks.to_json(th, bh))
    return masks, admitted
