"""SMILES subset reader and canonical writer."""

from __future__ import annotations

from synplan.errors import ChemSyntaxError, UnsupportedFeature
from synplan.molgraph.canon import canonical_ranks
from synplan.molgraph.molecule import (
    AROMATIC,
    AROMATIC_ELEMENTS,
    DOUBLE,
    ORGANIC_SUBSET,
    SINGLE,
    TRIPLE,
    Atom,
    Bond,
    Molecule,
    default_hcount,
    ring_bonds,
)

BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}
_KNOWN_ELEMENTS = frozenset(
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr "
    "Rb Sr Y Zr Nb Mo Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba Pt Au Hg Tl Pb Bi".split()
)


def read_element(text: str, pos: int, bracket: bool) -> tuple[str, bool, int]:
    """Return ``(element, aromatic, next_pos)`` for an atom symbol at ``pos``."""
    two = text[pos : pos + 2]
    if two in ("Cl", "Br"):
        return two, False, pos + 2
    if bracket and len(two) == 2 and two[1].islower() and two in _KNOWN_ELEMENTS:
        raise UnsupportedFeature(f"element {two!r} is outside the supported subset ({text!r})")
    ch = text[pos]
    if ch in ORGANIC_SUBSET:
        return ch, False, pos + 1
    if ch in ("c", "n", "o", "s"):
        return ch.upper(), True, pos + 1
    if ch in ("b", "p"):
        raise UnsupportedFeature(f"aromatic {ch!r} is outside the supported subset ({text!r})")
    if ch == "*":
        raise UnsupportedFeature(f"wildcard atom in {text!r}")
    if bracket and ch.isupper():
        sym = ch + (text[pos + 1] if pos + 1 < len(text) and text[pos + 1].islower() else "")
        if sym in _KNOWN_ELEMENTS or ch in _KNOWN_ELEMENTS:
            raise UnsupportedFeature(f"element {sym!r} is outside the supported subset ({text!r})")
    raise ChemSyntaxError("unexpected character", text, pos)


def read_int(text: str, pos: int) -> tuple[int | None, int]:
    start = pos
    while pos < len(text) and text[pos].isdigit():
        pos += 1
    if pos == start:
        return None, pos
    return int(text[start:pos]), pos


def read_charge(text: str, pos: int) -> tuple[int, int]:
    if pos >= len(text) or text[pos] not in "+-":
        return 0, pos
    sign = 1 if text[pos] == "+" else -1
    pos += 1
    mag, pos = read_int(text, pos)
    if mag is not None:
        return sign * mag, pos
    mag = 1
    while pos < len(text) and text[pos] == ("+" if sign > 0 else "-"):
        mag += 1
        pos += 1
    return sign * mag, pos


def _parse_bracket(text: str, pos: int) -> tuple[dict, int]:
    # pos points just after '['
    if pos < len(text) and text[pos].isdigit():
        raise UnsupportedFeature(f"isotopes are not supported ({text!r})")
    element, aromatic, pos = read_element(text, pos, bracket=True)
    if pos < len(text) and text[pos] == "@":
        raise UnsupportedFeature(f"stereochemistry is not supported ({text!r})")
    hcount = 0
    if pos < len(text) and text[pos] == "H":
        n, pos = read_int(text, pos + 1)
        hcount = 1 if n is None else n
    charge, pos = read_charge(text, pos)
    map_index = None
    if pos < len(text) and text[pos] == ":":
        map_index, pos = read_int(text, pos + 1)
        if map_index is None or map_index <= 0:
            raise ChemSyntaxError("bad atom-map index", text, pos)
    if pos >= len(text) or text[pos] != "]":
        raise ChemSyntaxError("expected ']'", text, pos)
    spec = dict(element=element, aromatic=aromatic, charge=charge, hcount=hcount, map_index=map_index)
    return spec, pos + 1


def parse_smiles(text: str) -> Molecule:
    """Parse a single-fragment SMILES string from the supported subset."""
    if not text or not text.strip():
        raise ChemSyntaxError("empty SMILES", text, 0)
    text = text.strip()
    atoms: list[dict] = []
    bonds: list[list] = []  # [a, b, order or None]
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, int | None, int]] = {}
    prev: int | None = None
    pending: int | None = None
    pending_pos = -1
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == "(":
            if prev is None or pending is not None:
                raise ChemSyntaxError("branch without preceding atom", text, pos)
            branch_stack.append(prev)
            pos += 1
        elif ch == ")":
            if not branch_stack or pending is not None:
                raise ChemSyntaxError("unbalanced ')'", text, pos)
            prev = branch_stack.pop()
            pos += 1
        elif ch in BOND_SYMBOLS:
            if prev is None or pending is not None:
                raise ChemSyntaxError("misplaced bond symbol", text, pos)
            pending, pending_pos = BOND_SYMBOLS[ch], pos
            pos += 1
        elif ch in "/\\":
            raise UnsupportedFeature(f"directional bonds (stereo) are not supported ({text!r})")
        elif ch == ".":
            raise UnsupportedFeature(f"multi-fragment SMILES are not supported ({text!r})")
        elif ch.isdigit() or ch == "%":
            if prev is None:
                raise ChemSyntaxError("ring closure without atom", text, pos)
            if ch == "%":
                if pos + 2 >= n or not text[pos + 1 : pos + 3].isdigit():
                    raise ChemSyntaxError("bad %nn ring label", text, pos)
                label = int(text[pos + 1 : pos + 3])
                pos += 3
            else:
                label = int(ch)
                pos += 1
            if label in rings:
                other, order, opos = rings.pop(label)
                if other == prev:
                    raise ChemSyntaxError("ring closure to the same atom", text, pos - 1)
                if order is not None and pending is not None and order != pending:
                    raise ChemSyntaxError("conflicting ring-closure bond orders", text, pos - 1)
                bonds.append([other, prev, pending if pending is not None else order])
            else:
                rings[label] = (prev, pending, pos - 1)
            pending = None
        elif ch == "[":
            spec, pos = _parse_bracket(text, pos + 1)
            spec["bracket"] = True
            atoms.append(spec)
            idx = len(atoms) - 1
            if prev is not None:
                bonds.append([prev, idx, pending])
            prev, pending = idx, None
        else:
            element, aromatic, npos = read_element(text, pos, bracket=False)
            atoms.append(dict(element=element, aromatic=aromatic, charge=0, hcount=None, map_index=None, bracket=False))
            idx = len(atoms) - 1
            if prev is not None:
                bonds.append([prev, idx, pending])
            prev, pending = idx, None
            pos = npos
    if pending is not None:
        raise ChemSyntaxError("dangling bond", text, pending_pos)
    if branch_stack:
        raise ChemSyntaxError("unclosed branch", text, n)
    if rings:
        label, (_, _, opos) = next(iter(rings.items()))
        raise ChemSyntaxError(f"unclosed ring {label}", text, opos)
    if not atoms:
        raise ChemSyntaxError("no atoms", text, 0)
    seen = set()
    for a, b, _ in bonds:
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ChemSyntaxError("duplicate bond between the same atoms", text, -1)
        seen.add(key)
    for at in atoms:
        if at["aromatic"] and at["element"] not in AROMATIC_ELEMENTS:
            raise UnsupportedFeature(f"aromatic {at['element']} is not supported")
    return build_molecule(atoms, bonds)


def build_molecule(atoms: list[dict], bonds: list[list]) -> Molecule:
    """Resolve implicit bond orders and hydrogens, then validate."""
    implicit = [i for i, bd in enumerate(bonds) if bd[2] is None]
    if implicit:
        probe = Molecule(
            [Atom(a["element"]) for a in atoms],
            [Bond(a, b, SINGLE) for a, b, _ in bonds],
            validate=False,
        )
        in_ring = ring_bonds(probe)
        for i in implicit:
            a, b, _ = bonds[i]
            arom = atoms[a]["aromatic"] and atoms[b]["aromatic"] and (min(a, b), max(a, b)) in in_ring
            bonds[i][2] = AROMATIC if arom else SINGLE
    orders: list[list[int]] = [[] for _ in atoms]
    for a, b, o in bonds:
        orders[a].append(o)
        orders[b].append(o)
    final = []
    for i, at in enumerate(atoms):
        h = at["hcount"]
        if h is None:
            h = default_hcount(at["element"], at["aromatic"], orders[i])
        final.append(Atom(at["element"], at["charge"], at["aromatic"], h, at["map_index"]))
    return Molecule(final, [Bond(a, b, o) for a, b, o in bonds])


# ---------------------------------------------------------------------------
# writer
# ---------------------------------------------------------------------------


def atom_token(mol: Molecule, i: int) -> str:
    at = mol.atoms[i]
    sym = at.element.lower() if at.aromatic else at.element
    orders = [o for _, o in mol.neighbors[i]]
    plain = (
        at.charge == 0
        and at.map_index is None
        and at.element in ORGANIC_SUBSET
        and (not at.aromatic or at.element in AROMATIC_ELEMENTS)
        and at.hcount == default_hcount(at.element, at.aromatic, orders)
    )
    if plain:
        return sym
    out = ["[", sym]
    if at.hcount:
        out.append("H" if at.hcount == 1 else f"H{at.hcount}")
    if at.charge:
        sign = "+" if at.charge > 0 else "-"
        out.append(sign if abs(at.charge) == 1 else f"{sign}{abs(at.charge)}")
    if at.map_index is not None:
        out.append(f":{at.map_index}")
    out.append("]")
    return "".join(out)


def bond_token(mol: Molecule, i: int, j: int, order: int, in_ring: frozenset) -> str:
    both_arom = mol.atoms[i].aromatic and mol.atoms[j].aromatic
    if order == SINGLE:
        return "-" if both_arom else ""
    if order == DOUBLE:
        return "="
    if order == TRIPLE:
        return "#"
    return "" if both_arom and (min(i, j), max(i, j)) in in_ring else ":"


def write_smiles(mol: Molecule, ranks: list[int]) -> str:
    """Write SMILES visiting atoms in the order given by ``ranks``."""
    n = len(mol.atoms)
    in_ring = ring_bonds(mol)
    nbrs = [sorted(mol.neighbors[i], key=lambda x: ranks[x[0]]) for i in range(n)]
    start = min(range(n), key=ranks.__getitem__)

    # pass 1: DFS tree, ring closures opened at the earlier-visited atom
    visit_order = [-1] * n
    children: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    opens: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    closes: list[list[int]] = [[] for _ in range(n)]
    counter = 0
    stack = [(start, -1)]
    while stack:
        v, parent = stack.pop()
        if visit_order[v] != -1:
            continue
        visit_order[v] = counter
        counter += 1
        if parent >= 0:
            children[parent].append((v, mol.bond_order(parent, v)))
        for w, o in reversed(nbrs[v]):
            if visit_order[w] == -1:
                stack.append((w, v))
    # a non-tree edge joins two atoms where neither is the other's DFS parent
    parent_of = [-1] * n
    for v in range(n):
        for w, _ in children[v]:
            parent_of[w] = v
    for bd in mol.bonds:
        a, b = bd.a, bd.b
        if parent_of[a] == b or parent_of[b] == a:
            continue
        first, second = (a, b) if visit_order[a] < visit_order[b] else (b, a)
        opens[first].append((second, bd.order))
        closes[second].append(first)
    for v in range(n):
        opens[v].sort(key=lambda x: visit_order[x[0]])
        closes[v].sort(key=lambda x: visit_order[x])

    # pass 2: emit
    out: list[str] = []
    digit_of: dict[tuple[int, int], int] = {}
    free: list[int] = []
    next_digit = [1]

    def take_digit() -> int:
        if free:
            free.sort()
            return free.pop(0)
        d = next_digit[0]
        next_digit[0] += 1
        return d

    def label(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(v: int) -> None:
        out.append(atom_token(mol, v))
        for u in closes[v]:
            d = digit_of.pop((u, v))
            out.append(label(d))
            free.append(d)
        for w, o in opens[v]:
            d = take_digit()
            digit_of[(v, w)] = d
            out.append(bond_token(mol, v, w, o, in_ring) + label(d))
        kids = children[v]
        for idx, (w, o) in enumerate(kids):
            last = idx == len(kids) - 1
            if not last:
                out.append("(")
            out.append(bond_token(mol, v, w, o, in_ring))
            emit(w)
            if not last:
                out.append(")")

    emit(start)
    return "".join(out)


def write_canonical_smiles(mol: Molecule) -> str:
    cached = mol._cache.get("smiles")
    if cached is None:
        cached = write_smiles(mol, canonical_ranks(mol))
        mol._cache["smiles"] = cached
    return cached
