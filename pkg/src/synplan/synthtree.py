"""Synthetic trees and the bottom-up construction environment.

A tree is grown one reaction at a time. The state is the set of current
root molecules (at most two) plus the most recently produced one; actions
are ``Add``, ``Expand``, ``Merge`` and ``End``. Transitions are pure: every
call returns a new :class:`SyntheticTree`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from synplan.errors import ChemSyntaxError, FormatError, InvalidAction, NoMatch, ReplayDivergence, ValenceError
from synplan.molgraph import Molecule, parse_smiles
from synplan.reactions import (
    CompatibilityMasks,
    ReactionTemplate,
    apply_template,
    blocks_hash,
    build_compatibility_masks,
    has_match,
    templates_hash,
)

log = logging.getLogger(__name__)

ADD, EXPAND, MERGE, END = 0, 1, 2, 3
ACTION_NAMES = ("Add", "Expand", "Merge", "End")
TREE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Action:
    """One logged MDP step.

    ``rt1`` is a building-block id for ``Add`` and ``None`` (the most recent
    root) otherwise. ``product`` records which canonical product was kept
    when the template yielded several; replay checks it.
    """

    act: int
    rt1: int | None = None
    rxn: int | None = None
    rt2: int | None = None
    product: str | None = None

    def to_dict(self) -> dict:
        return {"act": self.act, "rt1": self.rt1, "rxn": self.rxn, "rt2": self.rt2, "product": self.product}

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(d["act"], d.get("rt1"), d.get("rxn"), d.get("rt2"), d.get("product"))


@dataclass(frozen=True)
class MolNode:
    smiles: str
    role: str  # building_block | intermediate | root
    block: int | None = None
    mol: Molecule | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ReactionNode:
    template: int
    children: tuple[int, ...]
    parent: int


@dataclass(frozen=True)
class MDPState:
    roots: tuple[int, ...]
    most_recent: int | None
    t: int

    @property
    def n_roots(self) -> int:
        return len(self.roots)


@dataclass(frozen=True)
class SyntheticTree:
    molecules: tuple[MolNode, ...] = ()
    reactions: tuple[ReactionNode, ...] = ()
    action_log: tuple[Action, ...] = ()
    roots: tuple[int, ...] = ()  # most recent first
    t: int = 0
    done: bool = False

    @property
    def state(self) -> MDPState:
        return MDPState(self.roots, self.roots[0] if self.roots else None, self.t)

    @property
    def most_recent(self) -> MolNode | None:
        return self.molecules[self.roots[0]] if self.roots else None

    @property
    def root(self) -> MolNode | None:
        """Final product of a completed tree."""
        return self.molecules[self.roots[0]] if self.done else None

    @property
    def product_smiles(self) -> str | None:
        return self.molecules[self.roots[0]].smiles if self.roots else None

    def molecule(self, node: int) -> Molecule:
        n = self.molecules[node]
        return n.mol if n.mol is not None else parse_smiles(n.smiles)

    @property
    def leaves(self) -> list[MolNode]:
        return [m for m in self.molecules if m.role == "building_block"]

    def depth(self) -> int:
        """Longest chain of reactions from a leaf to the root."""
        if not self.reactions:
            return 0
        made_by = {r.parent: r for r in self.reactions}

        def d(node: int) -> int:
            r = made_by.get(node)
            return 0 if r is None else 1 + max(d(c) for c in r.children)

        return max(d(r) for r in self.roots)


def new_tree() -> tuple[SyntheticTree, MDPState]:
    tree = SyntheticTree()
    return tree, tree.state


class SynthesisEnv:
    """Templates, admitted building blocks and their compatibility masks.

    Building-block ids are positions in ``blocks``; only blocks matching at
    least one template position are admitted.
    """

    def __init__(
        self,
        templates: Sequence[ReactionTemplate],
        blocks: Sequence[Molecule],
        masks: CompatibilityMasks | None = None,
        t_max: int = 8,
    ):
        if masks is None:
            masks, admitted = build_compatibility_masks(templates, blocks)
            blocks = [blocks[i] for i in admitted]
            masks = masks.restrict(admitted)
        if masks.n_blocks != len(blocks) or masks.n_templates != len(templates):
            raise ValueError("masks do not match templates/blocks")
        self.templates = tuple(templates)
        self.blocks = tuple(blocks)
        self.masks = masks
        self.t_max = t_max
        self.block_ids = {m.smiles: i for i, m in enumerate(self.blocks)}
        self.first_reactant_mask = masks.first_reactant_blocks()
        self.templates_hash = templates_hash(self.templates)
        self.blocks_hash = blocks_hash(self.blocks)
        self._rt2_available = np.array(
            [t.arity == 1 or bool(masks.position[k][1].any()) for k, t in enumerate(self.templates)]
        )

    @property
    def n_templates(self) -> int:
        return len(self.templates)

    def with_t_max(self, t_max: int) -> "SynthesisEnv":
        if t_max == self.t_max:
            return self
        return SynthesisEnv(self.templates, self.blocks, self.masks, t_max)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def position_matches(self, mol: Molecule) -> tuple[tuple[bool, ...], ...]:
        """Per template, whether ``mol`` matches each reactant position (cached on the molecule)."""
        key = ("tmatch", self.templates_hash)
        hit = mol._cache.get(key)
        if hit is None:
            hit = tuple(tuple(has_match(p, mol) for p in t.reactant_patterns) for t in self.templates)
            mol._cache[key] = hit
        return hit

    def valid_templates(self, rt1: Molecule, other: Molecule | None = None) -> np.ndarray:
        """Templates usable with ``rt1`` as first reactant.

        With ``other`` given (Merge), only bi-molecular templates that the two
        roots satisfy in either order are kept.
        """
        pm = self.position_matches(rt1)
        out = np.zeros(self.n_templates, dtype=bool)
        if other is None:
            for k, t in enumerate(self.templates):
                out[k] = pm[k][0] and self._rt2_available[k]
            return out
        po = self.position_matches(other)
        for k, t in enumerate(self.templates):
            if t.arity == 2:
                out[k] = (pm[k][0] and po[k][1]) or (po[k][0] and pm[k][1])
        return out

    def valid_action_types(self, tree: SyntheticTree) -> set[int]:
        if tree.done:
            return set()
        n = len(tree.roots)
        if tree.t >= self.t_max:
            return {END} if n == 1 else set()
        out = set()
        if n < 2:
            out.add(ADD)
        if n >= 1 and self.valid_templates(tree.molecule(tree.roots[0])).any():
            out.add(EXPAND)
        if n == 2 and self.valid_templates(tree.molecule(tree.roots[0]), tree.molecule(tree.roots[1])).any():
            out.add(MERGE)
        if n == 1 and tree.t >= 1:
            out.add(END)
        return out

    def action_mask(self, tree: SyntheticTree) -> np.ndarray:
        m = np.zeros(4, dtype=bool)
        for a in self.valid_action_types(tree):
            m[a] = True
        return m

    def rt2_candidates(self, template: int) -> np.ndarray:
        return self.masks.position[template][1]

    # -- transitions -------------------------------------------------------

    def products(self, tree: SyntheticTree, action: Action) -> tuple[list[Molecule], tuple, tuple[int, ...]]:
        """Validate ``action`` against the masks and run its template.

        Returns ``(products, reactant_refs, order)`` where each reactant ref is
        ``("block", id)`` or ``("root", node)``.
        """
        valid = self.valid_action_types(tree)
        if action.act not in valid:
            raise InvalidAction(f"{ACTION_NAMES[action.act]} is not valid here (valid: {sorted(valid)})")
        if action.act == END:
            return [], (), ()
        if action.rxn is None or not 0 <= action.rxn < self.n_templates:
            raise InvalidAction(f"template id {action.rxn} out of range")
        t = self.templates[action.rxn]
        if action.act == ADD:
            if action.rt1 is None or not 0 <= action.rt1 < self.n_blocks:
                raise InvalidAction(f"building block id {action.rt1} out of range")
            rt1_ref, rt1 = ("block", action.rt1), self.blocks[action.rt1]
        else:
            if action.rt1 is not None:
                raise InvalidAction("Expand/Merge take the most recent root as first reactant")
            rt1_ref, rt1 = ("root", tree.roots[0]), tree.molecule(tree.roots[0])
        if action.act == MERGE:
            other_ref, other = ("root", tree.roots[1]), tree.molecule(tree.roots[1])
            if not self.valid_templates(rt1, other)[action.rxn]:
                raise InvalidAction(f"template {action.rxn} cannot merge the two roots")
            if action.rt2 is not None:
                raise InvalidAction("Merge takes the other root as second reactant")
            pm = self.position_matches(rt1)[action.rxn]
            po = self.position_matches(other)[action.rxn]
            swap_ok = po[0] and pm[1]
            if pm[0] and po[1]:
                prods = apply_template(t, [rt1, other])
                if prods or not swap_ok:
                    return prods, (rt1_ref, other_ref), (0, 1)
            return apply_template(t, [other, rt1]), (other_ref, rt1_ref), (1, 0)
        if not self.valid_templates(rt1)[action.rxn]:
            raise InvalidAction(f"template {action.rxn} does not accept {rt1.smiles} as first reactant")
        if t.arity == 1:
            if action.rt2 is not None:
                raise InvalidAction("uni-molecular template given a second reactant")
            return apply_template(t, [rt1]), (rt1_ref,), (0,)
        if action.rt2 is None or not 0 <= action.rt2 < self.n_blocks:
            raise InvalidAction(f"second reactant id {action.rt2} out of range")
        if not self.masks.position[action.rxn][1][action.rt2]:
            raise InvalidAction(f"block {action.rt2} does not match template {action.rxn} position 2")
        return apply_template(t, [rt1, self.blocks[action.rt2]]), (rt1_ref, ("block", action.rt2)), (0, 1)

    def apply_action(
        self,
        tree: SyntheticTree,
        action: Action,
        select: Callable[[list[Molecule]], int] | None = None,
    ) -> tuple[SyntheticTree, MDPState]:
        """Deterministic transition.

        When the template yields several products, ``action.product`` picks
        one by SMILES; otherwise ``select`` (default: first) chooses and the
        choice is written into the logged action.
        """
        if action.act == END:
            self.products(tree, action)
            mols = list(tree.molecules)
            r = tree.roots[0]
            mols[r] = replace(mols[r], role="root")
            logged = Action(END)
            new = replace(tree, molecules=tuple(mols), action_log=tree.action_log + (logged,), done=True)
            return new, new.state
        prods, refs, _ = self.products(tree, action)
        if not prods:
            raise NoMatch(f"template {action.rxn} produced no valid product")
        if action.product is not None:
            chosen = next((p for p in prods if p.smiles == action.product), None)
            if chosen is None:
                raise InvalidAction(f"product {action.product} not among {[p.smiles for p in prods]}")
        else:
            chosen = prods[select(prods) if select is not None and len(prods) > 1 else 0]
        mols = list(tree.molecules)
        children = []
        for kind, ref in refs:
            if kind == "block":
                mols.append(MolNode(self.blocks[ref].smiles, "building_block", ref, self.blocks[ref]))
                children.append(len(mols) - 1)
            else:
                children.append(ref)
        mols.append(MolNode(chosen.smiles, "intermediate", None, chosen))
        product_node = len(mols) - 1
        rxn = ReactionNode(action.rxn, tuple(children), product_node)
        consumed = {ref for kind, ref in refs if kind == "root"}
        roots = (product_node,) + tuple(r for r in tree.roots if r not in consumed)
        logged = replace(action, product=chosen.smiles)
        new = SyntheticTree(
            tuple(mols), tree.reactions + (rxn,), tree.action_log + (logged,), roots, tree.t + 1, False
        )
        return new, new.state

    def replay(self, action_log: Iterable[Action]) -> SyntheticTree:
        tree = SyntheticTree()
        for step, a in enumerate(action_log):
            try:
                tree, _ = self.apply_action(tree, a)
            except (InvalidAction, NoMatch, IndexError, ValueError) as exc:
                raise ReplayDivergence(f"step {step}: {exc}") from exc
        return tree


def check_tree(tree: SyntheticTree, env: SynthesisEnv) -> None:
    """Assert the structural invariants of a (possibly partial) tree."""
    produced = {}
    for k, r in enumerate(tree.reactions):
        if not 1 <= len(r.children) <= 2:
            raise AssertionError(f"reaction {k} has {len(r.children)} reactants")
        if r.parent in produced:
            raise AssertionError(f"molecule {r.parent} produced twice")
        produced[r.parent] = k
    consumed = [c for r in tree.reactions for c in r.children]
    if len(consumed) != len(set(consumed)):
        raise AssertionError("a molecule is consumed by two reactions")
    for i, m in enumerate(tree.molecules):
        if m.role == "building_block":
            if m.block is None or env.blocks[m.block].smiles != m.smiles or i in produced:
                raise AssertionError(f"leaf {m.smiles} is not an admitted building block")
        elif i not in produced:
            raise AssertionError(f"non-leaf {m.smiles} has no producing reaction")
    if not len(tree.roots) <= 2:
        raise AssertionError("more than two roots")
    if tree.done and len(tree.roots) != 1:
        raise AssertionError("completed tree must have exactly one root")
    roots = set(range(len(tree.molecules))) - set(consumed)
    if roots != set(tree.roots):
        raise AssertionError(f"root bookkeeping mismatch: {roots} vs {set(tree.roots)}")


# -- serialization ---------------------------------------------------------


def tree_to_dict(tree: SyntheticTree) -> dict:
    return {
        "version": TREE_FORMAT_VERSION,
        "nodes": [{"smiles": m.smiles, "role": m.role, "block": m.block} for m in tree.molecules],
        "reactions": [{"template": r.template, "children": list(r.children), "parent": r.parent} for r in tree.reactions],
        "action_log": [a.to_dict() for a in tree.action_log],
        "roots": list(tree.roots),
        "t": tree.t,
        "done": tree.done,
    }


def serialize(tree: SyntheticTree) -> str:
    return json.dumps(tree_to_dict(tree), separators=(",", ":"))


def tree_from_dict(d: dict) -> SyntheticTree:
    if not isinstance(d, dict) or d.get("version") != TREE_FORMAT_VERSION:
        raise FormatError(f"unsupported tree format version {d.get('version') if isinstance(d, dict) else d!r}")
    try:
        mols = []
        for n in d["nodes"]:
            mol = parse_smiles(n["smiles"])
            mols.append(MolNode(n["smiles"], n["role"], n["block"], mol))
        rxns = tuple(ReactionNode(r["template"], tuple(r["children"]), r["parent"]) for r in d["reactions"])
        log_ = tuple(Action.from_dict(a) for a in d["action_log"])
        return SyntheticTree(tuple(mols), rxns, log_, tuple(d["roots"]), d["t"], d["done"])
    except (KeyError, TypeError, ChemSyntaxError, ValenceError) as exc:
        raise FormatError(f"malformed tree record: {exc}") from exc


def deserialize(text: str) -> SyntheticTree:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"tree is not valid JSON: {exc}") from exc
    return tree_from_dict(d)


def write_trees(path: str | Path, trees: Iterable[SyntheticTree]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trees:
            fh.write(serialize(t) + "\n")


def read_trees(path: str | Path) -> list[SyntheticTree]:
    with open(path, encoding="utf-8") as fh:
        return [deserialize(line) for line in fh if line.strip()]
