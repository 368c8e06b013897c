"""Training-corpus generation by random rollouts on the synthesis environment."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from synplan.errors import InsufficientYield, NoMatch
from synplan.features import Featurizer
from synplan.molgraph import Molecule, descriptors
from synplan.synthtree import ADD, END, MERGE, Action, SynthesisEnv, SyntheticTree

log = logging.getLogger(__name__)

TAGS = ("act", "rt1", "rxn", "rt2")


@dataclass
class DatagenConfig:
    n_target_trees: int = 500
    t_max: int = 8
    # base sampling weights for Add, Expand, Merge, End
    action_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    # End weight grows by this much per completed reaction beyond the first
    end_ramp: float = 1.0
    filter_products: bool = True
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    max_rollouts: int = 200_000

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")
        if any(w < 0 for w in self.action_weights):
            raise ValueError("action weights must be nonnegative")


def _window(x: float, lo: float, hi: float, width: float) -> float:
    return 1.0 / (1.0 + math.exp(-(x - lo) / width)) / (1.0 + math.exp(-(hi - x) / width))


def druglike_score(mol: Molecule) -> float:
    """Smooth drug-likeness proxy in [0, 1] built from simple descriptors."""
    d = descriptors(mol)
    heavy = _window(d["heavy_atoms"], 10, 50, 2.0)
    rings = 1.0 / (1.0 + math.exp(-(d["rings"] - 0.5) / 0.25))
    hetero = _window(d["hetero_fraction"], 0.1, 0.5, 0.05)
    return heavy * rings * hetero


def product_filter(
    mol: Molecule, rng: np.random.Generator, score: Callable[[Molecule], float] = druglike_score
) -> bool:
    """Keep ``mol`` if its score exceeds 0.5, otherwise with probability score/0.5.

    One uniform draw is consumed per call regardless of the outcome.
    """
    s = score(mol)
    u = rng.random()
    return s > 0.5 or u < s / 0.5


def random_rollout(env: SynthesisEnv, config: DatagenConfig, rng: np.random.Generator) -> SyntheticTree | None:
    """Grow one tree with uniformly random valid choices; None on a dead end."""
    env = env.with_t_max(config.t_max)
    tree = SyntheticTree()
    rt1_pool = np.flatnonzero(env.first_reactant_mask)
    if len(rt1_pool) == 0:
        return None
    pick = lambda prods: int(rng.integers(len(prods)))
    while True:
        valid = sorted(env.valid_action_types(tree))
        if not valid:
            return None
        w = np.array([config.action_weights[a] for a in valid], dtype=np.float64)
        if END in valid:
            w[valid.index(END)] = config.action_weights[END] + config.end_ramp * max(tree.t - 1, 0)
        if w.sum() <= 0:
            w = np.ones(len(valid))
        act = valid[int(rng.choice(len(valid), p=w / w.sum()))]
        if act == END:
            tree, _ = env.apply_action(tree, Action(END))
            return tree
        if act == ADD:
            rt1 = int(rt1_pool[rng.integers(len(rt1_pool))])
            tmask = env.valid_templates(env.blocks[rt1])
        elif act == MERGE:
            rt1 = None
            tmask = env.valid_templates(tree.molecule(tree.roots[0]), tree.molecule(tree.roots[1]))
        else:
            rt1 = None
            tmask = env.valid_templates(tree.molecule(tree.roots[0]))
        choices = np.flatnonzero(tmask)
        if len(choices) == 0:
            return None
        rxn = int(choices[rng.integers(len(choices))])
        rt2 = None
        if env.templates[rxn].arity == 2 and act != MERGE:
            pool = np.flatnonzero(env.rt2_candidates(rxn))
            rt2 = int(pool[rng.integers(len(pool))])
        try:
            tree, _ = env.apply_action(tree, Action(act, rt1, rxn, rt2), select=pick)
        except NoMatch:
            return None


def _rollout_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_dataset(env: SynthesisEnv, config: DatagenConfig) -> dict[str, list[SyntheticTree]]:
    """Random-policy corpus, filtered on final products, deduplicated by root, split.

    Rollout ``i`` draws from its own stream seeded by ``(seed, i)``, so the
    result does not depend on how rollouts are scheduled.
    """
    env = env.with_t_max(config.t_max)
    n = config.n_target_trees
    seen: set[str] = set()
    trees: list[SyntheticTree] = []
    dead = rejected = dup = 0
    i = 0
    for i in range(config.max_rollouts):
        if len(trees) >= n:
            break
        rng = _rollout_rng(config.seed, i)
        tree = random_rollout(env, config, rng)
        if tree is None:
            dead += 1
            continue
        root = tree.molecule(tree.roots[0])
        if config.filter_products and not product_filter(root, rng):
            rejected += 1
            continue
        if root.smiles in seen:
            dup += 1
            continue
        seen.add(root.smiles)
        trees.append(tree)
    log.info("rollouts=%d kept=%d dead_ends=%d filtered=%d duplicates=%d", i + 1, len(trees), dead, rejected, dup)
    if len(trees) < n:
        raise InsufficientYield(
            f"only {len(trees)} of {n} trees after {config.max_rollouts} rollouts "
            f"(dead ends {dead}, filtered {rejected}, duplicates {dup})"
        )
    order = np.random.default_rng([config.seed, 2**31 - 1]).permutation(n)
    n_train = round(config.split[0] * n)
    n_valid = round(config.split[1] * n)
    pick = [trees[k] for k in order]
    return {
        "train": pick[:n_train],
        "valid": pick[n_train : n_train + n_valid],
        "test": pick[n_train + n_valid :],
    }


# ---------------------------------------------------------------------------
# supervised examples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingExample:
    tag: str
    input: np.ndarray
    target: int | np.ndarray
    step: int


def root_trajectory(tree: SyntheticTree) -> list[tuple[int, ...]]:
    """Roots (most recent first) before each logged step, from the tree alone."""
    roots: tuple[int, ...] = ()
    out = []
    k = 0
    for a in tree.action_log:
        out.append(roots)
        if a.act == END:
            continue
        r = tree.reactions[k]
        k += 1
        roots = (r.parent,) + tuple(x for x in roots if x not in r.children)
    return out


def extract_training_examples(
    tree: SyntheticTree, env: SynthesisEnv, featurizer: Featurizer
) -> list[TrainingExample]:
    """One example group per logged step, conditioned on the tree's own root."""
    z_target = featurizer.mlp(tree.molecule(tree.roots[0]))
    out: list[TrainingExample] = []
    for step, (a, roots) in enumerate(zip(tree.action_log, root_trajectory(tree))):
        z_state = featurizer.state([tree.molecule(r) for r in roots])
        x = np.concatenate([z_state, z_target])
        out.append(TrainingExample("act", x, a.act, step))
        if a.act == END:
            continue
        if a.act == ADD:
            rt1_mol = env.blocks[a.rt1]
            out.append(TrainingExample("rt1", x, featurizer.knn(rt1_mol), step))
        else:
            rt1_mol = tree.molecule(roots[0])
        x_rxn = np.concatenate([x, featurizer.mlp(rt1_mol)])
        out.append(TrainingExample("rxn", x_rxn, a.rxn, step))
        if env.templates[a.rxn].arity == 2 and a.act != MERGE:
            x_rt2 = np.concatenate([x_rxn, featurizer.one_hot(a.rxn, env.n_templates)])
            out.append(TrainingExample("rt2", x_rt2, featurizer.knn(env.blocks[a.rt2]), step))
    return out


@dataclass
class Shard:
    """Stacked examples for one network: binary inputs ``X`` and targets ``y``."""

    tag: str
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.X)


def build_shards(trees: Sequence[SyntheticTree], env: SynthesisEnv, featurizer: Featurizer) -> dict[str, Shard]:
    groups: dict[str, list[TrainingExample]] = {t: [] for t in TAGS}
    for tree in trees:
        for ex in extract_training_examples(tree, env, featurizer):
            groups[ex.tag].append(ex)
    dims = shard_dims(env, featurizer)
    out = {}
    for tag in TAGS:
        exs = groups[tag]
        X = np.array([e.input for e in exs], dtype=np.float32).reshape(len(exs), dims[tag][0])
        if tag in ("act", "rxn"):
            y = np.array([e.target for e in exs], dtype=np.int64)
        else:
            y = np.array([e.target for e in exs], dtype=np.float32).reshape(len(exs), dims[tag][1])
        out[tag] = Shard(tag, X, y)
    return out


def shard_dims(env: SynthesisEnv, featurizer: Featurizer) -> dict[str, tuple[int, int]]:
    f = featurizer.config.mlp_bits
    d = featurizer.config.knn_bits
    r = env.n_templates
    return {"act": (3 * f, 4), "rt1": (3 * f, d), "rxn": (4 * f, r), "rt2": (4 * f + r, d)}


SHARD_MAGIC = b"SYNSHRD1"


def write_shard(path: str | Path, sh: Shard) -> None:
    """Binary record file: magic, u32 header length, JSON header, packed inputs, targets.

    Inputs are 0/1 and stored bit-packed; fingerprint targets likewise, class
    targets as little-endian int64.
    """
    X = np.packbits(sh.X.astype(bool), axis=1, bitorder="little")
    if sh.y.ndim == 2:
        y = np.packbits(sh.y.astype(bool), axis=1, bitorder="little")
        tdim = int(sh.y.shape[1])
    else:
        y = sh.y.astype("<i8")
        tdim = 0
    header = json.dumps(
        {"tag": sh.tag, "n": len(sh), "input_dim": int(sh.X.shape[1]), "target_dim": tdim}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(np.ascontiguousarray(X).tobytes())
        fh.write(np.ascontiguousarray(y).tobytes())


def read_shard(path: str | Path) -> Shard:
    from synplan.errors import FormatError

    raw = Path(path).read_bytes()
    if raw[:8] != SHARD_MAGIC:
        raise FormatError(f"{path}: not an example shard")
    hlen = int.from_bytes(raw[8:12], "little")
    try:
        h = json.loads(raw[12 : 12 + hlen])
        n, nf, nt = h["n"], h["input_dim"], h["target_dim"]
        off = 12 + hlen
        xw = (nf + 7) // 8
        X = np.frombuffer(raw, dtype=np.uint8, count=n * xw, offset=off).reshape(n, xw)
        off += n * xw
        X = np.unpackbits(X, axis=1, count=nf, bitorder="little").astype(np.float32)
        if nt:
            yw = (nt + 7) // 8
            y = np.frombuffer(raw, dtype=np.uint8, count=n * yw, offset=off).reshape(n, yw)
            y = np.unpackbits(y, axis=1, count=nt, bitorder="little").astype(np.float32)
            off += n * yw
        else:
            y = np.frombuffer(raw, dtype="<i8", count=n, offset=off).astype(np.int64)
            off += 8 * n
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: corrupt shard ({exc})") from exc
    if off != len(raw):
        raise FormatError(f"{path}: trailing or missing bytes")
    return Shard(h["tag"], X, y)


def save_shards(shards: dict[str, Shard], directory: str | Path, split: str) -> dict:
    """Write ``{split}_{tag}.bin`` files and return their manifest entries."""
    directory = Path(directory)
    entries = {}
    for tag, sh in shards.items():
        path = directory / f"{split}_{tag}.bin"
        write_shard(path, sh)
        entries[f"{split}_{tag}"] = {
            "file": path.name,
            "n": len(sh),
            "input_dim": int(sh.X.shape[1]),
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        }
    return entries


def load_shards(directory: str | Path, split: str) -> dict[str, Shard]:
    directory = Path(directory)
    return {tag: read_shard(directory / f"{split}_{tag}.bin") for tag in TAGS}


def config_dict(config: DatagenConfig) -> dict:
    d = asdict(config)
    d["action_weights"] = list(d["action_weights"])
    d["split"] = list(d["split"])
    return d
