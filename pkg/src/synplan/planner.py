"""Target-conditioned decoding of synthetic trees with the trained policy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from synplan.datagen import DatagenConfig, random_rollout
from synplan.errors import CompatibilityError, EmptyCandidateSet, NoMatch
from synplan.features import FeatureConfig, Featurizer
from synplan.molgraph import Molecule, morgan_fingerprint, tanimoto, tanimoto_bits
from synplan.neural import KnnIndex, PolicyModel, knn_build, knn_query, softmax
from synplan.synthtree import ADD, END, MERGE, Action, SynthesisEnv, SyntheticTree

log = logging.getLogger(__name__)

# fingerprint used to score products against targets
SIM_BITS = 2048
SIM_RADIUS = 2
# second-reactant neighbours tried when the nearest one gives no valid product
RT2_FALLBACK = 3


@dataclass(frozen=True)
class DecodeConfig:
    k_rt1: int = 3
    t_max: int | None = None
    greedy: bool = True
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_rt1 < 1:
            raise ValueError("k_rt1 must be at least 1")
        if not self.greedy and self.temperature <= 0:
            raise ValueError("sampling needs a positive temperature")

    def to_dict(self) -> dict:
        return {"k_rt1": self.k_rt1, "t_max": self.t_max, "greedy": self.greedy,
                "temperature": self.temperature, "seed": self.seed}


@dataclass
class Candidate:
    tree: SyntheticTree
    smiles: str
    similarity: float


@dataclass
class PlanResult:
    target: str
    best: SyntheticTree | None
    smiles: str | None
    similarity: float
    recovered: bool
    candidates: list[Candidate] = field(default_factory=list)

    def to_dict(self) -> dict:
        from synplan.synthtree import tree_to_dict

        return {
            "target": self.target,
            "recovered": self.recovered,
            "similarity": self.similarity,
            "product": self.smiles,
            "tree": tree_to_dict(self.best) if self.best is not None else None,
        }


def featurizer_for(model: PolicyModel) -> Featurizer:
    d = model.dims
    return Featurizer(FeatureConfig(d.mlp_bits, d.knn_bits, d.radius))


def build_block_index(env: SynthesisEnv, featurizer: Featurizer) -> KnnIndex:
    """k-NN index over the environment's building blocks; row i is block id i."""
    return knn_build(np.stack([featurizer.knn(b) for b in env.blocks]))


def check_compatible(model: PolicyModel, index: KnnIndex, env: SynthesisEnv) -> None:
    if model.dims.n_templates != env.n_templates:
        raise CompatibilityError(f"model has {model.dims.n_templates} templates, environment has {env.n_templates}")
    if model.templates_hash and model.templates_hash != env.templates_hash:
        raise CompatibilityError("model was trained for a different template set")
    if index.dim != model.dims.knn_bits:
        raise CompatibilityError(f"index dimension {index.dim} != model k-NN width {model.dims.knn_bits}")
    if len(index) != env.n_blocks:
        raise CompatibilityError(f"index has {len(index)} blocks, environment has {env.n_blocks}")


def similarity(a: Molecule, b: Molecule) -> float:
    return tanimoto(morgan_fingerprint(a, SIM_RADIUS, SIM_BITS), morgan_fingerprint(b, SIM_RADIUS, SIM_BITS))


class _Decoder:
    """One decoding session: fixed model, index, environment and target."""

    def __init__(self, z_target, model, index, env, config, rng):
        self.z_target = np.asarray(z_target, dtype=np.float32)
        self.model, self.index, self.env, self.config, self.rng = model, index, env, config, rng
        self.feat = featurizer_for(model)
        self.target_bits = self.z_target.astype(bool)

    def _order(self, logits: np.ndarray, mask: np.ndarray) -> list[int]:
        """Valid choices, best first: argmax order when greedy, else a sampled order."""
        valid = np.flatnonzero(mask)
        if self.config.greedy:
            return sorted(valid.tolist(), key=lambda i: (-logits[i], i))
        p = softmax(logits / self.config.temperature, mask)[valid]
        return [int(v) for v in self.rng.choice(valid, size=len(valid), replace=False, p=p)]

    def _select(self, prods: list[Molecule]) -> int:
        sims = [tanimoto_bits(self.feat.mlp_bits(p), self.target_bits) for p in prods]
        return int(np.argmax(sims))

    def rt1_candidates(self, x: np.ndarray, k: int) -> list[int]:
        q = self.model["rt1"].forward(x[None])[0]
        try:
            return [b for b, _ in knn_query(self.index, q, k, self.env.first_reactant_mask)]
        except EmptyCandidateSet:
            return []

    def step(self, tree: SyntheticTree, forced_rt1: int | None) -> SyntheticTree | None:
        env, model, feat = self.env, self.model, self.feat
        x = np.concatenate([feat.state([tree.molecule(r) for r in tree.roots]), self.z_target])
        act_mask = env.action_mask(tree)
        if not act_mask.any():
            return None
        act_logits = model["act"].forward(x[None])[0]
        for act in self._order(act_logits, act_mask):
            if act == END:
                return env.apply_action(tree, Action(END))[0]
            if act == ADD:
                rt1_ids = [forced_rt1] if forced_rt1 is not None else self.rt1_candidates(x, 1)
                if not rt1_ids:
                    continue
                rt1, rt1_mol = rt1_ids[0], env.blocks[rt1_ids[0]]
                tmask = env.valid_templates(rt1_mol)
            elif act == MERGE:
                rt1, rt1_mol = None, tree.molecule(tree.roots[0])
                tmask = env.valid_templates(rt1_mol, tree.molecule(tree.roots[1]))
            else:
                rt1, rt1_mol = None, tree.molecule(tree.roots[0])
                tmask = env.valid_templates(rt1_mol)
            if not tmask.any():
                continue
            x_rxn = np.concatenate([x, feat.mlp(rt1_mol)])
            rxn_logits = model["rxn"].forward(x_rxn[None])[0]
            for rxn in self._order(rxn_logits, tmask):
                rt2_ids: list[int | None] = [None]
                if env.templates[rxn].arity == 2 and act != MERGE:
                    x_rt2 = np.concatenate([x_rxn, feat.one_hot(rxn, env.n_templates)])
                    q = model["rt2"].forward(x_rt2[None])[0]
                    try:
                        rt2_ids = [b for b, _ in knn_query(self.index, q, RT2_FALLBACK, env.rt2_candidates(rxn))]
                    except EmptyCandidateSet:
                        continue
                for rt2 in rt2_ids:
                    try:
                        return env.apply_action(tree, Action(act, rt1, rxn, rt2), select=self._select)[0]
                    except NoMatch:
                        continue
        return None


def decode(
    z_target,
    model: PolicyModel,
    index: KnnIndex,
    env: SynthesisEnv,
    config: DecodeConfig = DecodeConfig(),
    forced_rt1: int | None = None,
    trace: list[Action] | None = None,
) -> SyntheticTree | None:
    """Roll the policy out from an empty state toward ``z_target``.

    At every step the act, template and reactant heads are masked to what the
    environment accepts. When the top-ranked choice yields no product the next
    one is tried. Returns None on a dead end (nothing valid left at some step).
    ``forced_rt1`` pins the first building block. Applied actions are
    appended to ``trace`` if given, including those before a dead end.
    """
    check_compatible(model, index, env)
    if config.t_max is not None:
        env = env.with_t_max(config.t_max)
    dec = _Decoder(z_target, model, index, env, config, np.random.default_rng(config.seed))
    tree = SyntheticTree()
    first = True
    while not tree.done:
        tree = dec.step(tree, forced_rt1 if first else None)
        if tree is None:
            return None
        if trace is not None:
            trace.append(tree.action_log[-1])
        first = False
    return tree


def plan(target: Molecule, model: PolicyModel, index: KnnIndex, env: SynthesisEnv,
         config: DecodeConfig = DecodeConfig()) -> PlanResult:
    """Decode once per top-``k_rt1`` first building block and keep the closest product."""
    check_compatible(model, index, env)
    feat = featurizer_for(model)
    z_target = feat.mlp(target)
    dec = _Decoder(z_target, model, index, env, config, None)
    x0 = np.concatenate([feat.state([]), z_target])
    candidates: list[Candidate] = []
    for k, rt1 in enumerate(dec.rt1_candidates(x0, config.k_rt1)):
        cfg = config if config.greedy else DecodeConfig(config.k_rt1, config.t_max, False, config.temperature, config.seed + k)
        tree = decode(z_target, model, index, env, cfg, forced_rt1=rt1)
        if tree is None:
            continue
        prod = tree.molecule(tree.roots[0])
        candidates.append(Candidate(tree, prod.smiles, similarity(prod, target)))
    return _result(target, candidates)


def _result(target: Molecule, candidates: list[Candidate]) -> PlanResult:
    if not candidates:
        return PlanResult(target.smiles, None, None, 0.0, False, [])
    best = max(candidates, key=lambda c: c.similarity)  # first maximum wins ties
    return PlanResult(target.smiles, best.tree, best.smiles, best.similarity, best.smiles == target.smiles, candidates)


def random_plan(target: Molecule, env: SynthesisEnv, rng: np.random.Generator, n_trees: int = 3,
                t_max: int = 8) -> PlanResult:
    """Baseline: ``n_trees`` random-policy rollouts, closest product kept."""
    cfg = DatagenConfig(t_max=t_max)
    candidates = []
    for _ in range(n_trees):
        tree = random_rollout(env, cfg, rng)
        if tree is not None:
            prod = tree.molecule(tree.roots[0])
            candidates.append(Candidate(tree, prod.smiles, similarity(prod, target)))
    return _result(target, candidates)


@dataclass
class RecoveryReport:
    n: int
    recovery_rate: float
    average_similarity: float
    unrecovered_similarity: float
    records: list[PlanResult]

    def summary(self) -> dict:
        return {"n": self.n, "recovery_rate": self.recovery_rate, "average_similarity": self.average_similarity,
                "unrecovered_similarity": self.unrecovered_similarity}


def summarize(results: list[PlanResult]) -> RecoveryReport:
    n = len(results)
    if n == 0:
        return RecoveryReport(0, 0.0, 0.0, 0.0, [])
    rec = [r.recovered for r in results]
    sims = np.array([r.similarity for r in results])
    miss = sims[~np.array(rec)]
    return RecoveryReport(
        n, sum(rec) / n, float(sims.mean()), float(miss.mean()) if len(miss) else float("nan"), list(results)
    )


def evaluate_recovery(targets: list[Molecule], model: PolicyModel, index: KnnIndex, env: SynthesisEnv,
                      config: DecodeConfig = DecodeConfig()) -> RecoveryReport:
    return summarize([plan(t, model, index, env, config) for t in targets])


def evaluate_random_baseline(targets: list[Molecule], env: SynthesisEnv, seed: int = 0, n_trees: int = 3) -> RecoveryReport:
    rng = np.random.default_rng([seed, 7])
    return summarize([random_plan(t, env, rng, n_trees, env.t_max) for t in targets])
