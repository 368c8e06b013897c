"""Genetic search in fingerprint space, scored by decoding each individual to a molecule."""

from __future__ import annotations

import logging
import math
import shlex
import subprocess
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from synplan.errors import OracleFailure
from synplan.molgraph import Molecule, descriptors, morgan_fingerprint, parse_smiles, tanimoto
from synplan.neural import KnnIndex, PolicyModel
from synplan.planner import SIM_BITS, SIM_RADIUS, DecodeConfig, decode, featurizer_for
from synplan.synthtree import SynthesisEnv, SyntheticTree

log = logging.getLogger(__name__)

REFERENCE_LENGTH = 4096


@dataclass
class GAConfig:
    population: int = 128
    offspring: int = 512
    # inheritance-count sampler, given for a 4096-bit fingerprint and rescaled to others
    inherit_mean: float = 2048.0
    inherit_std: float = 410.0
    flip_count: int = 24
    mutation_prob: float = 0.5
    max_generations: int = 200
    window: int = 10
    threshold: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.offspring < self.population:
            raise ValueError("offspring must be at least the population size")
        if self.population < 1 or self.window < 1 or self.max_generations < 0:
            raise ValueError("population, window and generation limits must be positive")

    def sampler(self, length: int) -> tuple[float, float]:
        s = length / REFERENCE_LENGTH
        return self.inherit_mean * s, self.inherit_std * s

    def to_dict(self) -> dict:
        return asdict(self)


# -- operators ----------------------------------------------------------------


def inherit_count(length: int, config: GAConfig, rng: np.random.Generator) -> int:
    mu, sigma = config.sampler(length)
    return int(min(max(round(rng.normal(mu, sigma)), 0), length))


def crossover(a: np.ndarray, b: np.ndarray, rng: np.random.Generator, config: GAConfig = GAConfig()) -> np.ndarray:
    """Take a random subset of positions from ``a`` and the rest from ``b``."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"parent lengths differ: {a.shape} vs {b.shape}")
    n = inherit_count(len(a), config, rng)
    take = np.zeros(len(a), dtype=bool)
    take[rng.choice(len(a), size=n, replace=False)] = True
    return np.where(take, a, b)


def mutate(x: np.ndarray, rng: np.random.Generator, config: GAConfig = GAConfig()) -> np.ndarray:
    """With probability ``mutation_prob`` flip exactly ``flip_count`` distinct bits."""
    x = np.array(x, dtype=bool)
    if config.flip_count >= len(x):
        raise ValueError("flip count must be below the fingerprint length")
    if rng.random() < config.mutation_prob:
        pos = rng.choice(len(x), size=config.flip_count, replace=False)
        x[pos] = ~x[pos]
    return x


# -- oracles --------------------------------------------------------------------


class Oracle:
    """Scores molecules; higher is better."""

    kind = "base"

    def __call__(self, mol: Molecule) -> float:
        return self.score_many([mol])[0]

    def score_many(self, mols: Sequence[Molecule]) -> list[float]:
        return [self(m) for m in mols]

    def describe(self) -> dict:
        return {"kind": self.kind}


class SimilarityOracle(Oracle):
    kind = "similarity"

    def __init__(self, reference: Molecule | str):
        self.reference = parse_smiles(reference) if isinstance(reference, str) else reference
        self._fp = morgan_fingerprint(self.reference, SIM_RADIUS, SIM_BITS)

    def __call__(self, mol: Molecule) -> float:
        return tanimoto(morgan_fingerprint(mol, SIM_RADIUS, SIM_BITS), self._fp)

    def score_many(self, mols):
        return [self(m) for m in mols]

    def describe(self):
        return {"kind": self.kind, "reference": self.reference.smiles}


class DescriptorOracle(Oracle):
    """Gaussian reward around target descriptor values, averaged over descriptors."""

    kind = "descriptor"

    def __init__(self, targets: dict[str, float], widths: dict[str, float] | None = None):
        known = {"heavy_atoms", "rings", "hetero_fraction", "mol_weight"}
        bad = set(targets) - known
        if bad:
            raise ValueError(f"unknown descriptors {sorted(bad)}; choose from {sorted(known)}")
        self.targets = dict(targets)
        self.widths = {k: 1.0 for k in targets} | (widths or {})

    def __call__(self, mol):
        d = descriptors(mol)
        vals = [math.exp(-(((d[k] - v) / self.widths[k]) ** 2)) for k, v in self.targets.items()]
        return float(np.mean(vals))

    def score_many(self, mols):
        return [self(m) for m in mols]

    def describe(self):
        return {"kind": self.kind, "targets": self.targets, "widths": self.widths}


class CommandOracle(Oracle):
    """External scorer: SMILES lines on stdin, one decimal score per line on stdout.

    A nonzero exit, timeout or malformed output raises OracleFailure.
    """

    kind = "command"

    def __init__(self, command: str | list[str], timeout: float = 60.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def _run(self, mols) -> list[float]:
        text = "".join(m.smiles + "\n" for m in mols)
        try:
            proc = subprocess.run(self.argv, input=text, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise OracleFailure(f"oracle command failed: {exc}") from exc
        if proc.returncode != 0:
            raise OracleFailure(f"oracle exited with {proc.returncode}: {proc.stderr.strip()[:200]}")
        lines = proc.stdout.split()
        if len(lines) != len(mols):
            raise OracleFailure(f"oracle returned {len(lines)} scores for {len(mols)} molecules")
        try:
            out = [float(s) for s in lines]
        except ValueError as exc:
            raise OracleFailure(f"oracle printed a non-numeric score: {exc}") from exc
        return out

    def __call__(self, mol):
        return self._run([mol])[0]

    def score_many(self, mols):
        if not mols:
            return []
        return self._run(list(mols))

    def describe(self):
        return {"kind": self.kind, "command": self.argv, "timeout": self.timeout}


def oracle_from_spec(spec: str) -> Oracle:
    """``similarity:SMILES``, ``descriptor:name=value[,name=value...]`` or ``command:CMD``."""
    kind, _, arg = spec.partition(":")
    if kind == "similarity":
        return SimilarityOracle(arg)
    if kind == "descriptor":
        targets = {}
        for part in filter(None, arg.split(",")):
            k, _, v = part.partition("=")
            targets[k.strip()] = float(v)
        return DescriptorOracle(targets)
    if kind == "command":
        return CommandOracle(arg)
    raise ValueError(f"unknown oracle kind {kind!r} in {spec!r}")


def safe_scores(oracle: Oracle, mols: list[Molecule]) -> list[float]:
    """Score a batch; if the batch call fails, retry one by one and give failures -inf."""
    try:
        scores = oracle.score_many(mols)
    except OracleFailure as exc:
        log.warning("oracle batch failed, scoring individually: %s", exc)
        scores = []
        for m in mols:
            try:
                scores.append(oracle(m))
            except OracleFailure as exc1:
                log.warning("oracle failed on %s: %s", m.smiles, exc1)
                scores.append(-math.inf)
    return [s if math.isfinite(s) else -math.inf for s in scores]


# -- the search loop -------------------------------------------------------------


@dataclass
class Individual:
    bits: np.ndarray
    tree: SyntheticTree | None
    smiles: str | None
    fitness: float


@dataclass
class GAResult:
    population: list[Individual]
    history: list[dict] = field(default_factory=list)
    stopped: str = ""

    def ranked(self) -> list[Individual]:
        """Distinct molecules, best first."""
        seen = set()
        out = []
        for ind in sorted(self.population, key=lambda i: -i.fitness):
            if ind.smiles is None or ind.smiles in seen:
                continue
            seen.add(ind.smiles)
            out.append(ind)
        return out

    @property
    def best_fitness(self) -> float:
        return max(i.fitness for i in self.population)


def ga_init(
    seeds: Sequence[Molecule] | None,
    model: PolicyModel,
    config: GAConfig,
    rng: np.random.Generator,
    env: SynthesisEnv | None = None,
) -> list[np.ndarray]:
    """Seed fingerprints, padded with mutated copies up to the population size.

    Without seeds, fingerprints of random admitted building blocks are used.
    """
    feat = featurizer_for(model)
    if not seeds:
        if env is None:
            raise ValueError("random initialisation needs the environment's building blocks")
        picks = rng.choice(env.n_blocks, size=config.population, replace=env.n_blocks < config.population)
        seeds = [env.blocks[i] for i in picks]
    pop = [feat.mlp_bits(m).copy() for m in seeds[: config.population]]
    base = list(pop)
    forced = GAConfig(**(config.to_dict() | {"mutation_prob": 1.0}))
    while len(pop) < config.population:
        pop.append(mutate(base[rng.integers(len(base))], rng, forced))
    return pop


def _evaluate(bits_list, oracle, model, index, env, dconf, mapper=None) -> list[Individual]:
    run = lambda b: decode(b.astype(np.float32), model, index, env, dconf)
    trees = list(mapper(run, bits_list)) if mapper is not None else [run(b) for b in bits_list]
    mols = [t.molecule(t.roots[0]) for t in trees if t is not None]
    scores = iter(safe_scores(oracle, mols))
    out = []
    for b, t in zip(bits_list, trees):
        if t is None:
            out.append(Individual(b, None, None, -math.inf))
        else:
            out.append(Individual(b, t, t.molecule(t.roots[0]).smiles, next(scores)))
    return out


def _stats(pop: list[Individual]) -> tuple[float, float]:
    f = np.array([i.fitness for i in pop])
    fin = f[np.isfinite(f)]
    return float(f.max()), float(fin.mean()) if len(fin) else -math.inf


def ga_run(
    oracle: Oracle,
    model: PolicyModel,
    index: KnnIndex,
    env: SynthesisEnv,
    config: GAConfig = GAConfig(),
    seeds: Sequence[Molecule] | None = None,
    decode_config: DecodeConfig = DecodeConfig(),
    callback: Callable[[int, dict], None] | None = None,
    mapper: Callable | None = None,
) -> GAResult:
    """Elitist generational loop: parents and offspring compete for the next pool.

    Stops after ``max_generations`` or when the population mean has improved
    by less than ``threshold`` over the last ``window`` generations.
    ``mapper(fn, items)`` may run the decodes concurrently; it must preserve order.
    """
    rng = np.random.default_rng([config.seed, 11])
    pop = _evaluate(ga_init(seeds, model, config, rng, env), oracle, model, index, env, decode_config, mapper)
    best, mean = _stats(pop)
    history = [{"generation": 0, "best": best, "mean": mean}]
    stopped = "max_generations"
    for gen in range(1, config.max_generations + 1):
        kids = []
        for _ in range(config.offspring):
            i, j = rng.choice(len(pop), size=2, replace=False) if len(pop) > 1 else (0, 0)
            kids.append(mutate(crossover(pop[i].bits, pop[j].bits, rng, config), rng, config))
        pool = pop + _evaluate(kids, oracle, model, index, env, decode_config, mapper)
        # stable sort keeps parents ahead of equally fit offspring
        order = sorted(range(len(pool)), key=lambda k: -pool[k].fitness)
        pop = [pool[k] for k in order[: config.population]]
        best, mean = _stats(pop)
        rec = {"generation": gen, "best": best, "mean": mean}
        history.append(rec)
        if callback is not None:
            callback(gen, rec)
        log.info("generation %d best %.4f mean %.4f", gen, best, mean)
        if gen >= config.window:
            gain = mean - history[gen - config.window]["mean"]
            if gain < config.threshold:
                stopped = "converged"
                break
    return GAResult(pop, history, stopped)
