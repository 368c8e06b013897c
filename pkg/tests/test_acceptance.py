"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that ``conftest.py`` prints in the
terminal summary, then asserts, so a failure shows both there and in the
normal pytest report.
"""

import math
import statistics
import time
from fractions import Fraction

import numpy as np
import pytest
from chemgen import brute_force_embeddings, random_molecule, random_pattern
from conftest import ACCEPTANCE
from numcheck import gradient_error, small_batch

from synplan.metrics import PropertyPair, sali
from synplan.molgraph import descriptors, parse_smiles
from synplan.neural import KINDS, MLP, TAGS, ModelDims, init_model, load_checkpoint, save_checkpoint
from synplan.optimizer import GAConfig, SimilarityOracle, crossover, ga_run, inherit_count, mutate
from synplan.planner import (
    DecodeConfig,
    build_block_index,
    decode,
    evaluate_random_baseline,
    featurizer_for,
    plan,
    summarize,
)
from synplan.reactions import (
    apply_template,
    build_compatibility_masks,
    load_blocks,
    load_templates,
    match_pattern,
    parse_template,
)
from synplan.synthtree import SynthesisEnv, check_tree, deserialize, read_trees, serialize, write_trees


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


def roots(trees, n=None):
    trees = trees if n is None else trees[:n]
    return [t.molecule(t.roots[0]) for t in trees]


@pytest.fixture(scope="module")
def recovery(toy_env, toy_dataset, trained_model, block_index):
    train = summarize([plan(m, trained_model, block_index, toy_env) for m in roots(toy_dataset["train"], 100)])
    test = summarize([plan(m, trained_model, block_index, toy_env) for m in roots(toy_dataset["test"], 100)])
    base_train = evaluate_random_baseline(roots(toy_dataset["train"], 100), toy_env, seed=0)
    base_test = evaluate_random_baseline(roots(toy_dataset["test"], 100), toy_env, seed=0)
    return train, test, base_train, base_test


def test_01_matcher_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    agree = 0
    nonzero = 0
    for _ in range(200):
        mol = random_molecule(rng)
        source = mol if rng.random() < 0.7 else random_molecule(rng)
        p = random_pattern(source, rng)
        got = match_pattern(p, mol)
        ref = brute_force_embeddings(p, mol)
        agree += len(got) == len(ref) and set(got) == ref
        nonzero += bool(ref)
    dt = time.perf_counter() - t0
    record("1 matcher vs brute force", agree == 200 and dt < 60,
           f"{agree}/200 agree ({nonzero} with embeddings), {dt:.1f} s")


def test_02_rewrite_correctness(templates_path):
    t0 = time.perf_counter()
    amide = {t.name: t for t in load_templates(templates_path)}["amide_coupling"]
    out = [m.smiles for m in apply_template(amide, [parse_smiles("CC(=O)O"), parse_smiles("CN")])]
    expected = parse_smiles("CC(=O)NC").smiles
    lactone = parse_template("[OH1:1][C:2][C:3][C:4][C:5](=[O:6])[OH1]>>[O:1]1[C:2][C:3][C:4][C:5]1=[O:6]")
    chain = parse_smiles("OCCCC(=O)O")
    (ring,) = apply_template(lactone, [chain])
    delta = descriptors(ring)["rings"] - descriptors(chain)["rings"]
    dt = time.perf_counter() - t0
    record("2 rewrite correctness", out == [expected] and delta == 1 and dt < 1,
           f"amide -> {out} (want {expected}); ring closure adds {delta} ring(s); {dt * 1000:.0f} ms")


def test_03_round_trip(toy_env, toy_dataset, tmp_path):
    t0 = time.perf_counter()
    trees = [t for part in ("train", "valid", "test") for t in toy_dataset[part]]
    replay_ok = sum(serialize(toy_env.replay(t.action_log)) == serialize(t) for t in trees)
    text_ok = sum(serialize(deserialize(serialize(t))) == serialize(t) for t in trees)
    path = tmp_path / "corpus.jsonl"
    write_trees(path, trees)
    again = tmp_path / "again.jsonl"
    write_trees(again, read_trees(path))
    file_ok = path.read_bytes() == again.read_bytes()
    dt = time.perf_counter() - t0
    ok = replay_ok == text_ok == len(trees) == 500 and file_ok and dt < 120
    record("3 replay and serialization", ok,
           f"{replay_ok}/{len(trees)} replay, {text_ok}/{len(trees)} byte-exact, file round trip {file_ok}, {dt:.1f} s")


def test_04_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    dims = ModelDims(mlp_bits=16, knn_bits=8, n_templates=5, hidden={t: [12, 10, 9, 7] for t in TAGS})
    errors = {}
    for tag in TAGS:
        net = MLP(dims.input_dim(tag), dims.hidden[tag], dims.output_dim(tag), KINDS[tag], rng, np.float64)
        X, y = small_batch(net, rng)
        errors[tag] = gradient_error(net, X, y, rng, per_tensor=30)
    dt = time.perf_counter() - t0
    worst = max(errors.values())
    record("4 gradient check", worst < 1e-4 and dt < 60,
           "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f"; {dt:.1f} s")


def test_05_memorization(recovery, trained_model):
    train = recovery[0]
    ok = train.recovery_rate >= 0.7 and train.average_similarity >= 0.85
    record("5 training-set recovery", ok,
           f"recovery {train.recovery_rate:.2f} (>= 0.70), average similarity {train.average_similarity:.3f} "
           f"(>= 0.85) on {train.n} training roots, k=3")


def test_06_generalization_gap(recovery):
    train, test, base_train, base_test = recovery
    base = max(base_train.recovery_rate, base_test.recovery_rate)
    ok = train.recovery_rate > test.recovery_rate > base and train.recovery_rate > base
    record("6 generalization gap", ok,
           f"train {train.recovery_rate:.2f} > test {test.recovery_rate:.2f} > random baseline {base:.2f} "
           f"(test similarity {test.average_similarity:.3f}, baseline {base_test.average_similarity:.3f})")


def test_07_ga_statistics(trained_model, block_index, toy_env, toy_dataset):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    cfg = GAConfig()
    mu, _ = cfg.sampler(4096)
    counts = np.array([inherit_count(4096, cfg, rng) for _ in range(10_000)])
    mean_ok = abs(counts.mean() - mu) <= 0.01 * mu
    # the child really takes that many positions from the first parent
    ones, zeros = np.ones(4096, bool), np.zeros(4096, bool)
    child_mean = np.mean([crossover(ones, zeros, rng, cfg).sum() for _ in range(2000)])
    x = rng.random(4096) < 0.1
    dists = np.array([(mutate(x, rng, cfg) ^ x).sum() for _ in range(10_000)])
    dist_ok = set(np.unique(dists).tolist()) <= {0, 24}
    freq = float((dists == 24).mean())
    target = roots(toy_dataset["test"], 1)[0]
    res = ga_run(SimilarityOracle(target), trained_model, block_index, toy_env,
                 GAConfig(population=8, offspring=16, max_generations=10, threshold=-math.inf, seed=1))
    best = [h["best"] for h in res.history]
    mono = all(b >= a for a, b in zip(best, best[1:]))
    dt = time.perf_counter() - t0
    ok = mean_ok and abs(child_mean - mu) <= 0.01 * mu and dist_ok and abs(freq - 0.5) <= 0.02 and mono and dt < 120
    record("7 GA statistics", ok,
           f"inherit mean {counts.mean():.1f} vs {mu:.0f} (child {child_mean:.1f}); mutation distances "
           f"{sorted(set(np.unique(dists).tolist()))}, nonzero {freq:.3f}; best non-decreasing over "
           f"{len(best) - 1} generations: {mono}; {dt:.1f} s")


def test_08_ga_efficacy(trained_model, block_index, toy_env, toy_dataset):
    t0 = time.perf_counter()
    target = roots(toy_dataset["test"], 1)[0]
    oracle = SimilarityOracle(target)
    finals = []
    for seed in range(5):
        cfg = GAConfig(population=16, offspring=64, max_generations=50, threshold=-math.inf, seed=seed)
        finals.append(ga_run(oracle, trained_model, block_index, toy_env, cfg).best_fitness)
    hits = sum(f >= 0.9 for f in finals)
    dt = time.perf_counter() - t0
    record("8 GA reaches the reference", hits >= 3 and dt < 1200,
           f"{hits}/5 seeds reach >= 0.9 within 50 generations (best {', '.join(f'{f:.2f}' for f in finals)}) "
           f"for {target.smiles}; {dt:.0f} s")


def test_09_mask_fuzz(toy_env, templates_path, blocks_path, tmp_path):
    t0 = time.perf_counter()
    # an independently built environment validates every replayed step
    fresh = SynthesisEnv(load_templates(templates_path), load_blocks(blocks_path))
    raw = load_blocks(blocks_path)
    _, admitted = build_compatibility_masks(load_templates(templates_path), raw)
    admitted_smiles = {raw[i].smiles for i in admitted}
    rng = np.random.default_rng(9)
    steps = trees = dead = bad = 0
    ckpt = 0
    while steps < 100_000:
        hidden = {t: [int(rng.choice([16, 32, 64]))] * int(rng.integers(1, 5)) for t in TAGS}
        model = init_model(ModelDims(n_templates=toy_env.n_templates, hidden=hidden), seed=ckpt,
                           templates_hash=toy_env.templates_hash)
        path = tmp_path / f"random_{ckpt}.ckpt"
        save_checkpoint(model, path)
        model = load_checkpoint(path, toy_env.templates_hash, toy_env.n_templates)
        ckpt += 1
        feat = featurizer_for(model)
        index = build_block_index(toy_env, feat)
        for k in range(200):
            if rng.random() < 0.5:
                z = (rng.random(feat.config.mlp_bits) < rng.uniform(0.01, 0.2)).astype(np.float32)
            else:
                z = feat.mlp(toy_env.blocks[int(rng.integers(toy_env.n_blocks))])
            cfg = DecodeConfig(greedy=bool(rng.random() < 0.3), temperature=float(rng.uniform(0.5, 3.0)),
                               seed=int(rng.integers(2**31)), t_max=int(rng.integers(1, 9)))
            trace = []
            tree = decode(z, model, index, toy_env, cfg, trace=trace)
            steps += len(trace)
            dead += tree is None
            trees += tree is not None
            try:
                env = fresh.with_t_max(cfg.t_max)
                replayed = env.replay(trace)
                check_tree(replayed, fresh)
                leaves = {m.smiles for m in replayed.leaves}
                if not leaves <= admitted_smiles or (tree is not None and serialize(replayed) != serialize(tree)):
                    bad += 1
            except Exception:
                bad += 1
    dt = time.perf_counter() - t0
    record("9 mask soundness fuzz", bad == 0 and dt < 600,
           f"{steps} decoded steps from {ckpt} random checkpoints, {trees} complete trees, {dead} dead ends, "
           f"{bad} invalid; {dt:.0f} s")


def test_10_sali():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    exact = affine = trials = 0
    for _ in range(200):
        n = int(rng.integers(2, 300))
        dt_, dp = rng.integers(-500, 500, n), rng.integers(-500, 500, n)
        sims = rng.random(n)
        sims[rng.random(n) < 0.05] = 1.0
        if (sims == 1.0).all() or dt_.min() == dt_.max() == dp.min() == dp.max():
            continue
        trials += 1
        pairs = [PropertyPair("t", "p", float(a), float(b), float(s)) for a, b, s in zip(dt_, dp, sims)]
        vals = [p.d_target for p in pairs] + [p.d_product for p in pairs]
        rng_ = max(vals) - min(vals)
        kept = [p for p in pairs if p.similarity < 1.0]
        ref = float(sum(Fraction(abs(p.d_target - p.d_product) / rng_ / (1.0 - p.similarity)) for p in kept)) / len(kept)
        value = sali(pairs)
        exact += value == ref
        a, b = int(rng.integers(1, 10**6)), int(rng.integers(-(10**6), 10**6))
        scaled = [PropertyPair("t", "p", a * p.d_target + b, a * p.d_product + b, p.similarity) for p in pairs]
        affine += sali(scaled) == value
    dt = time.perf_counter() - t0
    record("10 SALI", exact == affine == trials and dt < 10,
           f"{exact}/{trials} equal to exact summation, {affine}/{trials} unchanged under a*d+b; {dt:.2f} s")


def test_11_plan_latency(toy_env, toy_dataset, trained_model, block_index):
    targets = roots(toy_dataset["test"], 100)
    plan(targets[0], trained_model, block_index, toy_env)  # warm caches and JIT
    times = []
    t0 = time.perf_counter()
    for m in targets:
        s = time.perf_counter()
        plan(m, trained_model, block_index, toy_env)
        times.append(time.perf_counter() - s)
    med = statistics.median(times)
    total = time.perf_counter() - t0
    record("11 planning latency", med < 1.0 and total < 300,
           f"median {med * 1000:.1f} ms, max {max(times) * 1000:.1f} ms over {len(times)} targets")
