"""Command-line entry point: ``synplan {gen-data,train,plan,optimize,validate}``.

Settings come from command-line flags, then an optional TOML file
(``--config``; a table named after the command, or top-level keys), then
built-in defaults. Every command writes ``manifest.json`` into its output
directory. Exit codes: 0 success, 2 unreadable or malformed input,
3 not enough data generated, 4 incompatible model/data/dimensions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from synplan import __version__, _kernels
from synplan.errors import (
    ArityError,
    ChemSyntaxError,
    CompatibilityError,
    DimensionError,
    FormatError,
    InsufficientYield,
    MappingError,
    UnsupportedFeature,
    ValenceError,
)

log = logging.getLogger("synplan")

EXIT_OK, EXIT_INPUT, EXIT_YIELD, EXIT_COMPAT = 0, 2, 3, 4
TEMPLATES_FILE = "templates.txt"
BLOCKS_FILE = "blocks.smi"
CHECKPOINT_FILE = "model.ckpt"

DEFAULTS = {
    "gen-data": {"n": 500, "seed": 0, "t_max": 8, "mlp_bits": 1024, "knn_bits": 128, "radius": 2,
                 "split": [0.6, 0.2, 0.2], "filter": True, "max_rollouts": 200_000},
    "train": {"epochs": 30, "lr": 1e-3, "batch_size": 64, "seed": 0, "hidden": 256, "depth": 4},
    "plan": {"k": 3, "t_max": 8},
    "optimize": {"population": 128, "offspring": 512, "generations": 200, "seed": 0, "t_max": 8,
                 "flip_count": 24, "mutation_prob": 0.5, "window": 10, "threshold": 0.01},
    "validate": {},
}


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__
    backend: str = field(default_factory=_kernels.backend)
    started: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    finished: str = ""
    outputs: dict = field(default_factory=dict)

    def write(self, directory: Path) -> None:
        self.finished = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        (directory / "manifest.json").write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")


def pool_map(fn: Callable, items: Iterable, threads: int) -> list:
    """Ordered map; results do not depend on the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def resolve(args: argparse.Namespace, command: str) -> dict:
    """Merge flags > config file > defaults for one command."""
    conf = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
        section = data.get(command, {k: v for k, v in data.items() if not isinstance(v, dict)})
        unknown = set(section) - set(conf)
        if unknown:
            raise FormatError(f"{args.config}: unknown keys for {command}: {sorted(unknown)}")
        conf.update(section)
    for k in conf:
        v = getattr(args, k, None)
        if v is not None:
            conf[k] = v
    return conf


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _env_from(templates: str | Path, blocks: str | Path, t_max: int = 8):
    from synplan.reactions import load_blocks, load_templates
    from synplan.synthtree import SynthesisEnv

    return SynthesisEnv(load_templates(templates), load_blocks(blocks), t_max=t_max)


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from synplan.datagen import DatagenConfig, build_shards, config_dict, generate_dataset, save_shards
    from synplan.features import FeatureConfig, Featurizer
    from synplan.metrics import corpus_summary
    from synplan.synthtree import write_trees

    conf = resolve(args, "gen-data")
    env = _env_from(args.templates, args.blocks, conf["t_max"])
    out = _out_dir(args.out)
    dconf = DatagenConfig(n_target_trees=conf["n"], t_max=conf["t_max"], filter_products=conf["filter"],
                          split=tuple(conf["split"]), seed=conf["seed"], max_rollouts=conf["max_rollouts"])
    fconf = FeatureConfig(conf["mlp_bits"], conf["knn_bits"], conf["radius"])
    man = RunManifest("gen-data", conf | {"datagen": config_dict(dconf), "features": fconf.to_dict()},
                      {"templates": sha256_file(args.templates), "blocks": sha256_file(args.blocks)}, conf["seed"])
    t0 = time.perf_counter()
    splits = generate_dataset(env, dconf)
    log.info("generated %d trees in %.1f s", sum(map(len, splits.values())), time.perf_counter() - t0)
    # the environment keeps only admitted blocks; store exactly those so ids stay valid
    shutil.copyfile(args.templates, out / TEMPLATES_FILE)
    (out / BLOCKS_FILE).write_text("".join(b.smiles + "\n" for b in env.blocks))
    feat = Featurizer(fconf)
    shards = {}
    for split, trees in splits.items():
        write_trees(out / f"{split}.jsonl", trees)
        shards.update(save_shards(build_shards(trees, env, feat), out, split))
    summary = {split: corpus_summary(trees) for split, trees in splits.items()}
    summary["admitted_blocks"] = env.n_blocks
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    man.outputs = {"shards": shards, "templates_hash": env.templates_hash, "blocks_hash": env.blocks_hash,
                   "features": fconf.to_dict(),
                   **{f"{s}.jsonl": sha256_file(out / f"{s}.jsonl") for s in splits}}
    man.write(out)
    return EXIT_OK


def _data_manifest(data: Path) -> dict:
    path = data / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path}: not a gen-data output directory")
    return json.loads(path.read_text())


def cmd_train(args) -> int:
    from synplan.datagen import load_shards
    from synplan.features import FeatureConfig, Featurizer
    from synplan.neural import TAGS, ModelDims, init_model, load_checkpoint, save_checkpoint
    from synplan.neural.train import TrainConfig, train
    from synplan.planner import build_block_index

    conf = resolve(args, "train")
    data = Path(args.data)
    dman = _data_manifest(data)
    feats = dman["outputs"]["features"]
    env = _env_from(data / TEMPLATES_FILE, data / BLOCKS_FILE)
    shards = load_shards(data, "train")
    valid = load_shards(data, "valid")
    if args.resume:
        model = load_checkpoint(args.resume, env.templates_hash, env.n_templates)
    else:
        hidden = {tag: [conf["hidden"]] * conf["depth"] for tag in TAGS}
        dims = ModelDims(feats["mlp_bits"], feats["knn_bits"], env.n_templates, feats["radius"], hidden)
        model = init_model(dims, conf["seed"], env.templates_hash)
    for tag in TAGS:
        want = model.dims.input_dim(tag)
        if shards[tag].X.shape[1] != want:
            raise DimensionError(f"{tag} shard width {shards[tag].X.shape[1]} != model input width {want}")
    feat = Featurizer(FeatureConfig(model.dims.mlp_bits, model.dims.knn_bits, model.dims.radius))
    index = build_block_index(env, feat)
    tconf = TrainConfig(lr=conf["lr"], batch_size=conf["batch_size"], epochs=conf["epochs"], seed=conf["seed"])
    out = _out_dir(args.out)
    man = RunManifest("train", conf | {"train": tconf.to_dict(), "dims": model.dims.to_dict()},
                      {"data": dman["outputs"]["templates_hash"] + ":" + dman["outputs"]["blocks_hash"]}, conf["seed"])
    if args.resume:
        man.inputs["resume"] = sha256_file(args.resume)
    hist = train(model, shards, tconf, index, valid)
    save_checkpoint(model, out / CHECKPOINT_FILE, {"train": tconf.to_dict()})
    shutil.copyfile(data / TEMPLATES_FILE, out / TEMPLATES_FILE)
    shutil.copyfile(data / BLOCKS_FILE, out / BLOCKS_FILE)
    with open(out / "curves.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch," + ",".join(f"{t}_loss" for t in TAGS) + "\n")
        for e in range(tconf.epochs):
            vals = [hist.loss.get(t, [])[e] if e < len(hist.loss.get(t, [])) else float("nan") for t in TAGS]
            fh.write(f"{e + 1}," + ",".join(f"{v:.6g}" for v in vals) + "\n")
    man.outputs = {"checkpoint": sha256_file(out / CHECKPOINT_FILE), "accuracy": hist.accuracy,
                   "val_accuracy": hist.val_accuracy}
    man.write(out)
    print(json.dumps({"accuracy": hist.accuracy, "val_accuracy": hist.val_accuracy}, sort_keys=True))
    return EXIT_OK


def _load_policy(args, t_max: int):
    from synplan.neural import load_checkpoint
    from synplan.planner import build_block_index, featurizer_for

    ckpt = Path(args.ckpt)
    templates = Path(args.templates) if args.templates else ckpt.parent / TEMPLATES_FILE
    blocks = Path(args.blocks) if args.blocks else ckpt.parent / BLOCKS_FILE
    env = _env_from(templates, blocks, t_max)
    model = load_checkpoint(ckpt, env.templates_hash, env.n_templates)
    index = build_block_index(env, featurizer_for(model))
    inputs = {"checkpoint": sha256_file(ckpt), "templates": sha256_file(templates), "blocks": sha256_file(blocks)}
    return model, index, env, inputs


def _read_smiles_file(path) -> list[str]:
    return [ln.split()[0] for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]


def cmd_plan(args) -> int:
    from synplan.molgraph import parse_smiles
    from synplan.planner import DecodeConfig, plan, summarize

    conf = resolve(args, "plan")
    if bool(args.target) == bool(args.targets):
        raise SystemExit("give exactly one of --target or --targets")
    model, index, env, inputs = _load_policy(args, conf["t_max"])
    texts = [args.target] if args.target else _read_smiles_file(args.targets)
    try:
        targets = [parse_smiles(s) for s in texts]
    except (ChemSyntaxError, UnsupportedFeature, ValenceError) as exc:
        raise FormatError(str(exc)) from exc
    dconf = DecodeConfig(k_rt1=conf["k"], t_max=conf["t_max"])
    results = pool_map(lambda m: plan(m, model, index, env, dconf), targets, args.threads)
    lines = [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in results]
    for r in results:
        print(json.dumps({"target": r.target, "product": r.smiles, "recovered": r.recovered,
                          "similarity": r.similarity}, sort_keys=True))
    if args.out:
        out = _out_dir(args.out)
        (out / "results.jsonl").write_text("".join(ln + "\n" for ln in lines))
        report = summarize(results)
        (out / "summary.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
        man = RunManifest("plan", conf | {"decode": dconf.to_dict()}, inputs)
        man.outputs = {"results.jsonl": sha256_file(out / "results.jsonl")}
        man.write(out)
    return EXIT_OK


def cmd_optimize(args) -> int:
    from synplan.molgraph import parse_smiles
    from synplan.optimizer import GAConfig, ga_run, oracle_from_spec
    from synplan.planner import DecodeConfig
    from synplan.synthtree import tree_to_dict

    conf = resolve(args, "optimize")
    model, index, env, inputs = _load_policy(args, conf["t_max"])
    oracle = oracle_from_spec(args.oracle)
    seeds = None
    if args.seeds:
        inputs["seeds"] = sha256_file(args.seeds)
        try:
            seeds = [parse_smiles(s) for s in _read_smiles_file(args.seeds)]
        except (ChemSyntaxError, UnsupportedFeature, ValenceError) as exc:
            raise FormatError(str(exc)) from exc
    gconf = GAConfig(population=conf["population"], offspring=conf["offspring"], flip_count=conf["flip_count"],
                     mutation_prob=conf["mutation_prob"], max_generations=conf["generations"],
                     window=conf["window"], threshold=conf["threshold"], seed=conf["seed"])
    out = _out_dir(args.out)
    man = RunManifest("optimize", conf | {"ga": gconf.to_dict(), "oracle": oracle.describe()}, inputs, conf["seed"])
    result = ga_run(oracle, model, index, env, gconf, seeds, DecodeConfig(t_max=conf["t_max"]),
                    mapper=lambda f, xs: pool_map(f, xs, args.threads))
    (out / "history.json").write_text(json.dumps({"stopped": result.stopped, "history": result.history}, indent=2) + "\n")
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for ind in result.ranked():
            fh.write(json.dumps({"smiles": ind.smiles, "fitness": ind.fitness, "tree": tree_to_dict(ind.tree)},
                                sort_keys=True, separators=(",", ":")) + "\n")
    man.outputs = {"generations": len(result.history) - 1, "stopped": result.stopped,
                   "best_fitness": result.best_fitness, "results.jsonl": sha256_file(out / "results.jsonl")}
    man.write(out)
    print(json.dumps({"best_fitness": result.best_fitness, "generations": len(result.history) - 1,
                      "stopped": result.stopped}))
    return EXIT_OK


def cmd_validate(args) -> int:
    from synplan.reactions import build_compatibility_masks, load_blocks, load_templates

    templates = load_templates(args.templates)
    blocks = load_blocks(args.blocks)
    masks, admitted = build_compatibility_masks(templates, blocks)
    per_template = []
    for t in templates:
        counts = [int(masks.position[t.id][p].sum()) for p in range(t.arity)]
        per_template.append({"id": t.id, "name": t.name, "arity": t.arity, "compatible_blocks": counts})
    report = {
        "n_templates": len(templates),
        "n_blocks": len(blocks),
        "admitted_blocks": len(admitted),
        "rejected_blocks": [blocks[i].smiles for i in range(len(blocks)) if i not in set(admitted)],
        "templates": per_template,
        "templates_without_blocks": [t["name"] for t in per_template if min(t["compatible_blocks"]) == 0],
    }
    print(json.dumps(report, indent=2))
    if args.out:
        out = _out_dir(args.out)
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        RunManifest("validate", {}, {"templates": sha256_file(args.templates), "blocks": sha256_file(args.blocks)}).write(out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synplan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML file with settings")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    g = sub.add_parser("gen-data", help="random-policy synthetic tree corpus and training shards")
    common(g)
    g.add_argument("--templates", required=True)
    g.add_argument("--blocks", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--t-max", dest="t_max", type=int)
    g.add_argument("--mlp-bits", dest="mlp_bits", type=int)
    g.add_argument("--knn-bits", dest="knn_bits", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the four policy networks")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output directory for the checkpoint and curves")
    t.add_argument("--resume", help="continue from an existing checkpoint")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--depth", type=int)
    t.set_defaults(func=cmd_train)

    def policy(sp):
        sp.add_argument("--ckpt", required=True)
        sp.add_argument("--templates", help="defaults to templates.txt beside the checkpoint")
        sp.add_argument("--blocks", help="defaults to blocks.smi beside the checkpoint")
        sp.add_argument("--t-max", dest="t_max", type=int)

    pl = sub.add_parser("plan", help="plan synthetic routes to target molecules")
    common(pl)
    policy(pl)
    pl.add_argument("--target")
    pl.add_argument("--targets", help="file with one SMILES per line")
    pl.add_argument("--k", type=int)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plan)

    o = sub.add_parser("optimize", help="genetic search for high-scoring synthesizable molecules")
    common(o)
    policy(o)
    o.add_argument("--oracle", required=True, help="similarity:SMILES | descriptor:k=v,... | command:CMD")
    o.add_argument("--seeds", help="file with seed SMILES")
    o.add_argument("--population", type=int)
    o.add_argument("--offspring", type=int)
    o.add_argument("--generations", type=int)
    o.add_argument("--seed", type=int)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    v = sub.add_parser("validate", help="check templates and building blocks")
    v.add_argument("--templates", required=True)
    v.add_argument("--blocks", required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, tomllib.TOMLDecodeError, FormatError, ChemSyntaxError,
            UnsupportedFeature, MappingError, ArityError, ValenceError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except InsufficientYield as exc:
        log.error("%s", exc)
        return EXIT_YIELD
    except (CompatibilityError, DimensionError) as exc:
        log.error("%s", exc)
        return EXIT_COMPAT


if __name__ == "__main__":
    sys.exit(main())
