"""Evaluation analytics: SALI, property correlations, corpus summaries."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from synplan.errors import DegenerateVariance, EmptyAfterExclusion
from synplan.synthtree import SyntheticTree


@dataclass(frozen=True)
class PropertyPair:
    target: str
    product: str
    d_target: float
    d_product: float
    similarity: float


def sali(pairs: Sequence[PropertyPair], value_range: float | None = None) -> float:
    """Mean of |d_i - d_j| / range / (1 - sim) over pairs with sim < 1.

    ``range`` defaults to the spread of all observed property values. Pairs
    with identical fingerprints (sim == 1) are skipped since the ratio is
    undefined there.
    """
    if value_range is None:
        vals = [p.d_target for p in pairs] + [p.d_product for p in pairs]
        value_range = (max(vals) - min(vals)) if vals else 0.0
    if not value_range > 0:
        raise DegenerateVariance("property range must be positive")
    kept = [p for p in pairs if p.similarity < 1.0]
    if not kept:
        raise EmptyAfterExclusion("no pair left after excluding similarity 1")
    total = math.fsum(abs(p.d_target - p.d_product) / value_range / (1.0 - p.similarity) for p in kept)
    return total / len(kept)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length series with at least 2 points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise DegenerateVariance("a series has zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def correlation_report(by_property: dict[str, Sequence[PropertyPair]]) -> dict[str, dict]:
    """Per property: Pearson r between target and product values, plus CSV scatter."""
    out = {}
    for name, pairs in by_property.items():
        r = pearson([p.d_target for p in pairs], [p.d_product for p in pairs])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["target", "product", "target_value", "product_value", "similarity"])
        for p in pairs:
            w.writerow([p.target, p.product, repr(p.d_target), repr(p.d_product), repr(p.similarity)])
        out[name] = {"pearson_r": r, "n": len(pairs), "csv": buf.getvalue()}
    return out


def corpus_summary(trees: Iterable[SyntheticTree]) -> dict:
    depth = Counter()
    n_rxn = Counter()
    templates = Counter()
    blocks = Counter()
    n = 0
    for t in trees:
        n += 1
        depth[t.depth()] += 1
        n_rxn[len(t.reactions)] += 1
        templates.update(r.template for r in t.reactions)
        blocks.update(m.smiles for m in t.molecules if m.role == "building_block")
    return {
        "n_trees": n,
        "depth_histogram": dict(sorted(depth.items())),
        "reactions_per_tree": dict(sorted(n_rxn.items())),
        "template_usage": dict(sorted(templates.items())),
        "block_usage": dict(sorted(blocks.items())),
    }
