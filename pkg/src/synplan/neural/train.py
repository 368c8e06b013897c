"""Mini-batch Adam training of the policy networks."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from synplan.errors import DimensionError, NonFiniteLoss
from synplan.neural.knn import KnnIndex, knn_query
from synplan.neural.mlp import MLP, Adam
from synplan.neural.model import TAGS, PolicyModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tags: tuple[str, ...] = TAGS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tags"] = list(self.tags)
        return d


@dataclass
class TrainHistory:
    loss: dict[str, list[float]] = field(default_factory=dict)
    accuracy: dict[str, list[float]] = field(default_factory=dict)
    val_accuracy: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(net: MLP, X: np.ndarray, y: np.ndarray, index: KnnIndex | None = None, chunk: int = 2048) -> float:
    """Top-1 accuracy in eval mode.

    Classifiers compare the argmax to the label. Regressors count a hit when
    the nearest building block to the prediction has exactly the target
    fingerprint.
    """
    if len(X) == 0:
        return float("nan")
    hits = 0
    for k in range(0, len(X), chunk):
        out = net.forward(X[k : k + chunk])
        yy = y[k : k + chunk]
        if net.kind == "classifier":
            hits += int((out.argmax(axis=1) == yy).sum())
        else:
            if index is None:
                raise ValueError("regressor accuracy needs a k-NN index")
            for row, target in zip(out, yy):
                bid, _ = knn_query(index, row, 1)[0]
                r = int(np.searchsorted(index.ids, bid))
                hits += bool(np.array_equal(index.matrix[r], target))
    return hits / len(X)


def _as_xy(shard, net: MLP) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(shard.X, dtype=net.dtype)
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise DimensionError(f"{shard.tag} shard has width {X.shape}, network expects {net.in_dim}")
    y = np.asarray(shard.y)
    y = y.astype(np.int64) if net.kind == "classifier" else y.astype(net.dtype)
    return X, y


def train_network(
    net: MLP,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    tag: str = "",
    index: KnnIndex | None = None,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    history: TrainHistory | None = None,
) -> None:
    opt = Adam(net.params, config.lr, config.beta1, config.beta2, config.eps)
    n = len(X)
    bs = config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for k in range(0, n, bs):
            idx = order[k : k + bs]
            if len(idx) < 2:
                # a single leftover row cannot be batch-normalized
                continue
            loss, grads = net.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"{tag}: non-finite loss at epoch {epoch}, batch {k // bs}")
            opt.step(net.params, grads)
            total += loss * len(idx)
            count += len(idx)
        mean = total / max(count, 1)
        if history is not None:
            history.loss.setdefault(tag, []).append(mean)
        log.info("%s epoch %d loss %.5f", tag, epoch + 1, mean)
    net.calibrate(X)
    if history is not None:
        history.accuracy.setdefault(tag, []).append(accuracy(net, X, y, index))
        if val is not None and len(val[0]):
            history.val_accuracy.setdefault(tag, []).append(accuracy(net, val[0], val[1], index))


def train(
    model: PolicyModel,
    shards: dict,
    config: TrainConfig = TrainConfig(),
    index: KnnIndex | None = None,
    val_shards: dict | None = None,
) -> TrainHistory:
    """Train each requested network on its shard, then calibrate batch norm.

    Each network gets its own shuffling stream derived from ``config.seed``,
    so results do not depend on which other networks are trained.
    """
    history = TrainHistory()
    for k, tag in enumerate(TAGS):
        if tag not in config.tags:
            continue
        net = model.nets[tag]
        if tag not in shards or len(shards[tag]) < 2:
            log.warning("%s: fewer than 2 examples, network left untrained", tag)
            continue
        X, y = _as_xy(shards[tag], net)
        val = _as_xy(val_shards[tag], net) if val_shards and tag in val_shards else None
        rng = np.random.default_rng([config.seed, 1000 + k])
        train_network(net, X, y, config, rng, tag, index if net.kind == "regressor" else None, val, history)
    return history
