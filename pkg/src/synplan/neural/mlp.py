"""Dense network: (affine -> batch norm -> ReLU) x depth, then an affine output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synplan.errors import DimensionError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LayerCache:
    x: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    pre_relu: np.ndarray


class MLP:
    """Classifier (logits + cross entropy) or regressor (linear + MSE).

    Hidden affine layers carry no bias; the batch-norm shift takes that role.
    Parameters live in ``self.params`` under stable names, running
    statistics in ``self.buffers``.
    """

    def __init__(self, in_dim: int, hidden: list[int], out_dim: int, kind: str, rng: np.random.Generator, dtype=np.float32):
        if kind not in ("classifier", "regressor"):
            raise ValueError(f"unknown network kind {kind!r}")
        if in_dim <= 0 or out_dim <= 0 or any(h <= 0 for h in hidden):
            raise DimensionError(f"bad dimensions {in_dim}, {hidden}, {out_dim}")
        self.in_dim, self.hidden, self.out_dim, self.kind = in_dim, list(hidden), out_dim, kind
        self.dtype = dtype
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        dims = [in_dim] + self.hidden
        for i in range(len(self.hidden)):
            bound = 1.0 / np.sqrt(dims[i])
            self.params[f"W{i}"] = rng.uniform(-bound, bound, (dims[i], dims[i + 1])).astype(dtype)
            self.params[f"gamma{i}"] = np.ones(dims[i + 1], dtype=dtype)
            self.params[f"beta{i}"] = np.zeros(dims[i + 1], dtype=dtype)
            self.buffers[f"mean{i}"] = np.zeros(dims[i + 1], dtype=dtype)
            self.buffers[f"var{i}"] = np.ones(dims[i + 1], dtype=dtype)
        bound = 1.0 / np.sqrt(dims[-1])
        self.params["W_out"] = rng.uniform(-bound, bound, (dims[-1], out_dim)).astype(dtype)
        self.params["b_out"] = np.zeros(out_dim, dtype=dtype)

    @property
    def depth(self) -> int:
        return len(self.hidden)

    def astype(self, dtype) -> "MLP":
        self.dtype = dtype
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return self

    def forward(self, X: np.ndarray, train: bool = False, update_stats: bool = True):
        """Return outputs, plus the backward cache when ``train`` is set.

        Train mode normalizes with batch statistics (and folds them into the
        running averages unless ``update_stats`` is False); eval mode uses
        the running statistics, so each row's output is independent of the
        rest of the batch.
        """
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise DimensionError(f"expected input width {self.in_dim}, got {X.shape}")
        if train and X.shape[0] < 2:
            raise DimensionError("train-mode batch norm needs at least 2 rows")
        h = X
        caches = []
        for i in range(self.depth):
            z = h @ self.params[f"W{i}"]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    m = BN_MOMENTUM
                    n = z.shape[0]
                    self.buffers[f"mean{i}"] = ((1 - m) * self.buffers[f"mean{i}"] + m * mu).astype(self.dtype)
                    self.buffers[f"var{i}"] = ((1 - m) * self.buffers[f"var{i}"] + m * var * n / (n - 1)).astype(self.dtype)
            else:
                mu, var = self.buffers[f"mean{i}"], self.buffers[f"var{i}"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv_std
            a = self.params[f"gamma{i}"] * xhat + self.params[f"beta{i}"]
            if train:
                caches.append(LayerCache(h, xhat, inv_std, a))
            h = np.maximum(a, 0)
        out = h @ self.params["W_out"] + self.params["b_out"]
        if train:
            return out, (caches, h)
        return out

    def backward(self, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        caches, h_last = cache
        grads: dict[str, np.ndarray] = {}
        grads["W_out"] = h_last.T @ dout
        grads["b_out"] = dout.sum(axis=0)
        dh = dout @ self.params["W_out"].T
        for i in reversed(range(self.depth)):
            c = caches[i]
            da = dh * (c.pre_relu > 0)
            grads[f"gamma{i}"] = (da * c.xhat).sum(axis=0)
            grads[f"beta{i}"] = da.sum(axis=0)
            dxhat = da * self.params[f"gamma{i}"]
            n = dxhat.shape[0]
            dz = (c.inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - c.xhat * (dxhat * c.xhat).sum(axis=0))
            grads[f"W{i}"] = c.x.T @ dz
            dh = dz @ self.params[f"W{i}"].T
        return grads

    def loss(self, out: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean loss over the batch and its gradient w.r.t. ``out``."""
        n = out.shape[0]
        if self.kind == "classifier":
            z = out - out.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            loss = -float(logp[np.arange(n), y].mean())
            d = np.exp(logp)
            d[np.arange(n), y] -= 1.0
            return loss, (d / n).astype(out.dtype)
        diff = out - y
        loss = float((diff**2).mean())
        return loss, (2.0 * diff / diff.size).astype(out.dtype)

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray, update_stats: bool = True):
        out, cache = self.forward(X, train=True, update_stats=update_stats)
        loss, dout = self.loss(out, y)
        return loss, self.backward(cache, dout)

    def calibrate(self, X: np.ndarray, chunk: int = 4096) -> None:
        """Set running statistics to exact population moments of ``X``, layer by layer."""
        X = np.asarray(X, dtype=self.dtype)
        h = X
        for i in range(self.depth):
            z = np.concatenate([h[k : k + chunk] @ self.params[f"W{i}"] for k in range(0, len(h), chunk)])
            mu, var = z.mean(axis=0), z.var(axis=0)
            self.buffers[f"mean{i}"] = mu.astype(self.dtype)
            self.buffers[f"var{i}"] = var.astype(self.dtype)
            a = self.params[f"gamma{i}"] * (z - mu) / np.sqrt(var + BN_EPS) + self.params[f"beta{i}"]
            h = np.maximum(a, 0)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """Parameters then buffers, in a fixed order."""
        names = []
        for i in range(self.depth):
            names += [f"W{i}", f"gamma{i}", f"beta{i}"]
        names += ["W_out", "b_out"]
        out = [(n, self.params[n]) for n in names]
        for i in range(self.depth):
            out += [(f"mean{i}", self.buffers[f"mean{i}"]), (f"var{i}", self.buffers[f"var{i}"])]
        return out


def softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax; masked-out entries get exactly 0 and the rest renormalize."""
    z = np.array(logits, dtype=np.float64)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            params[k] -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(params[k].dtype)
