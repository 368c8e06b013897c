"""The four policy networks, their dimension contract, and checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from synplan.errors import CompatibilityError, DimensionError, FormatError
from synplan.neural.mlp import MLP

TAGS = ("act", "rt1", "rxn", "rt2")
KINDS = {"act": "classifier", "rt1": "regressor", "rxn": "classifier", "rt2": "regressor"}
PAPER_HIDDEN = {"act": [1000] * 4, "rt1": [1200] * 4, "rxn": [3000] * 4, "rt2": [3000] * 4}
TOY_HIDDEN = {"act": [256] * 4, "rt1": [256] * 4, "rxn": [256] * 4, "rt2": [256] * 4}

CKPT_MAGIC = b"SYNPCKPT"
CKPT_VERSION = 1


@dataclass
class ModelDims:
    mlp_bits: int = 1024
    knn_bits: int = 128
    n_templates: int = 5
    radius: int = 2
    hidden: dict[str, list[int]] = field(default_factory=lambda: {k: list(v) for k, v in TOY_HIDDEN.items()})

    def __post_init__(self):
        if set(self.hidden) != set(TAGS):
            raise DimensionError(f"hidden widths needed for {TAGS}, got {sorted(self.hidden)}")
        if min(self.mlp_bits, self.knn_bits, self.n_templates) <= 0:
            raise DimensionError("dimensions must be positive")

    @classmethod
    def paper(cls, n_templates: int = 91) -> "ModelDims":
        return cls(4096, 256, n_templates, 2, {k: list(v) for k, v in PAPER_HIDDEN.items()})

    @property
    def state_dim(self) -> int:
        return 2 * self.mlp_bits

    def input_dim(self, tag: str) -> int:
        base = self.state_dim + self.mlp_bits
        return {"act": base, "rt1": base, "rxn": base + self.mlp_bits, "rt2": base + self.mlp_bits + self.n_templates}[tag]

    def output_dim(self, tag: str) -> int:
        return {"act": 4, "rt1": self.knn_bits, "rxn": self.n_templates, "rt2": self.knn_bits}[tag]

    def to_dict(self) -> dict:
        return asdict(self)


class PolicyModel:
    def __init__(self, dims: ModelDims, nets: dict[str, MLP], templates_hash: str = ""):
        for tag in TAGS:
            net = nets[tag]
            if net.in_dim != dims.input_dim(tag) or net.out_dim != dims.output_dim(tag):
                raise DimensionError(
                    f"{tag} network is {net.in_dim}->{net.out_dim}, contract says "
                    f"{dims.input_dim(tag)}->{dims.output_dim(tag)}"
                )
        self.dims = dims
        self.nets = nets
        self.templates_hash = templates_hash

    def __getitem__(self, tag: str) -> MLP:
        return self.nets[tag]

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for net in self.nets.values() for _, a in net.tensors())

    def digest(self) -> str:
        h = hashlib.sha256()
        for tag in TAGS:
            for name, a in self.nets[tag].tensors():
                h.update(f"{tag}/{name}".encode())
                h.update(np.ascontiguousarray(a, dtype="<f4").tobytes())
        return h.hexdigest()


def init_model(dims: ModelDims, seed: int = 0, templates_hash: str = "", dtype=np.float32) -> PolicyModel:
    """Fan-in uniform weights, zero output bias, unit BN scale, zero BN shift."""
    nets = {}
    for k, tag in enumerate(TAGS):
        rng = np.random.default_rng([seed, k])
        nets[tag] = MLP(dims.input_dim(tag), dims.hidden[tag], dims.output_dim(tag), KINDS[tag], rng, dtype)
    return PolicyModel(dims, nets, templates_hash)


# -- checkpoint container ----------------------------------------------------
#
#   magic "SYNPCKPT" | u32 header length | JSON header | tensors (little-endian f32)
#
# The header lists every tensor (network, name, shape) in payload order plus a
# SHA-256 of the payload.


def save_checkpoint(model: PolicyModel, path: str | Path, extra: dict | None = None) -> None:
    entries = []
    chunks = []
    for tag in TAGS:
        for name, a in model.nets[tag].tensors():
            entries.append([tag, name, list(a.shape)])
            chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    header = {
        "version": CKPT_VERSION,
        "dims": model.dims.to_dict(),
        "templates_hash": model.templates_hash,
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(payload)


def read_checkpoint_header(path: str | Path) -> dict:
    raw = Path(path).read_bytes()
    header, _ = _split(raw, path)
    return header


def _split(raw: bytes, path) -> tuple[dict, bytes]:
    if len(raw) < 12 or raw[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    if header.get("version") != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = raw[12 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise FormatError(f"{path}: payload checksum mismatch (file corrupted or truncated)")
    return header, payload


def load_checkpoint(
    path: str | Path, templates_hash: str | None = None, n_templates: int | None = None
) -> PolicyModel:
    """Load a checkpoint, refusing one built for a different template set."""
    header, payload = _split(Path(path).read_bytes(), path)
    d = header["dims"]
    dims = ModelDims(d["mlp_bits"], d["knn_bits"], d["n_templates"], d["radius"], d["hidden"])
    if n_templates is not None and dims.n_templates != n_templates:
        raise CompatibilityError(f"checkpoint has {dims.n_templates} templates, environment has {n_templates}")
    if templates_hash is not None and header["templates_hash"] and header["templates_hash"] != templates_hash:
        raise CompatibilityError("checkpoint was trained for a different template set")
    model = init_model(dims, 0, header["templates_hash"])
    off = 0
    for tag, name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        if off + 4 * n > len(payload):
            raise FormatError(f"{path}: payload too short")
        a = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        off += 4 * n
        net = model.nets[tag]
        store = net.params if name in net.params else net.buffers
        if name not in store or store[name].shape != a.shape:
            raise FormatError(f"{path}: unexpected tensor {tag}/{name} {shape}")
        store[name] = a
    if off != len(payload):
        raise FormatError(f"{path}: trailing payload bytes")
    return model
