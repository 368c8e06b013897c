"""Fingerprint featurization of trees and molecules for the policy networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synplan.molgraph import Molecule, morgan_fingerprint


@dataclass(frozen=True)
class FeatureConfig:
    mlp_bits: int = 1024
    knn_bits: int = 128
    radius: int = 2

    def to_dict(self) -> dict:
        return {"mlp_bits": self.mlp_bits, "knn_bits": self.knn_bits, "radius": self.radius}


class Featurizer:
    def __init__(self, config: FeatureConfig = FeatureConfig()):
        self.config = config

    def mlp_bits(self, mol: Molecule) -> np.ndarray:
        return morgan_fingerprint(mol, self.config.radius, self.config.mlp_bits).bits

    def mlp(self, mol: Molecule | None) -> np.ndarray:
        if mol is None:
            return np.zeros(self.config.mlp_bits, dtype=np.float32)
        return self.mlp_bits(mol).astype(np.float32)

    def knn(self, mol: Molecule) -> np.ndarray:
        return morgan_fingerprint(mol, self.config.radius, self.config.knn_bits).bits.astype(np.float32)

    def state(self, roots: list[Molecule]) -> np.ndarray:
        """Two root slots, most recent first, zero-padded."""
        a = self.mlp(roots[0] if roots else None)
        b = self.mlp(roots[1] if len(roots) > 1 else None)
        return np.concatenate([a, b])

    def one_hot(self, k: int, n: int) -> np.ndarray:
        v = np.zeros(n, dtype=np.float32)
        v[k] = 1.0
        return v
