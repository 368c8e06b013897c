"""Chemical value layer: molecules, SMILES, canonical ranks, fingerprints."""

from synplan.molgraph.canon import canonical_ranks
from synplan.molgraph.fingerprint import (
    Fingerprint,
    cosine,
    morgan_fingerprint,
    pack_bits,
    tanimoto,
    tanimoto_bits,
    tanimoto_many,
)
from synplan.molgraph.molecule import (
    AROMATIC,
    DOUBLE,
    SINGLE,
    TRIPLE,
    Atom,
    Bond,
    Molecule,
    allowed_valences,
    descriptors,
)
from synplan.molgraph.smiles import parse_smiles, write_canonical_smiles

__all__ = [
    "AROMATIC",
    "DOUBLE",
    "SINGLE",
    "TRIPLE",
    "Atom",
    "Bond",
    "Fingerprint",
    "Molecule",
    "allowed_valences",
    "canonical_ranks",
    "cosine",
    "descriptors",
    "morgan_fingerprint",
    "pack_bits",
    "parse_smiles",
    "tanimoto",
    "tanimoto_bits",
    "tanimoto_many",
    "write_canonical_smiles",
]
