"""Molecular graphs, parsing, canonicalization, and fingerprints."""

from .canonical import canonicalize, canonical_ranks
from .fingerprint import AugmentedFingerprint, Fingerprint, augment, distance, fingerprint, fnv1a64
from .graph import AROMATIC, Atom, Bond, DOUBLE, GraphError, MolGraph, SINGLE, TRIPLE
from .parser import SmilesError, parse_smiles


def canonical_smiles(text: str) -> str:
    """Parse and canonicalize one molecule string."""
    return canonicalize(parse_smiles(text))


__all__ = [
    "AROMATIC",
    "Atom",
    "AugmentedFingerprint",
    "Bond",
    "DOUBLE",
    "Fingerprint",
    "GraphError",
    "MolGraph",
    "SINGLE",
    "SmilesError",
    "TRIPLE",
    "augment",
    "canonical_ranks",
    "canonical_smiles",
    "canonicalize",
    "distance",
    "fingerprint",
    "fnv1a64",
    "parse_smiles",
]
