"""Hashed circular fingerprints and distances.

Atom environments are hashed with FNV-1a (64-bit, fixed seed constant) so
bit positions are reproducible across runs and platforms.  Implicit
hydrogens are not part of the atom invariant; the dialect never writes them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import MolGraph

_FNV_OFFSET = 0xCBF29CE484222325
_PRIME = 0x9E3779B97F4A7C15  # odd 64-bit golden-ratio constant
_MASK64 = (1 << 64) - 1
_SEED = 0x5AFE5EED0C0FFEE1  # compiled-in; changing it changes every fingerprint


def fnv1a64(values) -> int:
    """Word-wise FNV-style fold over 64-bit values with a murmur finalizer.

    Fixed constants and seed keep bit positions identical across runs and
    platforms; the finalizer diffuses entropy into the low bits used by the
    modulo fold.
    """
    h = _FNV_OFFSET ^ _SEED
    for v in values:
        h = ((h ^ (v & _MASK64)) * _PRIME) & _MASK64
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _MASK64
    h ^= h >> 33
    return h


def _element_code(element: str) -> int:
    code = 0
    for ch in element.encode():
        code = code * 256 + ch
    return code


@dataclass(frozen=True)
class Fingerprint:
    """Sparse bit/count vector over a fixed index space."""

    n_bits: int
    on_bits: np.ndarray  # sorted unique int64 indices
    counts: np.ndarray  # int64, aligned with on_bits, all >= 1

    def popcount(self) -> int:
        return len(self.on_bits)

    def dense_counts(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.n_bits, dtype=dtype)
        out[self.on_bits] = self.counts
        return out

    def dense_bits(self) -> np.ndarray:
        out = np.zeros(self.n_bits, dtype=np.uint8)
        out[self.on_bits] = 1
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Fingerprint)
            and self.n_bits == other.n_bits
            and np.array_equal(self.on_bits, other.on_bits)
            and np.array_equal(self.counts, other.counts)
        )

    def __hash__(self):
        return hash((self.n_bits, self.on_bits.tobytes(), self.counts.tobytes()))


class AugmentedFingerprint(Fingerprint):
    """Elementwise sum of several molecules' count vectors."""


def fingerprint(g: MolGraph, radius: int = 2, n_bits: int = 2048) -> Fingerprint:
    """Circular fingerprint: every environment at every radius sets one index."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if n_bits <= 0 or n_bits & (n_bits - 1):
        raise ValueError("n_bits must be a power of two")
    n = g.n_atoms
    base = _FNV_OFFSET ^ _SEED
    ids = []
    for i, a in enumerate(g.atoms):
        h = ((base ^ _element_code(a.element)) * _PRIME) & _MASK64
        h = ((h ^ g.degree(i)) * _PRIME) & _MASK64
        h = ((h ^ (a.charge & _MASK64)) * _PRIME) & _MASK64
        h = ((h ^ (1 if a.aromatic else 0)) * _PRIME) & _MASK64
        h ^= h >> 33
        h = (h * 0xFF51AFD7ED558CCD) & _MASK64
        h ^= h >> 33
        ids.append(h)
    emitted = list(ids)
    for _ in range(radius):
        nxt = []
        for i in range(n):
            h = ((base ^ ids[i]) * _PRIME) & _MASK64
            for order, nbr_id in sorted((o, ids[j]) for j, o in g.neighbors(i)):
                h = ((h ^ order) * _PRIME) & _MASK64
                h = ((h ^ nbr_id) * _PRIME) & _MASK64
            h ^= h >> 33
            h = (h * 0xFF51AFD7ED558CCD) & _MASK64
            h ^= h >> 33
            nxt.append(h)
        ids = nxt
        emitted.extend(ids)
    idx = np.array([e % n_bits for e in emitted], dtype=np.int64)
    on_bits, counts = np.unique(idx, return_counts=True)
    return Fingerprint(n_bits, on_bits, counts.astype(np.int64))


def augment(fps) -> AugmentedFingerprint:
    """Sum of count vectors; invariant under member ordering."""
    fps = list(fps)
    if not fps:
        raise ValueError("augment requires at least one fingerprint")
    n_bits = fps[0].n_bits
    if any(fp.n_bits != n_bits for fp in fps):
        raise ValueError("mismatched fingerprint widths")
    total: dict[int, int] = {}
    for fp in fps:
        for b, c in zip(fp.on_bits.tolist(), fp.counts.tolist()):
            total[b] = total.get(b, 0) + c
    on = np.array(sorted(total), dtype=np.int64)
    counts = np.array([total[b] for b in on], dtype=np.int64)
    return AugmentedFingerprint(n_bits, on, counts)


def distance(a: Fingerprint, b: Fingerprint, metric: str = "tanimoto") -> float:
    """Tanimoto distance on bit sets or Euclidean distance on count vectors."""
    if a.n_bits != b.n_bits:
        raise ValueError("mismatched fingerprint widths")
    if metric == "tanimoto":
        inter = np.intersect1d(a.on_bits, b.on_bits, assume_unique=True).size
        union = a.on_bits.size + b.on_bits.size - inter
        if union == 0:
            return 0.0
        return 1.0 - inter / union
    if metric == "euclidean":
        keys = np.union1d(a.on_bits, b.on_bits)
        va = np.zeros(keys.size)
        vb = np.zeros(keys.size)
        va[np.searchsorted(keys, a.on_bits)] = a.counts
        vb[np.searchsorted(keys, b.on_bits)] = b.counts
        return float(np.linalg.norm(va - vb))
    raise ValueError(f"unknown metric {metric!r}")
