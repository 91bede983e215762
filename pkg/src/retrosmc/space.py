"""Reactant catalog and the combinatorial space of route hypotheses.

A particle is a tuple of index groups, one group per reaction step, each
group holding the catalog indices of that step's extra reactants sorted by
their canonical string.  Pairs are unordered with replacement.  Spaces are
rankable, so uniform sampling and enumeration are exact.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .chem import canonical_smiles, fingerprint, parse_smiles

Particle = tuple  # tuple[tuple[int, ...], ...]


class Catalog:
    """Purchasable molecules: canonical strings plus parsed graphs and prints."""

    def __init__(self, entries, radius: int = 2, n_bits: int = 2048):
        self.entries = list(entries)
        if not self.entries:
            raise ValueError("empty catalog")
        self.radius = radius
        self.n_bits = n_bits
        self.graphs = [parse_smiles(s) for s in self.entries]
        self.fps = [fingerprint(g, radius, n_bits) for g in self.graphs]
        n = len(self.entries)
        self.string_order = sorted(range(n), key=self.entries.__getitem__)
        self.rank_of = [0] * n
        for rank, idx in enumerate(self.string_order):
            self.rank_of[idx] = rank

    def __len__(self) -> int:
        return len(self.entries)

    def dense_counts(self) -> np.ndarray:
        """(n_entries, n_bits) count matrix; built once, cached."""
        cached = getattr(self, "_dense", None)
        if cached is None:
            cached = np.zeros((len(self.entries), self.n_bits), dtype=np.int16)
            for i, fp in enumerate(self.fps):
                cached[i, fp.on_bits] = fp.counts
            self._dense = cached
        return cached

    def space(self, shape) -> "ParticleSpace":
        """Memoized particle space for a route shape."""
        shape = tuple(int(x) for x in shape)
        spaces = getattr(self, "_spaces", None)
        if spaces is None:
            spaces = {}
            self._spaces = spaces
        if shape not in spaces:
            spaces[shape] = ParticleSpace(self, shape)
        return spaces[shape]

    @classmethod
    def load(cls, path, radius: int = 2, n_bits: int = 2048) -> "Catalog":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                canon = canonical_smiles(line)
                if canon != line:
                    warnings.warn(
                        f"{path}:{lineno}: non-canonical entry {line!r} "
                        f"canonicalized to {canon!r}"
                    )
                entries.append(canon)
        return cls(entries, radius, n_bits)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.entries:
                fh.write(s + "\n")


def _pair_count(n: int) -> int:
    return n * (n + 1) // 2


def _unrank_pair(r: int, n: int) -> tuple[int, int]:
    # pairs (a, b) with a <= b in rank space, ordered by (a, b)
    a = int((2 * n + 1 - math.isqrt((2 * n + 1) ** 2 - 8 * r)) // 2)
    while r >= (a + 1) * n - (a * (a + 1)) // 2:
        a += 1
    while r < a * n - ((a - 1) * a) // 2:
        a -= 1
    b = a + (r - (a * n - ((a - 1) * a) // 2))
    return a, b


class ParticleSpace:
    """All particles of one route shape over a catalog."""

    def __init__(self, catalog: Catalog, shape):
        shape = tuple(int(x) for x in shape)
        if not shape or any(s not in (1, 2) for s in shape):
            raise ValueError("route shape must be groups of 1 or 2 reactants")
        self.catalog = catalog
        self.shape = shape
        n = len(catalog)
        self._group_sizes = [n if s == 1 else _pair_count(n) for s in shape]
        self.size = 1
        for g in self._group_sizes:
            self.size *= g
        self.n_slots = sum(shape)
        self._key_cache: dict = {}

    def unrank(self, r: int) -> Particle:
        if not (0 <= r < self.size):
            raise ValueError("rank out of range")
        n = len(self.catalog)
        order = self.catalog.string_order
        groups = []
        for s, g in zip(reversed(self.shape), reversed(self._group_sizes)):
            r, local = divmod(r, g)
            if s == 1:
                groups.append((order[local],))
            else:
                a, b = _unrank_pair(local, n)
                groups.append((order[a], order[b]))
        return tuple(reversed(groups))

    def sample(self, rng) -> Particle:
        return self.unrank(int(rng.integers(self.size)))

    def key(self, particle: Particle) -> str:
        k = self._key_cache.get(particle)
        if k is None:
            entries = self.catalog.entries
            k = ">>".join(
                ".".join(entries[i] for i in group) for group in particle
            )
            self._key_cache[particle] = k
        return k

    def normalize(self, particle) -> Particle:
        rank = self.catalog.rank_of
        return tuple(
            tuple(sorted(group, key=rank.__getitem__)) for group in particle
        )

    def flat_slots(self):
        """(step, position) addresses of every slot, in order."""
        return [
            (step, pos)
            for step, group in enumerate(self.shape)
            for pos in range(group)
        ]

    def replace_slot(self, particle: Particle, slot, new_entry: int) -> Particle:
        step, pos = slot
        groups = [list(g) for g in particle]
        groups[step][pos] = int(new_entry)
        return self.normalize(tuple(tuple(g) for g in groups))

    def reactants(self, particle: Particle):
        """Per-step tuples of canonical strings."""
        entries = self.catalog.entries
        return tuple(
            tuple(entries[i] for i in group) for group in particle
        )


def particle_fingerprint(space: ParticleSpace, particle: Particle):
    """Augmented count fingerprint over all reactants in the particle."""
    from .chem import augment

    fps = [space.catalog.fps[i] for group in particle for i in group]
    return augment(fps)


def dense_particle_rows(space: ParticleSpace, particles) -> np.ndarray:
    """(batch, n_bits) summed count rows; all particles share one shape."""
    dense = space.catalog.dense_counts()
    idx = np.array(
        [[i for group in p for i in group] for p in particles], dtype=np.int64
    )
    return dense[idx].sum(axis=1, dtype=np.int64)
