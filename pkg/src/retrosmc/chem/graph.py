"""Molecular graphs for the restricted line-notation dialect.

Atoms carry (element, formal charge, aromatic flag); bonds carry an order
code.  Aromatic bonds use a dedicated code so they can be round-tripped
without any ring-perception step.
"""

from __future__ import annotations

from dataclasses import dataclass

SINGLE = 1
DOUBLE = 2
TRIPLE = 3
AROMATIC = 4

# Contribution of each bond order to an atom's valence count.
VALENCE_CONTRIB = {SINGLE: 1.0, DOUBLE: 2.0, TRIPLE: 3.0, AROMATIC: 1.5}

# Per-element maximum valence.  Implicit hydrogens are not modeled, so the
# check is an upper bound on explicit bonds only.
MAX_VALENCE = {
    "B": 3.0,
    "C": 4.0,
    "N": 3.0,
    "O": 2.0,
    "P": 5.0,
    "S": 6.0,
    "F": 1.0,
    "Cl": 1.0,
    "Br": 1.0,
    "I": 1.0,
}

# Elements allowed to carry the aromatic flag in this dialect.
AROMATIC_ELEMENTS = {"C", "N", "O", "S"}


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: int


class GraphError(ValueError):
    """Raised when atoms/bonds do not form a valid molecular graph."""


class MolGraph:
    """Connected molecular graph with immutable atoms and bonds."""

    __slots__ = ("atoms", "bonds", "_adj", "_tags")

    def __init__(self, atoms, bonds):
        atoms = tuple(atoms)
        bonds = tuple(Bond(min(b.a, b.b), max(b.a, b.b), b.order) for b in bonds)
        n = len(atoms)
        if n == 0:
            raise GraphError("empty molecule")
        seen = set()
        for b in bonds:
            if not (0 <= b.a < n and 0 <= b.b < n):
                raise GraphError(f"bond ({b.a},{b.b}) out of range")
            if b.a == b.b:
                raise GraphError(f"self-bond on atom {b.a}")
            if (b.a, b.b) in seen:
                raise GraphError(f"duplicate bond ({b.a},{b.b})")
            if b.order not in VALENCE_CONTRIB:
                raise GraphError(f"unknown bond order {b.order}")
            seen.add((b.a, b.b))
        self.atoms = atoms
        self.bonds = bonds
        adj = [[] for _ in range(n)]
        for b in bonds:
            adj[b.a].append((b.b, b.order))
            adj[b.b].append((b.a, b.order))
        self._adj = [tuple(sorted(x)) for x in adj]
        if not self._connected():
            raise GraphError("graph is not connected")

    def _connected(self) -> bool:
        n = len(self.atoms)
        seen = {0}
        stack = [0]
        while stack:
            for j, _ in self._adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == n

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def atom_tags(self):
        """Multiset of (element, aromatic) pairs, cached for match prescreens."""
        try:
            return self._tags
        except AttributeError:
            tags: dict = {}
            for a in self.atoms:
                t = (a.element, a.aromatic)
                tags[t] = tags.get(t, 0) + 1
            self._tags = tags
            return tags

    def neighbors(self, i: int):
        """Sorted (neighbor index, bond order) pairs of atom i."""
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def valence(self, i: int) -> float:
        # Aromatic bonds count 1.5 on carbon, 1.0 on heteroatoms (ring lone
        # pairs); fused-ring carbons are later floored to stay legal.
        total = 0.0
        for _, o in self._adj[i]:
            if o == AROMATIC and self.atoms[i].element != "C":
                total += 1.0
            else:
                total += VALENCE_CONTRIB[o]
        return total

    def valence_violation(self) -> int | None:
        """Index of the first atom exceeding its element's maximum, if any."""
        for i, atom in enumerate(self.atoms):
            limit = MAX_VALENCE.get(atom.element)
            if limit is None:
                continue
            if atom.element == "N":
                limit = limit + atom.charge
            if int(self.valence(i) + 1e-9) > limit + 1e-9:
                return i
        return None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MolGraph)
            and self.atoms == other.atoms
            and self.bonds == other.bonds
        )

    def __hash__(self) -> int:
        return hash((self.atoms, self.bonds))

    def __repr__(self) -> str:
        return f"MolGraph({len(self.atoms)} atoms, {len(self.bonds)} bonds)"
