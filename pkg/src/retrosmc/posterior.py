"""Boltzmann likelihoods and the deduplicated posterior over visited particles.

Every particle ever evaluated lands in one table keyed by its canonical
route key; weights are exp(-beta * energy) with the exact stored energy, so
the table is an exact restriction of the posterior to its support.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .chem import Fingerprint, distance, fingerprint, parse_smiles
from .model import Prediction

DEFAULT_BETA = 20.0
DEFAULT_EUCLIDEAN_CAP = 10.0


class IntegrityError(RuntimeError):
    """Same key re-recorded with a different energy: the forward model lied."""


@dataclass(frozen=True)
class Target:
    y_star: str  # canonical
    fp: Fingerprint

    @classmethod
    def from_smiles(cls, smiles: str, radius: int = 2, n_bits: int = 2048) -> "Target":
        return cls(smiles, fingerprint(parse_smiles(smiles), radius, n_bits))


def energy(
    target: Target,
    pred: Prediction,
    metric: str = "tanimoto",
    product_fp: Fingerprint | None = None,
    euclidean_cap: float = DEFAULT_EUCLIDEAN_CAP,
) -> float:
    """Distance between target and predicted product fingerprints.

    Invalid predictions score the metric maximum (1 for tanimoto, a
    configured cap for euclidean).
    """
    if not pred.valid:
        return 1.0 if metric == "tanimoto" else euclidean_cap
    if product_fp is None:
        product_fp = fingerprint(
            parse_smiles(pred.product), n_bits=target.fp.n_bits
        )
    return distance(target.fp, product_fp, metric)


def likelihood(e: float, beta: float) -> float:
    """Boltzmann weight exp(-beta * e); 1 at zero energy or zero beta."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return math.exp(-beta * e)


@dataclass
class PosteriorTable:
    beta: float = DEFAULT_BETA
    entries: dict = field(default_factory=dict)  # key -> (particle, energy, weight)
    normalizer: float = 0.0
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def record(self, key: str, particle, e: float) -> None:
        """Insert if absent; re-insertion must carry the identical energy."""
        existing = self.entries.get(key)
        if existing is not None:
            if existing[1] != e:
                raise IntegrityError(
                    f"key {key!r} re-recorded with energy {e} != {existing[1]}"
                )
            return
        w = likelihood(e, self.beta)
        self.entries[key] = (particle, e, w)
        self.normalizer += w

    def weight(self, key: str) -> float:
        return self.entries[key][2]

    def energy_of(self, key: str) -> float:
        return self.entries[key][1]

    def probabilities(self) -> dict:
        """Normalized posterior over the visited support."""
        total = math.fsum(w for _, _, w in self.entries.values())
        if total == 0:
            return {}
        return {k: w / total for k, (_, _, w) in self.entries.items()}

    def top_by_weight(self, n: int):
        """Best-n (key, energy, weight), weight descending, ties by key."""
        if n < 1:
            raise ValueError("n must be >= 1")
        ranked = sorted(
            ((k, e, w) for k, (_, e, w) in self.entries.items()),
            key=lambda t: (-t[2], t[0]),
        )
        return ranked[:n]

    def zero_energy_keys(self):
        return sorted(k for k, (_, e, _) in self.entries.items() if e == 0.0)

    def dump_csv(self, path) -> None:
        probs = self.probabilities()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "energy", "weight", "normalized_probability"])
            for k, e, w in sorted(
                ((k, e, w) for k, (_, e, w) in self.entries.items()),
                key=lambda t: (-t[2], t[0]),
            ):
                writer.writerow([k, repr(e), repr(w), repr(probs[k])])

    @staticmethod
    def load_csv(path):
        """Rows of (key, energy, weight, normalized_probability)."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            assert header[0] == "key"
            return [(r[0], float(r[1]), float(r[2]), float(r[3])) for r in reader]
