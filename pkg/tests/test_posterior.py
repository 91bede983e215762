"""Boltzmann weights and the deduplicated posterior table."""

import math
import random

import numpy as np
import pytest

from retrosmc.chem import Fingerprint
from retrosmc.model import ALPHA_FLOOR, Prediction
from retrosmc.posterior import (
    IntegrityError,
    PosteriorTable,
    Target,
    energy,
    likelihood,
)


def _fp(bits, n_bits=64):
    arr = np.array(sorted(bits), dtype=np.int64)
    return Fingerprint(n_bits, arr, np.ones(len(arr), dtype=np.int64))


def test_energy_exact_match_is_zero():
    target = Target.from_smiles("CCO")
    assert energy(target, Prediction("CCO", 1.0)) == 0.0


def test_energy_invalid_marker_caps():
    target = Target.from_smiles("CCO")
    assert energy(target, Prediction(None, ALPHA_FLOOR)) == 1.0
    assert (
        energy(target, Prediction(None, ALPHA_FLOOR), "euclidean",
               euclidean_cap=7.5)
        == 7.5
    )


def test_energy_tanimoto_formula_on_patterns():
    # |intersection| = 1, |union| = 4 -> 0.75
    target = Target("X", _fp([0, 1]))
    assert energy(target, Prediction("Y", 1.0), product_fp=_fp([1, 5, 6])) == (
        pytest.approx(0.75)
    )


def test_likelihood_values():
    assert likelihood(0.0, 20.0) == 1.0
    assert likelihood(0.7, 0.0) == 1.0
    assert likelihood(0.5, 2.0) == pytest.approx(math.exp(-1.0), abs=1e-9)
    with pytest.raises(ValueError):
        likelihood(0.1, -1.0)


def test_record_idempotent_and_integrity():
    t = PosteriorTable(beta=20.0)
    t.record("k1", ("p",), 0.25)
    before = dict(t.entries)
    t.record("k1", ("p",), 0.25)
    assert t.entries == before
    with pytest.raises(IntegrityError):
        t.record("k1", ("p",), 0.3)


def test_normalization_hand_case():
    # energies 0 and ln2/beta -> weights 1 and 1/2 -> probabilities 2/3, 1/3
    beta = 20.0
    t = PosteriorTable(beta=beta)
    t.record("a", None, 0.0)
    t.record("b", None, math.log(2.0) / beta)
    probs = t.probabilities()
    assert probs["a"] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert probs["b"] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_empty_table():
    t = PosteriorTable()
    assert len(t) == 0
    assert t.normalizer == 0.0
    assert t.probabilities() == {}


def test_probabilities_sum_to_one():
    rng = random.Random(5)
    t = PosteriorTable(beta=20.0)
    for i in range(500):
        t.record(f"k{i}", None, rng.random())
    assert math.fsum(t.probabilities().values()) == pytest.approx(1.0, abs=1e-12)


def test_monotonicity_lower_energy_higher_probability():
    t1 = PosteriorTable(beta=20.0)
    t2 = PosteriorTable(beta=20.0)
    for i, e in enumerate((0.3, 0.6, 0.9)):
        t1.record(f"k{i}", None, e)
        t2.record(f"k{i}", None, e if i else 0.1)  # k0 energy lowered
    assert t2.probabilities()["k0"] > t1.probabilities()["k0"]


def test_top_by_weight_against_brute_force():
    rng = random.Random(11)
    t = PosteriorTable(beta=20.0)
    items = [(f"key{i:03d}", rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
             for i in range(50)]
    for k, e in items:
        t.record(k, None, e)
    oracle = sorted(
        ((k, e, math.exp(-20.0 * e)) for k, e in items),
        key=lambda x: (-x[2], x[0]),
    )
    assert t.top_by_weight(20) == oracle[:20]
    assert t.top_by_weight(500) == oracle  # larger than the table


def test_top_by_weight_tie_breaks_by_key():
    t = PosteriorTable(beta=20.0)
    t.record("b", None, 0.5)
    t.record("a", None, 0.5)
    assert [k for k, _, _ in t.top_by_weight(2)] == ["a", "b"]


def test_weights_exact_exponentials():
    rng = random.Random(2)
    t = PosteriorTable(beta=20.0)
    energies = {f"k{i}": rng.random() for i in range(200)}
    for k, e in energies.items():
        t.record(k, None, e)
    for k, e in energies.items():
        assert t.weight(k) == math.exp(-20.0 * e)


def test_dump_and_load_roundtrip(tmp_path):
    t = PosteriorTable(beta=20.0)
    for i, e in enumerate((0.0, 0.123456789, 1.0)):
        t.record(f"k{i}", None, e)
    path = tmp_path / "posterior.csv"
    t.dump_csv(path)
    rows = PosteriorTable.load_csv(path)
    assert len(rows) == 3
    by_key = {r[0]: r for r in rows}
    for i, e in enumerate((0.0, 0.123456789, 1.0)):
        key, energy_, weight, prob = by_key[f"k{i}"]
        assert energy_ == e
        assert weight == math.exp(-20.0 * e)
