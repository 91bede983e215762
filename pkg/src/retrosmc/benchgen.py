"""Seeded synthetic benchmark: catalog, template chemistry, and ground truths.

Molecules are random small skeletons carrying one reactive decoration
(halide, donor, carbonyl, alkene); halide decorations often come as
Br/Cl/I sibling triples so each target admits several distinct exact
routes.  Two-step seeds join a halide onto a double donor, leaving a free
donor on the intermediate for the second step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import Atom, Bond, GraphError, MolGraph, canonicalize
from .model import Template, TemplateLibrary, TemplateModel, _embeddings
from .routes import GroundTruthSet, TruthRoute

HALIDES = ("Br", "Cl", "I")


def default_templates() -> TemplateLibrary:
    """Ten rewrite rules; class ids double as reaction-class labels."""
    rules = [
        ("CBr|O", "dropA:1;join:0-0", 0),
        ("CCl|O", "dropA:1;join:0-0", 1),
        ("CI|O", "dropA:1;join:0-0", 2),
        ("CBr|N", "dropA:1;join:0-0", 3),
        ("CCl|N", "dropA:1;join:0-0", 4),
        ("CI|N", "dropA:1;join:0-0", 5),
        ("cBr|N", "dropA:1;join:0-0", 6),
        ("C=O|N", "join:0-0", 7),
        ("C=C|S", "bondA:0-1:1;join:0-0", 8),
        ("CO", "bondA:0-1:2", 9),
    ]
    return TemplateLibrary(
        Template(pat, rw, 100 - i, cls) for i, (pat, rw, cls) in enumerate(rules)
    )


# -- molecule construction ------------------------------------------------------


class _Builder:
    def __init__(self):
        self.atoms: list[Atom] = []
        self.bonds: list[Bond] = []

    def add(self, element, charge=0, aromatic=False, bond_to=None, order=1) -> int:
        idx = len(self.atoms)
        self.atoms.append(Atom(element, charge, aromatic))
        if bond_to is not None:
            self.bonds.append(Bond(bond_to, idx, order))
        return idx

    def graph(self) -> MolGraph | None:
        try:
            g = MolGraph(self.atoms, self.bonds)
        except GraphError:
            return None
        if g.valence_violation() is not None:
            return None
        return g

    def free_valence(self, idx: int) -> float:
        from .chem.graph import MAX_VALENCE

        used = sum(
            {1: 1.0, 2: 2.0, 3: 3.0, 4: 1.5}[b.order]
            for b in self.bonds
            if idx in (b.a, b.b)
        )
        return MAX_VALENCE[self.atoms[idx].element] - used


def _skeleton(rng) -> tuple[_Builder, list[int]]:
    """Random scaffold; returns builder and candidate decoration sites."""
    b = _Builder()
    kind = rng.choice(4, p=[0.40, 0.22, 0.18, 0.20])
    if kind == 0:  # chain
        k = int(rng.integers(3, 10))
        prev = b.add("C")
        for _ in range(k - 1):
            prev = b.add("C", bond_to=prev)
    elif kind == 1:  # chain with 1-2 methyl branches
        k = int(rng.integers(4, 9))
        prev = b.add("C")
        backbone = [prev]
        for _ in range(k - 1):
            prev = b.add("C", bond_to=prev)
            backbone.append(prev)
        for _ in range(int(rng.integers(1, 3))):
            site = int(rng.choice(backbone[1:-1]))
            if b.free_valence(site) >= 2:  # keep room for a decoration
                b.add("C", bond_to=site)
    elif kind == 2:  # carbocycle with tails
        k = int(rng.integers(5, 7))
        first = b.add("C")
        ring = [first]
        prev = first
        for _ in range(k - 1):
            prev = b.add("C", bond_to=prev)
            ring.append(prev)
        b.bonds.append(Bond(prev, first, 1))
        for _ in range(int(rng.integers(0, 3))):
            anchor = int(rng.choice(ring))
            for _ in range(int(rng.integers(1, 3))):
                anchor = b.add("C", bond_to=anchor)
    else:  # benzene with 0-2 tails
        first = b.add("C", aromatic=True)
        ring = [first]
        prev = first
        for _ in range(5):
            prev = b.add("C", aromatic=True, bond_to=prev, order=4)
            ring.append(prev)
        b.bonds.append(Bond(prev, first, 4))
        for _ in range(int(rng.integers(0, 3))):
            anchor = int(rng.choice(ring))
            if b.free_valence(anchor) < 1:
                continue
            for _ in range(int(rng.integers(1, 4))):
                anchor = b.add("C", bond_to=anchor)
    sites = [i for i in range(len(b.atoms)) if b.free_valence(i) >= 1.0]
    return b, sites


_DONORS = ("O", "N", "S")


def _decorate(b: _Builder, site: int, kind: str, rng) -> bool:
    """Attach one reactive group; returns False if the site cannot host it."""
    if kind in HALIDES:
        if b.atoms[site].aromatic or b.free_valence(site) < 1:
            return False
        b.add(kind, bond_to=site)
        return True
    if kind == "aryl_halide":
        if not b.atoms[site].aromatic or b.free_valence(site) < 1:
            return False
        b.add(str(rng.choice(("Br", "Cl"))), bond_to=site)
        return True
    if kind in _DONORS:
        if b.free_valence(site) < 1:
            return False
        b.add(kind, bond_to=site)
        return True
    if kind == "carbonyl":
        if b.atoms[site].aromatic or b.free_valence(site) < 2:
            return False
        b.add("O", bond_to=site, order=2)
        return True
    if kind == "vinyl":
        if b.free_valence(site) < 1:
            return False
        c1 = b.add("C", bond_to=site)
        b.add("C", bond_to=c1, order=2)
        return True
    raise ValueError(kind)


def _make_molecule(rng, kinds, n_groups: int = 1, one_each: bool = False):
    b, sites = _skeleton(rng)
    if len(sites) < n_groups:
        return None
    chosen = rng.choice(len(sites), size=n_groups, replace=False)
    for gi, pick in enumerate(sorted(int(x) for x in chosen)):
        kind = kinds[gi % len(kinds)] if one_each else (
            kinds[int(rng.integers(len(kinds)))]
        )
        if not _decorate(b, sites[pick], kind, rng):
            return None
    g = b.graph()
    if g is None:
        return None
    return canonicalize(g)


def _make_halide_family(rng, triple_prob: float, swap_prob: float = 0.7):
    """One skeleton decorated at one site: halogen variants, and often the
    hydroxyl sibling at the same site; returns (smiles, kind) pairs.

    The hydroxyl sibling lets one product arise from role-swapped reactant
    pairs far apart in fingerprint space, so finding all routes to a target
    stays a search problem instead of a neighbor-list walk.
    """
    b, sites = _skeleton(rng)
    sites = [s for s in sites if not b.atoms[s].aromatic]
    if not sites:
        return []
    site = sites[int(rng.integers(len(sites)))]
    variants = list(HALIDES) if rng.random() < triple_prob else [
        HALIDES[int(rng.integers(3))]
    ]
    if rng.random() < swap_prob:
        variants.append("O")
    out = []
    for kind in variants:
        bb = _Builder()
        bb.atoms = list(b.atoms)
        bb.bonds = list(b.bonds)
        if not _decorate(bb, site, kind, rng):
            continue
        g = bb.graph()
        if g is not None:
            out.append((canonicalize(g), kind))
    return out


@dataclass
class Benchmark:
    entries: list  # catalog strings
    library: TemplateLibrary
    truths: GroundTruthSet
    class_corpus: list  # (product, reactant tuple, class_id)


def generate_benchmark(
    seed: int,
    catalog_size: int = 500,
    n_truths: int = 40,
    n_two_step: int = 10,
    class_corpus_size: int = 2000,
    max_truth_tries: int = 200_000,
) -> Benchmark:
    rng = np.random.default_rng(seed)
    library = default_templates()
    model = TemplateModel(library)
    entries: list[str] = []
    seen: set[str] = set()

    def push(smiles: str | None) -> bool:
        if smiles is None or smiles in seen:
            return False
        seen.add(smiles)
        entries.append(smiles)
        return True

    n = catalog_size
    quota_halide = int(n * 0.24)  # hydroxyl siblings ride along uncounted
    quota_dual = int(n * 0.22)  # halide + donor on one skeleton
    quota_donor = int(n * 0.15)
    quota_carbonyl = int(n * 0.06)
    quota_vinyl = int(n * 0.04)
    quota_aryl = int(n * 0.06)
    quota_diol = max(n_two_step + 4, int(n * 0.03))

    def fill(quota: int, make, label: str, sink=None) -> None:
        count = 0
        tries = 0
        while count < quota:
            tries += 1
            if tries > 60_000:
                raise RuntimeError(f"molecule variety exhausted for {label}")
            made = make()
            if made is None:
                continue
            if sink is not None:
                sink.append(made)
            if push(made):
                count += 1

    # sibling families: same skeleton/site as halogen variants + OH variant
    swap_donors: list[str] = []  # hydroxyl siblings of halide families
    family_halides: list[str] = []  # halides that belong to a full triple
    count = 0
    tries = 0
    while count < quota_halide:
        tries += 1
        if tries > 60_000:
            raise RuntimeError("molecule variety exhausted for halide")
        fam = _make_halide_family(rng, triple_prob=0.75)
        fresh = [(s, k) for s, k in fam if s not in seen]
        for s, kind in fresh:
            if count >= quota_halide and kind != "O":
                continue
            if push(s):
                if kind == "O":
                    swap_donors.append(s)
                else:
                    count += 1
                    if sum(1 for _, k in fam if k != "O") == 3:
                        family_halides.append(s)

    fill(
        quota_dual,
        lambda: _make_molecule(
            rng,
            (HALIDES[int(rng.integers(3))], _DONORS[int(rng.integers(3))]),
            n_groups=2,
            one_each=True,
        ),
        "halide+donor",
    )
    fill(quota_donor, lambda: _make_molecule(rng, _DONORS), "donor")
    diols: list[str] = []
    fill(
        quota_diol,
        lambda: _make_molecule(
            rng, ("O", "O") if rng.random() < 0.7 else ("N", "O"),
            n_groups=2, one_each=True,
        ),
        "double donor",
        sink=diols,
    )
    diols = [d for d in diols if d in seen]
    fill(quota_carbonyl, lambda: _make_molecule(rng, ("carbonyl",)), "carbonyl")
    fill(quota_vinyl, lambda: _make_molecule(rng, ("vinyl",)), "alkene")
    fill(quota_aryl, lambda: _make_molecule(rng, ("aryl_halide",)), "aryl halide")

    # two-step seeds: halide + double-donor -> intermediate with a live donor
    halides = [s for s in entries if any(h in s for h in ("Br", "Cl", "I"))]
    chain_truths: list[TruthRoute] = []
    two_step_first: list[TruthRoute] = []
    tries = 0
    while len(two_step_first) < n_two_step and tries < max_truth_tries:
        tries += 1
        a = halides[int(rng.integers(len(halides)))]
        d = diols[int(rng.integers(len(diols)))]
        pred1, cls1 = model.predict_with_class((a, d))
        if pred1.product is None or pred1.product in seen:
            continue
        y1 = pred1.product
        c = halides[int(rng.integers(len(halides)))]
        pred2, cls2 = model.predict_with_class((y1, c))
        if pred2.product is None or pred2.product in seen or pred2.product == y1:
            continue
        if len(entries) >= catalog_size:
            break
        push(y1)
        first = TruthRoute((tuple(sorted((a, d))),), (), y1, cls1)
        second = TruthRoute((tuple(sorted((y1, c))),), (), pred2.product, cls2)
        chain_truths.extend([first, second])
        two_step_first.append(first)
    if len(two_step_first) < n_two_step:
        raise RuntimeError("could not seed enough two-step routes")

    # fill the catalog to size with plain molecules
    tries = 0
    while len(entries) < catalog_size and tries < max_truth_tries:
        tries += 1
        kind = rng.choice(3, p=[0.5, 0.3, 0.2])
        if kind == 0:
            push(_make_molecule(rng, _DONORS))
        elif kind == 1:
            for s, _ in _make_halide_family(rng, triple_prob=0.4, swap_prob=0.3):
                if len(entries) < catalog_size:
                    push(s)
        else:
            b, _ = _skeleton(rng)
            g = b.graph()
            push(canonicalize(g) if g is not None else None)
    if len(entries) < catalog_size:
        raise RuntimeError("molecule variety exhausted before reaching size")
    seen = set(entries)
    swap_donors = [s for s in swap_donors if s in seen]
    family_halides = [s for s in family_halides if s in seen]

    # reactivity pools: entry indices whose graphs embed each template motif
    graphs = [model._graph(s) for s in entries]
    pool_a: list[list[int]] = []
    pool_b: list[list[int]] = []
    for motifs, _ in library._motifs:
        pa = [
            i for i, g in enumerate(graphs)
            if next(_embeddings(motifs[0], g), None) is not None
        ]
        pb = (
            [
                i for i, g in enumerate(graphs)
                if next(_embeddings(motifs[1], g), None) is not None
            ]
            if len(motifs) > 1
            else []
        )
        pool_a.append(pa)
        pool_b.append(pb)

    def sample_firing_pair(tpl_idx):
        pa, pb = pool_a[tpl_idx], pool_b[tpl_idx]
        if not pa or not pb:
            return None
        a = entries[pa[int(rng.integers(len(pa)))]]
        b = entries[pb[int(rng.integers(len(pb)))]]
        if a == b:
            return None
        pair = tuple(sorted((a, b)))
        pred, cls = model.predict_with_class(pair)
        if pred.product is None:
            return None
        return pair, pred.product, cls

    def sample_sibling_pair():
        """Ether pair whose product admits role-swapped and halogen-variant
        routes: both sides drawn from full sibling families."""
        if not family_halides or not swap_donors:
            return None
        a = family_halides[int(rng.integers(len(family_halides)))]
        b = swap_donors[int(rng.integers(len(swap_donors)))]
        if a == b:
            return None
        pair = tuple(sorted((a, b)))
        pred, cls = model.predict_with_class(pair)
        if pred.product is None:
            return None
        return pair, pred.product, cls

    # remaining one-step truths, listed before the chain seeds; route-dense
    # sibling-family targets are drawn preferentially, other classes cycled
    n_regular = n_truths - len(chain_truths)
    regular_truths: list[TruthRoute] = []
    truth_targets = {t.target for t in chain_truths}
    pair_templates = [i for i, t in enumerate(library.templates) if t.arity == 2]
    tpl_cycle = 0
    tries = 0
    while len(regular_truths) < n_regular and tries < max_truth_tries:
        tries += 1
        if rng.random() < 0.6:
            hit = sample_sibling_pair()
        else:
            hit = sample_firing_pair(
                pair_templates[tpl_cycle % len(pair_templates)]
            )
            tpl_cycle += 1
        if hit is None:
            continue
        pair, product, cls = hit
        if product in seen or product in truth_targets:
            continue
        regular_truths.append(TruthRoute((pair,), (), product, cls))
        truth_targets.add(product)
    if len(regular_truths) < n_regular:
        raise RuntimeError("could not sample enough ground truths")
    truths = regular_truths + chain_truths

    # labeled corpus for the reaction-class model, balanced over classes
    per_class = class_corpus_size // 10
    buckets: dict[int, list] = {c: [] for c in range(10)}
    single_tpl = [i for i, t in enumerate(library.templates) if t.arity == 1]
    tries = 0
    while tries < max_truth_tries and any(
        len(v) < per_class for v in buckets.values()
    ):
        tries += 1
        short = [c for c in range(10) if len(buckets[c]) < per_class]
        want = short[int(rng.integers(len(short)))]
        tpl_idx = next(
            i for i, t in enumerate(library.templates) if t.class_id == want
        )
        if tpl_idx in single_tpl:
            pa = pool_a[tpl_idx]
            if not pa:
                continue
            mol = entries[pa[int(rng.integers(len(pa)))]]
            pred, cls = model.predict_with_class((mol,))
            if cls is not None and len(buckets[cls]) < per_class:
                buckets[cls].append((pred.product, (mol,), cls))
        else:
            hit = sample_firing_pair(tpl_idx)
            if hit is None:
                continue
            pair, product, cls = hit
            if len(buckets[cls]) < per_class:
                buckets[cls].append((product, pair, cls))
    if any(len(v) < per_class for v in buckets.values()):
        lacking = {c: len(v) for c, v in buckets.items() if len(v) < per_class}
        raise RuntimeError(f"class corpus quotas unmet: {lacking}")
    corpus = [row for c in range(10) for row in buckets[c]]

    return Benchmark(entries, library, GroundTruthSet(truths), corpus)


def save_class_corpus(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for product, reactants, cls in corpus:
            fh.write(f"{'.'.join(reactants)}>>{product}\t{cls}\n")


def load_class_corpus(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            body, _, cls = line.partition("\t")
            reactants, _, product = body.partition(">>")
            out.append((product, tuple(reactants.split(".")), int(cls)))
    return out
