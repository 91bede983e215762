"""Search engines over the reactant space.

Two engines share the proposal and bookkeeping machinery: a plain
propose/weight/resample particle loop, and the surrogate-guided variant
that expands elites through the neighbor graph, screens them with the cheap
energy regressor, cluster-resamples for diversity, and never evaluates the
same route twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .posterior import PosteriorTable, Target, likelihood
from .routes import RouteEvaluator, RouteResult
from .space import Catalog, Particle, ParticleSpace, dense_particle_rows
from .surrogate import GbmModel


@dataclass
class SmcConfig:
    n_particles: int = 1000
    schedule: tuple = (((2,), 100),)  # ((shape, steps), ...)
    n_elites: int = 0  # 0 -> n_particles // 10
    expansion: int = 20  # neighbors generated per elite
    n_clusters: int = 20
    proposal_neighbors: int = 50
    beta: float = 20.0
    seed: int = 0
    budget: int | None = None
    metric: str = "tanimoto"
    euclidean_cap: float = 10.0
    resampling: str = "multinomial"  # or "systematic"

    def __post_init__(self):
        self.schedule = tuple(
            (tuple(shape), int(steps)) for shape, steps in self.schedule
        )
        if self.n_elites == 0:
            self.n_elites = max(1, self.n_particles // 10)
        if not (
            self.n_particles > 0
            and 0 < self.n_elites <= self.n_particles
            and self.expansion >= 1
            and 0 < self.n_clusters <= self.n_elites * self.expansion
            and self.proposal_neighbors > 0
            and self.beta >= 0
        ):
            raise ValueError("invalid SMC configuration")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError(f"unknown resampling {self.resampling!r}")

    @property
    def total_steps(self) -> int:
        return sum(steps for _, steps in self.schedule)


@dataclass
class TraceRow:
    step: int
    best_energy: float
    distinct_keys: int
    forward_calls: int


class VisitedSet:
    """Canonical keys already evaluated, with per-shape tallies."""

    def __init__(self):
        self.keys: set[str] = set()
        self._by_shape: dict[tuple, int] = {}

    def __contains__(self, key: str) -> bool:
        return key in self.keys

    def __len__(self) -> int:
        return len(self.keys)

    def add(self, key: str, shape) -> None:
        if key not in self.keys:
            self.keys.add(key)
            self._by_shape[shape] = self._by_shape.get(shape, 0) + 1

    def count_in(self, space: ParticleSpace) -> int:
        return self._by_shape.get(space.shape, 0)


# -- proposals ---------------------------------------------------------------


def build_neighbor_index(catalog: Catalog, k_nn: int) -> np.ndarray:
    """Exact k-nearest catalog entries by tanimoto distance, per entry.

    Rows are sorted ascending by distance with ties broken by index; the
    entry itself is excluded.
    """
    n = len(catalog)
    if k_nn >= n:
        raise ValueError(f"catalog of {n} too small for k_nn={k_nn}")
    bits = np.zeros((n, catalog.n_bits), dtype=np.float64)
    for i, fp in enumerate(catalog.fps):
        bits[i, fp.on_bits] = 1.0
    inter = bits @ bits.T
    pop = bits.sum(axis=1)
    union = pop[:, None] + pop[None, :] - inter
    with np.errstate(invalid="ignore"):
        dist = 1.0 - np.where(union > 0, inter / union, 1.0)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, :k_nn].astype(np.int32))


def propose_neighbor(
    particle: Particle, index: np.ndarray, rng, space: ParticleSpace
) -> Particle:
    """Replace one uniformly chosen slot with a uniform draw from its
    neighbor list; proposal mass is uniform over the reachable set."""
    slots = space.flat_slots()
    step, pos = slots[int(rng.integers(len(slots)))]
    entry = particle[step][pos]
    row = index[entry]
    new_entry = int(row[int(rng.integers(len(row)))])
    return space.replace_slot(particle, (step, pos), new_entry)


def _draw_unvisited(
    space: ParticleSpace, count: int, visited: VisitedSet, local: set, rng
):
    """Uniform distinct unvisited particles; falls back to enumeration when
    rejection sampling stops making progress (space nearly exhausted)."""
    available = space.size - visited.count_in(space) - len(local)
    if available <= 0 or count <= 0:
        return []
    count = min(count, available)
    out = []
    attempts = 0
    max_attempts = 40 * count + 100
    if available > max(2 * count, space.size // 50):
        while len(out) < count and attempts < max_attempts:
            attempts += 1
            p = space.sample(rng)
            k = space.key(p)
            if k in visited or k in local:
                continue
            local.add(k)
            out.append(p)
        if len(out) == count:
            return out
    # deterministic enumeration fallback
    pool = []
    for r in range(space.size):
        p = space.unrank(r)
        k = space.key(p)
        if k not in visited and k not in local:
            pool.append((p, k))
    need = count - len(out)
    picks = rng.permutation(len(pool))[:need]
    for i in sorted(int(x) for x in picks):
        p, k = pool[i]
        local.add(k)
        out.append(p)
    return out


# -- k-means + cluster-level resampling ---------------------------------------


def kmeans(X: np.ndarray, k: int, rng, max_iter: int = 100):
    """Seeded k-means++ then Lloyd iterations; deterministic given the rng."""
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError("k out of range")
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    labels = None
    Xf = X.astype(np.float32)
    x_sq = (Xf**2).sum(axis=1)[:, None]
    for _ in range(max_iter):
        cf = centers.astype(np.float32)
        dist = x_sq - 2.0 * Xf @ cf.T + (cf**2).sum(axis=1)[None, :]
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=k)
        if (counts == 0).any():
            # refill empty clusters with the farthest points of crowded ones
            order = np.argsort(-np.min(dist, axis=1), kind="stable")
            moved: set = set()
            for j in np.nonzero(counts == 0)[0]:
                for cand in order:
                    c = int(cand)
                    if c in moved or counts[new_labels[c]] <= 1:
                        continue
                    counts[new_labels[c]] -= 1
                    new_labels[c] = j
                    counts[j] += 1
                    moved.add(c)
                    break
        onehot = np.zeros((k, n), dtype=np.float32)
        onehot[new_labels, np.arange(n)] = 1.0
        centers = (onehot @ Xf).astype(np.float64) / counts[:, None]
        if labels is not None and np.array_equal(labels, new_labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centers


def largest_remainder(weights: np.ndarray, count: int) -> np.ndarray:
    """Proportional integer apportionment, deterministic remainder ties."""
    weights = np.asarray(weights, dtype=np.float64)
    total = float(weights.sum())
    if total <= 0:
        weights = np.ones_like(weights)
        total = float(weights.sum())
    quota = count * weights / total
    alloc = np.floor(quota).astype(np.int64)
    rest = count - int(alloc.sum())
    if rest > 0:
        order = sorted(
            range(len(weights)), key=lambda i: (-(quota[i] - alloc[i]), i)
        )
        for i in order[:rest]:
            alloc[i] += 1
    return alloc


def cluster_resample(keys, scores, features, k: int, count: int, beta: float, rng):
    """Pick `count` items so cluster shares follow each cluster's mean
    Boltzmann weight exp(-beta * predicted energy); returns selected indices.

    Clusters come from k-means on the rows of `features` (augmented count
    fingerprints; k-means++ seeding, 100-iteration cap).  Slots go to
    clusters by largest-remainder apportionment; inside a cluster the best
    predicted energies win, ties by key.  Shortfall from clusters smaller
    than their allocation is re-apportioned over the rest.
    """
    n = len(keys)
    if n == 0 or count <= 0:
        return []
    k = min(k, n)
    scores = np.asarray(scores, dtype=np.float64)
    X = np.asarray(features, dtype=np.float64)
    keep = X.any(axis=0)
    X = X[:, keep] if keep.any() else X[:, :1]
    labels, _ = kmeans(X, k, rng)

    member_lists = []
    weights = np.empty(k)
    boltz = np.exp(-beta * scores)
    for j in range(k):
        members = [i for i in range(n) if labels[i] == j]
        member_lists.append(sorted(members, key=lambda i: (scores[i], keys[i])))
        weights[j] = float(boltz[members].mean()) if members else 0.0

    chosen: list[int] = []
    spare = [len(m) for m in member_lists]
    active = list(range(k))
    need = min(count, n)
    while need > 0 and active:
        alloc = largest_remainder(weights[active], need)
        progressed = False
        next_active = []
        for a, j in zip(alloc, active):
            take = min(int(a), spare[j])
            if take > 0:
                start = len(member_lists[j]) - spare[j]
                chosen.extend(member_lists[j][start : start + take])
                spare[j] -= take
                need -= take
                progressed = True
            if spare[j] > 0:
                next_active.append(j)
        active = next_active
        if not progressed:
            break
    return chosen


# -- engines -------------------------------------------------------------------


def _resample(weights: np.ndarray, count: int, rng, kind: str) -> np.ndarray:
    probs = weights / weights.sum()
    if kind == "multinomial":
        return rng.choice(len(weights), size=count, p=probs)
    # systematic
    positions = (rng.random() + np.arange(count)) / count
    return np.searchsorted(np.cumsum(probs), positions).clip(0, len(weights) - 1)


def simple_smc(
    cfg: SmcConfig,
    target: Target,
    model,
    catalog: Catalog,
    index: np.ndarray | None = None,
    evaluator: RouteEvaluator | None = None,
    table: PosteriorTable | None = None,
):
    """Plain propose/weight/resample loop; every evaluation is recorded.

    Returns (table, trace).  Exhausting the forward-call budget truncates
    the run and flags the table.
    """
    rng = np.random.default_rng(cfg.seed)
    if evaluator is None:
        evaluator = RouteEvaluator(
            target, model, cfg.metric, cfg.euclidean_cap, cfg.budget
        )
    if table is None:
        table = PosteriorTable(beta=cfg.beta)
    if index is None:
        index = build_neighbor_index(catalog, cfg.proposal_neighbors)
    trace: list[TraceRow] = []
    best = math.inf
    step_no = 0
    p = cfg.n_particles

    def record(results):
        nonlocal best
        for r in results:
            table.record(r.key, r.particle, r.energy)
            best = min(best, r.energy)

    for shape, steps in cfg.schedule:
        space = catalog.space(shape)
        if evaluator.remaining < p:
            table.truncated = True
            return table, trace
        particles = [space.sample(rng) for _ in range(p)]
        record(evaluator.evaluate(space, particles))
        trace.append(TraceRow(step_no, best, len(table), evaluator.calls))
        for _ in range(steps):
            if evaluator.remaining < p:
                table.truncated = True
                return table, trace
            step_no += 1
            proposals = [
                propose_neighbor(s, index, rng, space) for s in particles
            ]
            results = evaluator.evaluate(space, proposals)
            record(results)
            weights = np.array(
                [likelihood(r.energy, cfg.beta) for r in results]
            )
            pick = _resample(weights, p, rng, cfg.resampling)
            particles = [proposals[int(i)] for i in pick]
            trace.append(TraceRow(step_no, best, len(table), evaluator.calls))
    return table, trace


def _expand_elites(
    elites: list[RouteResult],
    index: np.ndarray,
    visited: VisitedSet,
    space: ParticleSpace,
    m: int,
):
    """Up to m single-slot neighbor replacements per elite, slots cycled
    round-robin; replacements already visited are skipped for the
    next-nearest neighbor."""
    out: list[Particle] = []
    batch_keys: set[str] = set()
    slots = space.flat_slots()
    for elite in elites:
        cursors = [0] * len(slots)
        for j in range(m):
            si = j % len(slots)
            step, pos = slots[si]
            row = index[elite.particle[step][pos]]
            while cursors[si] < len(row):
                cand_entry = int(row[cursors[si]])
                cursors[si] += 1
                cand = space.replace_slot(elite.particle, (step, pos), cand_entry)
                k = space.key(cand)
                if k not in visited and k not in batch_keys:
                    batch_keys.add(k)
                    out.append(cand)
                    break
    return out, batch_keys


def surrogate_smc(
    cfg: SmcConfig,
    target: Target,
    model,
    surrogate: GbmModel,
    catalog: Catalog,
    index: np.ndarray | None = None,
    evaluator: RouteEvaluator | None = None,
    table: PosteriorTable | None = None,
    visited: VisitedSet | None = None,
):
    """Surrogate-guided engine: elite expansion through the neighbor graph,
    cheap-score screening, cluster-level resampling for half the population,
    uniform unvisited draws for the other half.  No route key is evaluated
    by the true model twice within a run.

    Returns (table, trace).
    """
    rng = np.random.default_rng(cfg.seed)
    if evaluator is None:
        evaluator = RouteEvaluator(
            target, model, cfg.metric, cfg.euclidean_cap, cfg.budget
        )
    if table is None:
        table = PosteriorTable(beta=cfg.beta)
    if visited is None:
        visited = VisitedSet()
    if index is None:
        index = build_neighbor_index(catalog, cfg.proposal_neighbors)
    trace: list[TraceRow] = []
    best = math.inf
    step_no = 0
    p = cfg.n_particles
    n_guided = p // 2

    def record(results, shape):
        nonlocal best
        for r in results:
            table.record(r.key, r.particle, r.energy)
            visited.add(r.key, shape)
            best = min(best, r.energy)

    for shape, steps in cfg.schedule:
        space = catalog.space(shape)
        init = _draw_unvisited(space, p, visited, set(), rng)
        if len(init) > evaluator.remaining:
            init = init[: evaluator.remaining]
            table.truncated = True
        if not init:
            continue
        current = evaluator.evaluate(space, init)
        record(current, shape)
        trace.append(TraceRow(step_no, best, len(table), evaluator.calls))
        if table.truncated:
            return table, trace
        for _ in range(steps):
            step_no += 1
            elites = sorted(current, key=lambda r: (r.energy, r.key))[
                : cfg.n_elites
            ]
            expansion, _ = _expand_elites(
                elites, index, visited, space, cfg.expansion
            )
            guided: list[Particle] = []
            local: set[str] = set()
            if expansion:
                exp_keys = [space.key(c) for c in expansion]
                rows = dense_particle_rows(space, expansion)
                scores = surrogate.predict(rows)
                picked = cluster_resample(
                    exp_keys, scores, rows, cfg.n_clusters, n_guided,
                    cfg.beta, rng,
                )
                guided = [expansion[i] for i in picked]
                local = {exp_keys[i] for i in picked}
            random_part = _draw_unvisited(
                space, p - n_guided, visited, local, rng
            )
            batch = guided + random_part
            if not batch:
                break  # unvisited space exhausted for this shape
            if len(batch) > evaluator.remaining:
                batch = batch[: evaluator.remaining]
                table.truncated = True
            if not batch:
                return table, trace
            current = evaluator.evaluate(space, batch)
            record(current, shape)
            trace.append(TraceRow(step_no, best, len(table), evaluator.calls))
            if table.truncated:
                return table, trace
    return table, trace
