"""Multi-step route simulation, ground-truth chaining, and run metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

from .chem import canonical_smiles, fingerprint, parse_smiles
from .model import ALPHA_FLOOR, Prediction
from .posterior import PosteriorTable, Target, energy as energy_of_prediction
from .space import ParticleSpace, Particle, particle_fingerprint

TOP_N_LEVELS = (1, 3, 5, 10, 100)


@dataclass(frozen=True)
class Route:
    steps: tuple  # per-step tuples of reactant strings as fed to the model
    intermediates: tuple  # products of steps 1..k-1 (may be cut short)
    final: str | None  # canonical product, None if any step failed

    @property
    def valid(self) -> bool:
        return self.final is not None


def simulate_route(steps, model) -> Route:
    """Chain forward predictions; an invalid step yields an invalid route."""
    steps = tuple(tuple(s) for s in steps)
    if not steps:
        raise ValueError("route needs at least one step")
    inputs = steps[0]
    intermediates = []
    product = None
    for i, extra in enumerate(steps):
        if i > 0:
            if product is None:
                return Route(steps, tuple(intermediates), None)
            inputs = (product,) + tuple(extra)
        pred = model.predict(inputs)
        product = pred.product
        if i < len(steps) - 1 and product is not None:
            intermediates.append(product)
    return Route(steps, tuple(intermediates), product)


class BudgetExhausted(RuntimeError):
    pass


@dataclass
class RouteResult:
    key: str
    particle: Particle
    energy: float
    final: str | None
    alphas: tuple  # per-step sequence scores
    products: tuple  # per-step products, as far as simulation got
    fp: object  # augmented fingerprint of all reactants

    @property
    def alpha(self) -> float:
        out = 1.0
        for a in self.alphas:
            out *= a
        return out


class RouteEvaluator:
    """Evaluates particles through the true forward model.

    Counts every requested evaluation against the forward-call budget; result
    caching never changes the count, only the wall-clock cost.  Step inputs
    are batched per depth so a remote model sees one wire message per round.
    """

    def __init__(
        self,
        target: Target,
        model,
        metric: str = "tanimoto",
        euclidean_cap: float = 10.0,
        budget: int | None = None,
    ):
        self.target = target
        self.model = model
        self.metric = metric
        self.euclidean_cap = euclidean_cap
        self.budget = budget
        self.calls = 0
        self._result_cache: dict[str, RouteResult] = {}
        self._step_cache: dict[tuple, Prediction] = {}
        self._fp_cache: dict[str, object] = {}

    def begin_run(self, budget: int | None) -> None:
        """Reset forward-call accounting for a new run; caches persist, so a
        deterministic model yields identical results either way."""
        self.budget = budget
        self.calls = 0

    def charge(self, n: int) -> None:
        """Count evaluations produced outside this run (a shared pre-training
        set, for example) against the current budget."""
        self.calls += n

    @property
    def remaining(self) -> int:
        if self.budget is None:
            return 1 << 62
        return self.budget - self.calls

    def _product_energy(self, product: str | None) -> float:
        pred = Prediction(product, ALPHA_FLOOR)
        if product is None:
            return energy_of_prediction(
                self.target, pred, self.metric, euclidean_cap=self.euclidean_cap
            )
        fp = self._fp_cache.get(product)
        if fp is None:
            fp = fingerprint(parse_smiles(product), n_bits=self.target.fp.n_bits)
            self._fp_cache[product] = fp
        return energy_of_prediction(
            self.target, pred, self.metric, fp, self.euclidean_cap
        )

    def _predict_steps(self, inputs):
        """Batch-predict unique uncached reactant tuples."""
        fresh = sorted({t for t in inputs if t not in self._step_cache})
        if fresh:
            preds = self.model.predict_batch(fresh)
            for t, p in zip(fresh, preds):
                self._step_cache[t] = p
        return [self._step_cache[t] for t in inputs]

    def evaluate(self, space: ParticleSpace, particles) -> list[RouteResult]:
        """Results are cached and shared by key; treat them as read-only."""
        if self.budget is not None and self.calls + len(particles) > self.budget:
            raise BudgetExhausted(
                f"{len(particles)} evaluations requested, {self.remaining} left"
            )
        self.calls += len(particles)

        keys = [space.key(p) for p in particles]
        seen_todo = set()
        todo = []
        for i, k in enumerate(keys):
            if k not in self._result_cache and k not in seen_todo:
                seen_todo.add(k)
                todo.append((i, k))
        if todo:
            reactant_lists = {
                i: space.reactants(particles[i]) for i, _ in todo
            }
            state = {
                i: {"alphas": [], "products": [], "dead": False}
                for i, _ in todo
            }
            n_steps = len(space.shape)
            for depth in range(n_steps):
                wave = []
                for i, _ in todo:
                    st = state[i]
                    if st["dead"]:
                        continue
                    extra = reactant_lists[i][depth]
                    inputs = (
                        extra if depth == 0 else (st["products"][-1],) + extra
                    )
                    wave.append((i, tuple(sorted(inputs))))
                preds = self._predict_steps([t for _, t in wave])
                for (i, _), pred in zip(wave, preds):
                    st = state[i]
                    st["alphas"].append(pred.alpha)
                    if pred.product is None:
                        st["dead"] = True
                    else:
                        st["products"].append(pred.product)
            for i, k in todo:
                st = state[i]
                final = None if st["dead"] else st["products"][-1]
                self._result_cache[k] = RouteResult(
                    k,
                    particles[i],
                    self._product_energy(final),
                    final,
                    tuple(st["alphas"]),
                    tuple(st["products"]),
                    particle_fingerprint(space, particles[i]),
                )

        return [self._result_cache[k] for k in keys]


# -- ground truth ------------------------------------------------------------


@dataclass(frozen=True)
class TruthRoute:
    steps: tuple  # per-step tuples of canonical reactants (extras only)
    intermediates: tuple  # declared intermediate product per later step
    target: str
    class_id: int | None = None

    @property
    def key(self) -> str:
        return ">>".join(".".join(sorted(s)) for s in self.steps)

    @property
    def shape(self):
        return tuple(len(s) for s in self.steps)


@dataclass
class GroundTruthSet:
    routes: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.routes)

    def __len__(self):
        return len(self.routes)

    def save(self, path) -> None:
        """One route per line; later steps list the carried intermediate first."""
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.routes:
                segs = [".".join(r.steps[0])]
                for inter, extra in zip(r.intermediates, r.steps[1:]):
                    segs.append(".".join((inter,) + tuple(extra)))
                segs.append(r.target)
                line = ">>".join(segs)
                if r.class_id is not None:
                    line += f"\t{r.class_id}"
                fh.write(line + "\n")

    @classmethod
    def load(cls, path) -> "GroundTruthSet":
        routes = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                body, _, cls_txt = line.partition("\t")
                segs = body.split(">>")
                if len(segs) < 2:
                    raise ValueError(f"bad ground-truth line {line!r}")
                target = canonical_smiles(segs[-1])
                steps = [tuple(canonical_smiles(x) for x in segs[0].split("."))]
                intermediates = []
                for seg in segs[1:-1]:
                    mols = [canonical_smiles(x) for x in seg.split(".")]
                    intermediates.append(mols[0])  # carried product comes first
                    steps.append(tuple(mols[1:]))
                routes.append(
                    TruthRoute(
                        tuple(steps),
                        tuple(intermediates),
                        target,
                        int(cls_txt) if cls_txt else None,
                    )
                )
        return cls(routes)


def chain_ground_truth(single_steps: GroundTruthSet) -> GroundTruthSet:
    """Connect recorded reactions whose product feeds another as a reactant."""
    chained = []
    seen = set()
    for first in single_steps:
        if first.shape != (2,) and first.shape != (1,):
            continue
        for second in single_steps:
            if second is first or len(second.steps) != 1:
                continue
            reactants = second.steps[0]
            if first.target not in reactants:
                continue
            rest = list(reactants)
            rest.remove(first.target)
            route = TruthRoute(
                (first.steps[0], tuple(rest)),
                (first.target,),
                second.target,
                second.class_id,
            )
            dedup = route.key + ">>>" + route.target
            if dedup not in seen:
                seen.add(dedup)
                chained.append(route)
    return GroundTruthSet(chained)


# -- metrics ------------------------------------------------------------------


@dataclass
class EvalSummary:
    detection: float
    inclusion: float
    top_n_hits: dict  # N -> 0/1 (or rate when aggregated)
    distinct_route_count: int
    forward_calls: int

    def as_row(self) -> dict:
        row = {
            "detection": self.detection,
            "inclusion": self.inclusion,
            "distinct_routes": self.distinct_route_count,
            "forward_calls": self.forward_calls,
        }
        for n in TOP_N_LEVELS:
            row[f"top{n}"] = self.top_n_hits.get(n, 0.0)
        return row


def evaluate(
    table: PosteriorTable,
    ranked_keys,
    truth: TruthRoute,
    top_n_levels=TOP_N_LEVELS,
    forward_calls: int = 0,
) -> EvalSummary:
    """Detection, ground-truth inclusion, and top-N rank hits for one run.

    `ranked_keys` is the score-descending list of zero-energy routes.
    """
    zero_keys = set(table.zero_energy_keys())
    detection = 1.0 if zero_keys else 0.0
    truth_key = truth.key
    inclusion = 1.0 if truth_key in table else 0.0
    try:
        rank = ranked_keys.index(truth_key) + 1
    except ValueError:
        rank = None
    hits = {n: (1.0 if rank is not None and rank <= n else 0.0) for n in top_n_levels}
    return EvalSummary(detection, inclusion, hits, len(zero_keys), forward_calls)
