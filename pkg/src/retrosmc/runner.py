"""Run orchestration: config loading, engine dispatch, artifact emission.

One process runs one search; the bench harness fans (target, seed) groups
out to worker processes.  Every artifact is schema-stable and reproducible
byte-for-byte from (config, seed) except the manifest's timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analysis import ClassModel, score_route, train_class_model, xmeans
from .benchgen import load_class_corpus
from .model import RemoteModel, TemplateLibrary, TemplateModel
from .posterior import PosteriorTable, Target
from .routes import RouteEvaluator
from .smc import SmcConfig, VisitedSet, build_neighbor_index, simple_smc, surrogate_smc
from .space import Catalog
from .surrogate import GbmModel, fit_gbm


class ConfigError(ValueError):
    pass


class BudgetError(RuntimeError):
    pass


_DEFAULTS = {
    "engine": "surrogate",
    "metric": "tanimoto",
    "beta": 20.0,
    "particles": 200,
    "elites": 0,  # 0 -> particles // 10
    "expansion": 10,
    "clusters": 20,
    "knn": 50,
    "seed": 0,
    "budget": None,
    "resampling": "multinomial",
    "euclidean_cap": 10.0,
    "n_bits": 2048,
    "radius": 2,
    "xmeans_max": 50,
    "class_corpus": None,
    "class_l1": 1e-4,
    "surrogate": {
        "train_size": 1000,
        "trees": 100,
        "depth": 4,
        "learning_rate": 0.1,
    },
}


def load_config(path, overrides=None) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = json.loads(json.dumps(_DEFAULTS))
    sur = cfg.pop("surrogate")
    cfg.update(raw)
    sur.update(raw.get("surrogate", {}))
    cfg["surrogate"] = sur
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("catalog", "templates", "target"):
        if key not in cfg:
            raise ConfigError(f"config missing required key {key!r}")
    if "schedule" not in cfg:
        shape = cfg.get("route_shape", [2])
        cfg["schedule"] = [{"shape": shape, "steps": cfg.get("steps", 100)}]
    return cfg


def smc_config(cfg: dict) -> SmcConfig:
    try:
        return SmcConfig(
            n_particles=int(cfg["particles"]),
            schedule=tuple(
                (tuple(p["shape"]), int(p["steps"])) for p in cfg["schedule"]
            ),
            n_elites=int(cfg["elites"]),
            expansion=int(cfg["expansion"]),
            n_clusters=int(cfg["clusters"]),
            proposal_neighbors=int(cfg["knn"]),
            beta=float(cfg["beta"]),
            seed=int(cfg["seed"]),
            budget=None if cfg["budget"] is None else int(cfg["budget"]),
            metric=cfg["metric"],
            euclidean_cap=float(cfg["euclidean_cap"]),
            resampling=cfg["resampling"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad engine configuration: {exc}") from exc


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def make_model(cfg: dict):
    """In-process toy model, or the wire client when a server is configured."""
    address = cfg.get("server_address") or os.environ.get(
        "RETROSMC_SERVER_ADDRESS"
    )
    if address:
        return RemoteModel(address=address)
    return TemplateModel(TemplateLibrary.load(cfg["templates"]))


def build_class_model(cfg: dict) -> ClassModel:
    if cfg.get("class_corpus"):
        corpus = load_class_corpus(cfg["class_corpus"])
        return train_class_model(
            corpus,
            l1_strength=float(cfg["class_l1"]),
            radius=int(cfg["radius"]),
            n_bits=int(cfg["n_bits"]),
        )
    # no labeled reactions: uniform class probabilities, ranking reduces to alpha
    n_bits = int(cfg["n_bits"])
    return ClassModel(
        np.zeros((10, 2 * n_bits)), np.zeros(10), n_bits, int(cfg["radius"]), 0.0
    )


def sample_training_set(spaces, n: int, rng, evaluator):
    """n uniform-without-replacement particles over the union of spaces,
    evaluated through the true model (counts toward the budget)."""
    total = sum(sp.size for sp in spaces)
    if n > total:
        raise ConfigError(f"train_size {n} exceeds candidate space {total}")
    seen = set()
    per_space = [[] for _ in spaces]
    while sum(len(x) for x in per_space) < n:
        r = int(rng.integers(total))
        for i, sp in enumerate(spaces):
            if r < sp.size:
                p = sp.unrank(r)
                k = sp.key(p)
                if k not in seen:
                    seen.add(k)
                    per_space[i].append(p)
                break
            r -= sp.size
    results = []
    for sp, parts in zip(spaces, per_space):
        if parts:
            results.extend(evaluator.evaluate(sp, parts))
    return results, per_space


def fit_surrogate(cfg: dict, rows) -> GbmModel:
    sur = cfg["surrogate"]
    feats = np.stack([r.fp.dense_counts() for r in rows])
    targets = np.array([r.energy for r in rows])
    cap = 1.0 if cfg["metric"] == "tanimoto" else float(cfg["euclidean_cap"])
    return fit_gbm(
        feats,
        targets,
        n_trees=int(sur.get("trees", 100)),
        max_depth=int(sur.get("depth", 4)),
        nu=float(sur.get("learning_rate", 0.1)),
        energy_cap=cap,
        seed=int(cfg.get("seed", 0)),
    )


@dataclass
class RunArtifacts:
    table: PosteriorTable
    trace: list
    ranked: list  # (key, RouteScore) sorted by gamma desc
    clusters: dict  # key -> cluster id
    representatives: dict  # cluster id -> key
    forward_calls: int
    manifest: dict
    evaluator: RouteEvaluator = field(repr=False, default=None)


def rank_routes(table, evaluator, catalog, cm):
    """Zero-energy routes scored and ordered by gamma, ties by key."""
    scored = []
    for key in table.zero_energy_keys():
        r = evaluator._result_cache[key]
        steps = [tuple(catalog.entries[i] for i in g) for g in r.particle]
        final_inputs = (
            steps[-1] if len(steps) == 1 else (r.products[-2],) + tuple(steps[-1])
        )
        scored.append((key, score_route(final_inputs, r.alphas, r.final, cm)))
    scored.sort(key=lambda t: (-t[1].gamma, t[0]))
    return scored


def cluster_routes(ranked, evaluator, k_max: int, seed: int):
    """X-means over the augmented fingerprints of the ranked routes."""
    if not ranked:
        return {}, {}
    keys = [k for k, _ in ranked]
    fps = [evaluator._result_cache[k].fp for k in keys]
    cols = sorted({int(b) for fp in fps for b in fp.on_bits})
    col_pos = {c: i for i, c in enumerate(cols)}
    X = np.zeros((len(fps), max(1, len(cols))))
    for i, fp in enumerate(fps):
        for b, c in zip(fp.on_bits.tolist(), fp.counts.tolist()):
            X[i, col_pos[b]] = c
    labels = xmeans(X, k_max=min(k_max, len(keys)), seed=seed)
    assignments = {k: int(c) for k, c in zip(keys, labels)}
    gammas = {k: s.gamma for k, s in ranked}
    from .analysis import representatives as reps

    return assignments, reps(assignments, gammas)


def execute_run(cfg: dict, model=None, catalog=None, class_model=None,
                index=None, evaluator=None) -> RunArtifacts:
    """Run the configured engine once; heavy state may be passed in for reuse."""
    started = time.time()
    if model is None:
        model = make_model(cfg)
    if catalog is None:
        catalog = Catalog(
            Catalog.load(cfg["catalog"]).entries
            if isinstance(cfg["catalog"], str)
            else list(cfg["catalog"]),
            radius=int(cfg["radius"]),
            n_bits=int(cfg["n_bits"]),
        )
    if class_model is None:
        class_model = build_class_model(cfg)
    engine_cfg = smc_config(cfg)
    target = Target.from_smiles(
        cfg["target"], radius=int(cfg["radius"]), n_bits=int(cfg["n_bits"])
    )
    if evaluator is None:
        evaluator = RouteEvaluator(
            target, model, cfg["metric"], float(cfg["euclidean_cap"]),
        )
    evaluator.begin_run(engine_cfg.budget)
    if index is None:
        index = build_neighbor_index(catalog, engine_cfg.proposal_neighbors)

    table = PosteriorTable(beta=engine_cfg.beta)
    visited = VisitedSet()
    if cfg["engine"] == "surrogate":
        sur = cfg["surrogate"]
        n_train = int(sur["train_size"])
        min_needed = n_train + engine_cfg.n_particles
        if engine_cfg.budget is not None and engine_cfg.budget < min_needed:
            raise BudgetError(
                f"budget {engine_cfg.budget} below training + init {min_needed}"
            )
        model_path = sur.get("model_path")
        spaces = [catalog.space(shape) for shape, _ in engine_cfg.schedule]
        train_rng = np.random.default_rng([int(cfg["seed"]), 0x7E57])
        rows, _ = sample_training_set(spaces, n_train, train_rng, evaluator)
        for r in rows:
            table.record(r.key, r.particle, r.energy)
            visited.add(r.key, tuple(len(g) for g in r.particle))
        if model_path:
            surrogate = GbmModel.load(model_path)
        else:
            surrogate = fit_surrogate(cfg, rows)
        table, trace = surrogate_smc(
            engine_cfg, target, model, surrogate, catalog,
            index=index, evaluator=evaluator, table=table, visited=visited,
        )
    elif cfg["engine"] == "simple":
        if (
            engine_cfg.budget is not None
            and engine_cfg.budget < engine_cfg.n_particles
        ):
            raise BudgetError(
                f"budget {engine_cfg.budget} below one population "
                f"of {engine_cfg.n_particles}"
            )
        table, trace = simple_smc(
            engine_cfg, target, model, catalog,
            index=index, evaluator=evaluator, table=table,
        )
    else:
        raise ConfigError(f"unknown engine {cfg['engine']!r}")

    ranked = rank_routes(table, evaluator, catalog, class_model)
    assignments, representatives = cluster_routes(
        ranked, evaluator, int(cfg["xmeans_max"]), int(cfg["seed"])
    )
    manifest = {
        "config": cfg,
        "seed": int(cfg["seed"]),
        "catalog_digest": _digest(cfg["catalog"])
        if isinstance(cfg["catalog"], str)
        else None,
        "templates_digest": _digest(cfg["templates"])
        if isinstance(cfg.get("templates"), str)
        else None,
        "engine_version": __version__,
        "forward_calls": evaluator.calls,
        "truncated": table.truncated,
        "started": started,
        "finished": time.time(),
    }
    return RunArtifacts(
        table, trace, ranked, assignments, representatives,
        evaluator.calls, manifest, evaluator,
    )


ROUTE_HEADER_NOTE = (
    "# gamma of a multi-step route: product of per-step sequence scores, "
    "class probability taken from the final step"
)


def write_run_dir(out_dir, art: RunArtifacts) -> None:
    os.makedirs(out_dir, exist_ok=True)
    art.table.dump_csv(os.path.join(out_dir, "posterior.csv"))
    with open(os.path.join(out_dir, "routes.csv"), "w", newline="",
              encoding="utf-8") as fh:
        fh.write(ROUTE_HEADER_NOTE + "\n")
        w = csv.writer(fh)
        w.writerow(
            ["rank", "key", "gamma", "alpha", "best_class", "energy", "cluster_id"]
        )
        for rank, (key, sc) in enumerate(art.ranked, 1):
            w.writerow(
                [
                    rank,
                    key,
                    repr(sc.gamma),
                    repr(sc.alpha),
                    sc.best_class,
                    repr(art.table.energy_of(key)),
                    art.clusters.get(key, -1),
                ]
            )
    with open(os.path.join(out_dir, "clusters.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster_id", "size", "representative_key", "mean_gamma"])
        gammas = {k: s.gamma for k, s in art.ranked}
        by_cluster: dict[int, list] = {}
        for key, cid in art.clusters.items():
            by_cluster.setdefault(cid, []).append(key)
        for cid in sorted(by_cluster):
            members = by_cluster[cid]
            mean_gamma = sum(gammas[k] for k in members) / len(members)
            w.writerow(
                [cid, len(members), art.representatives[cid], repr(mean_gamma)]
            )
    with open(os.path.join(out_dir, "trace.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "best_energy", "distinct_keys", "forward_calls"])
        for row in art.trace:
            w.writerow(
                [row.step, repr(row.best_energy), row.distinct_keys,
                 row.forward_calls]
            )
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(art.manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def export_vectors(run_dir, out_path) -> None:
    """(key, sparse augmented count vector, cluster id, gamma) per route."""
    from .chem import augment, fingerprint, parse_smiles

    routes_path = os.path.join(run_dir, "routes.csv")
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not (os.path.exists(routes_path) and os.path.exists(manifest_path)):
        raise FileNotFoundError(f"{run_dir} is not a complete run directory")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    n_bits = int(manifest["config"].get("n_bits", 2048))
    radius = int(manifest["config"].get("radius", 2))
    with open(routes_path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "vector", "cluster_id", "gamma"])
        for row in reader:
            mols = [
                m
                for step in row["key"].split(">>")
                for m in step.split(".")
            ]
            fp = augment(
                [fingerprint(parse_smiles(m), radius, n_bits) for m in mols]
            )
            vec = " ".join(
                f"{b}:{c}" for b, c in zip(fp.on_bits.tolist(), fp.counts.tolist())
            )
            w.writerow([row["key"], vec, row["cluster_id"], row["gamma"]])
