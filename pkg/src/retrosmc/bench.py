"""Benchmark harness: repeated seeded runs per target with shared state.

Workers each load the benchmark once and keep per-target evaluators and
surrogates warm across that target's seeds; run results depend only on
(master seed, target, repetition), never on worker scheduling.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .analysis import train_class_model
from .benchgen import generate_benchmark, load_class_corpus, save_class_corpus
from .model import TemplateModel
from .posterior import PosteriorTable, Target
from .routes import (
    GroundTruthSet,
    RouteEvaluator,
    TOP_N_LEVELS,
    chain_ground_truth,
    evaluate,
)
from .runner import ConfigError, rank_routes, sample_training_set, smc_config
from .smc import VisitedSet, build_neighbor_index, simple_smc, surrogate_smc
from .space import Catalog
from .surrogate import fit_gbm

BENCH_FILES = ("catalog.smi", "templates.json", "truths.txt", "class_corpus.txt")


def write_benchmark(out_dir, seed: int, **kwargs) -> None:
    """Materialize a seeded synthetic benchmark into a directory."""
    os.makedirs(out_dir, exist_ok=True)
    bench = generate_benchmark(seed, **kwargs)
    with open(os.path.join(out_dir, "catalog.smi"), "w", encoding="utf-8") as fh:
        for s in bench.entries:
            fh.write(s + "\n")
    bench.library.save(os.path.join(out_dir, "templates.json"))
    bench.truths.save(os.path.join(out_dir, "truths.txt"))
    save_class_corpus(bench.class_corpus, os.path.join(out_dir, "class_corpus.txt"))
    meta = {"seed": seed, **{k: v for k, v in kwargs.items()}}
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


_DEFAULT_SPEC = {
    "engine": "surrogate",
    "seeds_per_target": 10,
    "master_seed": 0,
    "targets": "one-step",  # or "two-step" or a list of indices
    "jobs": 0,  # 0 -> cpu count capped at 4
    "metric": "tanimoto",
    "beta": 20.0,
    "euclidean_cap": 10.0,
    "n_bits": 2048,
    "radius": 2,
    "class_l1": 1e-4,
    "smc": {
        "particles": 200,
        "schedule": [{"shape": [1], "steps": 2}, {"shape": [2], "steps": 98}],
        "elites": 20,
        "expansion": 30,
        "clusters": 20,
        "knn": 15,
        "budget": 8000,
        "resampling": "multinomial",
    },
    "surrogate": {"train_size": 500, "trees": 100, "depth": 4,
                  "learning_rate": 0.1},
}


def load_bench_spec(path_or_dict) -> dict:
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        with open(path_or_dict, encoding="utf-8") as fh:
            raw = json.load(fh)
    spec = json.loads(json.dumps(_DEFAULT_SPEC))
    smc = spec.pop("smc")
    sur = spec.pop("surrogate")
    spec.update(raw)
    smc.update(raw.get("smc", {}))
    sur.update(raw.get("surrogate", {}))
    spec["smc"] = smc
    spec["surrogate"] = sur
    if "dir" not in spec:
        raise ConfigError("benchmark spec needs a 'dir' with benchmark files")
    return spec


_W: dict = {}


def _init_worker(spec: dict) -> None:
    d = spec["dir"]
    catalog = Catalog.load(
        os.path.join(d, "catalog.smi"),
        radius=int(spec["radius"]),
        n_bits=int(spec["n_bits"]),
    )
    from .model import TemplateLibrary

    model = TemplateModel(TemplateLibrary.load(os.path.join(d, "templates.json")))
    truths = GroundTruthSet.load(os.path.join(d, "truths.txt"))
    corpus = load_class_corpus(os.path.join(d, "class_corpus.txt"))
    cm = train_class_model(
        corpus,
        l1_strength=float(spec["class_l1"]),
        radius=int(spec["radius"]),
        n_bits=int(spec["n_bits"]),
    )
    index = build_neighbor_index(catalog, int(spec["smc"]["knn"]))
    _W.update(
        spec=spec, catalog=catalog, model=model, truths=truths,
        class_model=cm, index=index,
    )


def bench_targets(spec: dict, truths: GroundTruthSet):
    """(label, TruthRoute) pairs selected by the spec."""
    sel = spec["targets"]
    if sel == "one-step":
        routes = [t for t in truths if len(t.steps) == 1 and t.shape == (2,)]
    elif sel == "two-step":
        routes = list(chain_ground_truth(truths))
    else:
        pool = [t for t in truths if len(t.steps) == 1 and t.shape == (2,)]
        routes = [pool[i] for i in sel]
    return list(enumerate(routes))


def _engine_cfg(spec: dict, seed: int, shape_steps=None):
    smc = dict(spec["smc"])
    cfg = {
        "particles": smc["particles"],
        "schedule": shape_steps or smc["schedule"],
        "elites": smc.get("elites", 0),
        "expansion": smc["expansion"],
        "clusters": smc["clusters"],
        "knn": smc["knn"],
        "beta": spec["beta"],
        "seed": seed,
        "budget": smc["budget"],
        "metric": spec["metric"],
        "euclidean_cap": spec["euclidean_cap"],
        "resampling": smc["resampling"],
    }
    return smc_config(cfg)


def run_target_seeds(target_idx: int, truth, seeds) -> list[dict]:
    """All requested seeds for one target inside one worker."""
    spec = _W["spec"]
    catalog, model, cm, index = (
        _W["catalog"], _W["model"], _W["class_model"], _W["index"],
    )
    target = Target.from_smiles(
        truth.target, radius=int(spec["radius"]), n_bits=int(spec["n_bits"])
    )
    evaluator = RouteEvaluator(
        target, model, spec["metric"], float(spec["euclidean_cap"])
    )
    shapes = None
    if spec["targets"] == "two-step":
        shapes = [{"shape": [2, 1], "steps": spec["smc"].get("steps", 200)}]
    base_cfg = _engine_cfg(spec, 0, shapes)
    spaces = [catalog.space(shape) for shape, _ in base_cfg.schedule]

    surrogate = None
    train_rows = None
    n_train = int(spec["surrogate"]["train_size"])
    if spec["engine"] == "surrogate":
        train_rng = np.random.default_rng(
            [int(spec["master_seed"]), target_idx, 0x7E57]
        )
        train_rows, _ = sample_training_set(spaces, n_train, train_rng, evaluator)
        feats = np.stack([r.fp.dense_counts() for r in train_rows])
        energies = np.array([r.energy for r in train_rows])
        sur = spec["surrogate"]
        cap = 1.0 if spec["metric"] == "tanimoto" else float(spec["euclidean_cap"])
        surrogate = fit_gbm(
            feats, energies,
            n_trees=int(sur["trees"]), max_depth=int(sur["depth"]),
            nu=float(sur["learning_rate"]), energy_cap=cap,
        )

    rows = []
    pooled_table = PosteriorTable(beta=float(spec["beta"]))
    for rep in range(int(spec["seeds_per_target"])):
        seed = int(
            np.random.SeedSequence(
                [int(spec["master_seed"]), target_idx, rep]
            ).generate_state(1)[0]
            % (2**31)
        )
        cfg = _engine_cfg(spec, seed, shapes)
        evaluator.begin_run(cfg.budget)
        table = PosteriorTable(beta=cfg.beta)
        visited = VisitedSet()
        if spec["engine"] == "surrogate":
            evaluator.charge(len(train_rows))  # shared pre-training still costs
            for r in train_rows:
                table.record(r.key, r.particle, r.energy)
                visited.add(r.key, tuple(len(g) for g in r.particle))
            table, _ = surrogate_smc(
                cfg, target, model, surrogate, catalog,
                index=index, evaluator=evaluator, table=table, visited=visited,
            )
        else:
            table, _ = simple_smc(
                cfg, target, model, catalog, index=index,
                evaluator=evaluator, table=table,
            )
        ranked = rank_routes(table, evaluator, catalog, cm)
        ranked_keys = [k for k, _ in ranked]
        summary = evaluate(
            table, ranked_keys, truth, forward_calls=evaluator.calls
        )
        row = {
            "row": "run",
            "target_index": target_idx,
            "target": truth.target,
            "seed": rep,
            **summary.as_row(),
        }
        rows.append(row)
        for key, (particle, e, _) in table.entries.items():
            pooled_table.record(key, particle, e)
    # pooled-union metrics for this target
    pooled_ranked = rank_routes(pooled_table, evaluator, catalog, cm)
    pooled = evaluate(
        pooled_table, [k for k, _ in pooled_ranked], truth, forward_calls=0
    )
    rows.append(
        {
            "row": "pooled",
            "target_index": target_idx,
            "target": truth.target,
            "seed": "",
            **pooled.as_row(),
        }
    )
    return rows


def _task(args):
    return run_target_seeds(*args)


def run_bench(spec: dict):
    """All targets and seeds; returns (run rows, aggregate row, pooled rows)."""
    truths = GroundTruthSet.load(os.path.join(spec["dir"], "truths.txt"))
    targets = bench_targets(spec, truths)
    if not targets:
        raise ConfigError("benchmark selected no targets")
    jobs = int(spec["jobs"]) or min(4, os.cpu_count() or 1)
    tasks = [(idx, truth, None) for idx, truth in targets]
    if jobs <= 1:
        _init_worker(spec)
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(
            max_workers=jobs,
            mp_context=multiprocessing.get_context("spawn"),
            initializer=_init_worker,
            initargs=(spec,),
        ) as pool:
            results = list(pool.map(_task, tasks))
    all_rows = [row for group in results for row in group]
    run_rows = sorted(
        (r for r in all_rows if r["row"] == "run"),
        key=lambda r: (r["target_index"], r["seed"]),
    )
    pooled_rows = sorted(
        (r for r in all_rows if r["row"] == "pooled"),
        key=lambda r: r["target_index"],
    )
    agg = {"row": "aggregate", "target_index": "", "target": "", "seed": ""}
    metrics = ["detection", "inclusion", "distinct_routes", "forward_calls"] + [
        f"top{n}" for n in TOP_N_LEVELS
    ]
    for m in metrics:
        agg[m] = float(np.mean([r[m] for r in run_rows]))
    for m in ("detection", "inclusion") + tuple(f"top{n}" for n in TOP_N_LEVELS):
        agg[f"pooled_{m}"] = float(np.mean([r[m] for r in pooled_rows]))
    return run_rows, agg, pooled_rows


def write_bench_csv(path, run_rows, agg, pooled_rows) -> None:
    fields = [
        "row", "target_index", "target", "seed", "detection", "inclusion",
    ] + [f"top{n}" for n in TOP_N_LEVELS] + [
        "distinct_routes", "forward_calls",
    ] + [
        f"pooled_{m}"
        for m in ("detection", "inclusion")
        + tuple(f"top{n}" for n in TOP_N_LEVELS)
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="")
        w.writeheader()
        for r in run_rows:
            w.writerow(r)
        w.writerow(agg)
