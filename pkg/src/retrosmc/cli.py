"""Command-line entry point.

Subcommands: run (one search), bench (seeded benchmark sweep),
gen-benchmark (emit a synthetic benchmark), export-vectors (route feature
vectors for external embedding), serve-check (wire-protocol conformance
probe against a model server).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_BUDGET = 3
EXIT_PROTOCOL = 4


def _cmd_run(args) -> int:
    from .runner import execute_run, load_config, write_run_dir

    overrides = {"seed": args.seed, "budget": args.budget, "engine": args.engine}
    cfg = load_config(args.config, overrides)
    art = execute_run(cfg)
    write_run_dir(args.out, art)
    print(
        f"run complete: {len(art.table)} distinct routes recorded, "
        f"{len(art.ranked)} end at the target, "
        f"{art.forward_calls} forward calls"
        + (" (budget truncated)" if art.table.truncated else "")
    )
    return 0


def _cmd_bench(args) -> int:
    from .bench import load_bench_spec, run_bench, write_bench_csv

    spec = load_bench_spec(args.spec)
    if args.jobs is not None:
        spec["jobs"] = args.jobs
    if args.seeds is not None:
        spec["seeds_per_target"] = args.seeds
    run_rows, agg, pooled = run_bench(spec)
    write_bench_csv(args.out, run_rows, agg, pooled)
    print(
        f"bench complete: {len(run_rows)} runs; "
        f"detection={agg['detection']:.3f} inclusion={agg['inclusion']:.3f} "
        f"top10={agg['top10']:.3f} -> {args.out}"
    )
    return 0


def _cmd_gen_benchmark(args) -> int:
    from .bench import write_benchmark

    write_benchmark(
        args.out,
        args.seed,
        catalog_size=args.catalog_size,
        n_truths=args.truths,
        n_two_step=args.two_step,
        class_corpus_size=args.class_corpus,
    )
    print(f"benchmark written to {args.out}")
    return 0


def _cmd_export_vectors(args) -> int:
    from .runner import export_vectors

    export_vectors(args.run_dir, args.out)
    print(f"vectors written to {args.out}")
    return 0


def _cmd_serve_check(args) -> int:
    from .model import RemoteModel, TemplateLibrary, TemplateModel
    from .space import Catalog

    catalog = Catalog.load(args.catalog)
    local = TemplateModel(TemplateLibrary.load(args.templates))
    rng = np.random.default_rng(args.seed)
    cases = []
    n = len(catalog)
    for _ in range(args.cases):
        if rng.random() < 0.2:
            cases.append((catalog.entries[int(rng.integers(n))],))
        else:
            i, j = int(rng.integers(n)), int(rng.integers(n))
            cases.append(tuple(sorted((catalog.entries[i], catalog.entries[j]))))

    address = args.address or os.environ.get("RETROSMC_SERVER_ADDRESS")
    if args.serve_cmd:
        remote = RemoteModel(command=args.serve_cmd.split())
    elif address:
        remote = RemoteModel(address=address)
    else:
        print("serve-check: no server (use --serve-cmd, --address, or "
              "RETROSMC_SERVER_ADDRESS)", file=sys.stderr)
        return EXIT_CONFIG

    with remote:
        # pipelining: the whole corpus goes out as one batch per chunk
        remote_preds = []
        chunk = 100
        for i in range(0, len(cases), chunk):
            remote_preds.extend(remote.predict_batch(cases[i : i + chunk]))
        # malformed-line resilience: the server must answer an error and
        # keep serving on the same connection
        if remote._writer is None:
            remote._connect()
        remote._writer.write("this is not json\n")
        remote._writer.flush()
        line = remote._reader.readline()
        msg = json.loads(line)
        if msg.get("id") is not None or "error" not in msg:
            print(f"serve-check: bad malformed-line response {line!r}")
            return EXIT_PROTOCOL
        after = remote.predict_batch(cases[:3])

    mismatches = 0
    for case, rp in zip(cases, remote_preds):
        lp = local.predict(case)
        if rp.product != lp.product or abs(rp.alpha - lp.alpha) > 1e-12:
            mismatches += 1
            if mismatches <= 5:
                print(f"  mismatch on {case}: local={lp} remote={rp}")
    for case, rp in zip(cases[:3], after):
        lp = local.predict(case)
        if rp.product != lp.product:
            mismatches += 1
    if mismatches:
        print(f"serve-check: {mismatches} mismatches over {len(cases)} cases")
        return EXIT_PROTOCOL
    print(
        f"serve-check: {len(cases)} cases, zero mismatches; "
        "malformed-line and pipelining probes passed"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="retrosmc",
        description="Posterior sampling over reactant catalogs via "
        "surrogate-assisted SMC",
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one search from a JSON config")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="run directory to create")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--budget", type=int, default=None)
    r.add_argument("--engine", choices=("surrogate", "simple"), default=None)
    r.set_defaults(func=_cmd_run)

    b = sub.add_parser("bench", help="run a benchmark spec, write summary CSV")
    b.add_argument("spec")
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=None)
    b.add_argument("--seeds", type=int, default=None, help="seeds per target")
    b.set_defaults(func=_cmd_bench)

    g = sub.add_parser("gen-benchmark", help="emit a seeded synthetic benchmark")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--catalog-size", type=int, default=500)
    g.add_argument("--truths", type=int, default=40)
    g.add_argument("--two-step", type=int, default=10)
    g.add_argument("--class-corpus", type=int, default=2000)
    g.set_defaults(func=_cmd_gen_benchmark)

    e = sub.add_parser("export-vectors", help="route feature vectors as CSV")
    e.add_argument("run_dir")
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_export_vectors)

    s = sub.add_parser("serve-check", help="conformance probe for a model server")
    s.add_argument("--catalog", required=True)
    s.add_argument("--templates", required=True)
    s.add_argument("--cases", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--address", default=None, help="host:port")
    s.add_argument("--serve-cmd", default=None,
                   help="command to spawn a stdio server")
    s.set_defaults(func=_cmd_serve_check)
    return p


def main(argv=None) -> int:
    from .model import ProtocolError
    from .runner import BudgetError, ConfigError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (OSError, FileNotFoundError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
