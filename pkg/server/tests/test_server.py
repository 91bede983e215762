"""Wire-protocol conformance of the reference model server."""

import json
import os
import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from retrosmc.bench import write_benchmark
from retrosmc.model import RemoteModel, TemplateLibrary, TemplateModel
from retrosmc.space import Catalog

from route_model_server.server import handle_line, load_backend, serve_tcp


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    write_benchmark(
        str(out), 1, catalog_size=80, n_truths=8, n_two_step=2,
        class_corpus_size=300,
    )
    return out


@pytest.fixture(scope="module")
def local_model(bench_dir):
    return TemplateModel(TemplateLibrary.load(bench_dir / "templates.json"))


def _spawn_stdio(bench_dir):
    return subprocess.Popen(
        [
            sys.executable, "-m", "route_model_server",
            "--stdio", "--templates", str(bench_dir / "templates.json"),
        ],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
    )


def test_single_request_matches_local(bench_dir, local_model):
    proc = _spawn_stdio(bench_dir)
    try:
        proc.stdin.write(json.dumps({"id": 1, "reactants": ["CBr", "OCC"]}) + "\n")
        proc.stdin.flush()
        msg = json.loads(proc.stdout.readline())
        local = local_model.predict(("CBr", "OCC"))
        assert msg == {"id": 1, "product": local.product, "alpha": local.alpha}
    finally:
        proc.stdin.close()
        proc.terminate()
        proc.wait(timeout=10)


def test_malformed_line_keeps_connection(bench_dir):
    proc = _spawn_stdio(bench_dir)
    try:
        proc.stdin.write("definitely not json\n")
        proc.stdin.write(json.dumps({"id": 7, "reactants": ["CCO"]}) + "\n")
        proc.stdin.flush()
        err = json.loads(proc.stdout.readline())
        assert err["id"] is None
        assert "error" in err
        ok = json.loads(proc.stdout.readline())
        assert ok["id"] == 7
    finally:
        proc.stdin.close()
        proc.terminate()
        proc.wait(timeout=10)


def test_pipelined_requests_all_answered(bench_dir, local_model):
    proc = _spawn_stdio(bench_dir)
    cat = Catalog.load(bench_dir / "catalog.smi")
    rng = np.random.default_rng(0)
    try:
        ids = list(range(100))
        for rid in ids:
            i, j = int(rng.integers(len(cat))), int(rng.integers(len(cat)))
            req = {"id": rid, "reactants": [cat.entries[i], cat.entries[j]]}
            proc.stdin.write(json.dumps(req) + "\n")
        proc.stdin.flush()
        got = [json.loads(proc.stdout.readline()) for _ in ids]
        assert sorted(m["id"] for m in got) == ids
    finally:
        proc.stdin.close()
        proc.terminate()
        proc.wait(timeout=10)


def test_conformance_corpus_500_zero_mismatches(bench_dir, local_model):
    """A8: the serve-check corpus against loopback mode, via the real client."""
    cat = Catalog.load(bench_dir / "catalog.smi")
    rng = np.random.default_rng(0)
    cases = []
    for _ in range(500):
        if rng.random() < 0.2:
            cases.append((cat.entries[int(rng.integers(len(cat)))],))
        else:
            i, j = int(rng.integers(len(cat))), int(rng.integers(len(cat)))
            cases.append(tuple(sorted((cat.entries[i], cat.entries[j]))))
    remote = RemoteModel(
        command=[
            sys.executable, "-m", "route_model_server",
            "--stdio", "--templates", str(bench_dir / "templates.json"),
        ]
    )
    with remote:
        preds = []
        for i in range(0, len(cases), 125):
            preds.extend(remote.predict_batch(cases[i : i + 125]))
    mismatches = sum(
        1
        for case, rp in zip(cases, preds)
        if rp != local_model.predict(case)
    )
    assert mismatches == 0
    print("A8 serve-check corpus: 500 cases, zero mismatches -> PASS")


def test_serve_check_cli_against_real_server(bench_dir):
    from retrosmc.cli import main

    rc = main(
        [
            "serve-check",
            "--catalog", str(bench_dir / "catalog.smi"),
            "--templates", str(bench_dir / "templates.json"),
            "--cases", "500",
            "--seed", "0",
            "--serve-cmd",
            f"{sys.executable} -m route_model_server --stdio "
            f"--templates {bench_dir / 'templates.json'}",
        ]
    )
    assert rc == 0


def test_tcp_mode(bench_dir, local_model):
    predict = load_backend("loopback", str(bench_dir / "templates.json"))
    server = serve_tcp("127.0.0.1", 0, predict)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        remote = RemoteModel(address=f"127.0.0.1:{port}")
        with remote:
            got = remote.predict_batch([("CBr", "OCC"), ("CC", "CC")])
        assert got[0] == local_model.predict(("CBr", "OCC"))
        assert got[1].product is None
    finally:
        server.shutdown()
        server.server_close()


def test_adapter_backend():
    def fake(reactants):
        return ".".join(reactants), 0.5

    import route_model_server

    route_model_server._test_hook = fake
    predict = load_backend("adapter", "route_model_server:_test_hook")
    line = handle_line(json.dumps({"id": 1, "reactants": ["A", "B"]}), predict)
    assert json.loads(line) == {"id": 1, "product": "A.B", "alpha": 0.5}


def test_handle_line_rejects_bad_reactants():
    predict = lambda r: ("X", 1.0)
    msg = json.loads(handle_line(json.dumps({"id": 1, "reactants": "CCO"}),
                                 predict))
    assert msg["id"] is None and "error" in msg


def test_backend_exactly_one_required():
    from route_model_server.server import main as server_main

    assert server_main(["--stdio"]) == 2
    assert server_main(["--stdio", "--templates", "x", "--adapter", "y"]) == 2
