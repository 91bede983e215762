"""Reference forward-model server.

Speaks the newline-delimited JSON wire protocol: one request object per
line ({"id", "reactants"}), one response per line ({"id", "product",
"alpha"}), matched by id.  Requests may be pipelined; malformed lines get
{"id": null, "error": ...} without dropping the connection.

Backends: "loopback" serves a template library through the in-process toy
chemistry; "adapter" loads any callable mapping a reactant list to
(product, alpha), so external predictors can be bridged in.
"""

from __future__ import annotations

import argparse
import importlib
import json
import socketserver
import sys

from retrosmc.model import TemplateLibrary, TemplateModel


class BackendError(RuntimeError):
    pass


def load_backend(kind: str, target: str):
    """Returns a callable reactants -> (product | None, alpha)."""
    if kind == "loopback":
        model = TemplateModel(TemplateLibrary.load(target))

        def predict(reactants):
            p = model.predict(reactants)
            return p.product, p.alpha

        return predict
    if kind == "adapter":
        mod_name, _, attr = target.partition(":")
        if not attr:
            raise BackendError("adapter target must be 'module:callable'")
        try:
            hook = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise BackendError(f"cannot load adapter {target!r}: {exc}") from exc
        return hook
    raise BackendError(f"unknown backend kind {kind!r}")


def handle_line(line: str, predict) -> str:
    """One request line to one response line; never raises."""
    try:
        msg = json.loads(line)
        rid = msg["id"]
        reactants = msg["reactants"]
        if not isinstance(reactants, list) or not all(
            isinstance(r, str) for r in reactants
        ):
            raise ValueError("reactants must be a list of strings")
    except Exception as exc:
        return json.dumps({"id": None, "error": f"bad request: {exc}"})
    try:
        product, alpha = predict(reactants)
    except Exception as exc:
        return json.dumps({"id": rid, "error": f"backend failure: {exc}"})
    return json.dumps({"id": rid, "product": product, "alpha": alpha})


def serve_stream(reader, writer, predict) -> None:
    """Pump one connection until EOF."""
    for line in reader:
        if not line.strip():
            continue
        writer.write(handle_line(line, predict) + "\n")
        writer.flush()


def serve_stdio(predict) -> None:
    serve_stream(sys.stdin, sys.stdout, predict)


def serve_tcp(host: str, port: int, predict, ready_event=None):
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            reader = (raw.decode("utf-8") for raw in self.rfile)

            class _W:
                def write(_self, text):
                    self.wfile.write(text.encode("utf-8"))

                def flush(_self):
                    self.wfile.flush()

            serve_stream(reader, _W(), predict)

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    server = Server((host, port), Handler)
    if ready_event is not None:
        ready_event.set()
    return server


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="route-model-server")
    p.add_argument("--stdio", action="store_true", help="serve on stdin/stdout")
    p.add_argument("--listen", default=None, help="host:port to bind")
    p.add_argument("--templates", default=None,
                   help="template library JSON for loopback mode")
    p.add_argument("--adapter", default=None,
                   help="module:callable backend hook")
    args = p.parse_args(argv)
    if bool(args.templates) == bool(args.adapter):
        print("exactly one backend required (--templates or --adapter)",
              file=sys.stderr)
        return 2
    try:
        predict = (
            load_backend("loopback", args.templates)
            if args.templates
            else load_backend("adapter", args.adapter)
        )
    except (BackendError, OSError) as exc:
        print(f"backend load failure: {exc}", file=sys.stderr)
        return 2
    if args.stdio:
        serve_stdio(predict)
        return 0
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        try:
            server = serve_tcp(host or "127.0.0.1", int(port), predict)
        except OSError as exc:
            print(f"bind failure: {exc}", file=sys.stderr)
            return 3
        print(f"listening on {args.listen}", file=sys.stderr)
        server.serve_forever()
        return 0
    print("choose --stdio or --listen", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
