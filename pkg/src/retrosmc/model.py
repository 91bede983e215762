"""Forward prediction: reactant set -> (product, sequence score).

Two implementations share one contract: a deterministic template rewrite
system (the bundled toy chemistry) and a remote client speaking the
newline-delimited JSON wire protocol.  "No reaction" is a first-class
outcome: product None with the floor score.
"""

from __future__ import annotations

import json
import socket
import subprocess
from dataclasses import dataclass

from .chem import MolGraph, canonicalize, parse_smiles
from .chem.graph import Atom, Bond, GraphError

ALPHA_FLOOR = 1e-6  # keeps scores strictly positive and log-safe


@dataclass(frozen=True)
class Prediction:
    product: str | None  # canonical, or None for no-reaction
    alpha: float

    @property
    def valid(self) -> bool:
        return self.product is not None


class TemplateError(ValueError):
    """Malformed template pattern or rewrite spec."""


@dataclass(frozen=True)
class Template:
    pattern: str  # one motif, or two joined with "|" for pair reactions
    rewrite: str  # semicolon-separated edit ops
    priority: int
    class_id: int

    @property
    def arity(self) -> int:
        return 2 if "|" in self.pattern else 1


def _parse_motif(text: str) -> MolGraph:
    try:
        return parse_smiles(text)
    except Exception as exc:
        raise TemplateError(f"bad motif {text!r}: {exc}") from exc


def _parse_rewrite(spec: str, arity: int):
    """Compile an edit spec into a list of (op, args) tuples."""
    ops = []
    for raw in spec.split(";"):
        raw = raw.strip()
        if not raw:
            continue
        head, _, body = raw.partition(":")
        if head in ("dropA", "dropB"):
            ops.append((head, tuple(int(x) for x in body.split(","))))
        elif head == "join":
            part, _, order = body.partition(":")
            a, _, b = part.partition("-")
            ops.append(("join", (int(a), int(b), int(order) if order else 1)))
        elif head in ("bondA", "bondB"):
            part, _, order = body.partition(":")
            if not order:
                raise TemplateError(f"{head} needs an explicit order: {raw!r}")
            a, _, b = part.partition("-")
            ops.append((head, (int(a), int(b), int(order))))
        else:
            raise TemplateError(f"unknown rewrite op {raw!r}")
    if arity == 1 and any(op in ("join", "dropB", "bondB") for op, _ in ops):
        raise TemplateError("single-reactant template uses pair-only ops")
    if not ops:
        raise TemplateError("empty rewrite spec")
    return ops


def _tags_fit(motif: MolGraph, host: MolGraph) -> bool:
    host_tags = host.atom_tags
    for t, c in motif.atom_tags.items():
        if host_tags.get(t, 0) < c:
            return False
    return True


def _embeddings(motif: MolGraph, host: MolGraph):
    """Yield motif->host atom maps in lexicographic order of the map tuple."""
    m = motif.n_atoms
    if not _tags_fit(motif, host):
        return
    candidates = []
    for i in range(m):
        a = motif.atoms[i]
        candidates.append(
            [
                j
                for j, b in enumerate(host.atoms)
                if a.element == b.element
                and a.aromatic == b.aromatic
                and a.charge == b.charge
            ]
        )
        if not candidates[-1]:
            return

    host_order = {}
    for b in host.bonds:
        host_order[(b.a, b.b)] = b.order
        host_order[(b.b, b.a)] = b.order

    mapping: list[int] = []
    used: set[int] = set()

    def extend(i: int):
        if i == m:
            yield tuple(mapping)
            return
        for j in candidates[i]:
            if j in used:
                continue
            ok = True
            for k, order in motif.neighbors(i):
                if k < i and host_order.get((mapping[k], j)) != order:
                    ok = False
                    break
            if ok:
                mapping.append(j)
                used.add(j)
                yield from extend(i + 1)
                used.discard(j)
                mapping.pop()

    yield from extend(0)


class TemplateLibrary:
    """Priority-ordered rewrite rules; priorities must be unique."""

    def __init__(self, templates):
        templates = list(templates)
        prios = [t.priority for t in templates]
        if len(set(prios)) != len(prios):
            raise TemplateError("template priorities must be unique")
        if not templates:
            raise TemplateError("library must not be empty")
        # scan order: highest priority first; rank feeds the score rule
        self.templates = sorted(templates, key=lambda t: -t.priority)
        self._motifs = []
        for t in self.templates:
            parts = t.pattern.split("|")
            if len(parts) not in (1, 2):
                raise TemplateError(f"bad pattern {t.pattern!r}")
            motifs = tuple(_parse_motif(p) for p in parts)
            ops = _parse_rewrite(t.rewrite, t.arity)
            self._motifs.append((motifs, ops))

    def __len__(self) -> int:
        return len(self.templates)

    @classmethod
    def load(cls, path) -> "TemplateLibrary":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(
            Template(d["pattern"], d["rewrite"], d["priority"], d["class_id"])
            for d in data
        )

    def save(self, path) -> None:
        data = [
            {
                "pattern": t.pattern,
                "rewrite": t.rewrite,
                "priority": t.priority,
                "class_id": t.class_id,
            }
            for t in self.templates
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1)
            fh.write("\n")


def _edit(graphs, maps, ops) -> MolGraph | None:
    """Apply ops to the disjoint union of graphs; None if the result is illegal."""
    atoms: list[Atom] = []
    bonds: list[tuple[int, int, int]] = []
    offsets = []
    for g in graphs:
        offsets.append(len(atoms))
        atoms.extend(g.atoms)
        bonds.extend((b.a + offsets[-1], b.b + offsets[-1], b.order) for b in g.bonds)

    def resolve(side: int, motif_idx: int) -> int:
        return maps[side][motif_idx] + offsets[side]

    doomed: set[int] = set()
    order_edits: dict[tuple[int, int], int] = {}
    new_bonds: list[tuple[int, int, int]] = []
    for op, args in ops:
        if op == "dropA":
            doomed.update(resolve(0, i) for i in args)
        elif op == "dropB":
            doomed.update(resolve(1, i) for i in args)
        elif op == "join":
            i, j, order = args
            new_bonds.append((resolve(0, i), resolve(1, j), order))
        elif op in ("bondA", "bondB"):
            side = 0 if op == "bondA" else 1
            i, j, order = args
            a, b = resolve(side, i), resolve(side, j)
            order_edits[(min(a, b), max(a, b))] = order

    merged: list[tuple[int, int, int]] = []
    seen = set()
    for a, b, order in bonds:
        key = (min(a, b), max(a, b))
        merged.append((key[0], key[1], order_edits.get(key, order)))
        seen.add(key)
    for a, b, order in new_bonds:
        key = (min(a, b), max(a, b))
        if key in seen:
            return None
        merged.append((key[0], key[1], order))
        seen.add(key)
    # pending order edits on bonds that do not exist create them
    for key, order in order_edits.items():
        if key not in seen:
            merged.append((key[0], key[1], order))
            seen.add(key)

    if doomed:
        keep = [i for i in range(len(atoms)) if i not in doomed]
        remap = {old: new for new, old in enumerate(keep)}
        atoms = [atoms[i] for i in keep]
        merged = [
            (remap[a], remap[b], o)
            for a, b, o in merged
            if a not in doomed and b not in doomed
        ]
    try:
        g = MolGraph(atoms, (Bond(a, b, o) for a, b, o in merged))
    except GraphError:
        return None
    if g.valence_violation() is not None:
        return None
    return g


class TemplateModel:
    """Deterministic toy forward model driven by a TemplateLibrary."""

    def __init__(self, library: TemplateLibrary):
        self.library = library
        self._graphs: dict[str, MolGraph] = {}
        self._cache: dict[tuple[str, ...], tuple[Prediction, int | None]] = {}

    def _graph(self, smiles: str) -> MolGraph:
        g = self._graphs.get(smiles)
        if g is None:
            g = parse_smiles(smiles)
            self._graphs[smiles] = g
        return g

    def predict(self, reactants) -> Prediction:
        return self.predict_with_class(reactants)[0]

    def predict_with_class(self, reactants):
        """Prediction plus the fired template's class id (None if no match)."""
        key = tuple(sorted(reactants))
        hit = self._cache.get(key)
        if hit is None:
            hit = self._apply(key)
            self._cache[key] = hit
        return hit

    def predict_batch(self, batch):
        return [self.predict(r) for r in batch]

    def _apply(self, key: tuple[str, ...]):
        graphs = [self._graph(s) for s in key]
        for rank, (tpl, (motifs, ops)) in enumerate(
            zip(self.library.templates, self.library._motifs)
        ):
            if tpl.arity != len(key):
                continue
            if len(motifs) == 1:
                if not _tags_fit(motifs[0], graphs[0]):
                    continue
            elif not (
                (_tags_fit(motifs[0], graphs[0]) and _tags_fit(motifs[1], graphs[1]))
                or (_tags_fit(motifs[0], graphs[1]) and _tags_fit(motifs[1], graphs[0]))
            ):
                continue
            product = self._fire(graphs, motifs, ops)
            if product is not None:
                alpha = min(1.0, max(ALPHA_FLOOR, 1.0 / (1.0 + rank)))
                return Prediction(product, alpha), tpl.class_id
        return Prediction(None, ALPHA_FLOOR), None

    @staticmethod
    def _fire(graphs, motifs, ops) -> str | None:
        if len(motifs) == 1:
            for emb in _embeddings(motifs[0], graphs[0]):
                g = _edit([graphs[0]], [emb], ops)
                if g is not None:
                    return canonicalize(g)
            return None
        assignments = [(0, 1), (1, 0)] if len(graphs) == 2 else []
        for ia, ib in assignments:
            for emb_a in _embeddings(motifs[0], graphs[ia]):
                for emb_b in _embeddings(motifs[1], graphs[ib]):
                    g = _edit(
                        [graphs[ia], graphs[ib]], [emb_a, emb_b], ops
                    )
                    if g is not None:
                        return canonicalize(g)
        return None


class ProtocolError(RuntimeError):
    """Wire-protocol failure after retries."""


class RemoteModel:
    """Client for a model server speaking newline-delimited JSON.

    One request object per line; responses are matched by id and may arrive
    in any order.  Batches are serialized per connection; partial failures
    retry the whole batch on a fresh connection before raising.
    """

    def __init__(self, address: str | None = None, command=None, retries: int = 2):
        if (address is None) == (command is None):
            raise ValueError("exactly one of address/command required")
        self.address = address
        self.command = list(command) if command else None
        self.retries = retries
        self._next_id = 0
        self._proc = None
        self._sock = None
        self._reader = None
        self._writer = None

    # -- transport ----------------------------------------------------------

    def _connect(self) -> None:
        if self.command is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
            )
            self._writer = self._proc.stdin
            self._reader = self._proc.stdout
        else:
            host, _, port = self.address.rpartition(":")
            self._sock = socket.create_connection((host, int(port)), timeout=30)
            f = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            self._writer = f
            self._reader = f

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=10)
            self._proc = None
        self._reader = self._writer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- prediction ---------------------------------------------------------

    def predict(self, reactants) -> Prediction:
        return self.predict_batch([reactants])[0]

    def predict_batch(self, batch):
        batch = [tuple(sorted(r)) for r in batch]
        last_err = None
        for _ in range(self.retries + 1):
            try:
                return self._round_trip(batch)
            except (OSError, ValueError, ProtocolError) as exc:
                last_err = exc
                self.close()
        raise ProtocolError(f"batch failed after {self.retries + 1} attempts: {last_err}")

    def _round_trip(self, batch):
        if self._writer is None:
            self._connect()
        ids = []
        for reactants in batch:
            rid = self._next_id
            self._next_id += 1
            ids.append(rid)
            self._writer.write(
                json.dumps({"id": rid, "reactants": list(reactants)}) + "\n"
            )
        self._writer.flush()
        wanted = set(ids)
        got: dict[int, Prediction] = {}
        while wanted:
            line = self._reader.readline()
            if not line:
                raise ProtocolError("connection closed mid-batch")
            msg = json.loads(line)
            if msg.get("error") is not None:
                raise ProtocolError(f"server error: {msg['error']}")
            rid = msg["id"]
            if rid not in wanted:
                continue  # stale response from a retried batch
            wanted.discard(rid)
            got[rid] = Prediction(msg["product"], float(msg["alpha"]))
        return [got[rid] for rid in ids]
