"""Canonical string form of a molecular graph.

Atom ranks come from iterative neighborhood-invariant refinement seeded by
(element, degree, charge, aromatic flag).  Remaining ties are resolved by
individualizing one atom of the first tied class at a time and keeping the
lexicographically smallest string over all resulting writings, which makes
the output invariant under graph relabeling.
"""

from __future__ import annotations

from .graph import AROMATIC, DOUBLE, SINGLE, TRIPLE, MolGraph

_BOND_TOKEN = {SINGLE: "", DOUBLE: "=", TRIPLE: "#", AROMATIC: ""}

# Safety valve against pathological symmetry; far beyond any toy molecule.
_MAX_WRITINGS = 100_000


def _initial_ranks(g: MolGraph) -> list[int]:
    keys = [
        (a.element, g.degree(i), a.charge, a.aromatic)
        for i, a in enumerate(g.atoms)
    ]
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g: MolGraph, ranks: list[int]) -> list[int]:
    n = g.n_atoms
    while True:
        sigs = [
            (ranks[i], tuple(sorted((o, ranks[j]) for j, o in g.neighbors(i))))
            for i in range(n)
        ]
        order = {s: r for r, s in enumerate(sorted(set(sigs)))}
        new = [order[s] for s in sigs]
        if len(set(new)) == len(set(ranks)):
            return new
        ranks = new


def _discrete_orders(g: MolGraph, ranks: list[int], budget: list[int]):
    """Yield fully distinct rank vectors via individualize-and-refine."""
    classes: dict[int, list[int]] = {}
    for i, r in enumerate(ranks):
        classes.setdefault(r, []).append(i)
    tied = sorted(r for r, members in classes.items() if len(members) > 1)
    if not tied:
        yield ranks
        return
    for atom in classes[tied[0]]:
        budget[0] -= 1
        if budget[0] < 0:
            raise RuntimeError("canonicalization search budget exceeded")
        # give `atom` its own cell just ahead of its former class, then re-refine
        keys = [(r, 0 if i == atom else 1) for i, r in enumerate(ranks)]
        order = {k: j for j, k in enumerate(sorted(set(keys)))}
        split = [order[k] for k in keys]
        yield from _discrete_orders(g, _refine(g, split), budget)


def _atom_token(g: MolGraph, i: int) -> str:
    a = g.atoms[i]
    sym = a.element.lower() if a.aromatic else a.element
    if a.charge == 0:
        return sym
    if a.charge > 0:
        q = "+" if a.charge == 1 else f"+{a.charge}"
    else:
        q = "-" if a.charge == -1 else f"-{-a.charge}"
    return f"[{sym}{q}]"


def _bond_token(g: MolGraph, a: int, b: int, order: int) -> str:
    if order == SINGLE and g.atoms[a].aromatic and g.atoms[b].aromatic:
        return "-"
    return _BOND_TOKEN[order]


def _write(g: MolGraph, ranks: list[int]) -> str:
    n = g.n_atoms
    root = ranks.index(min(ranks))
    # First pass: DFS fixing visit order, tree edges, and ring-closure edges.
    parent: dict[int, int] = {root: -1}
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    ring_edges: list[tuple[int, int]] = []
    seen_edges: set[tuple[int, int]] = set()
    visited = [False] * n
    order_pos = [0] * n
    counter = 0

    def visit(u: int) -> None:
        nonlocal counter
        visited[u] = True
        order_pos[u] = counter
        counter += 1
        for j in sorted((j for j, _ in g.neighbors(u)), key=lambda j: ranks[j]):
            e = (min(u, j), max(u, j))
            if visited[j]:
                if j != parent[u] and e not in seen_edges:
                    seen_edges.add(e)
                    ring_edges.append(e)
            else:
                parent[j] = u
                children[u].append(j)
                seen_edges.add(e)
                visit(j)

    visit(root)

    order_map = {b.a * n + b.b: b.order for b in g.bonds}
    ring_at: dict[int, list[tuple[int, int]]] = {}
    for a, b in ring_edges:
        first, second = (a, b) if order_pos[a] < order_pos[b] else (b, a)
        ring_at.setdefault(first, []).append((second, order_map[a * n + b]))
        ring_at.setdefault(second, []).append((first, order_map[a * n + b]))
    for u in ring_at:
        ring_at[u].sort(key=lambda t: order_pos[t[0]])

    open_digits: dict[tuple[int, int], int] = {}
    in_use: set[int] = set()

    def ring_tokens(u: int) -> str:
        out = []
        for other, order in ring_at.get(u, ()):
            e = (min(u, other), max(u, other))
            if e in open_digits:
                d = open_digits.pop(e)
                in_use.discard(d)
                out.append(str(d))
            else:
                d = 1
                while d in in_use:
                    d += 1
                if d > 9:
                    raise RuntimeError("too many simultaneous ring closures")
                in_use.add(d)
                open_digits[e] = d
                out.append(_bond_token(g, u, other, order) + str(d))
        return "".join(out)

    parts: list[str] = []

    def emit(u: int, par: int) -> None:
        if par >= 0:
            parts.append(_bond_token(g, par, u, order_map[min(par, u) * n + max(par, u)]))
        parts.append(_atom_token(g, u))
        parts.append(ring_tokens(u))
        kids = children[u]
        for c in kids[:-1]:
            parts.append("(")
            emit(c, u)
            parts.append(")")
        if kids:
            emit(kids[-1], u)

    emit(root, -1)
    return "".join(parts)


def canonical_ranks(g: MolGraph) -> list[int]:
    """Stable refinement ranks (ties possible on symmetric graphs)."""
    return _refine(g, _initial_ranks(g))


def canonicalize(g: MolGraph) -> str:
    """Canonical string: identical for all isomorphic graphs, idempotent."""
    ranks = canonical_ranks(g)
    budget = [_MAX_WRITINGS]
    best: str | None = None
    for discrete in _discrete_orders(g, ranks, budget):
        s = _write(g, discrete)
        if best is None or s < best:
            best = s
    assert best is not None
    return best
