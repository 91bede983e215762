"""Parser for the restricted SMILES dialect.

Supported: organic-subset atoms B C N O P S F Cl Br I, aromatic c n o s,
branches, ring-closure digits 1-9, bond symbols - = #, and bracket atoms
with a formal charge.  No stereochemistry, isotopes, or explicit hydrogens.
Multi-component strings (".") are rejected here; callers split them first.
"""

from __future__ import annotations

from .graph import AROMATIC, DOUBLE, SINGLE, TRIPLE, Atom, Bond, GraphError, MAX_VALENCE, MolGraph

_BOND_CHARS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE}
_TWO_CHAR = ("Cl", "Br")
_ONE_CHAR = set("BCNOPSFI")
_AROMATIC_CHARS = set("cnos")


class SmilesError(ValueError):
    """Parse failure; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


def _parse_bracket(text: str, start: int) -> tuple[Atom, int]:
    # start points at '['; returns (atom, index past ']').
    i = start + 1
    n = len(text)
    element = None
    aromatic = False
    if text.startswith(_TWO_CHAR, i):
        element, i = text[i : i + 2], i + 2
    elif i < n and text[i] in _ONE_CHAR:
        element, i = text[i], i + 1
    elif i < n and text[i] in _AROMATIC_CHARS:
        element, aromatic, i = text[i].upper(), True, i + 1
    else:
        raise SmilesError("unknown symbol in bracket atom", i if i < n else start)
    charge = 0
    if i < n and text[i] in "+-":
        sign = 1 if text[i] == "+" else -1
        symbol = text[i]
        i += 1
        digits = ""
        while i < n and text[i].isdigit():
            digits += text[i]
            i += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while i < n and text[i] == symbol:
                charge += sign
                i += 1
    if i >= n or text[i] != "]":
        raise SmilesError("unterminated bracket atom", start)
    return Atom(element, charge, aromatic), i + 1


def parse_smiles(text: str) -> MolGraph:
    """Parse one molecule; raises SmilesError naming the byte offset."""
    if not text:
        raise SmilesError("empty input", 0)
    atoms: list[Atom] = []
    atom_offsets: list[int] = []
    bonds: list[Bond] = []
    bond_pairs: set[tuple[int, int]] = set()
    prev: int | None = None
    pending: int | None = None
    pending_off = 0
    branch_stack: list[int] = []
    rings: dict[str, tuple[int, int | None, int]] = {}  # digit -> (atom, bond, offset)

    def add_bond(a: int, b: int, order: int | None, offset: int) -> None:
        if order is None:
            order = (
                AROMATIC
                if atoms[a].aromatic and atoms[b].aromatic
                else SINGLE
            )
        key = (min(a, b), max(a, b))
        if a == b:
            raise SmilesError(f"ring closure bonds atom {a} to itself", offset)
        if key in bond_pairs:
            raise SmilesError("duplicate bond", offset)
        bond_pairs.add(key)
        bonds.append(Bond(a, b, order))

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == ".":
            raise SmilesError("multi-component input not allowed here", i)
        if ch in _BOND_CHARS:
            if pending is not None:
                raise SmilesError("two consecutive bond symbols", i)
            pending, pending_off = _BOND_CHARS[ch], i
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise SmilesError("branch before any atom", i)
            branch_stack.append(prev)
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise SmilesError("unbalanced parenthesis", i)
            if pending is not None:
                raise SmilesError("dangling bond symbol", pending_off)
            prev = branch_stack.pop()
            i += 1
            continue
        if ch.isdigit():
            if ch == "0":
                raise SmilesError("ring closure digit 0 not allowed", i)
            if prev is None:
                raise SmilesError("ring closure before any atom", i)
            if ch in rings:
                open_atom, open_bond, open_off = rings.pop(ch)
                order = pending if pending is not None else open_bond
                if (
                    pending is not None
                    and open_bond is not None
                    and pending != open_bond
                ):
                    raise SmilesError(f"conflicting orders for ring closure {ch}", i)
                add_bond(open_atom, prev, order, i)
            else:
                rings[ch] = (prev, pending, i)
            pending = None
            i += 1
            continue
        # atom token
        atom = None
        tok_len = 0
        if text.startswith(_TWO_CHAR, i):
            atom, tok_len = Atom(text[i : i + 2]), 2
        elif ch in _ONE_CHAR:
            atom, tok_len = Atom(ch), 1
        elif ch in _AROMATIC_CHARS:
            atom, tok_len = Atom(ch.upper(), 0, True), 1
        elif ch == "[":
            atom, end = _parse_bracket(text, i)
            tok_len = end - i
        else:
            raise SmilesError(f"unknown symbol {ch!r}", i)
        idx = len(atoms)
        atoms.append(atom)
        atom_offsets.append(i)
        if prev is not None:
            add_bond(prev, idx, pending, i)
        elif pending is not None:
            raise SmilesError("bond symbol before any atom", pending_off)
        pending = None
        prev = idx
        i += 1 if tok_len == 0 else tok_len

    if rings:
        digit, (_, _, off) = sorted(rings.items())[0]
        raise SmilesError(f"unclosed ring closure {digit}", off)
    if branch_stack:
        raise SmilesError("unbalanced parenthesis", n - 1)
    if pending is not None:
        raise SmilesError("dangling bond symbol", pending_off)

    try:
        g = MolGraph(atoms, bonds)
    except GraphError as exc:
        raise SmilesError(str(exc), 0) from exc
    bad = g.valence_violation()
    if bad is not None:
        elem = g.atoms[bad].element
        raise SmilesError(
            f"valence of {elem} exceeds {MAX_VALENCE[elem]:g}", atom_offsets[bad]
        )
    return g
