"""Operator trees for logical queries: parsing, rewrites, exact answers.

Concrete syntax is an s-expression grammar:

    (e <entity>)                anchor
    (p <relation> <sub>)        projection through a relation
    (i <sub> <sub> ...)         intersection, two or more branches
    (u <sub> <sub> ...)         union, two or more branches
    (n <sub>)                   negation (set complement)
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass


class QuerySyntaxError(ValueError):
    """Raised on malformed query text; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Anchor:
    entity: int


@dataclass(frozen=True)
class Projection:
    relation: int
    child: "OperatorTree"


@dataclass(frozen=True)
class Intersection:
    children: tuple


@dataclass(frozen=True)
class Union:
    children: tuple


@dataclass(frozen=True)
class Negation:
    child: "OperatorTree"


OperatorTree = Anchor | Projection | Intersection | Union | Negation


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            tokens.append((ch, i))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            tokens.append((text[i:j], i))
            i = j
    return tokens


def _parse_int(token: str, offset: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise QuerySyntaxError(f"expected an integer id, got {token!r}", offset)
    if value < 0:
        raise QuerySyntaxError(f"ids must be nonnegative, got {value}", offset)
    return value


def parse_query(text: str) -> OperatorTree:
    """Parse query text into an operator tree, validating arities."""
    tokens = _tokenize(text)
    if not tokens:
        raise QuerySyntaxError("empty query", 0)
    pos = 0

    def parse_node():
        nonlocal pos
        if pos >= len(tokens):
            raise QuerySyntaxError("unexpected end of input", len(text))
        tok, off = tokens[pos]
        if tok != "(":
            raise QuerySyntaxError(f"expected '(', got {tok!r}", off)
        pos += 1
        if pos >= len(tokens):
            raise QuerySyntaxError("unexpected end of input", len(text))
        tag, tag_off = tokens[pos]
        pos += 1
        if tag == "e":
            args = parse_atoms(1, tag_off)
            node = Anchor(args[0])
        elif tag == "p":
            if pos >= len(tokens):
                raise QuerySyntaxError("projection needs a relation id", len(text))
            rel_tok, rel_off = tokens[pos]
            pos += 1
            rel = _parse_int(rel_tok, rel_off)
            node = Projection(rel, parse_node())
        elif tag == "n":
            node = Negation(parse_node())
        elif tag in ("i", "u"):
            children = []
            while pos < len(tokens) and tokens[pos][0] == "(":
                children.append(parse_node())
            if pos >= len(tokens):
                raise QuerySyntaxError("unexpected end of input", len(text))
            if len(children) < 2:
                raise QuerySyntaxError(
                    f"{'intersection' if tag == 'i' else 'union'} needs >= 2 branches",
                    tag_off,
                )
            node = Intersection(tuple(children)) if tag == "i" else Union(tuple(children))
        else:
            raise QuerySyntaxError(f"unknown tag {tag!r}", tag_off)
        if pos >= len(tokens):
            raise QuerySyntaxError("unexpected end of input", len(text))
        close, close_off = tokens[pos]
        if close != ")":
            raise QuerySyntaxError(f"expected ')', got {close!r}", close_off)
        pos += 1
        return node

    def parse_atoms(count: int, where: int):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(tokens) or tokens[pos][0] in "()":
                raise QuerySyntaxError("expected an id", where)
            tok, off = tokens[pos]
            pos += 1
            out.append(_parse_int(tok, off))
        return out

    tree = parse_node()
    if pos != len(tokens):
        raise QuerySyntaxError(f"trailing input {tokens[pos][0]!r}", tokens[pos][1])
    return tree


def serialize_query(tree: OperatorTree) -> str:
    """Inverse of parse_query."""
    if isinstance(tree, Anchor):
        return f"(e {tree.entity})"
    if isinstance(tree, Projection):
        return f"(p {tree.relation} {serialize_query(tree.child)})"
    if isinstance(tree, Intersection):
        return "(i " + " ".join(serialize_query(c) for c in tree.children) + ")"
    if isinstance(tree, Union):
        return "(u " + " ".join(serialize_query(c) for c in tree.children) + ")"
    if isinstance(tree, Negation):
        return f"(n {serialize_query(tree.child)})"
    raise TypeError(f"not an operator tree: {tree!r}")


# ---------------------------------------------------------------------------
# Rewrites
# ---------------------------------------------------------------------------


class UnsupportedStructureError(ValueError):
    pass


def to_dnf(tree: OperatorTree) -> list[OperatorTree]:
    """Split a tree into union-free branches whose answers union to the original's.

    Unions are distributed upward through projections and intersections.  A
    union below a negation cannot be lifted; rewrite with De Morgan first.
    """
    if isinstance(tree, Anchor):
        return [tree]
    if isinstance(tree, Projection):
        return [Projection(tree.relation, b) for b in to_dnf(tree.child)]
    if isinstance(tree, Negation):
        branches = to_dnf(tree.child)
        if len(branches) != 1:
            raise UnsupportedStructureError(
                "union under negation has no DNF; apply the De Morgan rewrite first"
            )
        return [Negation(branches[0])]
    if isinstance(tree, Intersection):
        combos = itertools.product(*(to_dnf(c) for c in tree.children))
        return [Intersection(tuple(combo)) for combo in combos]
    if isinstance(tree, Union):
        out = []
        for child in tree.children:
            out.extend(to_dnf(child))
        return out
    raise TypeError(f"not an operator tree: {tree!r}")


def apply_de_morgan(tree: OperatorTree) -> OperatorTree:
    """Replace every union by the complement of intersected complements."""
    if isinstance(tree, Anchor):
        return tree
    if isinstance(tree, Projection):
        return Projection(tree.relation, apply_de_morgan(tree.child))
    if isinstance(tree, Negation):
        return Negation(apply_de_morgan(tree.child))
    if isinstance(tree, Intersection):
        return Intersection(tuple(apply_de_morgan(c) for c in tree.children))
    if isinstance(tree, Union):
        rewritten = tuple(Negation(apply_de_morgan(c)) for c in tree.children)
        return Negation(Intersection(rewritten))
    raise TypeError(f"not an operator tree: {tree!r}")


# ---------------------------------------------------------------------------
# Exact semantics
# ---------------------------------------------------------------------------


def symbolic_answers(tree: OperatorTree, kg) -> set[int]:
    """Exact answer set by bottom-up evaluation on a knowledge graph."""
    if isinstance(tree, Anchor):
        return {tree.entity}
    if isinstance(tree, Projection):
        sub = symbolic_answers(tree.child, kg)
        out: set[int] = set()
        for h in sub:
            out.update(kg.tails(h, tree.relation))
        return out
    if isinstance(tree, Intersection):
        sets = [symbolic_answers(c, kg) for c in tree.children]
        return set.intersection(*sets)
    if isinstance(tree, Union):
        sets = [symbolic_answers(c, kg) for c in tree.children]
        return set.union(*sets)
    if isinstance(tree, Negation):
        return set(range(kg.entity_count)) - symbolic_answers(tree.child, kg)
    raise TypeError(f"not an operator tree: {tree!r}")


# ---------------------------------------------------------------------------
# Structure classification
# ---------------------------------------------------------------------------

NEGATION_QUERY_TYPES = frozenset({"2IN", "3IN", "INP", "PIN", "PNI"})

QUERY_TYPE_TAGS = (
    "1P", "2P", "3P", "2I", "3I", "PI", "IP", "2U", "UP",
    "2IN", "3IN", "INP", "PIN", "PNI",
)


def _shape(tree: OperatorTree):
    if isinstance(tree, Anchor):
        return "e"
    if isinstance(tree, Projection):
        return ("p", _shape(tree.child))
    if isinstance(tree, Negation):
        return ("n", _shape(tree.child))
    if isinstance(tree, Intersection):
        return ("i",) + tuple(sorted(map(str, (_shape(c) for c in tree.children))))
    if isinstance(tree, Union):
        return ("u",) + tuple(sorted(map(str, (_shape(c) for c in tree.children))))
    raise TypeError(f"not an operator tree: {tree!r}")


def _template_tree(tag: str) -> OperatorTree:
    """Template instance of a standard structure, with placeholder ids."""
    p1 = lambda: Projection(0, Anchor(0))
    p2 = lambda: Projection(0, p1())
    builders = {
        "1P": lambda: p1(),
        "2P": lambda: p2(),
        "3P": lambda: Projection(0, p2()),
        "2I": lambda: Intersection((p1(), p1())),
        "3I": lambda: Intersection((p1(), p1(), p1())),
        "PI": lambda: Intersection((p2(), p1())),
        "IP": lambda: Projection(0, Intersection((p1(), p1()))),
        "2U": lambda: Union((p1(), p1())),
        "UP": lambda: Projection(0, Union((p1(), p1()))),
        "2IN": lambda: Intersection((p1(), Negation(p1()))),
        "3IN": lambda: Intersection((p1(), p1(), Negation(p1()))),
        "INP": lambda: Projection(0, Intersection((p1(), Negation(p1())))),
        "PIN": lambda: Intersection((p2(), Negation(p1()))),
        "PNI": lambda: Intersection((Negation(p2()), p1())),
    }
    return builders[tag]()


_CANONICAL_SHAPES = {str(_shape(_template_tree(t))): t for t in QUERY_TYPE_TAGS}


def query_type(tree: OperatorTree) -> str:
    """Canonical tag of one of the 14 standard structures, else 'other'."""
    return _CANONICAL_SHAPES.get(str(_shape(tree)), "other")
