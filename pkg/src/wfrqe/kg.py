"""Knowledge-graph storage, splits, synthetic graphs, and query sampling.

File formats:
  * triples: tab-separated `head<TAB>relation<TAB>tail` lines, `#` comments,
    optional header line `# entities=N relations=M`
  * queries: JSON lines {"query": "<s-expression>", "easy": [...], "hard": [...]}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .queries import (
    Anchor,
    Intersection,
    Negation,
    OperatorTree,
    Projection,
    Union,
    parse_query,
    serialize_query,
    symbolic_answers,
)


class TripleParseError(ValueError):
    pass


class SamplingExhaustedError(RuntimeError):
    pass


@dataclass
class KnowledgeGraph:
    entity_count: int
    relation_count: int
    triples: frozenset  # of (head, relation, tail)
    _fwd: dict = field(default_factory=dict, repr=False)  # (h, r) -> sorted tails
    _rev: list = field(default_factory=list, repr=False)  # t -> [(h, r), ...]

    def __post_init__(self) -> None:
        for h, r, t in self.triples:
            if not (0 <= h < self.entity_count and 0 <= t < self.entity_count):
                raise ValueError(f"entity id out of range in triple {(h, r, t)}")
            if not 0 <= r < self.relation_count:
                raise ValueError(f"relation id out of range in triple {(h, r, t)}")
        fwd: dict = {}
        rev: list = [[] for _ in range(self.entity_count)]
        for h, r, t in sorted(self.triples):
            fwd.setdefault((h, r), []).append(t)
            rev[t].append((h, r))
        self._fwd = {k: tuple(v) for k, v in fwd.items()}
        self._rev = [tuple(v) for v in rev]

    def __len__(self) -> int:
        return len(self.triples)

    def tails(self, head: int, relation: int) -> tuple:
        return self._fwd.get((head, relation), ())

    def incoming(self, tail: int) -> tuple:
        """All (head, relation) pairs with an edge into `tail`."""
        return self._rev[tail]

    def sorted_triples(self) -> list:
        return sorted(self.triples)


def make_graph(entity_count: int, relation_count: int, triples) -> KnowledgeGraph:
    return KnowledgeGraph(entity_count, relation_count, frozenset(triples))


_HEADER_RE = re.compile(r"#\s*entities\s*=\s*(\d+)\s+relations\s*=\s*(\d+)")


def load_triples(path) -> KnowledgeGraph:
    """Read a TSV triple file; counts come from the header or the max ids."""
    path = Path(path)
    triples = set()
    n_ent = n_rel = 0
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _HEADER_RE.search(line)
                if m:
                    n_ent = max(n_ent, int(m.group(1)))
                    n_rel = max(n_rel, int(m.group(2)))
                continue
            parts = line.split("\t")
            if len(parts) == 1:
                parts = line.split()
            if len(parts) != 3:
                raise TripleParseError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                h, r, t = (int(p) for p in parts)
            except ValueError:
                raise TripleParseError(f"{path}:{lineno}: non-integer field in {line!r}")
            if min(h, r, t) < 0:
                raise TripleParseError(f"{path}:{lineno}: negative id in {line!r}")
            triples.add((h, r, t))
            n_ent = max(n_ent, h + 1, t + 1)
            n_rel = max(n_rel, r + 1)
    return make_graph(n_ent, n_rel, triples)


def save_triples(path, kg: KnowledgeGraph) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# entities={kg.entity_count} relations={kg.relation_count}\n")
        for h, r, t in kg.sorted_triples():
            fh.write(f"{h}\t{r}\t{t}\n")


def split_nested(
    kg: KnowledgeGraph, valid_fraction: float, test_fraction: float, seed=0
):
    """Nested split: train edges subset of valid edges subset of test = all.

    Each fraction is relative to the full triple count; the held-out sets
    are drawn uniformly at random, reproducibly under the seed.
    """
    if not (0 < valid_fraction < 1 and 0 < test_fraction < 1):
        raise ValueError("fractions must lie in (0, 1)")
    if valid_fraction + test_fraction >= 1:
        raise ValueError("fractions must sum to less than 1")
    rng = np.random.default_rng(seed)
    trips = kg.sorted_triples()
    n = len(trips)
    n_test_only = int(round(test_fraction * n))
    n_valid_only = int(round(valid_fraction * n))
    if n - n_test_only - n_valid_only <= 0:
        raise ValueError("split fractions leave the train graph empty")
    order = rng.permutation(n)
    test_only = {trips[i] for i in order[:n_test_only]}
    valid_only = {trips[i] for i in order[n_test_only : n_test_only + n_valid_only]}
    valid_triples = kg.triples - test_only
    train_triples = valid_triples - valid_only
    mk = lambda t: make_graph(kg.entity_count, kg.relation_count, t)
    return mk(train_triples), mk(valid_triples), kg


def generate_synthetic_kg(
    n_entities: int,
    n_relations: int,
    avg_degree: float,
    seed=0,
    n_clusters: int | None = None,
    structure: float = 0.9,
) -> KnowledgeGraph:
    """Random multi-relational graph with the given expected out-degree.

    Edges follow two statistical regularities that make held-out triples
    predictable from observed ones (a uniform random graph would have
    none): entities carry a latent cluster label, each relation carries a
    random cluster-to-cluster map attracting the `structure` fraction of
    expected edges, and tail choice within a head's distribution is
    popularity-weighted with a heavy (zipf-like) tail profile per
    relation, as in real knowledge graphs.  No self-loops; deterministic
    under the seed; expected triple count is about n_entities *
    n_relations * avg_degree.
    """
    if n_entities < 2:
        raise ValueError("need at least 2 entities")
    if n_relations < 1:
        raise ValueError("need at least 1 relation")
    if not 0.0 <= structure < 1.0:
        raise ValueError("structure fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    if n_clusters is None:
        n_clusters = max(2, int(round(n_entities / max(2.0 * avg_degree, 2.0))))
    n_clusters = max(1, min(n_clusters, n_entities))
    clusters = rng.permutation(n_entities) % n_clusters  # near-equal sizes
    triples = set()
    for r in range(n_relations):
        cluster_map = rng.permutation(n_clusters)
        target = cluster_map[clusters]  # preferred target cluster per head
        in_cluster = clusters[None, :] == target[:, None]  # (head, tail)
        popularity = 1.0 / rng.permutation(np.arange(1, n_entities + 1))
        weights = np.where(in_cluster, 0.0, popularity[None, :])
        for h in range(n_entities):
            inside = in_cluster[h]
            pop_in = popularity[inside].sum()
            pop_out = weights[h].sum()
            if pop_in > 0 and pop_out > 0:
                boost = (structure / (1.0 - structure)) * (pop_out / pop_in)
                weights[h, inside] = popularity[inside] * boost
            else:
                weights[h, inside] = popularity[inside]
        np.fill_diagonal(weights, 0.0)
        probs = avg_degree * weights / weights.sum(axis=1, keepdims=True)
        hits = rng.random((n_entities, n_entities)) < np.minimum(probs, 1.0)
        for h, t in zip(*np.nonzero(hits)):
            triples.add((int(h), r, int(t)))
    return make_graph(n_entities, n_relations, triples)


# ---------------------------------------------------------------------------
# Query samples
# ---------------------------------------------------------------------------


@dataclass
class QuerySample:
    tree: OperatorTree
    easy_answers: frozenset
    hard_answers: frozenset

    def __post_init__(self) -> None:
        object.__setattr__(self, "easy_answers", frozenset(self.easy_answers))
        object.__setattr__(self, "hard_answers", frozenset(self.hard_answers))
        if self.easy_answers & self.hard_answers:
            raise ValueError("easy and hard answer sets must be disjoint")


def save_queries(path, samples) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for s in samples:
            record = {
                "query": serialize_query(s.tree),
                "easy": sorted(s.easy_answers),
                "hard": sorted(s.hard_answers),
            }
            fh.write(json.dumps(record) + "\n")


def load_queries(path) -> list:
    path = Path(path)
    out = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad JSON: {exc}") from None
            if "query" not in record:
                raise ValueError(f"{path}:{lineno}: missing 'query' key")
            tree = parse_query(record["query"])
            out.append(
                QuerySample(
                    tree,
                    frozenset(record.get("easy", [])),
                    frozenset(record.get("hard", [])),
                )
            )
    return out


def _sample_edge_into(kg: KnowledgeGraph, tail: int, rng) -> tuple | None:
    options = kg.incoming(tail)
    if not options:
        return None
    return options[rng.integers(len(options))]


def _instantiate(template: str, kg: KnowledgeGraph, rng) -> OperatorTree | None:
    """Backward-sample one tree of the given structure from a target answer.

    Starts from a random answer entity and walks edges backward so the
    answer set on `kg` is guaranteed non-empty.  Returns None when the
    random walk dead-ends; the caller retries.
    """

    def chain(length: int, end: int):
        node_entity = end
        rels = []
        for _ in range(length):
            edge = _sample_edge_into(kg, node_entity, rng)
            if edge is None:
                return None
            h, r = edge
            rels.append(r)
            node_entity = h
        tree: OperatorTree = Anchor(node_entity)
        for r in reversed(rels):
            tree = Projection(r, tree)
        return tree

    def negated_branch(avoid: int):
        """A 1P branch whose answers are non-empty and miss `avoid`."""
        for _ in range(20):
            h = int(rng.integers(kg.entity_count))
            r = int(rng.integers(kg.relation_count))
            tails = kg.tails(h, r)
            if tails and avoid not in tails:
                return Negation(Projection(r, Anchor(h)))
        return None

    def negated_chain2(avoid: int):
        for _ in range(20):
            mid = int(rng.integers(kg.entity_count))
            sub = chain(2, mid)
            if sub is None:
                continue
            if avoid not in symbolic_answers(sub, kg):
                return Negation(sub)
        return None

    answer = int(rng.integers(kg.entity_count))
    if template == "1P":
        return chain(1, answer)
    if template == "2P":
        return chain(2, answer)
    if template == "3P":
        return chain(3, answer)
    if template in ("2I", "3I"):
        k = 2 if template == "2I" else 3
        branches = [chain(1, answer) for _ in range(k)]
        if any(b is None for b in branches):
            return None
        return Intersection(tuple(branches))
    if template == "PI":
        b2, b1 = chain(2, answer), chain(1, answer)
        if b2 is None or b1 is None:
            return None
        return Intersection((b2, b1))
    if template == "IP":
        edge = _sample_edge_into(kg, answer, rng)
        if edge is None:
            return None
        mid, r_last = edge
        b1, b2 = chain(1, mid), chain(1, mid)
        if b1 is None or b2 is None:
            return None
        return Projection(r_last, Intersection((b1, b2)))
    if template == "2U":
        b1, b2 = chain(1, answer), chain(1, int(rng.integers(kg.entity_count)))
        if b1 is None or b2 is None:
            return None
        return Union((b1, b2))
    if template == "UP":
        edge = _sample_edge_into(kg, answer, rng)
        if edge is None:
            return None
        mid, r_last = edge
        b1 = chain(1, mid)
        b2 = chain(1, int(rng.integers(kg.entity_count)))
        if b1 is None or b2 is None:
            return None
        return Projection(r_last, Union((b1, b2)))
    if template in ("2IN", "3IN"):
        k = 1 if template == "2IN" else 2
        branches = [chain(1, answer) for _ in range(k)]
        neg = negated_branch(answer)
        if any(b is None for b in branches) or neg is None:
            return None
        return Intersection(tuple(branches) + (neg,))
    if template == "INP":
        edge = _sample_edge_into(kg, answer, rng)
        if edge is None:
            return None
        mid, r_last = edge
        pos = chain(1, mid)
        neg = negated_branch(mid)
        if pos is None or neg is None:
            return None
        return Projection(r_last, Intersection((pos, neg)))
    if template == "PIN":
        pos = chain(2, answer)
        neg = negated_branch(answer)
        if pos is None or neg is None:
            return None
        return Intersection((pos, neg))
    if template == "PNI":
        pos = chain(1, answer)
        neg = negated_chain2(answer)
        if pos is None or neg is None:
            return None
        return Intersection((neg, pos))
    raise ValueError(f"unknown template {template!r}")


def sample_queries(
    train_kg: KnowledgeGraph,
    eval_kg: KnowledgeGraph,
    template: str,
    count: int,
    seed=0,
    require_hard: bool = True,
    max_attempts_per_query: int = 200,
) -> list:
    """Instantiate query samples of one structure by backward sampling.

    Answers found on the train graph are easy; answers that appear only on
    the eval graph are hard.  With `require_hard`, samples whose hard set
    is empty are discarded (the evaluation protocol needs them); training
    splits pass require_hard=False and use the easy answers.
    """
    rng = np.random.default_rng(seed)
    out = []
    attempts = 0
    budget = max_attempts_per_query * count
    while len(out) < count:
        attempts += 1
        if attempts > budget:
            raise SamplingExhaustedError(
                f"could not sample {count} {template} queries in {budget} attempts"
            )
        tree = _instantiate(template, eval_kg, rng)
        if tree is None:
            continue
        easy = symbolic_answers(tree, train_kg)
        full = symbolic_answers(tree, eval_kg)
        hard = full - easy
        if require_hard and not hard:
            continue
        if not full:
            continue
        out.append(QuerySample(tree, frozenset(easy), frozenset(hard)))
    return out
