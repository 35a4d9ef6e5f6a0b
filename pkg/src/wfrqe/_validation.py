"""Small input-validation helpers shared by the public API."""

from __future__ import annotations

import numpy as np

from .kg import KnowledgeGraph, QuerySample
from .queries import OperatorTree, parse_query


def ensure_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_scalar(value, name: str, *, minimum=None, maximum=None, strict_min=False):
    if minimum is not None:
        if strict_min and not value > minimum:
            raise ValueError(f"{name} must be > {minimum}, got {value}")
        if not strict_min and not value >= minimum:
            raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and not value <= maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return value


def as_query_tree(query) -> OperatorTree:
    """Accept query text, a parsed tree, or a QuerySample."""
    if isinstance(query, str):
        return parse_query(query)
    if isinstance(query, QuerySample):
        return query.tree
    return query


def check_kg(kg) -> KnowledgeGraph:
    if not isinstance(kg, KnowledgeGraph):
        raise TypeError(f"expected a KnowledgeGraph, got {type(kg).__name__}")
    if kg.entity_count < 2:
        raise ValueError("knowledge graph needs at least 2 entities")
    return kg


def check_samples(samples, *, require_answers=False) -> list:
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample list")
    for s in samples:
        if not isinstance(s, QuerySample):
            raise TypeError(f"expected QuerySample items, got {type(s).__name__}")
        if require_answers and not s.easy_answers:
            raise ValueError("training samples need non-empty answer sets")
    return samples
