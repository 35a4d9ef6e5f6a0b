"""Neural bottom-up execution of operator trees against a model.

The forward pass optionally records a tape so training can push loss
gradients back through fuzzy operators, projections, and anchors into the
model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fuzzy import TNormKind, _tconorm_values, _tnorm_values
from .measures import BoundedHistogram
from .model import ModelGrads, ModelParams
from .projection import logistic, project, project_backward
from .queries import (
    Anchor,
    Intersection,
    Negation,
    OperatorTree,
    Projection,
    Union,
    apply_de_morgan,
    to_dnf,
)
from .transport import TransportConfig, _batched_scores


@dataclass
class _NodeTape:
    kind: str
    value: np.ndarray
    children: list
    extra: dict


def _clip_with_mask(raw: np.ndarray, floor: float):
    clipped = np.clip(raw, floor, 1.0)
    mask = (raw > floor) & (raw < 1.0)
    return clipped, mask


def _embed_node(
    tree: OperatorTree,
    model: ModelParams,
    tnorm: TNormKind,
    training: bool,
    drop_n: float,
    drop_p: float,
    rng,
    want_tape: bool,
):
    floor = model.mass_floor
    if isinstance(tree, Anchor):
        if not 0 <= tree.entity < model.n_entities:
            raise KeyError(f"entity id {tree.entity} out of range")
        raw = logistic(model.entity_logits[tree.entity])
        value, mask = _clip_with_mask(raw, floor)
        tape = _NodeTape("anchor", value, [], {"entity": tree.entity, "m": raw, "mask": mask})
    elif isinstance(tree, Projection):
        if not 0 <= tree.relation < model.n_relations:
            raise KeyError(f"relation id {tree.relation} out of range")
        child = _embed_node(tree.child, model, tnorm, training, drop_n, drop_p, rng, want_tape)
        hist, cache = project(
            BoundedHistogram(child.value, floor),
            tree.relation,
            model.projection,
            want_cache=True,
            training=training,
            drop_p=drop_p,
            rng=rng,
        )
        value, mask = _clip_with_mask(hist.values, floor)
        tape = _NodeTape("projection", value, [child], {"cache": cache, "mask": mask})
    elif isinstance(tree, (Intersection, Union)):
        combine = _tnorm_values if isinstance(tree, Intersection) else _tconorm_values
        kids = [
            _embed_node(c, model, tnorm, training, drop_n, drop_p, rng, want_tape)
            for c in tree.children
        ]
        acc = kids[0].value
        steps = []
        for kid in kids[1:]:
            raw = combine(acc, kid.value, tnorm)
            clipped, mask = _clip_with_mask(raw, floor)
            steps.append({"left": acc, "right": kid.value, "mask": mask})
            acc = clipped
        kind = "intersection" if isinstance(tree, Intersection) else "union"
        tape = _NodeTape(kind, acc, kids, {"steps": steps, "tnorm": tnorm})
    elif isinstance(tree, Negation):
        child = _embed_node(tree.child, model, tnorm, training, drop_n, drop_p, rng, want_tape)
        if training and drop_n > 0.0:
            drop = rng.random(child.value.shape[0]) < drop_n
            pre = np.where(drop, 0.5, child.value)
        else:
            drop = np.zeros(child.value.shape[0], dtype=bool)
            pre = child.value
        value, mask = _clip_with_mask(1.0 - pre, floor)
        tape = _NodeTape("negation", value, [child], {"drop": drop, "mask": mask})
    else:
        raise TypeError(f"not an operator tree: {tree!r}")
    return tape


def _backward_node(tape: _NodeTape, grad: np.ndarray, model: ModelParams, grads: ModelGrads):
    if tape.kind == "anchor":
        g = grad * tape.extra["mask"]
        m = tape.extra["m"]
        grads.entity_logits[tape.extra["entity"]] += g * m * (1.0 - m)
        return
    if tape.kind == "projection":
        g = grad * tape.extra["mask"]
        pg = project_backward(g, tape.extra["cache"], model.projection)
        for l in range(len(grads.basis_weights)):
            grads.basis_weights[l] += pg.grad_basis_weights[l]
            grads.basis_biases[l] += pg.grad_basis_biases[l]
        grads.relation_embeddings[tape.extra["cache"].relation_id] += pg.grad_relation
        _backward_node(tape.children[0], pg.grad_input, model, grads)
        return
    if tape.kind in ("intersection", "union"):
        kids = tape.children
        steps = tape.extra["steps"]
        tnorm = tape.extra["tnorm"]
        conorm = tape.kind == "union"
        g = grad
        child_grads = [None] * len(kids)
        for idx in reversed(range(1, len(kids))):
            step = steps[idx - 1]
            g = g * step["mask"]
            gl, gr = _pairwise_grads(step["left"], step["right"], g, tnorm, conorm)
            child_grads[idx] = gr
            g = gl
        child_grads[0] = g
        for kid, cg in zip(kids, child_grads):
            _backward_node(kid, cg, model, grads)
        return
    if tape.kind == "negation":
        g = grad * tape.extra["mask"]
        g = -g
        g = np.where(tape.extra["drop"], 0.0, g)
        _backward_node(tape.children[0], g, model, grads)
        return
    raise ValueError(f"unknown tape node {tape.kind!r}")


def _pairwise_grads(x, y, g, tnorm: TNormKind, conorm: bool):
    """d(op)/dx and d(op)/dy for one binary fuzzy step."""
    if tnorm == TNormKind.PRODUCT:
        if conorm:  # x + y - x*y
            return g * (1.0 - y), g * (1.0 - x)
        return g * y, g * x
    if tnorm == TNormKind.GODEL:
        pick_x = (x < y) if not conorm else (x > y)
        tie = x == y
        wx = pick_x + 0.5 * tie
        return g * wx, g * (1.0 - wx)
    if tnorm == TNormKind.LUKASIEWICZ:
        # saturates at 0 (t-norm) resp. 1 (t-conorm) outside the active region
        active = (x + y > 1.0) if not conorm else (x + y < 1.0)
        w = active.astype(np.float64)
        return g * w, g * w
    raise ValueError(f"unknown t-norm {tnorm!r}")


def embed_query_with_tape(
    tree: OperatorTree,
    model: ModelParams,
    union_mode: str = "dnf",
    training: bool = False,
    seed=0,
    tnorm: TNormKind = TNormKind.PRODUCT,
    drop_n: float = 0.1,
    drop_p: float = 0.0,
):
    """Embed a query, returning one tape per conjunctive branch."""
    if union_mode not in ("dnf", "dm"):
        raise ValueError(f"union mode must be 'dnf' or 'dm', got {union_mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if union_mode == "dnf":
        branches = to_dnf(tree)
    else:
        branches = [apply_de_morgan(tree)]
    return [
        _embed_node(b, model, tnorm, training, drop_n, drop_p, rng, want_tape=True)
        for b in branches
    ]


def embed_query(
    tree: OperatorTree,
    model: ModelParams,
    union_mode: str = "dnf",
    training: bool = False,
    seed=0,
    tnorm: TNormKind = TNormKind.PRODUCT,
    drop_n: float = 0.1,
    drop_p: float = 0.0,
) -> list[BoundedHistogram]:
    """Bottom-up neural execution; one histogram per conjunctive branch.

    In `dnf` mode unions are stripped beforehand and every branch is
    embedded separately; in `dm` mode the union-free De Morgan rewrite is
    embedded as a single tree.  Eval mode (training=False) is a pure
    function of (tree, model).
    """
    tapes = embed_query_with_tape(
        tree, model, union_mode, training, seed, tnorm, drop_n, drop_p
    )
    return [BoundedHistogram(t.value, model.mass_floor) for t in tapes]


def backward_through_tape(tape: _NodeTape, grad: np.ndarray, model: ModelParams,
                          grads: ModelGrads) -> None:
    """Accumulate d(loss)/d(params) given d(loss)/d(branch embedding)."""
    _backward_node(tape, np.asarray(grad, dtype=np.float64), model, grads)


def score_entities(branch_embs, model: ModelParams, transport: TransportConfig) -> np.ndarray:
    """Distance from every entity to the query: min across branches.

    Lower scores mean more likely answers.
    """
    if not branch_embs:
        raise ValueError("need at least one branch embedding")
    ents = model.entity_histograms()
    scores = None
    for emb in branch_embs:
        vals = emb.values if isinstance(emb, BoundedHistogram) else np.asarray(emb)
        branch_scores = _batched_scores(ents, vals[None, :], transport)
        scores = branch_scores if scores is None else np.minimum(scores, branch_scores)
    return scores
