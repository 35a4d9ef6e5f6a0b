"""Negative-sampling objective, manual gradients, AdamW, and the train loop."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .engine import backward_through_tape, embed_query_with_tape
from .fuzzy import TNormKind
from .measures import as_mass_array
from .model import ModelGrads, ModelParams, grads_as_dict, init_model, params_as_dict
from .projection import ProjectionParams, logistic
from .transport import TransportConfig, _batched_scores_with_grads


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    steps: int = 1000
    k_neg: int = 32
    margin: float = 37.5
    scale: float = 120.0
    drop_p: float = 0.05
    drop_n: float = 0.1
    tnorm: TNormKind = TNormKind.PRODUCT
    transport: TransportConfig = field(
        default_factory=lambda: TransportConfig(epsilon=0.1, omega=3, iterations=10)
    )
    grad_mode: str = "unrolled"
    batch_size: int = 8
    seed: int = 0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.k_neg < 1:
            raise ValueError("k_neg must be >= 1")
        if self.grad_mode not in ("unrolled", "danskin"):
            raise ValueError(f"grad_mode must be 'unrolled' or 'danskin', got {self.grad_mode!r}")
        if isinstance(self.tnorm, str):
            self.tnorm = TNormKind(self.tnorm)


def _log_sigmoid(x: float) -> float:
    return -np.logaddexp(0.0, -x)


def loss(
    query_emb,
    answer_emb,
    negative_embs,
    margin: float,
    scale: float,
    transport: TransportConfig,
) -> float:
    """Negative-sampling objective over transport distances.

    -log sig(margin - scale*D(ans, q)) minus the mean over negatives of
    log sig(scale*D(neg, q) - margin).
    """
    from .transport import wfr_distance

    negative_embs = list(negative_embs)
    if not negative_embs:
        raise ValueError("need at least one negative sample")
    q = as_mass_array(query_emb)
    pos = wfr_distance(as_mass_array(answer_emb), q, transport)
    value = -_log_sigmoid(margin - scale * pos)
    for neg in negative_embs:
        dist = wfr_distance(as_mass_array(neg), q, transport)
        value -= _log_sigmoid(scale * dist - margin) / len(negative_embs)
    return float(value)


def distance_backward(u, v, config: TransportConfig, mode: str = "unrolled"):
    """Gradients of the transport score with respect to both histograms.

    `unrolled` differentiates through all L iterations; `danskin` reads
    (1 - phi^-eps, 1 - psi^-eps) off the converged duals.
    """
    uu, vv = as_mass_array(u), as_mass_array(v)
    _, gu, gv = _batched_scores_with_grads(uu[None, :], vv[None, :], config, mode)
    return gu[0], gv[0]


def negative_sample(kg, query, k_neg: int, rng) -> list:
    """Uniform non-answers of the query, sampled with replacement.

    Excludes the query's training answers.  Raises when every entity is an
    answer (nothing can serve as a negative).
    """
    n = kg.entity_count if hasattr(kg, "entity_count") else int(kg)
    if n <= k_neg:
        raise ValueError(f"need more than k_neg={k_neg} entities, have {n}")
    answers = query.easy_answers if hasattr(query, "easy_answers") else set(query)
    pool = np.setdiff1d(np.arange(n), np.fromiter(answers, dtype=int, count=len(answers)))
    if pool.size == 0:
        raise ValueError("query has no non-answer entities to sample from")
    return [int(e) for e in rng.choice(pool, size=k_neg, replace=True)]


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict
    v: dict
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamWState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )


def adamw_step(
    params: dict,
    grads: dict,
    state: AdamWState,
    lr: float,
    weight_decay: float,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
) -> dict:
    """One decoupled-weight-decay Adam update, applied in place.

    Parameters are first scaled by (1 - lr*wd), then moved against the
    bias-corrected moment estimate.
    """
    b1, b2 = betas
    state.step_count += 1
    t = state.step_count
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {key}")
        state.m[key] = b1 * state.m[key] + (1 - b1) * g
        state.v[key] = b2 * state.v[key] + (1 - b2) * g * g
        m_hat = state.m[key] / (1 - b1**t)
        v_hat = state.v[key] / (1 - b2**t)
        p *= 1.0 - lr * weight_decay
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# ---------------------------------------------------------------------------
# Loss with gradients through the whole model
# ---------------------------------------------------------------------------


def _sample_loss_and_grads(
    model: ModelParams,
    sample,
    config: TrainConfig,
    rng,
    grads: ModelGrads,
) -> float:
    """Loss of one training sample; accumulates parameter gradients."""
    answers = sorted(sample.easy_answers)
    if not answers:
        raise ValueError("training sample has no answers")
    answer = answers[rng.integers(len(answers))]
    negatives = negative_sample(model.n_entities, sample, config.k_neg, rng)

    tapes = embed_query_with_tape(
        sample.tree,
        model,
        union_mode="dnf",
        training=True,
        seed=rng,
        tnorm=config.tnorm,
        drop_n=config.drop_n,
        drop_p=config.drop_p,
    )
    if len(tapes) != 1:
        raise ValueError("training queries must be union-free (single DNF branch)")
    tape = tapes[0]
    q = tape.value

    cand_ids = [answer] + negatives
    raw = logistic(model.entity_logits[cand_ids])
    cands = np.clip(raw, model.mass_floor, 1.0)
    clip_mask = (raw > model.mass_floor) & (raw < 1.0)

    dists, g_cand, g_query = _batched_scores_with_grads(
        cands, q[None, :], config.transport, config.grad_mode
    )

    gamma, rho, k = config.margin, config.scale, config.k_neg
    value = -_log_sigmoid(gamma - rho * dists[0])
    weights = np.empty(len(cand_ids))
    weights[0] = rho * logistic(np.array([rho * dists[0] - gamma]))[0]
    for j in range(1, len(cand_ids)):
        value -= _log_sigmoid(rho * dists[j] - gamma) / k
        weights[j] = -(rho / k) * logistic(np.array([gamma - rho * dists[j]]))[0]

    # candidates: chain through the logistic entity parameterization
    g_rows = weights[:, None] * g_cand * clip_mask * raw * (1.0 - raw)
    np.add.at(grads.entity_logits, cand_ids, g_rows)
    # query embedding: back through the operator tree
    backward_through_tape(tape, weights @ g_query, model, grads)
    return float(value)


def train(
    model: ModelParams,
    dataset,
    config: TrainConfig,
    callbacks=None,
    valid_samples=None,
    valid_every: int = 0,
):
    """Run `config.steps` AdamW steps over mini-batches of query samples.

    Every batch draws samples with replacement, embeds each query in
    training mode, and averages the per-sample gradients.  Returns the
    updated model and a list of metric rows (step, loss, optional
    valid_mrr).  Deterministic under config.seed.
    """
    dataset = list(dataset)
    if config.steps > 0 and not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    params = params_as_dict(model)
    opt = AdamWState.zeros_like(params)
    log_rows = []
    window = []
    for step in range(1, config.steps + 1):
        grads = ModelGrads.zeros_like(model)
        batch_loss = 0.0
        for _ in range(config.batch_size):
            sample = dataset[rng.integers(len(dataset))]
            batch_loss += _sample_loss_and_grads(model, sample, config, rng, grads)
        batch_loss /= config.batch_size
        grads.scale(1.0 / config.batch_size)
        adamw_step(
            params,
            grads_as_dict(grads),
            opt,
            config.learning_rate,
            config.weight_decay,
        )
        window.append(batch_loss)
        if step % config.log_every == 0 or step == config.steps:
            row = {"step": step, "loss": float(np.mean(window))}
            window = []
            if valid_samples and valid_every and step % valid_every == 0:
                from .evaluation import evaluate

                report = evaluate(model, valid_samples, config.transport, tnorm=config.tnorm)
                row["valid_mrr"] = report.mean_mrr()
            log_rows.append(row)
            if callbacks:
                callbacks(step, row)
    return model, log_rows


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def config_fingerprint(config: TrainConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, model: ModelParams, fingerprint: str = "") -> None:
    proj = model.projection
    header = {
        "version": CHECKPOINT_VERSION,
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "d": model.d,
        "num_bases": proj.num_bases,
        "layer_dims": proj.layer_dims,
        "mass_floor": model.mass_floor,
        "fingerprint": fingerprint,
    }
    arrays = {"entity_logits": model.entity_logits,
              "relation_embeddings": proj.relation_embeddings}
    for l, (W, b) in enumerate(zip(proj.basis_weights, proj.basis_biases)):
        arrays[f"basis_weights_{l}"] = W
        arrays[f"basis_biases_{l}"] = b
    np.savez(path, header=json.dumps(header), **arrays)


def load_checkpoint(path) -> tuple:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        layer_count = len(header["layer_dims"]) - 1
        weights = [data[f"basis_weights_{l}"] for l in range(layer_count)]
        biases = [data[f"basis_biases_{l}"] for l in range(layer_count)]
        proj = ProjectionParams(
            weights, biases, data["relation_embeddings"], header["layer_dims"]
        )
        model = ModelParams(data["entity_logits"], proj, header["mass_floor"])
    return model, header
