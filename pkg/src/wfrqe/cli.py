"""Command-line pipeline: synthetic data, training, evaluation, benchmarks.

All outputs are written to temporary files and renamed into place, so a
failed run never leaves a truncated artifact behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .evaluation import evaluate, evaluate_with_scorer
from .fuzzy import TNormKind
from .kg import (
    KnowledgeGraph,
    SamplingExhaustedError,
    generate_synthetic_kg,
    load_queries,
    load_triples,
    sample_queries,
    save_queries,
    save_triples,
    split_nested,
)
from .model import init_model
from .queries import QUERY_TYPE_TAGS, symbolic_answers
from .training import (
    TrainConfig,
    config_fingerprint,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .transport import TransportConfig, conv_sinkhorn, dense_sinkhorn, kernel_matrix

# Flag names follow the hyperparameter table; each may also appear as a
# `key = value` line in the --config file.
HYPERPARAMETERS = {
    "learning_rate": (float, 5e-4),
    "steps": (int, 1000),
    "k_neg": (int, 32),
    "weight_decay": (float, 0.01),
    "drop_p": (float, 0.05),
    "drop_n": (float, 0.1),
    "dim": (int, 400),
    "bases": (int, 70),
    "margin": (float, 37.5),
    "scale": (float, 120.0),
    "block_size": (int, None),
    "window": (int, 3),
    "epsilon": (float, 0.1),
    "sinkhorn_iters": (int, 10),
    "batch_size": (int, 8),
}


def _parse_config_file(path: Path) -> dict:
    """Read `key = value` lines; # starts a comment; quotes are optional."""
    out: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value.strip("'\"")
    return out


def _resolve_config(args) -> dict:
    """Merge defaults, config file, then explicit flags."""
    merged = {k: default for k, (_, default) in HYPERPARAMETERS.items()}
    merged.update({"tnorm": "product", "union_mode": "dnf", "seed": 0, "threads": 1})
    if getattr(args, "config", None):
        file_vals = _parse_config_file(Path(args.config))
        for key, raw in file_vals.items():
            if key in HYPERPARAMETERS:
                caster = HYPERPARAMETERS[key][0]
                merged[key] = caster(raw)
            elif key in ("tnorm", "union_mode"):
                merged[key] = raw
            elif key in ("seed", "threads"):
                merged[key] = int(raw)
            else:
                raise ValueError(f"unknown config key {key!r}")
    for key in list(merged):
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _echo_config(cfg: dict) -> None:
    for key in sorted(cfg):
        print(f"# config {key} = {cfg[key]}")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save(path: Path, writer) -> None:
    """Run writer(tmp_path) then rename tmp_path onto path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.{os.getpid()}.tmp"
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def _transport_from(cfg: dict) -> TransportConfig:
    return TransportConfig(
        epsilon=cfg["epsilon"],
        omega=cfg["window"],
        block_size=cfg["block_size"],
        iterations=cfg["sinkhorn_iters"],
    )


def _train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
        steps=cfg["steps"],
        k_neg=cfg["k_neg"],
        margin=cfg["margin"],
        scale=cfg["scale"],
        drop_p=cfg["drop_p"],
        drop_n=cfg["drop_n"],
        tnorm=TNormKind(cfg["tnorm"]),
        transport=_transport_from(cfg),
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
    )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    _echo_config(cfg)
    if args.entities < 2:
        raise ValueError("--entities must be at least 2")
    out = Path(args.out)
    kg = generate_synthetic_kg(args.entities, args.relations, args.degree, cfg["seed"])
    train_kg, valid_kg, test_kg = split_nested(
        kg, args.valid_fraction, args.test_fraction, cfg["seed"]
    )
    for name, graph in (("train", train_kg), ("valid", valid_kg), ("test", test_kg)):
        _atomic_save(out / f"{name}.tsv", lambda p, g=graph: save_triples(p, g))
    print(f"triples: train={len(train_kg)} valid={len(valid_kg)} test={len(test_kg)}")

    splits = (
        ("train", train_kg, train_kg, args.train_queries, False),
        ("valid", train_kg, valid_kg, args.eval_queries, True),
        ("test", valid_kg, test_kg, args.eval_queries, True),
    )
    for tag_idx, tag in enumerate(QUERY_TYPE_TAGS):
        for split, base_kg, target_kg, count, need_hard in splits:
            seed = (cfg["seed"], tag_idx, split)
            samples = sample_queries(
                base_kg, target_kg, tag, count,
                seed=abs(hash(seed)) % (2**32), require_hard=need_hard,
            )
            _atomic_save(
                out / f"{split}_{tag}.jsonl",
                lambda p, s=samples: save_queries(p, s),
            )
    print(f"wrote {3 + 3 * len(QUERY_TYPE_TAGS)} files to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_query_files(paths) -> list:
    samples = []
    for p in paths:
        samples.extend(load_queries(p))
    return samples


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _echo_config(cfg)
    kg = load_triples(args.kg)
    queries = _load_query_files(args.queries)
    if not queries:
        raise ValueError("no training queries loaded")
    valid = _load_query_files(args.valid_queries) if args.valid_queries else None

    config = _train_config_from(cfg)
    model = init_model(
        kg.entity_count, kg.relation_count, cfg["dim"], cfg["bases"], seed=cfg["seed"]
    )
    started = time.perf_counter()
    model, log_rows = train(
        model,
        queries,
        config,
        valid_samples=valid,
        valid_every=args.valid_every,
    )
    elapsed = time.perf_counter() - started
    print(f"trained {config.steps} steps in {elapsed:.1f}s")

    out = Path(args.out)
    _atomic_save(out, lambda p: save_checkpoint(p, model, config_fingerprint(config)))
    lines = ["step\tloss\tvalid_mrr"]
    for row in log_rows:
        lines.append(
            f"{row['step']}\t{row['loss']:.6f}\t{row.get('valid_mrr', float('nan')):.6f}"
        )
    _atomic_write(out.with_suffix(".log.tsv"), "\n".join(lines) + "\n")
    print(f"checkpoint: {out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    _echo_config(cfg)
    samples = _load_query_files(args.queries)
    transport = _transport_from(cfg)

    if args.oracle_kg:
        kg = load_triples(args.oracle_kg)

        def scorer(sample):
            answers = symbolic_answers(sample.tree, kg)
            scores = np.ones(kg.entity_count)
            scores[sorted(answers)] = 0.0
            return scores

        report = evaluate_with_scorer(samples, scorer, threads=cfg["threads"])
    else:
        if not args.checkpoint:
            raise ValueError("--checkpoint is required unless --oracle-kg is given")
        model, header = load_checkpoint(args.checkpoint)
        if header["d"] != cfg["dim"] and args.dim is not None:
            raise ValueError(
                f"checkpoint dim {header['d']} != requested dim {cfg['dim']}"
            )
        report = evaluate(
            model,
            samples,
            transport,
            union_mode=cfg["union_mode"],
            tnorm=TNormKind(cfg["tnorm"]),
            threads=cfg["threads"],
        )

    out = Path(args.out)
    _atomic_write(out.with_suffix(".tsv"), report.to_tsv())
    _atomic_write(out.with_suffix(".json"), json.dumps(report.to_json_dict(), indent=2) + "\n")
    print(report.to_tsv(), end="")
    print(f"A_P={report.a_p:.6f} A_N={report.a_n:.6f}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _time_call(fn, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    _echo_config(cfg)
    rng = np.random.default_rng(cfg["seed"])
    dims = [int(x) for x in args.dims.split(",")]
    omegas = [int(x) for x in args.omegas.split(",")]
    iters = cfg["sinkhorn_iters"]
    rows = ["impl\td\tomega\tL\tseconds"]
    for omega in omegas:
        for d in dims:
            u = rng.uniform(0.05, 1.0, d)
            v = rng.uniform(0.05, 1.0, d)
            config = TransportConfig(epsilon=cfg["epsilon"], omega=omega, iterations=iters)
            secs = _time_call(lambda: conv_sinkhorn(u, v, config))
            rows.append(f"conv\t{d}\t{omega}\t{iters}\t{secs:.6f}")
            print(rows[-1])
            if d <= args.dense_max:
                K = kernel_matrix(d, config)
                secs = _time_call(lambda: dense_sinkhorn(u, v, K, cfg["epsilon"], iters))
                rows.append(f"dense\t{d}\t{omega}\t{iters}\t{secs:.6f}")
                print(rows[-1])
    _atomic_write(Path(args.out), "\n".join(rows) + "\n")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def run_ablation_cell(
    data_dir: Path,
    omega: int,
    block_size: int,
    cfg: dict,
    train_types,
    eval_types,
) -> tuple:
    """Train one model with the given (omega, a) and report (A_P, A_N)."""
    kg = load_triples(data_dir / "train.tsv")
    queries = []
    for tag in train_types:
        queries.extend(load_queries(data_dir / f"train_{tag}.jsonl"))
    eval_samples = []
    for tag in eval_types:
        eval_samples.extend(load_queries(data_dir / f"test_{tag}.jsonl"))

    cell_cfg = dict(cfg)
    cell_cfg["window"] = omega
    cell_cfg["block_size"] = block_size
    config = _train_config_from(cell_cfg)
    model = init_model(
        kg.entity_count, kg.relation_count, cfg["dim"], cfg["bases"], seed=cfg["seed"]
    )
    model, _ = train(model, queries, config)
    report = evaluate(
        model, eval_samples, config.transport, tnorm=TNormKind(cfg["tnorm"])
    )
    return report.a_p, report.a_n


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    _echo_config(cfg)
    data_dir = Path(args.data)
    train_types = args.train_types.split(",")
    eval_types = args.eval_types.split(",")
    omegas = [int(x) for x in args.omegas.split(",")]
    blocks = [int(x) for x in args.block_sizes.split(",")]
    fixed_a = args.fixed_block_size
    fixed_omega = args.fixed_window

    rows = ["omega\ta\tA_P\tA_N"]
    cells = [(w, fixed_a) for w in omegas] + [
        (fixed_omega, a) for a in blocks if (fixed_omega, a) != (fixed_omega, fixed_a)
    ]
    for omega, a in cells:
        a_p, a_n = run_ablation_cell(data_dir, omega, a, cfg, train_types, eval_types)
        rows.append(f"{omega}\t{a}\t{a_p:.6f}\t{a_n:.6f}")
        print(rows[-1])
    _atomic_write(Path(args.out), "\n".join(rows) + "\n")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--tnorm", choices=[k.value for k in TNormKind], default=None)
    parser.add_argument("--union-mode", dest="union_mode", choices=["dnf", "dm"], default=None)
    for name, (caster, _) in HYPERPARAMETERS.items():
        parser.add_argument(f"--{name}", type=caster, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wfrqe",
        description="Histogram query embeddings with transport-based scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic KG and query files")
    p.add_argument("--entities", type=int, default=50)
    p.add_argument("--relations", type=int, default=3)
    p.add_argument("--degree", type=float, default=4.0)
    p.add_argument("--valid-fraction", type=float, default=0.1)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--train-queries", type=int, default=200)
    p.add_argument("--eval-queries", type=int, default=50)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from query files")
    p.add_argument("--kg", required=True, help="training triple TSV")
    p.add_argument("--queries", nargs="+", required=True, help="training JSONL files")
    p.add_argument("--valid-queries", nargs="*", default=None)
    p.add_argument("--valid-every", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank hard answers and report MRR/Hits@K")
    p.add_argument("--checkpoint")
    p.add_argument("--queries", nargs="+", required=True)
    p.add_argument("--oracle-kg", dest="oracle_kg",
                   help="score by exact traversal of this graph instead of a model")
    p.add_argument("--out", required=True, help="report path prefix")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the conv and dense solvers")
    p.add_argument("--dims", default="256,512,1024,2048,4096,8192")
    p.add_argument("--omegas", default="1,3,5")
    p.add_argument("--dense-max", type=int, default=2048)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="sweep window and block sizes")
    p.add_argument("--data", required=True, help="directory produced by synth")
    p.add_argument("--omegas", default="1,2,3,5")
    p.add_argument("--block-sizes", dest="block_sizes", default="5,10,20")
    p.add_argument("--fixed-block-size", dest="fixed_block_size", type=int, default=5)
    p.add_argument("--fixed-window", dest="fixed_window", type=int, default=3)
    p.add_argument("--train-types", default="1P,2P,2I,2IN")
    p.add_argument("--eval-types", default="1P,2P,2I,2IN")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, SamplingExhaustedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
