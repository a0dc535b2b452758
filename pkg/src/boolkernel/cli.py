"""Command-line entry point.

Subcommands run one pipeline stage each and communicate through files under
``--out``::

    boolkernel teacher  --config run.cfg --out runs/a   # train and save the FP teacher
    boolkernel extract  --config run.cfg --out runs/a   # Boolean student + residual table
    boolkernel allocate --config run.cfg --out runs/a   # per-layer kernel counts under a budget
    boolkernel distill  --config run.cfg --out runs/a   # KD finetuning + metrics log
    boolkernel eval     --config run.cfg --out runs/a   # one JSON line
    boolkernel bench    --config run.cfg                # dense vs Boolean product timings
    boolkernel defaults                                 # print every key with its default

Exit status: 0 on success, 1 for invalid input or configuration, 2 when a
run fails (for example a diverging loss).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint
from .allocation import (
    BRUTEFORCE_LIMIT,
    AllocationProblem,
    allocate_bruteforce,
    allocate_greedy,
    format_manifest,
    importance,
    parse_manifest,
    probe_batch,
)
from .config import ConfigError, RunConfig, load_config, render_config
from .datasets import make_data
from .distill import DivergenceError, KdConfig, distill
from .models import MLPDescriptor, TransformerDescriptor, booleanize, build_teacher
from .svid import successive_extract
from .tensor import matmul_bool, matmul_dense, pack
from .training import evaluate, train_teacher

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class Paths:
    def __init__(self, cfg: RunConfig, out: Path):
        self.out = out
        self.teacher = Path(cfg.teacher or out / "teacher")
        self.student = Path(cfg.student or out / "student")
        self.distilled = out / "distilled"
        self.checkpoint = Path(cfg.checkpoint or self.distilled)
        self.residuals = Path(cfg.residuals or out / "residuals.txt")
        self.allocation = Path(cfg.allocation or out / "allocation.txt")
        self.metrics = Path(cfg.metrics or out / "metrics.jsonl")


def _descriptor(cfg: RunConfig):
    if cfg.model == "transformer":
        if cfg.data != "char_lm":
            raise ConfigError("the transformer model needs data = char_lm")
        return TransformerDescriptor(cfg.n_blocks, cfg.d_model, cfg.n_heads, 96, cfg.context, cfg.mlp_ratio)
    if cfg.model == "mlp":
        if cfg.data == "char_lm":
            raise ConfigError("the mlp model needs regression or classification data")
        return MLPDescriptor(tuple(cfg.int_list("mlp_sizes")), task=cfg.data)
    raise ConfigError(f"unknown model {cfg.model!r}")


def _data(cfg: RunConfig):
    if cfg.data == "char_lm":
        return make_data("char_lm", cfg.seed, cfg.data_size, context=cfg.context)
    sizes = cfg.int_list("mlp_sizes")
    return make_data(cfg.data, cfg.seed, cfg.data_size, n_in=sizes[0], n_out=sizes[-1])


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------- commands


def cmd_teacher(cfg: RunConfig, paths: Paths) -> int:
    data = _data(cfg)
    model = build_teacher(_descriptor(cfg), cfg.seed)
    hist = train_teacher(model, data, cfg.teacher_epochs, lr=cfg.teacher_lr, batch_size=cfg.batch_size,
                         seed=cfg.seed)
    checkpoint.save(model, paths.teacher, cfg.precision)
    res = evaluate(model, data)
    _emit({"command": "teacher", "initial_train_loss": hist.initial_loss, "epoch_losses": hist.epoch_losses,
           **res.as_dict(), "checkpoint": str(paths.teacher)})
    return EXIT_OK


def residual_table(model, k_max: int, normalize: bool = False) -> dict[str, list[float]]:
    """Frobenius residual after k = 1..k_max kernels for each designated weight."""
    table = {}
    for name in model.designated:
        w = model.linears[name].weight
        rep = successive_extract(w, k_max)
        row = list(rep.residual_frobenius)
        if normalize and rep.source_frobenius > 0:
            row = [e / rep.source_frobenius for e in row]
        table[name] = row
    return table


def write_residuals(path: Path, table: dict) -> None:
    lines = ["# weight  e[1] ... e[k_max] (Frobenius norm of the residual)"]
    lines += [" ".join([name] + [repr(float(e)) for e in row]) for name, row in table.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_residuals(path: Path) -> dict[str, list[float]]:
    table = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            name, *vals = line.split()
            table[name] = [float(v) for v in vals]
    return table


def cmd_extract(cfg: RunConfig, paths: Paths) -> int:
    teacher = checkpoint.load(paths.teacher)
    plan = cfg.kernels
    if cfg.allocation or (cfg.budget and paths.allocation.exists()):
        plan, _, _ = parse_manifest(paths.allocation.read_text(encoding="utf-8"))
    if isinstance(plan, int) and not 1 <= plan:
        raise ConfigError("kernels must be at least 1")
    student = booleanize(teacher, plan, trainable=cfg.trainable)
    k_max = max(cfg.k_max, max(l.num_kernels for l in student.boolean_layers().values()))
    table = residual_table(teacher, k_max, cfg.normalize_errors)
    paths.out.mkdir(parents=True, exist_ok=True)
    write_residuals(paths.residuals, table)
    checkpoint.save(student, paths.student, cfg.precision)
    report = {}
    for name, layer in student.boolean_layers().items():
        w = teacher.linears[name].weight
        report[name] = {"kernels": layer.num_kernels,
                        "residual_frobenius": float(np.linalg.norm(w - layer.weight()))}
    _emit({"command": "extract", "checkpoint": str(paths.student), "residuals": str(paths.residuals),
           "layers": report})
    return EXIT_OK


def cmd_allocate(cfg: RunConfig, paths: Paths) -> int:
    teacher = checkpoint.load(paths.teacher)
    budget = cfg.budget or float(cfg.kernels)
    if paths.residuals.exists():
        table = read_residuals(paths.residuals)
    else:
        table = residual_table(teacher, cfg.k_max, cfg.normalize_errors)
    names = list(teacher.designated)
    missing = [n for n in names if n not in table or len(table[n]) < cfg.k_max]
    if missing:
        raise ConfigError(f"residual table lacks k_max={cfg.k_max} entries for {missing}")
    data = _data(cfg)
    probe = probe_batch(teacher, data, cfg.seed, cfg.probe_samples)
    imp = importance(teacher, probe)
    sizes = [teacher.linears[n].weight.size for n in names]
    problem = AllocationProblem.from_sizes([table[n][: cfg.k_max] for n in names], imp.vector(names), sizes,
                                           budget, cfg.k_max, names)
    alloc = allocate_greedy(problem)
    paths.out.mkdir(parents=True, exist_ok=True)
    paths.allocation.write_text(format_manifest(names, alloc), encoding="utf-8")
    summary = {"command": "allocate", "manifest": str(paths.allocation), "budget": budget,
               "achieved_ratio": alloc.achieved_ratio, "energy": alloc.energy,
               "counts": alloc.counts(names), "importance": imp.scores, "degraded_rank": imp.degraded}
    if cfg.k_max ** len(names) <= BRUTEFORCE_LIMIT:
        best = allocate_bruteforce(problem)
        summary["bruteforce_energy"] = best.energy
        summary["gap"] = alloc.energy - best.energy
    _emit(summary)
    return EXIT_OK


def cmd_distill(cfg: RunConfig, paths: Paths) -> int:
    teacher = checkpoint.load(paths.teacher)
    student = checkpoint.load(paths.student)
    data = _data(cfg)
    kd = KdConfig(cfg.tau, cfg.gamma, cfg.hidden_selection(), cfg.divergence)
    before = evaluate(student, data)
    paths.metrics.parent.mkdir(parents=True, exist_ok=True)
    with open(paths.metrics, "w", encoding="utf-8") as fh:
        history = distill(teacher, student, data, cfg.epochs, kd, batch_size=cfg.batch_size, seed=cfg.seed,
                          fp_lr=cfg.fp_lr, bool_lr=cfg.bool_lr, warmup_fraction=cfg.warmup_fraction,
                          weight_decay=cfg.weight_decay, flip_threshold=cfg.flip_threshold, metrics_file=fh)
    checkpoint.save(student, paths.distilled, cfg.precision)
    after = evaluate(student, data)
    _emit({"command": "distill", "checkpoint": str(paths.distilled), "metrics": str(paths.metrics),
           "initial": before.as_dict(), "final": after.as_dict(),
           "epochs": [{k: v for k, v in h.items() if k != "flips_by_layer"} for h in history]})
    return EXIT_OK


def cmd_eval(cfg: RunConfig, paths: Paths) -> int:
    model = checkpoint.load(paths.checkpoint)
    res = evaluate(model, _data(cfg))
    _emit({"command": "eval", "checkpoint": str(paths.checkpoint), **res.as_dict()})
    return EXIT_OK


def bench_table(sizes, repeats: int, seed: int = 0) -> list[dict]:
    """Median wall time of the dense and bit-packed products for square sizes."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        x = rng.normal(size=(n, n))
        signs = np.where(rng.random((n, n)) < 0.5, -1.0, 1.0)
        bits = pack(signs)
        dense = matmul_dense(x, signs)
        if not np.array_equal(dense, matmul_bool(x, bits)):
            raise RuntimeError(f"Boolean product disagrees with the dense product at size {n}")
        times = {}
        for label, fn, arg in (("dense", matmul_dense, signs), ("bool", matmul_bool, bits)):
            samples = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn(x, arg)
                samples.append(time.perf_counter() - t0)
            times[label] = float(np.median(samples))
        rows.append({"size": n, "dense_s": times["dense"], "bool_s": times["bool"],
                     "ratio": times["bool"] / times["dense"], "bits_bytes": bits.nbytes, "dense_bytes": signs.nbytes})
    return rows


def format_bench(rows) -> str:
    head = f"{'size':>6} {'dense_ms':>10} {'bool_ms':>10} {'ratio':>7} {'bits_B':>9} {'dense_B':>9}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['size']:>6} {r['dense_s'] * 1e3:>10.3f} {r['bool_s'] * 1e3:>10.3f} {r['ratio']:>7.2f}"
                     f" {r['bits_bytes']:>9} {r['dense_bytes']:>9}")
    return "\n".join(lines)


def cmd_bench(cfg: RunConfig, paths: Paths) -> int:
    if cfg.bench_repeats < 1:
        raise ConfigError("bench_repeats must be at least 1")
    print(format_bench(bench_table(cfg.int_list("bench_sizes"), cfg.bench_repeats, cfg.seed)))
    return EXIT_OK


COMMANDS = {
    "teacher": cmd_teacher,
    "extract": cmd_extract,
    "allocate": cmd_allocate,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boolkernel", description="Multi-kernel Boolean layer toolchain")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value run configuration")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")
    sub.add_parser("defaults", help="print every configuration key with its default")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.command == "defaults":
        sys.stdout.write(render_config(RunConfig()))
        return EXIT_OK
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        return COMMANDS[args.command](cfg, Paths(cfg, args.out))
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (ConfigError, checkpoint.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
