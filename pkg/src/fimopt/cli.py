"""Command-line front end: run, compare, verify, memory.

Exit codes: 0 success, 1 config error, 2 divergence, 3 failed verification.
Config files are YAML; the schema is documented in the README and validated
strictly (unknown keys are errors) before anything runs.  All output paths
resolve inside the --out directory.
"""
from __future__ import annotations

import argparse
import os
import sys

import yaml

from .errors import ConfigError, FimoptError
from .fim import ORACLE_FAMILIES, certify_families
from .harness import PROBLEM_KINDS, Schedule, make_problem, steps_to_threshold, train
from .optim import LOW_RANK_KINDS, OPTIMIZER_KINDS, memory_estimate

CSV_HEADER = "step,loss,grad_norm,lr,elapsed_ms"

_PROBLEM_KEYS = {
    "regression": {"kind", "n_samples", "m", "n", "cond", "noise", "target",
                   "target_rank"},
    "mlp": {"kind", "dim", "hidden", "classes", "n_per_class"},
}
_SCHEDULE_KEYS = {"base_lr", "warmup_frac", "final_frac"}
_RUN_KEYS = {"problem", "optimizer", "schedule", "steps", "seed", "output"}
_COMPARE_KEYS = {"problem", "optimizers", "schedule", "steps", "seed", "output",
                 "threshold_frac"}


def _fail(message: str) -> None:
    raise ConfigError(message)


def _check_keys(block: dict, allowed, where: str) -> None:
    if not isinstance(block, dict):
        _fail(f"{where} must be a mapping")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        _fail(f"unknown keys {unknown} in {where}")


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            config = yaml.safe_load(fh)
    except OSError as exc:
        _fail(f"cannot read config: {exc}")
    except yaml.YAMLError as exc:
        _fail(f"cannot parse config: {exc}")
    if not isinstance(config, dict):
        _fail("config root must be a mapping")
    return config


def _build_problem(block, seed: int):
    if not isinstance(block, dict) or "kind" not in block:
        _fail("problem block needs a kind")
    kind = block["kind"]
    if kind not in PROBLEM_KINDS:
        _fail(f"unknown problem kind {kind!r} (choose from {PROBLEM_KINDS})")
    _check_keys(block, _PROBLEM_KEYS[kind], "problem")
    options = {k: v for k, v in block.items() if k != "kind"}
    return make_problem(kind, seed=seed, **options)


def _build_schedule(block, steps: int) -> Schedule:
    _check_keys(block, _SCHEDULE_KEYS, "schedule")
    if "base_lr" not in block:
        _fail("schedule needs base_lr")
    return Schedule(
        base_lr=float(block["base_lr"]),
        total_steps=steps,
        warmup_frac=float(block.get("warmup_frac", 0.0)),
        final_frac=float(block.get("final_frac", 0.1)),
    )


def _split_optimizer(block):
    if not isinstance(block, dict) or "kind" not in block:
        _fail("optimizer block needs a kind")
    kind = block["kind"]
    if kind not in OPTIMIZER_KINDS:
        _fail(f"unknown optimizer kind {kind!r} (choose from {OPTIMIZER_KINDS})")
    label = block.get("label", kind)
    hyper = {k: v for k, v in block.items() if k not in ("kind", "label")}
    return kind, str(label), hyper


def _resolve_output(out_dir: str, name: str) -> str:
    path = os.path.normpath(os.path.join(out_dir, name))
    base = os.path.abspath(out_dir)
    if os.path.commonpath([base, os.path.abspath(path)]) != base:
        _fail(f"output path {name!r} escapes the output directory")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def _format_row(step, loss, gnorm, lr, ms) -> str:
    return f"{step},{loss:.10e},{gnorm:.10e},{lr:.10e},{ms:.3f}"


def write_run_csv(record, path: str) -> None:
    lines = [CSV_HEADER]
    for row in record.rows():
        lines.append(_format_row(*row))
    if record.diverged:
        lines.append(f"# diverged at step {record.diverged_step}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _problem_memory(problem, kind: str, hyper: dict) -> int:
    """Float count over all parameters: the benchmarked optimizer on matrix
    parameters, Adam on the rest."""
    rank = hyper.get("rank")
    total = 0
    for name, value in sorted(problem.init_params(0).items()):
        if name in problem.matrix_params:
            m, n = value.shape
            r = rank if kind in LOW_RANK_KINDS else None
            total += memory_estimate(kind, m, n, r)
        else:
            total += 3 * value.size
    return total


def cmd_run(args) -> int:
    config = _load_config(args.config)
    _check_keys(config, _RUN_KEYS, "config")
    for key in ("problem", "optimizer", "schedule", "steps"):
        if key not in config:
            _fail(f"config needs {key!r}")
    steps = int(config["steps"])
    seed = int(config.get("seed", 0))
    problem = _build_problem(config["problem"], seed)
    kind, _, hyper = _split_optimizer(config["optimizer"])
    schedule = _build_schedule(config["schedule"], steps)
    out_path = _resolve_output(args.out, str(config.get("output", "run.csv")))

    record = train(problem, kind, steps, schedule=schedule, seed=seed, hyper=hyper)
    write_run_csv(record, out_path)
    if record.diverged:
        print(f"diverged at step {record.diverged_step}", file=sys.stderr)
        return 2
    print(f"wrote {out_path} ({len(record.steps)} rows, "
          f"final loss {record.final_loss:.6e})")
    return 0


def cmd_compare(args) -> int:
    config = _load_config(args.config)
    _check_keys(config, _COMPARE_KEYS, "config")
    for key in ("problem", "optimizers", "schedule", "steps"):
        if key not in config:
            _fail(f"config needs {key!r}")
    blocks = config["optimizers"]
    if not isinstance(blocks, list) or len(blocks) < 2:
        _fail("compare needs at least two optimizer blocks")
    steps = int(config["steps"])
    seed = int(config.get("seed", 0))
    threshold_frac = float(config.get("threshold_frac", 1e-3))
    schedule = _build_schedule(config["schedule"], steps)
    summary_path = _resolve_output(args.out, str(config.get("output", "summary.csv")))

    labels = set()
    runs = []
    for block in blocks:
        kind, label, hyper = _split_optimizer(block)
        if label in labels:
            _fail(f"duplicate optimizer label {label!r}")
        labels.add(label)
        runs.append((kind, label, hyper))

    summary = ["optimizer,final_loss,steps_to_threshold,memory_estimate"]
    any_ok = False
    for kind, label, hyper in runs:
        problem = _build_problem(config["problem"], seed)
        threshold = threshold_frac * problem.loss(problem.init_params(seed))
        record = train(problem, kind, steps, schedule=schedule, seed=seed,
                       hyper=hyper)
        write_run_csv(record, _resolve_output(args.out, f"{label}.csv"))
        reached = steps_to_threshold(record, threshold)
        memory = _problem_memory(problem, kind, hyper)
        summary.append(
            f"{label},{record.final_loss:.10e},"
            f"{'' if reached is None else reached},{memory}"
        )
        if not record.diverged:
            any_ok = True
    with open(summary_path, "w") as fh:
        fh.write("\n".join(summary) + "\n")
    print(f"wrote {summary_path} ({len(runs)} optimizers)")
    return 0 if any_ok else 2


def cmd_verify(args) -> int:
    if args.perturb is not None and args.perturb not in ORACLE_FAMILIES:
        _fail(f"unknown family {args.perturb!r} (choose from {ORACLE_FAMILIES})")
    rows = certify_families(seed=args.seed, tier=args.tier, perturb=args.perturb)
    width = max(len("family"), max(len(r.family) for r in rows))
    print(f"{'family'.ljust(width)}  {'worst gap':>12}  status")
    for row in rows:
        status = "pass" if row.ok else "FAIL"
        print(f"{row.family.ljust(width)}  {row.worst_gap:>12.3e}  {status}")
    failed = [r.family for r in rows if not r.ok]
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return 3
    print("all families verified")
    return 0


def cmd_memory(args) -> int:
    if args.m < 1 or args.n < 1 or (args.r is not None and args.r < 1):
        _fail("dimensions must be positive")
    width = max(len("optimizer"), max(len(k) for k in OPTIMIZER_KINDS))
    print(f"{'optimizer'.ljust(width)}  floats (weight + state)")
    for kind in OPTIMIZER_KINDS:
        if kind in LOW_RANK_KINDS and args.r is None:
            print(f"{kind.ljust(width)}  requires r")
            continue
        count = memory_estimate(kind, args.m, args.n,
                                args.r if kind in LOW_RANK_KINDS else None)
        print(f"{kind.ljust(width)}  {count}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fimopt",
        description="Structured-FIM optimizer toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one optimizer from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=".")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="train several optimizers and summarize")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--out", default=".")
    p_cmp.set_defaults(fn=cmd_compare)

    p_ver = sub.add_parser("verify", help="run the analytic-vs-oracle certification")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--tier", choices=("small", "medium"), default="small")
    p_ver.add_argument("--perturb", default=None, metavar="FAMILY",
                       help="self-test hook: corrupt one family's closed form")
    p_ver.set_defaults(fn=cmd_verify)

    p_mem = sub.add_parser("memory", help="print per-optimizer memory estimates")
    p_mem.add_argument("m", type=int)
    p_mem.add_argument("n", type=int)
    p_mem.add_argument("r", type=int, nargs="?", default=None)
    p_mem.set_defaults(fn=cmd_memory)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FimoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
