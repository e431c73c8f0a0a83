"""Command-line interface: run cells of the benchmark grid, sweep axes,
ablate edge logits, run the single-stream probe, and export architectures.

Exit status: 0 on success, 1 if any seed collapsed or a --check
verification failed, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bench import (DEFAULT_SEEDS, METHODS, ExperimentSpec, ResultRow,
                    emit_plot_csv, emit_table, failure_probe, rows_to_csv,
                    run, run_ablation, sweep, sweep_csv)
from .supernet import arch_from_json, export_architecture

SPEC_KEYS = ("task", "level", "n", "method", "seeds", "out", "edge_weights")


def _load_config(path: str) -> dict:
    """TOML or JSON file whose keys mirror ExperimentSpec fields."""
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix.lower() == ".json":
        cfg = json.loads(raw)
    else:
        cfg = tomllib.loads(raw.decode())
    unknown = set(cfg) - set(SPEC_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _parse_seeds(args) -> tuple[int, ...]:
    if getattr(args, "seeds", None):
        return tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "seed", None) is not None:
        return (int(args.seed),)
    return DEFAULT_SEEDS


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="single seed (shorthand for --seeds SEED)")
    p.add_argument("--seeds", type=str, default=None,
                   help="comma-separated seed list, e.g. 0,1,2,3,4")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for per-seed jobs")
    p.add_argument("--no-edge-weights", action="store_true",
                   help="disable edge logits (prune by operation probability)")
    p.add_argument("--config", type=str, default=None,
                   help="TOML/JSON file with ExperimentSpec fields; "
                        "explicit flags override it")


def _spec_from_args(args, require: tuple[str, ...]) -> ExperimentSpec:
    cfg = _load_config(args.config) if args.config else {}
    merged = {
        "task": args.task if args.task is not None else cfg.get("task"),
        "level": args.level if args.level is not None else cfg.get("level"),
        "n": args.n if args.n is not None else cfg.get("n"),
        "method": getattr(args, "method", None) or cfg.get("method"),
        "out": args.out if args.out is not None else cfg.get("out"),
    }
    if args.seeds or args.seed is not None or "seeds" not in cfg:
        merged["seeds"] = _parse_seeds(args)
    else:
        merged["seeds"] = tuple(int(s) for s in cfg["seeds"])
    if args.no_edge_weights:
        merged["edge_weights"] = False
    else:
        merged["edge_weights"] = bool(cfg.get("edge_weights", True))
    missing = [k for k in require if merged.get(k) is None]
    if missing:
        raise ValueError(f"missing required option(s): {', '.join('--' + m for m in missing)}")
    defaults = {"method": "nas"}
    for k, v in defaults.items():
        if merged.get(k) is None:
            merged[k] = v
    return ExperimentSpec(task=merged["task"], level=merged["level"],
                          n=int(merged["n"]), method=merged["method"],
                          seeds=merged["seeds"], out=merged["out"],
                          edge_weights=merged["edge_weights"])


def _verify_row(spec: ExperimentSpec, row: ResultRow, threads: int) -> list[str]:
    """Re-execute the spec and demand byte-identical CSV output plus
    selection invariants on every searched architecture."""
    problems: list[str] = []
    fresh = run(dataclasses.replace(spec, out=None), threads=threads)
    if rows_to_csv([fresh]) != rows_to_csv([row]):
        problems.append("re-run produced a different results CSV")
    for seed, arch in zip(row.seeds, row.archs):
        if arch is None:
            continue
        selected = arch.provenance.get("selected", [])
        per_node: dict[int, int] = {}
        for e in selected:
            per_node[e["dst"]] = per_node.get(e["dst"], 0) + 1
            if not isinstance(e["op"], str):
                problems.append(f"seed {seed}: edge {e['src']}->{e['dst']} lacks a single op")
        for dst, count in per_node.items():
            if count != 2:
                problems.append(
                    f"seed {seed}: node {dst} kept {count} edges, expected 2")
    return problems


def _finish_run(spec: ExperimentSpec, row: ResultRow, args) -> int:
    print(emit_table([row]), end="")
    if row.partial:
        for seed, msg in row.collapses.items():
            print(f"seed {seed} collapsed: {msg}", file=sys.stderr)
        return 1
    if args.check:
        problems = _verify_row(spec, row, args.threads)
        if problems:
            for p in problems:
                print(f"check failed: {p}", file=sys.stderr)
            return 1
        print("check passed: rerun is byte-identical and architectures are valid")
    return 0


def _cmd_run(args) -> int:
    spec = _spec_from_args(args, require=("task", "level", "n"))
    row = run(spec, threads=args.threads)
    return _finish_run(spec, row, args)


def _cmd_sweep(args) -> int:
    base = _spec_from_args(args, require=("task", "level", "n"))
    rows = sweep(args.axis, base, threads=args.threads)
    print(emit_table(rows), end="")
    csv_text = sweep_csv(args.axis, rows)
    if base.out:
        out = Path(base.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(csv_text)
        (out / "rows.csv").write_text(rows_to_csv(rows))
        (out / "plot.csv").write_text(emit_plot_csv(rows))
    status = 0
    for row in rows:
        if row.partial:
            for seed, msg in row.collapses.items():
                print(f"{row.method}@{row.level}/n={row.n} seed {seed} collapsed: {msg}",
                      file=sys.stderr)
            status = 1
    return status


def _cmd_ablate(args) -> int:
    spec = _spec_from_args(args, require=("task", "level", "n"))
    out = Path(spec.out) if spec.out else None
    report = run_ablation(spec.task, spec.level, spec.n, spec.seeds, out=out)
    print(report.csv_text(), end="")
    return 0


def _cmd_probe(args) -> int:
    seeds = _parse_seeds(args)
    out = Path(args.out) if args.out else None
    report = failure_probe(seeds=seeds, out=out)
    print(f"single-stream median error: {report.median_single:.6f}")
    print(f"two-stream median error:    {report.median_two_stream:.6f}")
    return 0


def _cmd_export(args) -> int:
    arch = arch_from_json(Path(args.arch).read_text())
    text = export_architecture(arch, args.format)
    if args.out:
        Path(args.out).write_text(text + ("\n" if not text.endswith("\n") else ""))
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="physarch",
        description="Architecture search with physical priors: benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one grid cell (one method)")
    p_run.add_argument("--task", choices=("toss", "collision"), default=None)
    p_run.add_argument("--level", type=str, default=None)
    p_run.add_argument("--n", type=int, default=None)
    p_run.add_argument("--method", choices=METHODS, default=None)
    p_run.add_argument("--check", action="store_true",
                       help="re-run the spec and verify byte-identical results")
    _common_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="all methods along an axis")
    p_sweep.add_argument("--axis", choices=("mismatch", "samples"), required=True)
    p_sweep.add_argument("--task", choices=("toss", "collision"), default=None)
    p_sweep.add_argument("--level", type=str, default=None)
    p_sweep.add_argument("--n", type=int, default=None)
    _common_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_abl = sub.add_parser("ablate-edge-weights",
                           help="paired searches with edge logits on/off")
    p_abl.add_argument("--task", choices=("toss", "collision"), default=None)
    p_abl.add_argument("--level", type=str, default=None)
    p_abl.add_argument("--n", type=int, default=None)
    _common_flags(p_abl)
    p_abl.set_defaults(func=_cmd_ablate)

    p_probe = sub.add_parser("failure-probe",
                             help="single-stream vs forced two-stream comparison")
    _common_flags(p_probe)
    p_probe.set_defaults(func=_cmd_probe)

    p_exp = sub.add_parser("export-arch", help="re-emit an architecture file")
    p_exp.add_argument("--arch", type=str, required=True,
                       help="path to an architecture JSON file")
    p_exp.add_argument("--format", choices=("json", "dot"), required=True)
    p_exp.add_argument("--out", type=str, default=None)
    p_exp.set_defaults(func=_cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
