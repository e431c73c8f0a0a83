"""Benchmark harness: the experiment grid over tasks, mismatch levels,
sample counts and methods, plus axis sweeps, the edge-logit ablation, the
single-stream probe, and table/CSV rendering.

Every published CSV row embeds the spec that produced it and is regenerable
byte-for-byte; wall-clock timings live in a JSON sidecar so the CSV stays
deterministic.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .baselines import ModelSpec, TrainConfig
from .datasets import (MISMATCH_AXIS, Dataset, fit_context, generate_dataset,
                       generate_test_set, resolve_level, task_dims)
from .errors import CollapseError
from .search import SearchConfig, ablate_edge_weights, retrain, search, split_for_search
from .supernet import (Architecture, ArchModel, arch_to_dot, arch_to_json,
                       build_supernet)

RESULTS_SCHEMA_VERSION = 1
METHODS = ("naive", "fusion", "residual", "regularized", "embedded", "nas")
BASELINE_METHODS = METHODS[:-1]
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
SAMPLES_AXIS_DEFAULT = (32, 64, 128, 256)

RESULTS_CSV_HEADER = ("schema,task,level,n,method,edge_weights,seeds,"
                      "errors,median,mean,std,partial")


def _is_valid_sample_count(n: int) -> bool:
    return n >= 32 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ExperimentSpec:
    """One cell of the benchmark grid: what to train, on how much data,
    over which seeds."""
    task: str
    level: str
    n: int
    method: str
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out: str | None = None
    edge_weights: bool = True

    def __post_init__(self):
        resolve_level(self.task, self.level)  # raises on unknown task/level
        if not _is_valid_sample_count(self.n):
            raise ValueError(
                f"train sample count must be a power of two >= 32, got {self.n}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r} (choose from {METHODS})")
        if len(self.seeds) == 0:
            raise ValueError("at least one seed is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


@dataclass
class SeedOutcome:
    """What one (spec, seed) execution produced."""
    seed: int
    error: float | None                 # test error; None if the run collapsed
    collapse: str | None = None         # diagnostic message when it did
    arch: Architecture | None = None    # searched architecture (nas only)


@dataclass
class ResultRow:
    """Aggregated result for one spec: per-seed errors plus summary stats."""
    task: str
    level: str
    n: int
    method: str
    edge_weights: bool
    seeds: tuple[int, ...]
    errors: list[float | None]
    median: float | None
    mean: float | None
    std: float | None
    partial: bool
    wall_clock: float = 0.0
    collapses: dict[int, str] = field(default_factory=dict)
    archs: list[Architecture | None] = field(default_factory=list)

    def csv_line(self) -> str:
        err_txt = ";".join("collapsed" if e is None else repr(float(e))
                           for e in self.errors)
        stat = lambda v: "" if v is None else repr(float(v))
        return ",".join([
            str(RESULTS_SCHEMA_VERSION), self.task, self.level, str(self.n),
            self.method, "on" if self.edge_weights else "off",
            ";".join(str(s) for s in self.seeds), err_txt,
            stat(self.median), stat(self.mean), stat(self.std),
            "true" if self.partial else "false",
        ])


def _summarize(spec: ExperimentSpec, outcomes: list[SeedOutcome],
               wall_clock: float) -> ResultRow:
    errors = [o.error for o in outcomes]
    done = [e for e in errors if e is not None]
    return ResultRow(
        task=spec.task, level=spec.level, n=spec.n, method=spec.method,
        edge_weights=spec.edge_weights, seeds=spec.seeds, errors=errors,
        median=float(np.median(done)) if done else None,
        mean=float(np.mean(done)) if done else None,
        std=float(np.std(done)) if done else None,
        partial=len(done) < len(errors),
        wall_clock=wall_clock,
        collapses={o.seed: o.collapse for o in outcomes if o.collapse},
        archs=[o.arch for o in outcomes],
    )


def run_seed(spec: ExperimentSpec, seed: int, test_data: Dataset,
             search_cfg: SearchConfig | None = None,
             train_cfg: TrainConfig | None = None) -> SeedOutcome:
    """Generate data, train (or search + retrain), evaluate on the shared
    test set. A collapse is reported, not raised, so sibling seeds continue."""
    base_train = train_cfg or TrainConfig()
    tcfg = dataclasses.replace(base_train, seed=seed)
    train_data = generate_dataset(spec.task, spec.level, n=spec.n, seed=seed)
    ctx = fit_context(train_data)
    try:
        if spec.method == "nas":
            base_search = search_cfg or SearchConfig()
            scfg = dataclasses.replace(base_search, seed=seed,
                                       edge_weights=spec.edge_weights)
            net = build_supernet(ctx, seed)
            d_w, d_a = split_for_search(train_data, seed)
            arch, _trace = search(net, d_w, d_a, scfg)
            trained = retrain(arch, train_data, ctx, tcfg)
            model = trained.model
        else:
            arch = None
            model = baselines.build_model(
                ModelSpec(kind=spec.method, task=spec.task), ctx, seed)
            baselines.train(model, train_data, tcfg)
        return SeedOutcome(seed=seed, error=baselines.evaluate(model, test_data),
                           arch=arch)
    except CollapseError as exc:
        return SeedOutcome(seed=seed, error=None, collapse=str(exc))


def _run_seed_job(args) -> SeedOutcome:
    return run_seed(*args)


def run(spec: ExperimentSpec, *, threads: int = 1,
        search_cfg: SearchConfig | None = None,
        train_cfg: TrainConfig | None = None,
        test_data: Dataset | None = None) -> ResultRow:
    """Execute a spec over all its seeds and aggregate the outcome.

    The test set is generated once per (task, level) cell and shared by
    every method and seed, so comparisons within a cell are paired.
    """
    test = test_data if test_data is not None else generate_test_set(spec.task, spec.level)
    jobs = [(spec, seed, test, search_cfg, train_cfg) for seed in spec.seeds]
    started = time.perf_counter()
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_seed_job, jobs))
    else:
        outcomes = [_run_seed_job(j) for j in jobs]
    row = _summarize(spec, outcomes, time.perf_counter() - started)
    if spec.out is not None:
        persist_row(spec, row, Path(spec.out))
    return row


def rows_to_csv(rows: list[ResultRow]) -> str:
    return "\n".join([RESULTS_CSV_HEADER] + [r.csv_line() for r in rows]) + "\n"


def persist_row(spec: ExperimentSpec, row: ResultRow, out: Path) -> None:
    """results.csv (deterministic) + results.json sidecar (timings,
    collapse diagnostics) + searched architectures when present."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(rows_to_csv([row]))
    arch_files: dict[str, str] = {}
    for seed, arch in zip(row.seeds, row.archs):
        if arch is None:
            continue
        stem = f"arch_seed{seed}"
        (out / f"{stem}.json").write_text(arch_to_json(arch))
        (out / f"{stem}.dot").write_text(arch_to_dot(arch))
        arch_files[str(seed)] = f"{stem}.json"
    sidecar = {
        "schema": RESULTS_SCHEMA_VERSION,
        "spec": {"task": spec.task, "level": spec.level, "n": spec.n,
                 "method": spec.method, "seeds": list(spec.seeds),
                 "edge_weights": spec.edge_weights},
        "errors": row.errors,
        "median": row.median, "mean": row.mean, "std": row.std,
        "partial": row.partial,
        "wall_clock_seconds": row.wall_clock,
        "collapses": {str(k): v for k, v in row.collapses.items()},
        "architectures": arch_files,
    }
    (out / "results.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


# --- sweeps ---

def sweep(axis: str, base: ExperimentSpec, values: tuple | None = None, *,
          threads: int = 1, search_cfg: SearchConfig | None = None,
          train_cfg: TrainConfig | None = None) -> list[ResultRow]:
    """Rows for every method at every value of the chosen axis.

    axis="mismatch" walks the task's mismatch presets at fixed n;
    axis="samples" walks train-set sizes at a fixed level.
    """
    if axis == "mismatch":
        axis_values = tuple(values) if values is not None else tuple(MISMATCH_AXIS[base.task])
        make = lambda v: dataclasses.replace(base, level=v, out=None)
    elif axis == "samples":
        axis_values = tuple(values) if values is not None else SAMPLES_AXIS_DEFAULT
        make = lambda v: dataclasses.replace(base, n=int(v), out=None)
    else:
        raise ValueError(f"unknown sweep axis {axis!r} (use 'mismatch' or 'samples')")
    rows: list[ResultRow] = []
    test_cache: dict[tuple[str, str], Dataset] = {}
    for value in axis_values:
        for method in METHODS:
            spec = dataclasses.replace(make(value), method=method)
            key = (spec.task, spec.level)
            if key not in test_cache:
                test_cache[key] = generate_test_set(spec.task, spec.level)
            rows.append(run(spec, threads=threads, search_cfg=search_cfg,
                            train_cfg=train_cfg, test_data=test_cache[key]))
    return rows


def sweep_csv(axis: str, rows: list[ResultRow]) -> str:
    """Long-format plotting CSV: one line per (axis value, method)."""
    lines = ["axis,value,method,median_error"]
    for r in rows:
        value = r.level if axis == "mismatch" else str(r.n)
        med = "" if r.median is None else repr(float(r.median))
        lines.append(f"{axis},{value},{r.method},{med}")
    return "\n".join(lines) + "\n"


# --- rendering ---

def emit_table(rows: list[ResultRow]) -> str:
    """Aligned text table, one line per (level, n) cell; the best method's
    median is marked '*', the second-best '+'; ties mark every tied entry."""
    if not rows:
        raise ValueError("no rows to render")
    tasks = {r.task for r in rows}
    if len(tasks) > 1:
        raise ValueError(f"mixed-task rows cannot share a table: {sorted(tasks)}")
    task = rows[0].task
    methods = [m for m in METHODS if any(r.method == m for r in rows)]
    cells: dict[tuple[str, int], dict[str, float | None]] = {}
    for r in rows:
        cells.setdefault((r.level, r.n), {})[r.method] = r.median
    header = ["cell"] + methods
    body: list[list[str]] = []
    for (level, n), per_method in cells.items():
        finite = sorted({v for v in per_method.values() if v is not None})
        best = finite[0] if finite else None
        second = finite[1] if len(finite) > 1 else None
        line = [f"{task}/{level}/n={n}"]
        for m in methods:
            v = per_method.get(m)
            if v is None:
                line.append("-")
            elif v == best:
                line.append(f"{v:.4f}*")
            elif second is not None and v == second:
                line.append(f"{v:.4f}+")
            else:
                line.append(f"{v:.4f}")
        body.append(line)
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in body]) + "\n"


def emit_plot_csv(rows: list[ResultRow]) -> str:
    """Flat CSV of medians keyed by the full cell, for external plotting."""
    lines = ["task,level,n,method,median_error"]
    for r in rows:
        med = "" if r.median is None else repr(float(r.median))
        lines.append(f"{r.task},{r.level},{r.n},{r.method},{med}")
    return "\n".join(lines) + "\n"


# --- edge-logit ablation (harness wrapper) ---

@dataclass
class AblationReport:
    task: str
    level: str
    n: int
    seeds: tuple[int, ...]
    errors_with: list[float]
    errors_without: list[float]
    depths_with: list[int]
    depths_without: list[int]
    archs_with: list[Architecture]
    archs_without: list[Architecture]

    @property
    def median_with(self) -> float:
        return float(np.median(self.errors_with))

    @property
    def median_without(self) -> float:
        return float(np.median(self.errors_without))

    def csv_text(self) -> str:
        lines = ["edge_weights,median_error,median_depth"]
        lines.append(f"on,{self.median_with!r},{float(np.median(self.depths_with))!r}")
        lines.append(f"off,{self.median_without!r},{float(np.median(self.depths_without))!r}")
        return "\n".join(lines) + "\n"


def run_ablation(task: str, level: str, n: int, seeds: tuple[int, ...],
                 out: Path | None = None,
                 search_cfg: SearchConfig | None = None,
                 train_cfg: TrainConfig | None = None) -> AblationReport:
    """Paired searches with edge logits enabled and disabled per seed;
    reports both error and depth distributions and both graphs."""
    test = generate_test_set(task, level)
    report = AblationReport(task=task, level=level, n=n, seeds=tuple(seeds),
                            errors_with=[], errors_without=[],
                            depths_with=[], depths_without=[],
                            archs_with=[], archs_without=[])
    for seed in seeds:
        pair = ablate_edge_weights(task, level, n, seed, search_cfg=search_cfg,
                                   train_cfg=train_cfg, test_data=test)
        report.errors_with.append(pair.error_with)
        report.errors_without.append(pair.error_without)
        report.depths_with.append(pair.depth_with)
        report.depths_without.append(pair.depth_without)
        report.archs_with.append(pair.arch_with)
        report.archs_without.append(pair.arch_without)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(report.csv_text())
        for seed, aw, ao in zip(report.seeds, report.archs_with, report.archs_without):
            (out / f"arch_with_seed{seed}.dot").write_text(arch_to_dot(aw))
            (out / f"arch_without_seed{seed}.dot").write_text(arch_to_dot(ao))
    return report


# --- single-stream probe ---

PROBE_LEVEL = "probe"
PROBE_N = 32


def single_stream_probe_arch() -> Architecture:
    """Hand-built prior-plus-correction graph whose hidden node keeps a
    single incoming stream — a shape pruning cannot emit, since it retains
    two edges per node."""
    nodes = [
        {"id": 0, "kind": "input_x", "width": task_dims("collision")[0]},
        {"id": 2, "kind": "input_y_phy", "width": task_dims("collision")[1]},
        {"id": 4, "kind": "hidden", "width": 128},
        {"id": 9, "kind": "output", "width": task_dims("collision")[1]},
    ]
    edges = [
        {"src": 0, "dst": 4, "op": "fc_relu"},
        {"src": 2, "dst": 9, "op": "identity"},
        {"src": 4, "dst": 9, "op": "fc_linear"},
    ]
    return Architecture(task="collision", nodes=nodes, edges=edges,
                        dead_nodes=[], provenance={"origin": "single-stream probe"})


def two_stream_probe_arch() -> Architecture:
    """The closest graph the pruning rule can express: the hidden node is
    forced to accept a second stream, fed from the duplicated raw input."""
    base = single_stream_probe_arch()
    nodes = (base.nodes[:1]
             + [{"id": 1, "kind": "input_x_dup", "width": task_dims("collision")[0]}]
             + base.nodes[1:])
    edges = [base.edges[0], {"src": 1, "dst": 4, "op": "fc_relu"}] + base.edges[1:]
    return Architecture(task="collision", nodes=nodes, edges=edges,
                        dead_nodes=[], provenance={"origin": "two-stream probe variant"})


@dataclass
class ProbeReport:
    seeds: tuple[int, ...]
    errors_single: list[float]
    errors_two_stream: list[float]
    dot_single: str
    dot_two_stream: str

    @property
    def median_single(self) -> float:
        return float(np.median(self.errors_single))

    @property
    def median_two_stream(self) -> float:
        return float(np.median(self.errors_two_stream))


def failure_probe(seeds: tuple[int, ...] = DEFAULT_SEEDS, out: Path | None = None,
                  train_cfg: TrainConfig | None = None) -> ProbeReport:
    """Train the single-stream graph and its forced two-stream variant on
    the narrow-friction collision cell and report both errors. The probe
    documents a known expressiveness limit; it asserts nothing."""
    base_train = train_cfg or TrainConfig()
    single = single_stream_probe_arch()
    double = two_stream_probe_arch()
    test = generate_test_set("collision", PROBE_LEVEL)
    errs_s, errs_d = [], []
    for seed in seeds:
        train_data = generate_dataset("collision", PROBE_LEVEL, n=PROBE_N, seed=seed)
        ctx = fit_context(train_data)
        tcfg = dataclasses.replace(base_train, seed=seed)
        for arch, sink in ((single, errs_s), (double, errs_d)):
            model = ArchModel(arch, ctx, seed=seed)
            baselines.train(model, train_data, tcfg)
            sink.append(baselines.evaluate(model, test))
    report = ProbeReport(seeds=tuple(seeds), errors_single=errs_s,
                         errors_two_stream=errs_d,
                         dot_single=arch_to_dot(single),
                         dot_two_stream=arch_to_dot(double))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "single_stream.dot").write_text(report.dot_single)
        (out / "two_stream.dot").write_text(report.dot_two_stream)
        payload = {
            "cell": {"task": "collision", "level": PROBE_LEVEL, "n": PROBE_N},
            "seeds": list(report.seeds),
            "errors_single_stream": report.errors_single,
            "errors_two_stream": report.errors_two_stream,
            "median_single_stream": report.median_single,
            "median_two_stream": report.median_two_stream,
        }
        (out / "probe.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return report
