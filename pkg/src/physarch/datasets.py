"""Dataset generation with controllable prior/simulator mismatch.

A mismatch level names the parameter ranges of the unmodeled physics. Datasets
are pure functions of (task, level, n, split, seed): scenario parameters come
from one seeded generator, ground truth from the simulator, y_phy from the
prior. The "test" split draws from a reserved seed space keyed only by task
and level, so every method in a cell is scored against the same test set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import physics
from .errors import ScenarioRejectionError, ShapeError

TEST_SET_SIZE = 1024


@dataclass(frozen=True)
class MismatchLevel:
    name: str
    task: str
    wind_range: float = 0.0   # toss: wind acceleration drawn from [-r, r] per axis
    damping: float = 0.0      # toss: quadratic drag coefficient
    mu_lo: float = 0.0        # collision: friction coefficient range
    mu_hi: float = 0.0


def _toss_level(tag: str, r: float, k: float) -> MismatchLevel:
    return MismatchLevel(name=f"toss-{tag}", task="toss", wind_range=r, damping=k)


def _collision_level(tag: str, lo: float, hi: float) -> MismatchLevel:
    return MismatchLevel(name=f"collision-{tag}", task="collision", mu_lo=lo, mu_hi=hi)


# sweep steps interpolate the damping linearly between the low and high presets
LEVELS: dict[str, dict[str, MismatchLevel]] = {
    "toss": {
        "none": _toss_level("none", 0.0, 0.0),
        "low": _toss_level("low", 1.0, 0.2),
        "high": _toss_level("high", 3.0, 0.5),
        "r1.0-k0.20": _toss_level("r1.0-k0.20", 1.0, 0.2),
        "r1.5-k0.28": _toss_level("r1.5-k0.28", 1.5, 0.275),
        "r2.0-k0.35": _toss_level("r2.0-k0.35", 2.0, 0.35),
        "r2.5-k0.43": _toss_level("r2.5-k0.43", 2.5, 0.425),
        "r3.0-k0.50": _toss_level("r3.0-k0.50", 3.0, 0.5),
    },
    "collision": {
        "none": _collision_level("none", 0.0, 0.0),
        "low": _collision_level("low", 0.28, 0.32),
        "mid": _collision_level("mid", 0.365, 0.435),
        "high": _collision_level("high", 0.45, 0.55),
        "probe": _collision_level("probe", 0.15, 0.25),
    },
}

MISMATCH_AXIS = {
    "toss": ["r1.0-k0.20", "r1.5-k0.28", "r2.0-k0.35", "r2.5-k0.43", "r3.0-k0.50"],
    "collision": ["low", "mid", "high"],
}

TASKS = ("toss", "collision")


def resolve_level(task: str, level: str | MismatchLevel) -> MismatchLevel:
    if isinstance(level, MismatchLevel):
        return level
    try:
        return LEVELS[task][level]
    except KeyError:
        known = ", ".join(sorted(LEVELS.get(task, {})))
        raise ValueError(f"unknown level {level!r} for task {task!r} (known: {known})") from None


def task_dims(task: str) -> tuple[int, int]:
    """(input width, label width)."""
    if task == "toss":
        return 2 * physics.TOSS_N_OBSERVED, 2 * physics.TOSS_N_PREDICTED
    if task == "collision":
        return 7, 2
    raise ValueError(f"unknown task {task!r}")


def _entropy(*parts) -> list[int]:
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(int.from_bytes(hashlib.sha256(p.encode()).digest()[:8], "big"))
        else:
            out.append(int(p) & 0xFFFFFFFFFFFFFFFF)
    return out


def dataset_rng(task: str, level_name: str, split: str, seed: int) -> np.random.Generator:
    """Seed protocol: splits live in disjoint seed spaces."""
    return np.random.default_rng(
        np.random.SeedSequence(_entropy("physarch-data", task, level_name, split, seed)))


@dataclass
class Dataset:
    task: str
    level: str
    split: str
    seed: int
    x: np.ndarray
    y: np.ndarray
    y_phy: np.ndarray
    meta: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.task, self.level, self.split, self.seed,
                       self.x[idx].copy(), self.y[idx].copy(), self.y_phy[idx].copy(),
                       [self.meta[i] for i in idx])

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            header = {"task": self.task, "level": self.level,
                      "split": self.split, "seed": self.seed}
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
            for i in range(len(self)):
                rec = {"x": self.x[i].tolist(), "y": self.y[i].tolist(),
                       "y_phy": self.y_phy[i].tolist(), "meta": self.meta[i]}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())["header"]
            xs, ys, yps, metas = [], [], [], []
            for line in fh:
                rec = json.loads(line)
                xs.append(rec["x"])
                ys.append(rec["y"])
                yps.append(rec["y_phy"])
                metas.append(rec["meta"])
        return cls(header["task"], header["level"], header["split"], header["seed"],
                   np.array(xs, dtype=np.float64), np.array(ys, dtype=np.float64),
                   np.array(yps, dtype=np.float64), metas)


def _generate_toss(level: MismatchLevel, n: int, rng: np.random.Generator,
                   seed: int, split: str) -> Dataset:
    speed = rng.uniform(4.0, 12.0, size=n)
    angle = rng.uniform(np.radians(30.0), np.radians(75.0), size=n)
    v0 = np.stack([speed * np.cos(angle), speed * np.sin(angle)], axis=1)
    l0 = np.zeros((n, 2))
    r = level.wind_range
    wind = rng.uniform(-r, r, size=(n, 2)) if r > 0 else np.zeros((n, 2))

    paths = physics.simulate_toss_paths(l0, v0, wind, level.damping)
    obs = paths[:, :physics.TOSS_N_OBSERVED].reshape(n, -1)
    labels = paths[:, physics.TOSS_N_OBSERVED:].reshape(n, -1)
    prior = physics.toss_prior(obs, physics.TOSS_STAMP_DT)

    meta = [{"lx1": 0.0, "ly1": 0.0, "vx": float(v0[i, 0]), "vy": float(v0[i, 1]),
             "wind_x": float(wind[i, 0]), "wind_y": float(wind[i, 1]),
             "k": level.damping, "stamp_dt": physics.TOSS_STAMP_DT}
            for i in range(n)]
    return Dataset("toss", level.name, split, seed, obs, labels, prior, meta)


def _draw_masses(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    m_a = rng.uniform(1.0, 5.0, size=n)
    m_b = rng.uniform(1.0, 5.0, size=n)
    for _ in range(1000):
        close = np.abs(m_a - m_b) <= 0.2
        if not close.any():
            return m_a, m_b
        k = int(close.sum())
        m_a[close] = rng.uniform(1.0, 5.0, size=k)
        m_b[close] = rng.uniform(1.0, 5.0, size=k)
    raise ScenarioRejectionError("mass resampling budget exceeded")


def _generate_collision(level: MismatchLevel, n: int, rng: np.random.Generator,
                        seed: int, split: str) -> Dataset:
    xs = np.empty((n, 7))
    ys = np.empty((n, 2))
    metas: list[dict] = [{} for _ in range(n)]
    filled = 0
    for _ in range(200):
        if filled >= n:
            break
        need = n - filled
        m_a, m_b = _draw_masses(rng, need)
        v_a1 = rng.uniform(2.0, 6.0, size=need)
        v_b1 = rng.uniform(-6.0, -2.0, size=need)
        d = rng.uniform(1.0, 4.0, size=need)
        if level.mu_hi > 0:
            mu = rng.uniform(level.mu_lo, level.mu_hi, size=need)
        else:
            mu = np.zeros(need)
        sim = physics.simulate_collision_batch(m_a, m_b, v_a1, v_b1, d, mu)
        # the feature stamp must land before the impact
        ok = sim.met & (sim.t_impact > physics.COLLISION_STAMP_DT)
        for j in np.nonzero(ok)[0]:
            i = filled
            xs[i] = (v_a1[j], sim.v_a_stamp[j], v_b1[j], sim.v_b_stamp[j],
                     m_a[j], m_b[j], d[j])
            ys[i] = (sim.v_a_final[j], sim.v_b_final[j])
            metas[i] = {"m_a": float(m_a[j]), "m_b": float(m_b[j]),
                        "v_a1": float(v_a1[j]), "v_b1": float(v_b1[j]),
                        "d": float(d[j]), "mu": float(mu[j]),
                        "t_impact": float(sim.t_impact[j])}
            filled += 1
            if filled >= n:
                break
    if filled < n:
        raise ScenarioRejectionError(
            f"collision rejection budget exceeded: {filled}/{n} valid scenarios")
    prior = physics.collision_prior(xs)
    return Dataset("collision", level.name, split, seed, xs, ys, prior, metas)


def generate_dataset(task: str, level: str | MismatchLevel, n: int,
                     seed: int, split: str = "train") -> Dataset:
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    lv = resolve_level(task, level)
    rng = dataset_rng(task, lv.name, split, seed)
    if task == "toss":
        return _generate_toss(lv, n, rng, seed, split)
    if task == "collision":
        return _generate_collision(lv, n, rng, seed, split)
    raise ValueError(f"unknown task {task!r}")


def generate_test_set(task: str, level: str | MismatchLevel,
                      n: int = TEST_SET_SIZE) -> Dataset:
    """Shared per-cell test data; seed space reserved by the split tag."""
    return generate_dataset(task, level, n, seed=0, split="test")


# --- normalization and per-task context ---

@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, arr: np.ndarray) -> "Normalizer":
        mean = arr.mean(axis=0)
        std = arr.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)  # constant columns pass through
        return cls(mean, std)

    def transform(self, arr: np.ndarray) -> np.ndarray:
        return (np.asarray(arr, dtype=np.float64) - self.mean) / self.std

    def inverse(self, arr: np.ndarray) -> np.ndarray:
        return np.asarray(arr, dtype=np.float64) * self.std + self.mean


_PARAM_KEYS = {"toss": ("lx1", "ly1", "vx", "vy"),
               "collision": ("m_a", "m_b", "v_a1", "v_b1")}


@dataclass(frozen=True)
class TaskContext:
    """Training-split statistics every model needs at build time.

    Inputs and labels are standardized by the training split; y_phy goes
    through the label transform. The anchor is the training-split mean of the
    true physical parameters: parameter heads emit offsets from it, which
    keeps estimated masses away from zero at init.
    """
    task: str
    x_norm: Normalizer
    y_norm: Normalizer
    param_anchor: np.ndarray
    stamp_dt: float = physics.TOSS_STAMP_DT

    @property
    def dims(self) -> tuple[int, int]:
        return task_dims(self.task)


def fit_context(train: Dataset) -> TaskContext:
    keys = _PARAM_KEYS[train.task]
    anchor = np.array([float(np.mean([m[k] for m in train.meta])) for k in keys])
    return TaskContext(task=train.task,
                       x_norm=Normalizer.fit(train.x),
                       y_norm=Normalizer.fit(train.y),
                       param_anchor=anchor)


def normalized_arrays(ctx: TaskContext, ds: Dataset):
    """(x_n, y_n, y_phy_n) under the context's transforms."""
    if ds.task != ctx.task:
        raise ShapeError(f"dataset task {ds.task!r} does not match context {ctx.task!r}")
    return (ctx.x_norm.transform(ds.x),
            ctx.y_norm.transform(ds.y),
            ctx.y_norm.transform(ds.y_phy))


def seeded_rng(*parts) -> np.random.Generator:
    """Generator keyed by an arbitrary mix of strings and integers."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(*parts)))


def context_to_dict(ctx: TaskContext) -> dict:
    return {"task": ctx.task,
            "x_mean": ctx.x_norm.mean.tolist(), "x_std": ctx.x_norm.std.tolist(),
            "y_mean": ctx.y_norm.mean.tolist(), "y_std": ctx.y_norm.std.tolist(),
            "param_anchor": ctx.param_anchor.tolist(),
            "stamp_dt": ctx.stamp_dt}


def context_from_dict(d: dict) -> TaskContext:
    return TaskContext(
        task=d["task"],
        x_norm=Normalizer(np.array(d["x_mean"]), np.array(d["x_std"])),
        y_norm=Normalizer(np.array(d["y_mean"]), np.array(d["y_std"])),
        param_anchor=np.array(d["param_anchor"]),
        stamp_dt=float(d["stamp_dt"]))
