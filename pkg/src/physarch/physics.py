"""Ground-truth simulators, analytic priors, and the evaluation metric.

Two tasks share the same shape of problem: a cheap analytic prior predicts the
label from the input, and a simulator produces ground truth that deviates from
the prior by a controlled amount of unmodeled physics.

Tossing: a unit point mass is thrown; stamps are sampled every ``stamp_dt``
seconds on one clock, so stamp i (0-based) sits at t = i * stamp_dt. The first
3 stamps are observed, the next 15 are the label. The prior is the drag-free
parabola anchored at the first observed point, with velocity fitted by least
squares over the three observations. The simulator adds a constant per-sample
wind acceleration and quadratic air drag (a = -k * |v| * v / m per axis).

Collision: two masses approach head-on on a line, 1-D elastic collision. The
prior applies the frictionless elastic-collision solution to the initial
velocities. The simulator decelerates both objects by sliding friction
(|a| = mu * g opposing motion, a stopped object stays stopped), finds the
impact by integration plus bisection inside the crossing substep, and applies
the elastic solution to the impact velocities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ScenarioRejectionError, ShapeError

GRAVITY = 9.8
DT_SIM = 1e-4
N_PHYSICAL_PARAMS = 4  # both tasks: four scalars fix the closed form

TOSS_STAMP_DT = 0.1
TOSS_N_STAMPS = 18
TOSS_N_OBSERVED = 3
TOSS_N_PREDICTED = 15

COLLISION_STAMP_DT = 0.05
COLLISION_T_MAX = 5.0


@dataclass(frozen=True)
class TossScenario:
    lx1: float
    ly1: float
    vx: float
    vy: float
    wind_x: float
    wind_y: float
    k: float
    stamp_dt: float = TOSS_STAMP_DT
    mass: float = 1.0


@dataclass(frozen=True)
class CollisionScenario:
    m_a: float
    m_b: float
    v_a1: float
    v_b1: float
    d: float
    mu: float


# --- tossing ---

def ballistic_points(lx1, ly1, vx, vy, times) -> np.ndarray:
    """Drag-free trajectory locations at the given times, shape (len(times), 2)."""
    t = np.asarray(times, dtype=np.float64)
    x = lx1 + vx * t
    y = ly1 + vy * t - 0.5 * GRAVITY * t * t
    return np.stack([x, y], axis=-1)


def simulate_toss_paths(l0, v0, wind, k, stamp_dt=TOSS_STAMP_DT,
                        n_stamps=TOSS_N_STAMPS, dt_sim=DT_SIM,
                        mass=1.0) -> np.ndarray:
    """Integrate a batch of tosses; returns locations with shape (n, n_stamps, 2).

    Semi-implicit Euler with an integer number of substeps per stamp, so stamp
    times are hit exactly.
    """
    if stamp_dt <= 0 or dt_sim <= 0:
        raise ValueError(f"timesteps must be positive, got stamp_dt={stamp_dt}, dt_sim={dt_sim}")
    pos = np.array(l0, dtype=np.float64, copy=True)
    vel = np.array(v0, dtype=np.float64, copy=True)
    wind = np.asarray(wind, dtype=np.float64)
    n = pos.shape[0]
    n_sub = max(1, round(stamp_dt / dt_sim))
    dt = stamp_dt / n_sub
    gravity = np.array([0.0, -GRAVITY])
    drag = float(k) / float(mass)

    out = np.empty((n, n_stamps, 2), dtype=np.float64)
    out[:, 0] = pos
    for stamp in range(1, n_stamps):
        for _ in range(n_sub):
            speed = np.sqrt(np.sum(vel * vel, axis=1, keepdims=True))
            acc = wind + gravity - drag * speed * vel
            vel = vel + acc * dt
            pos = pos + vel * dt
        out[:, stamp] = pos
    if not np.all(np.isfinite(out)):
        raise ScenarioRejectionError("toss integration produced non-finite state")
    return out


def simulate_toss(scn: TossScenario, n_stamps: int = TOSS_N_STAMPS,
                  dt_sim: float = DT_SIM) -> np.ndarray:
    """Trajectory of one scenario: (n_stamps, 2) locations at t = i * stamp_dt."""
    path = simulate_toss_paths(
        np.array([[scn.lx1, scn.ly1]]), np.array([[scn.vx, scn.vy]]),
        np.array([[scn.wind_x, scn.wind_y]]), scn.k,
        stamp_dt=scn.stamp_dt, n_stamps=n_stamps, dt_sim=dt_sim, mass=scn.mass)
    return path[0]


def toss_prior(x, stamp_dt: float = TOSS_STAMP_DT) -> np.ndarray:
    """Predict the 15 label locations from the 3 observed ones.

    The parabola is anchored at the first observation; (v_x, v_y) minimize the
    squared residual of the drag-free model over the three observed points at
    t = 0, stamp_dt, 2*stamp_dt. Output stamps sit at t = 3..17 * stamp_dt,
    flattened (x, y) per stamp.
    """
    if stamp_dt <= 0:
        raise ValueError(f"stamp_dt must be positive, got {stamp_dt}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    obs = np.atleast_2d(x)
    if obs.shape[1] != 2 * TOSS_N_OBSERVED:
        raise ShapeError(f"toss input has 6 features, got shape {x.shape}")
    l1 = obs[:, 0:2]
    # residuals relative to the anchor, with gravity removed from the y axis
    b2 = obs[:, 2:4] - l1
    b3 = obs[:, 4:6] - l1
    b2 = b2 + np.array([0.0, 0.5 * GRAVITY * stamp_dt ** 2])
    b3 = b3 + np.array([0.0, 0.5 * GRAVITY * (2 * stamp_dt) ** 2])
    # least squares over t in {0, dt, 2dt}: v = sum(t_i b_i) / sum(t_i^2)
    v = (b2 + 2.0 * b3) / (5.0 * stamp_dt)

    times = np.arange(TOSS_N_OBSERVED, TOSS_N_STAMPS) * stamp_dt
    px = l1[:, 0:1] + v[:, 0:1] * times
    py = l1[:, 1:2] + v[:, 1:2] * times - 0.5 * GRAVITY * times ** 2
    pred = np.stack([px, py], axis=2).reshape(obs.shape[0], 2 * TOSS_N_PREDICTED)
    return pred[0] if single else pred


# --- collision ---

def elastic_collision(m_a, m_b, v_a, v_b):
    """1-D perfectly elastic collision; conserves momentum and kinetic energy."""
    m_a = np.asarray(m_a, dtype=np.float64)
    m_b = np.asarray(m_b, dtype=np.float64)
    v_a = np.asarray(v_a, dtype=np.float64)
    v_b = np.asarray(v_b, dtype=np.float64)
    total = m_a + m_b
    v_af = (v_a * (m_a - m_b) + 2.0 * m_b * v_b) / total
    v_bf = (v_b * (m_b - m_a) + 2.0 * m_a * v_a) / total
    return v_af, v_bf


def collision_prior(x) -> np.ndarray:
    """Frictionless elastic solution from the initial velocities.

    Input columns are (v_a1, v_a2, v_b1, v_b2, m_a, m_b, D); only v_a1, v_b1
    and the masses participate.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    f = np.atleast_2d(x)
    if f.shape[1] != 7:
        raise ShapeError(f"collision input has 7 features, got shape {x.shape}")
    v_af, v_bf = elastic_collision(f[:, 4], f[:, 5], f[:, 0], f[:, 2])
    out = np.stack([v_af, v_bf], axis=1)
    return out[0] if single else out


def _friction_substep(v, decel, dt):
    """Velocity after dt under friction; crossing zero parks the object."""
    stepped = v - np.sign(v) * decel * dt
    return np.where(v * stepped <= 0.0, 0.0, stepped)


@dataclass
class CollisionBatchResult:
    met: np.ndarray          # bool: gap closed before everything stopped
    t_impact: np.ndarray     # seconds (nan when not met)
    v_a_stamp: np.ndarray    # velocities at t = stamp_dt
    v_b_stamp: np.ndarray
    v_a_impact: np.ndarray
    v_b_impact: np.ndarray
    v_a_final: np.ndarray    # post-impact velocities (the label)
    v_b_final: np.ndarray


def simulate_collision_batch(m_a, m_b, v_a1, v_b1, d, mu,
                             stamp_dt=COLLISION_STAMP_DT, dt_sim=DT_SIM,
                             t_max=COLLISION_T_MAX) -> CollisionBatchResult:
    m_a = np.asarray(m_a, dtype=np.float64)
    m_b = np.asarray(m_b, dtype=np.float64)
    v_a = np.array(v_a1, dtype=np.float64, copy=True)
    v_b = np.array(v_b1, dtype=np.float64, copy=True)
    d = np.asarray(d, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    n = v_a.shape[0]

    pos_a = np.zeros(n)
    pos_b = d.copy()
    decel = mu * GRAVITY

    open_gap = np.ones(n, dtype=bool)   # still waiting for impact
    met = np.zeros(n, dtype=bool)
    t_impact = np.full(n, np.nan)
    v_a_imp = np.zeros(n)
    v_b_imp = np.zeros(n)
    v_a_stamp = np.full(n, np.nan)
    v_b_stamp = np.full(n, np.nan)

    stamp_step = max(1, round(stamp_dt / dt_sim))
    n_steps = max(1, round(t_max / dt_sim))
    for step in range(1, n_steps + 1):
        if not open_gap.any():
            break
        va_new = _friction_substep(v_a, decel, dt_sim)
        vb_new = _friction_substep(v_b, decel, dt_sim)
        pa_new = pos_a + va_new * dt_sim
        pb_new = pos_b + vb_new * dt_sim
        gap_new = pb_new - pa_new

        crossing = open_gap & (gap_new <= 0.0)
        for i in np.nonzero(crossing)[0]:
            tau, vai, vbi = _refine_impact(pos_a[i], pos_b[i], v_a[i], v_b[i],
                                           decel[i], dt_sim)
            t_impact[i] = (step - 1) * dt_sim + tau
            v_a_imp[i], v_b_imp[i] = vai, vbi
            met[i] = True
            open_gap[i] = False

        live = open_gap & ~crossing
        v_a = np.where(live, va_new, v_a)
        v_b = np.where(live, vb_new, v_b)
        pos_a = np.where(live, pa_new, pos_a)
        pos_b = np.where(live, pb_new, pos_b)

        if step == stamp_step:
            # feature stamp; samples that collided earlier keep nan and are
            # rejected by the generator
            v_a_stamp = np.where(met, v_a_stamp, v_a)
            v_b_stamp = np.where(met, v_b_stamp, v_b)

        # both parked with a gap left: they will never meet
        dead = live & (v_a == 0.0) & (v_b == 0.0)
        open_gap &= ~dead

    v_a_fin = np.zeros(n)
    v_b_fin = np.zeros(n)
    if met.any():
        idx = np.nonzero(met)[0]
        v_a_fin[idx], v_b_fin[idx] = elastic_collision(
            m_a[idx], m_b[idx], v_a_imp[idx], v_b_imp[idx])
    return CollisionBatchResult(met, t_impact, v_a_stamp, v_b_stamp,
                                v_a_imp, v_b_imp, v_a_fin, v_b_fin)


def _refine_impact(pa, pb, va, vb, decel, dt):
    """Bisect the crossing substep: gap(tau) > 0 at 0, <= 0 at dt."""
    def state(tau):
        va2 = va - np.sign(va) * decel * tau
        if va * va2 <= 0.0:
            va2 = 0.0
        vb2 = vb - np.sign(vb) * decel * tau
        if vb * vb2 <= 0.0:
            vb2 = 0.0
        gap = (pb + vb2 * tau) - (pa + va2 * tau)
        return gap, va2, vb2

    lo, hi = 0.0, dt
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        gap, _, _ = state(mid)
        if gap > 0.0:
            lo = mid
        else:
            hi = mid
    _, vai, vbi = state(hi)
    return hi, vai, vbi


def simulate_collision(scn: CollisionScenario, stamp_dt=COLLISION_STAMP_DT,
                       dt_sim=DT_SIM, t_max=COLLISION_T_MAX) -> CollisionBatchResult:
    """Single-scenario wrapper; fields hold length-1 arrays."""
    return simulate_collision_batch(
        np.array([scn.m_a]), np.array([scn.m_b]), np.array([scn.v_a1]),
        np.array([scn.v_b1]), np.array([scn.d]), np.array([scn.mu]),
        stamp_dt=stamp_dt, dt_sim=dt_sim, t_max=t_max)


# --- metric ---

def metric_avg_euclidean(pred, truth, point_dim: int = 2) -> float:
    """Mean L2 distance per point, averaged over every sample given."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"metric shapes differ: {pred.shape} vs {truth.shape}")
    if pred.shape[-1] % point_dim != 0:
        raise ShapeError(f"width {pred.shape[-1]} not divisible by point_dim {point_dim}")
    diff = (pred - truth).reshape(-1, point_dim)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


# --- differentiable decoders (parameters -> label), used by models ---

def toss_decoder_terms(stamp_dt: float = TOSS_STAMP_DT):
    """Constant affine map from (lx1, ly1, vx, vy) to the 30 label values."""
    times = np.arange(TOSS_N_OBSERVED, TOSS_N_STAMPS) * stamp_dt
    w = np.zeros((2 * TOSS_N_PREDICTED, 4))
    b = np.zeros(2 * TOSS_N_PREDICTED)
    w[0::2, 0] = 1.0
    w[0::2, 2] = times
    w[1::2, 1] = 1.0
    w[1::2, 3] = times
    b[1::2] = -0.5 * GRAVITY * times ** 2
    return w, b


def decode_toss_params(params: ad.Tensor, stamp_dt: float = TOSS_STAMP_DT) -> ad.Tensor:
    w, b = toss_decoder_terms(stamp_dt)
    return ad.affine(params, ad.constant(w), ad.constant(b))


def decode_collision_params(params: ad.Tensor) -> ad.Tensor:
    """Elastic solution from estimated (m_a, m_b, v_a1, v_b1), differentiably."""
    m_a = ad.take_cols(params, [0])
    m_b = ad.take_cols(params, [1])
    v_a = ad.take_cols(params, [2])
    v_b = ad.take_cols(params, [3])
    total = ad.add(m_a, m_b)
    dm = ad.sub(m_a, m_b)
    v_af = ad.div(ad.add(ad.mul(v_a, dm), ad.scale(ad.mul(m_b, v_b), 2.0)), total)
    v_bf = ad.div(ad.add(ad.mul(v_b, ad.scale(dm, -1.0)), ad.scale(ad.mul(m_a, v_a), 2.0)), total)
    return ad.concat([v_af, v_bf])


def decode_params(task: str, params: ad.Tensor, stamp_dt: float = TOSS_STAMP_DT) -> ad.Tensor:
    if task == "toss":
        return decode_toss_params(params, stamp_dt)
    if task == "collision":
        return decode_collision_params(params)
    raise ValueError(f"unknown task {task!r}")
