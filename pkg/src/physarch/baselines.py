"""Five hand-designed reference models sharing one training loop.

Every model maps standardized features (and, where the design uses it, the
standardized physics-prior estimate) to standardized labels. De-normalization
happens only where physical units matter: the kinematic penalty, the embedded
model's closed-form stage, and evaluation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import physics
from .datasets import Dataset, TaskContext, context_from_dict, context_to_dict, seeded_rng
from .errors import CollapseError, ShapeError

MODEL_KINDS = ("naive", "fusion", "residual", "regularized", "embedded")
HIDDEN_WIDTH = 128
N_PHYSICAL_PARAMS = physics.N_PHYSICAL_PARAMS


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    task: str
    hidden: int = HIDDEN_WIDTH
    reg_weight: float = 0.1  # used by the regularized kind only

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r} (known: {', '.join(MODEL_KINDS)})")
        if self.task not in ("toss", "collision"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.hidden <= 0:
            raise ValueError("hidden width must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    patience: int | None = None  # early stop on stalled validation loss

    def __post_init__(self):
        if self.epochs <= 0 or self.lr <= 0:
            raise ValueError("epochs and lr must be positive")
        if not (0 < self.betas[0] < 1 and 0 < self.betas[1] < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValueError("batch size must be positive")
        if self.patience is not None and self.patience <= 0:
            raise ValueError("patience must be positive")


class _MLP3:
    """Three affine layers with ReLU between them."""

    def __init__(self, rng, in_dim, hidden, out_dim):
        self.w1, self.b1 = ad.affine_params(rng, in_dim, hidden)
        self.w2, self.b2 = ad.affine_params(rng, hidden, hidden)
        self.w3, self.b3 = ad.affine_params(rng, hidden, out_dim)

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def __call__(self, x):
        h = ad.relu(ad.affine(x, self.w1, self.b1))
        h = ad.relu(ad.affine(h, self.w2, self.b2))
        return ad.affine(h, self.w3, self.b3)


class _Branch2:
    """Two affine+ReLU layers; a feature extractor for one input stream."""

    def __init__(self, rng, in_dim, hidden):
        self.w1, self.b1 = ad.affine_params(rng, in_dim, hidden)
        self.w2, self.b2 = ad.affine_params(rng, hidden, hidden)

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x):
        h = ad.relu(ad.affine(x, self.w1, self.b1))
        return ad.relu(ad.affine(h, self.w2, self.b2))


class Model:
    """Base: owns weights, a task context, and a normalized-space forward."""

    def __init__(self, spec: ModelSpec, ctx: TaskContext):
        if spec.task != ctx.task:
            raise ShapeError(f"spec task {spec.task!r} != context task {ctx.task!r}")
        self.spec = spec
        self.ctx = ctx
        self.params: list[ad.Tensor] = []
        # constant de/re-normalization stages, shared by penalty and decoding
        std, mean = ctx.y_norm.std, ctx.y_norm.mean
        self._denorm_w = ad.constant(np.diag(std))
        self._denorm_b = ad.constant(mean)
        self._norm_w = ad.constant(np.diag(1.0 / std))
        self._norm_b = ad.constant(-mean / std)

    def forward(self, xn: ad.Tensor, ypn: ad.Tensor) -> ad.Tensor:
        raise NotImplementedError

    def denormalize(self, pred_n: ad.Tensor) -> ad.Tensor:
        return ad.affine(pred_n, self._denorm_w, self._denorm_b)

    def normalize(self, pred_raw: ad.Tensor) -> ad.Tensor:
        return ad.affine(pred_raw, self._norm_w, self._norm_b)

    def predict(self, x_raw: np.ndarray, y_phy_raw: np.ndarray) -> np.ndarray:
        xn = ad.constant(self.ctx.x_norm.transform(x_raw))
        ypn = ad.constant(self.ctx.y_norm.transform(y_phy_raw))
        return self.ctx.y_norm.inverse(self.forward(xn, ypn).value)


class NaiveModel(Model):
    def __init__(self, spec, ctx, rng):
        super().__init__(spec, ctx)
        in_dim, out_dim = ctx.dims
        self.body = _MLP3(rng, in_dim, spec.hidden, out_dim)
        self.params = self.body.params

    def forward(self, xn, ypn):
        return self.body(xn)


class FusionModel(Model):
    def __init__(self, spec, ctx, rng):
        super().__init__(spec, ctx)
        in_dim, out_dim = ctx.dims
        self.branch_x = _Branch2(rng, in_dim, spec.hidden)
        self.branch_p = _Branch2(rng, out_dim, spec.hidden)
        self.w_out, self.b_out = ad.affine_params(rng, 2 * spec.hidden, out_dim)
        self.params = self.branch_x.params + self.branch_p.params + [self.w_out, self.b_out]

    def forward(self, xn, ypn):
        feats = ad.concat([self.branch_x(xn), self.branch_p(ypn)])
        return ad.affine(feats, self.w_out, self.b_out)


class ResidualModel(Model):
    def __init__(self, spec, ctx, rng):
        super().__init__(spec, ctx)
        in_dim, out_dim = ctx.dims
        self.body = _MLP3(rng, in_dim + out_dim, spec.hidden, out_dim)
        self.params = self.body.params

    def forward(self, xn, ypn):
        return ad.add(ypn, self.body(ad.concat([xn, ypn])))


class RegularizedModel(NaiveModel):
    """Same graph as the naive model; the extra term lives in the loss."""


class EmbeddedModel(Model):
    def __init__(self, spec, ctx, rng):
        super().__init__(spec, ctx)
        in_dim, _ = ctx.dims
        self.trunk = _MLP3(rng, in_dim, spec.hidden, N_PHYSICAL_PARAMS)
        self.params = self.trunk.params

    def forward(self, xn, ypn):
        offsets = self.trunk(xn)
        n = offsets.value.shape[0] if offsets.value.ndim == 2 else None
        anchor = (np.tile(self.ctx.param_anchor, (n, 1))
                  if n is not None else self.ctx.param_anchor)
        params = ad.add(offsets, ad.constant(anchor))
        decoded = physics.decode_params(self.spec.task, params, self.ctx.stamp_dt)
        return self.normalize(decoded)


_BUILDERS = {"naive": NaiveModel, "fusion": FusionModel, "residual": ResidualModel,
             "regularized": RegularizedModel, "embedded": EmbeddedModel}


def build_model(spec: ModelSpec, ctx: TaskContext, seed: int) -> Model:
    """Seeded construction. The weight stream depends on the task and seed
    only, so kinds sharing a body (naive/regularized) start identically."""
    rng = seeded_rng("physarch-weights", spec.task, seed)
    return _BUILDERS[spec.kind](spec, ctx, rng)


def parameter_count(model: Model) -> int:
    return sum(p.value.size for p in model.params)


# --- kinematic penalty ---

_TOSS_X_COLS = list(range(0, physics.TOSS_N_PREDICTED * 2, 2))


def reg_penalty(task: str, pred_raw: ad.Tensor, x_raw: np.ndarray) -> ad.Tensor:
    """Mean per-sample hinge on kinematically impossible predictions.

    toss: horizontal motion must not reverse the observed travel direction;
    collision: predicted kinetic energy must not exceed the launch energy.
    Predictions must be in physical units.
    """
    x_raw = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
    n = x_raw.shape[0]
    if task == "toss":
        xc = ad.take_cols(pred_raw, _TOSS_X_COLS)
        later = ad.take_cols(xc, list(range(1, physics.TOSS_N_PREDICTED)))
        earlier = ad.take_cols(xc, list(range(physics.TOSS_N_PREDICTED - 1)))
        deltas = ad.sub(later, earlier)
        s = np.sign(x_raw[:, 4] - x_raw[:, 0])  # observed travel direction
        flip = ad.constant(np.tile(-s[:, None], (1, physics.TOSS_N_PREDICTED - 1)))
        per_gap = ad.relu(ad.mul(deltas, flip))
        return ad.scale(ad.total(per_gap), 1.0 / n)
    if task == "collision":
        half_m = ad.constant(0.5 * x_raw[:, 4:6])
        ke_terms = ad.mul(ad.mul(pred_raw, pred_raw), half_m)
        ke_pred = ad.add(ad.take_cols(ke_terms, [0]), ad.take_cols(ke_terms, [1]))
        ke_init = 0.5 * (x_raw[:, 4] * x_raw[:, 0] ** 2 + x_raw[:, 5] * x_raw[:, 2] ** 2)
        slack = ad.sub(ke_pred, ad.constant(ke_init[:, None]))
        return ad.scale(ad.total(ad.relu(slack)), 1.0 / n)
    raise ValueError(f"unknown task {task!r}")


# --- training loop ---

@dataclass
class TrainResult:
    model: Model
    losses: list[float]
    val_losses: list[float] | None
    best_epoch: int


def _snapshot(params):
    return [p.value.copy() for p in params]


def _restore(params, values):
    for p, v in zip(params, values):
        p.value = v.copy()


def train(model: Model, train_data: Dataset, cfg: TrainConfig,
          val_data: Dataset | None = None) -> TrainResult:
    """Adam on MSE in normalized space (+ weighted penalty for the
    regularized kind). Full batch unless cfg.batch_size is set. With a
    validation split, the best-validation weights are restored at the end."""
    if len(train_data) == 0:
        raise ValueError("empty training set")
    ctx = model.ctx
    xn_all = ctx.x_norm.transform(train_data.x)
    yn_all = ctx.y_norm.transform(train_data.y)
    ypn_all = ctx.y_norm.transform(train_data.y_phy)
    x_raw_all = train_data.x

    use_penalty = model.spec.kind == "regularized" and model.spec.reg_weight != 0.0
    adam = ad.AdamState(model.params, lr=cfg.lr, betas=cfg.betas)
    n = len(train_data)
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    order_rng = seeded_rng("physarch-batches", model.spec.task, cfg.seed)

    if val_data is not None:
        xv = ad.constant(ctx.x_norm.transform(val_data.x))
        ypv = ad.constant(ctx.y_norm.transform(val_data.y_phy))
        yv = ad.constant(ctx.y_norm.transform(val_data.y))

    def batch_loss(idx):
        xn = ad.constant(xn_all[idx])
        yn = ad.constant(yn_all[idx])
        ypn = ad.constant(ypn_all[idx])
        pred = model.forward(xn, ypn)
        loss = ad.mse_loss(pred, yn)
        if use_penalty:
            pen = reg_penalty(model.spec.task, model.denormalize(pred), x_raw_all[idx])
            loss = ad.add(loss, ad.scale(pen, model.spec.reg_weight))
        return loss

    losses: list[float] = []
    val_losses: list[float] | None = [] if val_data is not None else None
    best_epoch, best_val, best_weights = -1, np.inf, None
    stale = 0

    for epoch in range(cfg.epochs):
        if batch == n:
            idx_batches = [slice(None)]
        else:
            order = order_rng.permutation(n)
            idx_batches = [order[i:i + batch] for i in range(0, n, batch)]
        epoch_losses = []
        for idx in idx_batches:
            loss = batch_loss(idx)
            value = float(loss.value[0])
            if not np.isfinite(value):
                raise CollapseError("training loss became non-finite",
                                    epoch=epoch, weight_lr=cfg.lr)
            ad.zero_grads(model.params)
            ad.backward(loss)
            ad.adam_step(adam)
            epoch_losses.append(value)
        losses.append(float(np.mean(epoch_losses)))

        if val_data is not None:
            val = float(ad.mse_loss(model.forward(xv, ypv), yv).value[0])
            val_losses.append(val)
            if val < best_val:
                best_val, best_epoch, stale = val, epoch, 0
                best_weights = _snapshot(model.params)
            else:
                stale += 1
                if cfg.patience is not None and stale >= cfg.patience:
                    break

    if best_weights is not None:
        _restore(model.params, best_weights)
    else:
        best_epoch = len(losses) - 1
    return TrainResult(model=model, losses=losses, val_losses=val_losses,
                       best_epoch=best_epoch)


def evaluate(model: Model, test_data: Dataset) -> float:
    """Average per-point Euclidean distance in physical units."""
    if len(test_data) == 0:
        raise ValueError("empty test set")
    pred = model.predict(test_data.x, test_data.y_phy)
    return physics.metric_avg_euclidean(pred.reshape(-1), test_data.y.reshape(-1))


# --- serialization ---

def save_trained(out_dir, result: TrainResult, cfg: TrainConfig) -> None:
    """JSON manifest + flat float64 weight blob + loss-curve CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = result.model
    manifest = {
        "spec": asdict(model.spec),
        "cfg": {**asdict(cfg), "betas": list(cfg.betas)},
        "context": context_to_dict(model.ctx),
        "shapes": [list(p.value.shape) for p in model.params],
        "best_epoch": result.best_epoch,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    blob = np.concatenate([p.value.reshape(-1) for p in model.params])
    (out / "weights.bin").write_bytes(blob.astype("<f8").tobytes())
    lines = ["epoch,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(result.losses)]
    (out / "losses.csv").write_text("\n".join(lines) + "\n")


def load_trained(in_dir) -> tuple[Model, TrainConfig]:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    spec = ModelSpec(**manifest["spec"])
    cfg_d = dict(manifest["cfg"])
    cfg_d["betas"] = tuple(cfg_d["betas"])
    cfg = TrainConfig(**cfg_d)
    ctx = context_from_dict(manifest["context"])
    model = build_model(spec, ctx, cfg.seed)
    blob = np.frombuffer((src / "weights.bin").read_bytes(), dtype="<f8")
    offset = 0
    for p, shape in zip(model.params, manifest["shapes"]):
        size = int(np.prod(shape)) if shape else 1
        p.value = blob[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != blob.size:
        raise ShapeError(f"weight blob holds {blob.size} values, model needs {offset}")
    return model, cfg
