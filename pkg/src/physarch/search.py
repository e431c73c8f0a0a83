"""Alternating bilevel search over the supernet, plus retraining.

Each epoch takes one full-batch weight step on the weight half of the
training data (architecture logits frozen) and one full-batch architecture
step on the held-out half (network weights frozen), each under a fresh gate
sample. The two optimizers never share parameters, so the freezing contract
holds bitwise. Searched graphs are pruned, then retrained from scratch with
the baseline training loop.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import baselines
from .datasets import (Dataset, TaskContext, fit_context, generate_dataset,
                       generate_test_set, seeded_rng)
from .errors import CollapseError
from .supernet import (Architecture, ArchModel, Supernet, arch_depth,
                       arch_to_json, build_supernet, prune,
                       sample_compare_gates, sample_gates)


@dataclass(frozen=True)
class SearchConfig:
    """Schedule for the alternating search.

    Defaults are tuned on the benchmark cells, not copied from anywhere.
    A warmup (half the budget unless set explicitly) lets every candidate
    train under uniform sampling before ranking starts; the architecture
    step then anneals linearly to zero over the remaining epochs so the
    final graph is the consolidated ranking, not late-stage churn.
    """

    epochs: int = 3000
    weight_lr: float = 3e-3
    alpha_lr: float = 3e-2
    alpha_warmup: int | None = None
    snapshot_every: int = 10
    seed: int = 0
    edge_weights: bool = True
    betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.weight_lr <= 0:
            raise ValueError("weight learning rate must be positive")
        if self.alpha_lr < 0:
            raise ValueError("architecture learning rate must be nonnegative")
        if self.alpha_warmup is not None and not (
                0 <= self.alpha_warmup <= self.epochs):
            raise ValueError("alpha warmup must lie within the epoch budget")
        if self.snapshot_every <= 0:
            raise ValueError("snapshot interval must be positive")

    def warmup_epochs(self) -> int:
        """Epochs with the architecture step disabled (weights only)."""
        if self.alpha_warmup is None:
            return self.epochs // 2
        return self.alpha_warmup


@dataclass
class SearchTrace:
    train_loss: list[float]
    val_loss: list[float]
    snapshots: list[tuple[int, Architecture]]

    @property
    def drift_ratio(self) -> float:
        """Relaxed-gate validation drift across the last quarter of the run:
        mean of the final eighth over the mean of the eighth that opened the
        last quarter. Values well above 1 indicate the collapse mode the
        learning-rate split is meant to prevent."""
        n = len(self.val_loss)
        if n < 8:
            return 1.0
        eighth = max(1, n // 8)
        head = self.val_loss[n - n // 4:n - n // 4 + eighth]
        tail = self.val_loss[n - eighth:]
        denom = float(np.mean(head))
        return float(np.mean(tail)) / denom if denom > 0 else 1.0

    @property
    def healthy(self) -> bool:
        return self.drift_ratio <= 1.25


def split_for_search(data: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic disjoint halves; odd sizes give the weight half the
    extra sample."""
    n = len(data)
    if n < 2:
        raise ValueError("need at least two samples to split")
    order = seeded_rng("physarch-split", data.task, seed).permutation(n)
    n_w = math.ceil(n / 2)
    return data.subset(order[:n_w]), data.subset(order[n_w:])


def _batch_constants(ctx: TaskContext, data: Dataset):
    return (ad.constant(ctx.x_norm.transform(data.x)),
            ad.constant(ctx.y_norm.transform(data.y_phy)),
            ad.constant(ctx.y_norm.transform(data.y)))


def weight_step(net: Supernet, batch, adam: ad.AdamState,
                all_params: list[ad.Tensor], rng) -> float:
    """One sampled full-batch step on the network weights."""
    xn, ypn, yn = batch
    gates = sample_gates(net, rng)
    loss = ad.mse_loss(net.forward_sampled(xn, ypn, gates), yn)
    value = float(loss.value[0])
    ad.zero_grads(all_params)
    ad.backward(loss)
    ad.adam_step(adam)
    return value


def alpha_step(net: Supernet, batch, adam: ad.AdamState | None,
               all_params: list[ad.Tensor], rng) -> float:
    """One sampled full-batch step on the architecture logits.

    Every sampled gate is paired with a silent challenger, so each
    compared pair of logits trades mass by relative first-order merit on
    the same batch; the loss value itself is that of the active sample.
    """
    xn, ypn, yn = batch
    sample = sample_compare_gates(net, rng)
    loss = ad.mse_loss(net.forward_compared(xn, ypn, sample), yn)
    value = float(loss.value[0])
    if adam is not None:
        ad.zero_grads(all_params)
        ad.backward(loss)
        ad.adam_step(adam)
    return value


def search(net: Supernet, d_weight: Dataset, d_alpha: Dataset,
           cfg: SearchConfig) -> tuple[Architecture, SearchTrace]:
    """Alternating optimization; returns the pruned graph and the trace.

    During the warmup epochs (cfg.warmup_epochs()) the architecture step
    runs with a null update, so every candidate trains under uniform sampling
    before ranking begins; comparisons between mature features are far less noisy
    than comparisons at initialization. After warmup the architecture
    learning rate anneals linearly to zero across the remaining epochs, so
    the final graph reflects the consolidated ranking rather than whatever
    late-stage churn happened to be in flight at the last epoch. Non-finite losses abort with a
    CollapseError carrying the epoch and both learning rates. With
    cfg.edge_weights off, per-edge logits stay frozen and pruning ranks
    edges by their best operation probability instead.
    """
    if d_weight.task != net.ctx.task or d_alpha.task != net.ctx.task:
        raise ValueError("datasets and supernet context disagree on the task")
    w_params = net.weight_params()
    a_params = net.alpha_params(include_edge_logits=cfg.edge_weights)
    all_params = net.weight_params() + net.alpha_params(include_edge_logits=True)
    adam_w = ad.AdamState(w_params, lr=cfg.weight_lr, betas=cfg.betas)
    adam_a = (ad.AdamState(a_params, lr=cfg.alpha_lr, betas=cfg.betas)
              if cfg.alpha_lr > 0 else None)
    rng = seeded_rng("physarch-search", net.ctx.task, cfg.seed)
    wb = _batch_constants(net.ctx, d_weight)
    ab = _batch_constants(net.ctx, d_alpha)

    def provenance(epoch):
        return {"task": net.ctx.task, "seed": cfg.seed, "epoch": epoch,
                "epochs": cfg.epochs, "weight_lr": cfg.weight_lr,
                "alpha_lr": cfg.alpha_lr, "alpha_warmup": warmup,
                "edge_weights": cfg.edge_weights}

    train_losses, val_losses = [], []
    snapshots: list[tuple[int, Architecture]] = []
    warmup = cfg.warmup_epochs()
    hot_span = max(cfg.epochs - warmup, 1)
    for epoch in range(cfg.epochs):
        t_loss = weight_step(net, wb, adam_w, all_params, rng)
        if adam_a is not None and epoch >= warmup:
            # Anneal the architecture step linearly to zero so the graph
            # settles instead of churning once rankings have consolidated.
            adam_a.lr = cfg.alpha_lr * (1.0 - (epoch - warmup) / hot_span)
        a_loss = alpha_step(net, ab,
                            adam_a if epoch >= warmup else None,
                            all_params, rng)
        if not (np.isfinite(t_loss) and np.isfinite(a_loss)):
            raise CollapseError("search loss became non-finite", epoch=epoch,
                                weight_lr=cfg.weight_lr, alpha_lr=cfg.alpha_lr)
        xn, ypn, yn = ab
        val = float(ad.mse_loss(net.forward_relaxed(xn, ypn), yn).value[0])
        if not np.isfinite(val):
            raise CollapseError("relaxed validation loss became non-finite",
                                epoch=epoch, weight_lr=cfg.weight_lr,
                                alpha_lr=cfg.alpha_lr)
        train_losses.append(t_loss)
        val_losses.append(val)
        if (epoch + 1) % cfg.snapshot_every == 0 or epoch == cfg.epochs - 1:
            snapshots.append((epoch, prune(net, by_op_prob=not cfg.edge_weights,
                                           provenance=provenance(epoch))))

    arch = prune(net, by_op_prob=not cfg.edge_weights,
                 provenance=provenance(cfg.epochs - 1))
    return arch, SearchTrace(train_loss=train_losses, val_loss=val_losses,
                             snapshots=snapshots)


def retrain(arch: Architecture, train_data: Dataset, ctx: TaskContext,
            cfg: baselines.TrainConfig, seed: int | None = None) -> baselines.TrainResult:
    """Fresh weights for the pruned graph, trained like any baseline."""
    model = ArchModel(arch, ctx, seed=cfg.seed if seed is None else seed)
    return baselines.train(model, train_data, cfg)


def save_trace(trace: SearchTrace, out_dir) -> Path:
    """CSV of per-epoch losses plus architecture JSON snapshots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for epoch, arch in trace.snapshots:
        name = f"arch_epoch{epoch:04d}.json"
        (out / name).write_text(arch_to_json(arch))
        paths[epoch] = name
    rows = ["epoch,train_loss,val_loss,snapshot_path"]
    for i, (t, v) in enumerate(zip(trace.train_loss, trace.val_loss)):
        rows.append(f"{i},{t:.17g},{v:.17g},{paths.get(i, '')}")
    csv_path = out / "trace.csv"
    csv_path.write_text("\n".join(rows) + "\n")
    return csv_path


@dataclass
class EdgeWeightAblation:
    task: str
    level: str
    n: int
    seed: int
    error_with: float
    error_without: float
    depth_with: int
    depth_without: int
    arch_with: Architecture
    arch_without: Architecture


def ablate_edge_weights(task: str, level: str, n: int, seed: int,
                        search_cfg: SearchConfig | None = None,
                        train_cfg: baselines.TrainConfig | None = None,
                        test_data: Dataset | None = None) -> EdgeWeightAblation:
    """The same search run twice, with edge logits enabled then disabled;
    reports both test errors and both largest graph depths."""
    base_search = search_cfg or SearchConfig()
    base_train = train_cfg or baselines.TrainConfig()
    train_data = generate_dataset(task, level, n=n, seed=seed)
    ctx = fit_context(train_data)
    test = test_data if test_data is not None else generate_test_set(task, level)
    results = {}
    for mode in (True, False):
        cfg = dataclasses.replace(base_search, seed=seed, edge_weights=mode)
        net = build_supernet(ctx, seed)
        d_w, d_a = split_for_search(train_data, seed)
        arch, _ = search(net, d_w, d_a, cfg)
        tcfg = dataclasses.replace(base_train, seed=seed)
        trained = retrain(arch, train_data, ctx, tcfg)
        results[mode] = (baselines.evaluate(trained.model, test), arch)
    return EdgeWeightAblation(
        task=task, level=level, n=n, seed=seed,
        error_with=results[True][0], error_without=results[False][0],
        depth_with=arch_depth(results[True][1]),
        depth_without=arch_depth(results[False][1]),
        arch_with=results[True][1], arch_without=results[False][1])
