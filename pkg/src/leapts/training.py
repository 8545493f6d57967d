"""Training loop: batched Huber-loss optimization with Adam, validation
early stopping, divergence recovery, and the ablation variants."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .data import Dataset, WindowBatch, make_windows
from .engine import cluster_variates
from .errors import ConfigError, NumericError
from .forward import forward_loss, predict_batch
from .metrics import MetricReport
from .model import ABLATIONS, LeapTS
from .optim import adam_step

__all__ = ["TrainConfig", "TrainReport", "train", "ablate", "evaluate", "evaluate_full"]


@dataclass
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 5
    huber_delta: float = 1.0
    seed: int = 0
    ablation: str = "none"
    normalize: bool = True  # z-score the dataset by train-split statistics
    stride: int = 1
    gumbel_tau_end: float | None = None  # linear anneal target for the Gumbel temperature
    max_batches_per_epoch: int | None = None

    def __post_init__(self):
        if not 0 < self.lr:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.huber_delta <= 0:
            raise ConfigError(f"huber_delta must be positive, got {self.huber_delta}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    test: MetricReport | None = None
    wall_clock_s: float = 0.0
    diverged: bool = False
    early_stopped: bool = False

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "test": None if self.test is None else self.test.to_dict(),
            "wall_clock_s": self.wall_clock_s,
            "diverged": self.diverged,
            "early_stopped": self.early_stopped,
        }


def ablate(model: LeapTS, flag: str) -> LeapTS:
    """Variant of ``model`` with the scheduling machinery reduced.

    Parameters present in both architectures are copied from ``model``,
    so ablating a trained model keeps its trained shared weights: the
    ``no_sched`` variant's forward equals the source model's coarse
    branch exactly (the fusion gate is structurally forced to zero).
    Parameters the variant adds (e.g. the single-level heads of
    ``no_high_level``) keep their seed initialization.
    """
    variant = LeapTS(model.config, ablation=flag)
    for name, t in variant.store.params.items():
        if name in model.store:
            t.data = model.store[name].data.copy()
    variant.cluster_of_variate = model.cluster_of_variate.copy()
    variant.data_norm = model.data_norm
    return variant


def _normalized_dataset(dataset: Dataset):
    lo, hi = dataset.split_bounds("train")
    seg = dataset.values[lo:hi]
    mu = seg.mean(axis=0)
    sd = seg.std(axis=0)
    sd = np.where(sd > 1e-8, sd, 1.0)
    ds = Dataset(
        values=(dataset.values - mu) / sd,
        name=dataset.name,
        frequency=dataset.frequency,
        split_fractions=dataset.split_fractions,
        columns=list(dataset.columns),
    )
    return ds, (mu, sd)


def _epoch_loss(model, windows: WindowBatch, delta: float, batch: int = 256) -> float:
    total, count = 0.0, 0
    for lo in range(0, windows.n_windows, batch):
        hi = min(lo + batch, windows.n_windows)
        loss, _ = forward_loss(
            model, windows.inputs[lo:hi], windows.targets[lo:hi], mode="eval", delta=delta
        )
        total += loss.item() * (hi - lo)
        count += hi - lo
    return total / count


def evaluate(
    model: LeapTS,
    windows: WindowBatch,
    batch: int = 256,
    collect_traces: bool = False,
) -> tuple[MetricReport, list | None]:
    """Pooled MSE/MAE (plus per-horizon curves) over a window batch."""
    sq_sum = np.zeros(model.config.horizon)
    abs_sum = np.zeros(model.config.horizon)
    count = 0
    traces = [] if collect_traces else None
    n = model.config.n_variates
    for lo in range(0, windows.n_windows, batch):
        hi = min(lo + batch, windows.n_windows)
        inputs = windows.inputs[lo:hi]
        meta = None
        if collect_traces:
            vols = np.diff(inputs, axis=1).std(axis=1)  # [b x N]
            wins = np.repeat(np.arange(lo, hi), n)
            variates = np.tile(np.arange(n), hi - lo)
            meta = (wins, variates, vols.reshape(-1))
        preds, tr = predict_batch(model, inputs, mode="eval", trace_meta=meta)
        err = preds - windows.targets[lo:hi]
        sq_sum += (err**2).mean(axis=(0, 2)) * (hi - lo)
        abs_sum += np.abs(err).mean(axis=(0, 2)) * (hi - lo)
        count += hi - lo
        if collect_traces:
            traces.extend(tr)
    per_mse = sq_sum / count
    per_mae = abs_sum / count
    report = MetricReport(
        mse=float(per_mse.mean()),
        mae=float(per_mae.mean()),
        per_horizon_mse=per_mse.tolist(),
        per_horizon_mae=per_mae.tolist(),
    )
    return report, traces


def evaluate_full(
    model: LeapTS,
    windows: WindowBatch,
    s: int = 1,
    smape_ref: float | None = None,
    mase_ref: float | None = None,
    batch: int = 256,
) -> MetricReport:
    """Window-averaged full metric report (SMAPE/MAPE/MASE and, given
    reference values, OWA). Raises if any window has a degenerate MASE
    scaling denominator; use ``evaluate`` for plain MSE/MAE."""
    from .metrics import metrics as full_metrics

    preds = []
    for lo in range(0, windows.n_windows, batch):
        hi = min(lo + batch, windows.n_windows)
        p, _ = predict_batch(model, windows.inputs[lo:hi], mode="eval")
        preds.append(p)
    preds = np.concatenate(preds, axis=0)
    reports = [
        full_metrics(
            preds[i], windows.targets[i], windows.inputs[i], s=s,
            smape_ref=smape_ref, mase_ref=mase_ref,
        )
        for i in range(windows.n_windows)
    ]
    fields = ["mse", "mae", "smape", "mape", "mase"]
    agg = {f: float(np.mean([getattr(r, f) for r in reports])) for f in fields}
    out = MetricReport(
        **agg,
        per_horizon_mse=np.mean([r.per_horizon_mse for r in reports], axis=0).tolist(),
        per_horizon_mae=np.mean([r.per_horizon_mae for r in reports], axis=0).tolist(),
    )
    if smape_ref is not None and mase_ref is not None:
        out.owa = 0.5 * (out.smape / smape_ref + out.mase / mase_ref)
    return out


def train(
    model: LeapTS,
    dataset: Dataset,
    tcfg: TrainConfig,
    log_path=None,
) -> tuple[LeapTS, TrainReport]:
    """Optimize the model on the dataset's train split, early-stopping on
    validation Huber loss; the best-epoch parameters are restored before
    the final test evaluation. Deterministic given the seed."""
    t0 = time.monotonic()
    cfg = model.config
    shuffle_rng, gumbel_rng = np.random.default_rng(tcfg.seed).spawn(2)

    if tcfg.normalize:
        dataset, model.data_norm = _normalized_dataset(dataset)
    train_w = make_windows(dataset, cfg.look_back, cfg.horizon, "train", tcfg.stride)
    val_w = make_windows(dataset, cfg.look_back, cfg.horizon, "val", tcfg.stride)
    test_w = make_windows(dataset, cfg.look_back, cfg.horizon, "test", tcfg.stride)

    if cfg.n_clusters > 1 and model.ablation != "no_sched":
        lo, hi = dataset.split_bounds("train")
        assignment = cluster_variates(dataset.values[lo:hi], cfg.n_clusters, seed=cfg.seed)
        model.cluster_of_variate = assignment.assignment

    report = TrainReport()
    best_state = model.store.state_dict()
    bad_epochs = 0
    tau_start = cfg.gumbel_temp
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    try:
        for epoch in range(tcfg.max_epochs):
            if tcfg.gumbel_tau_end is not None and tcfg.max_epochs > 1:
                frac = epoch / (tcfg.max_epochs - 1)
                cfg.gumbel_temp = tau_start + (tcfg.gumbel_tau_end - tau_start) * frac
            order = shuffle_rng.permutation(train_w.n_windows)
            if tcfg.max_batches_per_epoch is not None:
                order = order[: tcfg.max_batches_per_epoch * tcfg.batch_size]
            losses = []
            try:
                for lo in range(0, len(order), tcfg.batch_size):
                    idx = order[lo : lo + tcfg.batch_size]
                    with Tape() as tape:
                        loss, _ = forward_loss(
                            model,
                            train_w.inputs[idx],
                            train_w.targets[idx],
                            mode="train",
                            rng=gumbel_rng,
                            delta=tcfg.huber_delta,
                        )
                        model.store.zero_grads()
                        tape.backward(loss)
                    adam_step(model.store, model.store.grads(), tcfg.lr)
                    losses.append(loss.item())
                val_loss = _epoch_loss(model, val_w, tcfg.huber_delta)
            except NumericError:
                report.diverged = True
                break
            if not np.isfinite(val_loss):
                report.diverged = True
                break

            entry = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_loss": val_loss,
                "lr": tcfg.lr,
                "gumbel_temp": cfg.gumbel_temp,
                "timestamp": time.time(),
            }
            report.epochs.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()

            if val_loss < report.best_val_loss:
                report.best_val_loss = val_loss
                report.best_epoch = epoch
                best_state = model.store.state_dict()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= tcfg.patience:
                    report.early_stopped = True
                    break
    finally:
        if log_fh:
            log_fh.close()
        cfg.gumbel_temp = tau_start

    model.store.load_state_dict(best_state)
    report.test, _ = evaluate(model, test_w)
    report.wall_clock_s = time.monotonic() - t0
    return model, report
