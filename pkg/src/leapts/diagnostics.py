"""Scheduling analysis: control/temporal decomposition ratios, volatility
binning, category statistics, and externally imposed scheduling traces
(random partitions, fixed steps, or replay of a recorded trace)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import ScaleAnchors
from .data import WindowBatch
from .errors import DataError
from .forward import predict_batch
from .metrics import MetricReport, mae, mse
from .model import LeapTS
from .traces import ScheduleTrace

__all__ = [
    "decompose_update",
    "VolatilityBin",
    "bin_by_volatility",
    "category_stats",
    "ratio_summary",
    "sample_partition",
    "fixed_partition",
    "partition_to_steps",
    "trace_override",
]

RATIO_EPS = 1e-12


def decompose_update(ctrl_delta, time_delta, eps: float = RATIO_EPS) -> tuple[float, float]:
    """Relative weight of the control-driven vs time-driven state change.

    Magnitudes are summed absolute components, so opposite-signed entries
    cannot cancel.
    """
    c = float(np.abs(np.asarray(ctrl_delta, dtype=np.float64)).sum())
    t = float(np.abs(np.asarray(time_delta, dtype=np.float64)).sum())
    total = c + t + eps
    return c / total, t / total


@dataclass
class VolatilityBin:
    bin_id: int
    members: list[int] = field(default_factory=list)
    mean_ctrl_ratio: float = 0.0
    mean_time_ratio: float = 0.0
    mean_volatility: float = 0.0


def bin_by_volatility(traces: list[ScheduleTrace]) -> list[VolatilityBin]:
    """Quartile bins of traces by ascending look-back volatility; ties
    broken by trace order. Ratios are step-means within each bin."""
    if len(traces) < 4:
        raise DataError(f"bin_by_volatility: need >= 4 traces, got {len(traces)}")
    order = sorted(range(len(traces)), key=lambda i: (traces[i].volatility, i))
    bins = []
    for bin_id, chunk in enumerate(np.array_split(np.asarray(order), 4)):
        members = [int(i) for i in chunk]
        ctrl = [s.ctrl_ratio for i in members for s in traces[i].steps]
        time = [s.time_ratio for i in members for s in traces[i].steps]
        bins.append(
            VolatilityBin(
                bin_id=bin_id,
                members=members,
                mean_ctrl_ratio=float(np.mean(ctrl)) if ctrl else 0.0,
                mean_time_ratio=float(np.mean(time)) if time else 0.0,
                mean_volatility=float(np.mean([traces[i].volatility for i in members])),
            )
        )
    return bins


def category_stats(traces: list[ScheduleTrace]) -> dict:
    """Frequency of selected categories and mean scheduling steps per trace."""
    if not traces:
        raise DataError("category_stats: no traces")
    counts: dict[str, int] = {}
    total_steps = 0
    for tr in traces:
        total_steps += tr.n_steps
        for s in tr.steps:
            counts[s.category_name] = counts.get(s.category_name, 0) + 1
    return {
        "distribution": {k: v / total_steps for k, v in sorted(counts.items())},
        "mean_steps": total_steps / len(traces),
        "n_traces": len(traces),
        "n_steps": total_steps,
    }


def ratio_summary(traces: list[ScheduleTrace]) -> dict:
    """Step-mean decomposition ratios over all steps of all traces."""
    ctrl = [s.ctrl_ratio for tr in traces for s in tr.steps]
    time = [s.time_ratio for tr in traces for s in tr.steps]
    return {
        "ctrl_ratio": float(np.mean(ctrl)) if ctrl else 0.0,
        "time_ratio": float(np.mean(time)) if time else 0.0,
        "n_steps": len(ctrl),
    }


# -- imposed scheduling traces ----------------------------------------------


def sample_partition(P: int, rng: np.random.Generator) -> list[int]:
    """Random ordered partition: draw uniform lengths in [1, remaining]
    until the horizon is covered."""
    out, rem = [], P
    while rem > 0:
        length = int(rng.integers(1, rem + 1))
        out.append(length)
        rem -= length
    return out


def fixed_partition(P: int, step: int) -> list[int]:
    if not 1 <= step <= P:
        raise DataError(f"fixed step must be in 1..{P}, got {step}")
    out = [step] * (P // step)
    if P % step:
        out.append(P % step)
    return out


def partition_to_steps(partition, anchors: ScaleAnchors) -> list[tuple[int, float, int]]:
    """(category, continuous length, integer length) per forced step; the
    category is the one whose interval contains the length."""
    return [(anchors.category_of_length(l), float(l), l) for l in partition]


def _predict_forced(model, inputs, forced_per_window, chunk: int = 512):
    """Forced-schedule predictions; forced sequences are shared by all
    variates of a window."""
    n = model.config.n_variates
    preds = []
    for lo in range(0, inputs.shape[0], chunk):
        hi = min(lo + chunk, inputs.shape[0])
        override = [forced_per_window[w] for w in range(lo, hi) for _ in range(n)]
        p, _ = predict_batch(model, inputs[lo:hi], mode="eval", override=override)
        preds.append(p)
    return np.concatenate(preds, axis=0)


def trace_override(
    model: LeapTS,
    windows: WindowBatch,
    mode: str,
    value,
    rng: np.random.Generator | None = None,
) -> MetricReport:
    """Evaluate the model under externally imposed (category, length)
    schedules.

    mode "fixed": constant step of ``value`` (final step takes the
    remainder). mode "monte_carlo": ``value`` random partitions per
    window, errors averaged across draws. mode "replay": ``value`` is a
    list of recorded ScheduleTrace (one per window-variate); decisions are
    replayed verbatim.
    """
    P = model.config.horizon
    if model.ablation == "no_sched":
        raise DataError("trace_override: the no_sched variant has no scheduling branch")
    b = windows.n_windows

    if mode == "fixed":
        steps = partition_to_steps(fixed_partition(P, int(value)), model.anchors)
        preds = _predict_forced(model, windows.inputs, [steps] * b)
        return MetricReport(mse=mse(preds, windows.targets), mae=mae(preds, windows.targets))

    if mode == "monte_carlo":
        n_draws = int(value)
        if n_draws < 1:
            raise DataError(f"monte_carlo: need >= 1 draw, got {n_draws}")
        if rng is None:
            rng = np.random.default_rng(0)
        mses, maes = [], []
        for _ in range(n_draws):
            forced = [
                partition_to_steps(sample_partition(P, rng), model.anchors) for _ in range(b)
            ]
            preds = _predict_forced(model, windows.inputs, forced)
            mses.append(mse(preds, windows.targets))
            maes.append(mae(preds, windows.targets))
        return MetricReport(mse=float(np.mean(mses)), mae=float(np.mean(maes)))

    if mode == "replay":
        traces: list[ScheduleTrace] = value
        n = model.config.n_variates
        if len(traces) != b * n:
            raise DataError(f"replay: expected {b * n} traces, got {len(traces)}")
        by_key = {(tr.window, tr.variate): tr for tr in traces}
        override = []
        for w in range(b):
            for v in range(n):
                tr = by_key.get((w, v))
                if tr is None:
                    raise DataError(f"replay: missing trace for window {w}, variate {v}")
                override.append([(s.category, s.len_cont, s.len_int) for s in tr.steps])
        preds = _predict_forced_rows(model, windows.inputs, override)
        return MetricReport(mse=mse(preds, windows.targets), mae=mae(preds, windows.targets))

    raise DataError(f"unknown override mode {mode!r}")


def _predict_forced_rows(model, inputs, override_rows, chunk: int = 512):
    n = model.config.n_variates
    preds = []
    for lo in range(0, inputs.shape[0], chunk):
        hi = min(lo + chunk, inputs.shape[0])
        override = override_rows[lo * n : hi * n]
        p, _ = predict_batch(model, inputs[lo:hi], mode="eval", override=override)
        preds.append(p)
    return np.concatenate(preds, axis=0)
