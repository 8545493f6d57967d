"""The scheduling loop: soft-mask segment writing, cursor advancement,
summary feedback, control-signal construction, and cluster-specific
controlled state evolution.

The loop is batched over rows (one row = one variate of one window); all
rows advance in lockstep with finished rows exactly gated out, which is
equivalent to scheduling each variate independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .controller import (
    gumbel_softmax_select,
    length_candidates,
    round_and_clip_rows,
)
from .errors import DataError, ShapeError
from .model import LeapTS
from .traces import ScheduleTrace, TraceStep

__all__ = [
    "soft_mask",
    "write_segment",
    "segment_head",
    "summarize_segment",
    "build_control_signal",
    "increments",
    "evolve_state",
    "ClusterAssignment",
    "series_features",
    "cluster_variates",
    "run_schedule",
    "run_schedule_rows",
]

RATIO_EPS = 1e-12


# -- standalone operations (single decision / single row) -----------------


def soft_mask(length_cont, cursor: int, P: int, gamma: float) -> Tensor:
    """Sigmoid gate over the horizon: exactly 0 before the cursor, then a
    smooth cutoff ``gamma`` wide centered ``length_cont`` past it."""
    if gamma <= 0:
        raise ValueError(f"soft_mask: gamma must be positive, got {gamma}")
    if not 1 <= cursor <= P:
        raise ValueError(f"soft_mask: cursor {cursor} outside 1..{P}")
    length_cont = length_cont if isinstance(length_cont, Tensor) else Tensor([length_cont])
    tau = np.arange(1, P + 1, dtype=np.float64)
    offs = tau - cursor + 0.5
    z = ad.mul(ad.sub(length_cont, offs), 1.0 / gamma)
    indicator = (tau >= cursor).astype(np.float64)
    return ad.mul(ad.sigmoid(z), indicator)


def write_segment(segment: Tensor, mask: Tensor, accum: Tensor) -> tuple[Tensor, Tensor]:
    """Masked write: returns (accum + segment * mask, segment * mask)."""
    if segment.shape != mask.shape or segment.shape != accum.shape:
        raise ShapeError(
            f"write_segment: shapes {segment.shape}, {mask.shape}, {accum.shape} differ"
        )
    masked = ad.mul(segment, mask)
    return ad.add(accum, masked), masked


def segment_head(model: LeapTS, h: Tensor, category: int) -> Tensor:
    """Full-horizon segment from the category-specific head."""
    name = model.anchors.category_names()[category]
    s = model.store
    return ad.add(ad.matmul(h, s[f"seg_head_{name}_w"]), s[f"seg_head_{name}_b"])


def summarize_segment(masked_segment: Tensor, summary_w: Tensor, summary_b: Tensor) -> Tensor:
    """Compress a written segment into a bounded feedback vector."""
    return ad.tanh(ad.add(ad.matmul(masked_segment, summary_w), summary_b))


def build_control_signal(
    rho,
    prev_len_norm,
    prev_soft,
    prev_summary,
    control_w: Tensor,
    control_b: Tensor,
) -> Tensor:
    """tanh projection of [remaining-horizon ratio, previous normalized
    length, previous scale distribution, previous summary]."""
    parts = []
    for p in (rho, prev_len_norm, prev_soft, prev_summary):
        t = p if isinstance(p, Tensor) else Tensor(np.atleast_2d(p))
        parts.append(t)
    ctx = ad.concat(parts)
    return ad.tanh(ad.add(ad.matmul(ctx, control_w), control_b))


def increments(u: Tensor, u_prev: Tensor, prev_len_norm, dt_min: float, dt_max: float):
    """Control increment u - u_prev and the clipped temporal increment."""
    if not 0 < dt_min <= dt_max:
        raise ValueError(f"increments: need 0 < dt_min <= dt_max, got ({dt_min}, {dt_max})")
    du = ad.sub(u, u_prev)
    dtau = np.clip(np.asarray(prev_len_norm, dtype=np.float64), dt_min, dt_max)
    return du, dtau


def evolve_state(
    model: LeapTS,
    h: Tensor,
    u: Tensor,
    du: Tensor,
    dtau,
    cluster: int,
) -> tuple[Tensor, Tensor, Tensor]:
    """One controlled-Euler step for rows of a single cluster.

    Returns (h_next, ctrl_delta, time_delta) with
    h_next = h + ctrl_delta + time_delta.
    """
    d_ctrl, d_time = _field_deltas(model, h, u, du, np.atleast_2d(dtau), cluster)
    return ad.add(h, ad.add(d_ctrl, d_time)), d_ctrl, d_time


def _mlp2(store, prefix, x: Tensor) -> Tensor:
    y = ad.tanh(ad.add(ad.matmul(x, store[f"{prefix}_w0"]), store[f"{prefix}_b0"]))
    return ad.add(ad.matmul(y, store[f"{prefix}_w1"]), store[f"{prefix}_b1"])


def _field_deltas(model, h, u, du, dtau, cluster) -> tuple[Tensor, Tensor]:
    inp = ad.concat([h, u])
    fields = _mlp2(model.store, f"ctrl_field_g{cluster}", inp)
    drift = _mlp2(model.store, f"time_field_g{cluster}", inp)
    return ad.rowwise_matvec(fields, du), ad.mul(drift, dtau)


# -- variate clustering ----------------------------------------------------


@dataclass
class ClusterAssignment:
    assignment: np.ndarray  # variate index -> cluster id
    centroids: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)


def series_features(values: np.ndarray) -> np.ndarray:
    """Per-variate [mean, std, lag-1 autocorrelation], z-scored across variates."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 3:
        raise DataError(f"series_features: need [T x N] with T >= 3, got {values.shape}")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    centered = values - mean
    denom = (centered * centered).sum(axis=0)
    num = (centered[1:] * centered[:-1]).sum(axis=0)
    acf1 = np.divide(num, denom, out=np.zeros_like(num), where=denom > 1e-24)
    feats = np.stack([mean, std, acf1], axis=1)
    spread = feats.std(axis=0)
    loc = feats.mean(axis=0)
    return np.where(spread > 1e-12, (feats - loc) / np.where(spread > 1e-12, spread, 1.0), 0.0)


def cluster_variates(values: np.ndarray, n_clusters: int, seed: int = 0) -> ClusterAssignment:
    """Group variates by L2 k-means over simple series statistics.

    Deterministic given the seed; at most 100 Lloyd iterations. Degenerate
    (all-identical) features put every variate into one cluster.
    """
    feats = series_features(values)
    n = feats.shape[0]
    if not 1 <= n_clusters <= n:
        raise DataError(f"cluster_variates: need 1 <= G <= {n}, got {n_clusters}")
    if n_clusters == 1:
        return ClusterAssignment(np.zeros(n, dtype=np.int64), feats.mean(axis=0, keepdims=True))
    uniq = np.unique(feats, axis=0)
    if len(uniq) == 1:
        return ClusterAssignment(np.zeros(n, dtype=np.int64), uniq)
    k = min(n_clusters, len(uniq))
    rng = np.random.default_rng(seed)
    centroids = uniq[rng.permutation(len(uniq))[:k]].copy()
    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        d2 = ((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignment = d2.argmin(axis=1)
        for g in range(k):  # re-seed empty clusters at the farthest point
            if not np.any(new_assignment == g):
                far = d2.min(axis=1).argmax()
                centroids[g] = feats[far]
                new_assignment[far] = g
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for g in range(k):
            centroids[g] = feats[assignment == g].mean(axis=0)
    return ClusterAssignment(assignment, centroids)


# -- the scheduling loop ----------------------------------------------------


@dataclass
class StepDebug:
    """Per-step internals captured for verification."""

    mask: np.ndarray
    segment: np.ndarray
    len_int: np.ndarray
    cursor_before: np.ndarray
    h_before: np.ndarray
    h_after: np.ndarray
    ctrl_delta: np.ndarray
    time_delta: np.ndarray
    active: np.ndarray


def _ratios(ctrl_mag: float, time_mag: float) -> tuple[float, float]:
    total = ctrl_mag + time_mag + RATIO_EPS
    return ctrl_mag / total, time_mag / total


def run_schedule_rows(
    model: LeapTS,
    h: Tensor,
    row_clusters: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    frozen_noise: list | None = None,
    override: list | None = None,
    trace_meta: tuple | None = None,
    debug: list | None = None,
):
    """Run the scheduling loop for R rows in lockstep.

    ``mode``: "train" (Gumbel noise + hard routing), "eval" (noiseless,
    hard routing), "soft" (noiseless or frozen-noise, fully differentiable
    soft routing; the cursor still advances by rounded integers).

    ``override`` forces decisions: per row, a list of
    (category, len_cont, len_int) tuples consumed one per step.
    ``trace_meta`` = (window_ids, variate_ids, volatilities) enables trace
    collection. ``debug``: a list that receives `StepDebug` records.

    Returns (accumulated forecast rows [R x P], traces or None,
    recorded noise list usable as ``frozen_noise``).
    """
    if mode not in ("train", "eval", "soft"):
        raise ValueError(f"unknown schedule mode {mode!r}")
    cfg = model.config
    store = model.store
    anchors = model.anchors
    P, C = cfg.horizon, anchors.n_categories
    if mode == "train" and C > 1 and rng is None and frozen_noise is None:
        raise ValueError("train mode needs an rng (or frozen noise) for category selection")
    R = h.shape[0]
    cat_names = anchors.category_names()
    heads = [
        (store[f"len_head_{name}_w"], store[f"len_head_{name}_b"]) for name in cat_names
    ]

    accum = Tensor(np.zeros((R, P)))
    cursor = np.ones(R, dtype=np.int64)
    active = np.ones(R, dtype=bool)
    prev_u = Tensor(np.zeros((R, cfg.control_dim)))
    prev_soft = Tensor(np.full((R, C), 1.0 / C))
    prev_summary = Tensor(np.zeros((R, cfg.summary_dim)))
    prev_len_norm = np.zeros((R, 1))
    tau = np.arange(1, P + 1, dtype=np.float64)

    traces = None
    if trace_meta is not None:
        wins, vars_, vols = trace_meta
        traces = [
            ScheduleTrace(window=int(wins[r]), variate=int(vars_[r]), volatility=float(vols[r]))
            for r in range(R)
        ]
    noise_record: list = []

    k = 0
    while np.any(active):
        forced = k >= cfg.max_steps and override is None
        noise = None

        # high level: scale distribution (also feeds the next control signal)
        if C > 1:
            logits = ad.matmul(h, store["category_proj"])
            if mode == "train":
                noise = frozen_noise[k] if frozen_noise is not None else rng.gumbel(
                    size=(R, C)
                )
            elif mode == "soft" and frozen_noise is not None:
                noise = frozen_noise[k]
            soft, hard = gumbel_softmax_select(logits, cfg.gumbel_temp, noise)
        else:
            soft = Tensor(np.ones((R, 1)))
            hard = np.ones((R, 1))
        noise_record.append(noise)

        # low level: advancement length (continuous for the mask, integer
        # for the cursor) and routing vector for the segment heads
        if override is not None:
            cat_idx = np.zeros(R, dtype=np.int64)
            len_cont_vals = np.ones((R, 1))
            len_int = np.zeros(R, dtype=np.int64)
            for r in np.flatnonzero(active):
                seq = override[r]
                if k >= len(seq):
                    raise DataError(f"override for row {r} exhausted at step {k}")
                c, lc, li = seq[k]
                rem = P - cursor[r] + 1
                if not 1 <= li <= rem:
                    raise DataError(f"override length {li} outside 1..{rem} (row {r})")
                cat_idx[r], len_cont_vals[r, 0], len_int[r] = c, lc, li
            routing = np.zeros((R, C))
            routing[np.arange(R), cat_idx] = 1.0
            sel = Tensor(len_cont_vals)
            route_t = Tensor(routing)
        elif forced:
            cat_idx = np.full(R, C - 1, dtype=np.int64)
            rem = np.maximum(P - cursor + 1, 1)
            len_cont_vals = rem.astype(np.float64)[:, None]
            len_int = np.where(active, rem, 0)
            routing = np.zeros((R, C))
            routing[:, C - 1] = 1.0
            sel = Tensor(len_cont_vals)
            route_t = Tensor(routing)
        else:
            lengths = length_candidates(h, anchors, heads)
            if C == 1:
                sel = lengths
                route_t = soft  # constant ones
                cat_idx = np.zeros(R, dtype=np.int64)
            elif mode == "soft":
                route_t = soft
                sel = ad.tsum(ad.mul(lengths, soft), axis=-1, keepdims=True)
                cat_idx = soft.data.argmax(axis=-1)
            else:
                route_t = ad.straight_through(soft, hard)
                sel = ad.tsum(ad.mul(lengths, route_t), axis=-1, keepdims=True)
                cat_idx = hard.argmax(axis=-1)
            len_int = round_and_clip_rows(sel.data[:, 0], cursor, P)
            len_int = np.where(active, len_int, 0)

        # segment for the selected category, soft-masked into the horizon
        seg_cols = []
        for c, name in enumerate(cat_names):
            seg_c = ad.add(ad.matmul(h, store[f"seg_head_{name}_w"]), store[f"seg_head_{name}_b"])
            seg_cols.append(ad.mul(seg_c, route_t[:, c : c + 1]) if C > 1 else seg_c)
        segment = seg_cols[0]
        for extra in seg_cols[1:]:
            segment = ad.add(segment, extra)

        indicator = ((tau[None, :] >= cursor[:, None]) & active[:, None]).astype(np.float64)
        offs = tau[None, :] - cursor[:, None].astype(np.float64) + 0.5
        z = ad.mul(ad.sub(sel, offs), 1.0 / cfg.mask_temp)
        mask = ad.mul(ad.sigmoid(z), indicator)
        masked_seg = ad.mul(segment, mask)
        accum = ad.add(accum, masked_seg)

        # feedback and state evolution (uses the previous step's outcomes)
        summary = ad.tanh(ad.add(ad.matmul(masked_seg, store["summary_w"]), store["summary_b"]))
        rho = ((P - cursor + 1).clip(min=0) / P)[:, None]
        ctx = ad.concat([Tensor(rho), Tensor(prev_len_norm), prev_soft, prev_summary])
        u = ad.tanh(ad.add(ad.matmul(ctx, store["control_w"]), store["control_b"]))
        du = ad.sub(u, prev_u)
        dtau = np.clip(prev_len_norm, cfg.dt_min, cfg.dt_max)

        d_ctrl, d_time = None, None
        for g in range(cfg.n_clusters):
            dc, dt = _field_deltas(model, h, u, du, dtau, g)
            if cfg.n_clusters > 1:
                member = (row_clusters == g).astype(np.float64)[:, None]
                dc, dt = ad.mul(dc, member), ad.mul(dt, member)
            d_ctrl = dc if d_ctrl is None else ad.add(d_ctrl, dc)
            d_time = dt if d_time is None else ad.add(d_time, dt)
        act_col = active.astype(np.float64)[:, None]
        d_ctrl = ad.mul(d_ctrl, act_col)
        d_time = ad.mul(d_time, act_col)
        h_next = ad.add(h, ad.add(d_ctrl, d_time))

        if debug is not None:
            debug.append(
                StepDebug(
                    mask=mask.data.copy(),
                    segment=segment.data.copy(),
                    len_int=len_int.copy(),
                    cursor_before=cursor.copy(),
                    h_before=h.data.copy(),
                    h_after=h_next.data.copy(),
                    ctrl_delta=d_ctrl.data.copy(),
                    time_delta=d_time.data.copy(),
                    active=active.copy(),
                )
            )
        if traces is not None:
            ctrl_mags = np.abs(d_ctrl.data).sum(axis=1)
            time_mags = np.abs(d_time.data).sum(axis=1)
            for r in np.flatnonzero(active):
                rc, rt = _ratios(float(ctrl_mags[r]), float(time_mags[r]))
                traces[r].steps.append(
                    TraceStep(
                        step=k,
                        category=int(cat_idx[r]),
                        category_name=cat_names[int(cat_idx[r])],
                        soft=[float(x) for x in soft.data[r]],
                        len_cont=float(sel.data[r, 0]),
                        len_int=int(len_int[r]),
                        cursor_before=int(cursor[r]),
                        cursor_after=int(cursor[r] + len_int[r]),
                        ctrl_mag=float(ctrl_mags[r]),
                        time_mag=float(time_mags[r]),
                        ctrl_ratio=rc,
                        time_ratio=rt,
                        forced=bool(forced),
                    )
                )

        h = h_next
        prev_u = u
        prev_soft = soft
        prev_summary = summary
        prev_len_norm = (len_int / P)[:, None].astype(np.float64)
        cursor = cursor + len_int
        active = active & (cursor <= P)
        k += 1

    return accum, traces, noise_record


def run_schedule(
    model: LeapTS,
    z,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    collect_traces: bool = True,
    window_id: int = 0,
):
    """Schedule one window's variates; returns ([P x N] rows, traces)."""
    n = model.config.n_variates
    h1 = model.init_state_rows(z.z0)
    meta = None
    if collect_traces:
        meta = (np.full(n, window_id), np.arange(n), np.zeros(n))
    accum, traces, _ = run_schedule_rows(
        model, h1, model.cluster_of_variate, mode=mode, rng=rng, trace_meta=meta
    )
    return ad.transpose(accum), traces
