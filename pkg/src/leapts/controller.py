"""Hierarchical scheduling decisions: scale anchors, category selection,
and advancement-length prediction.

Categories are indexed 0=short, 1=mid, 2=long; a degenerate single-level
mode (one category spanning [1, P]) applies when the horizon is too short
relative to the look-back to support three scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

__all__ = [
    "CATEGORY_NAMES",
    "ScaleAnchors",
    "ScaleDecision",
    "scale_anchors",
    "gumbel_softmax_select",
    "high_level_select",
    "low_level_length",
    "round_and_clip_length",
]

CATEGORY_NAMES = ("short", "mid", "long")
SINGLE_CATEGORY_NAME = "single"


@dataclass(frozen=True)
class ScaleAnchors:
    """Admissible advancement-length interval per category."""

    mins: tuple[int, ...]
    maxs: tuple[int, ...]
    degenerate: bool

    @property
    def n_categories(self) -> int:
        return len(self.mins)

    def category_names(self) -> tuple[str, ...]:
        if self.degenerate:
            return (SINGLE_CATEGORY_NAME,)
        return CATEGORY_NAMES

    def category_of_length(self, length: int) -> int:
        """Index of the category whose interval contains ``length``."""
        for c in range(self.n_categories):
            if self.mins[c] <= length <= self.maxs[c]:
                return c
        raise ValueError(f"length {length} outside all intervals {self}")


def scale_anchors(L: int, P: int) -> ScaleAnchors:
    """Derive the short/mid/long length intervals from (look-back, horizon).

    Upper anchors scale with the look-back (L/4, L/2, P); lower bounds
    stack the categories without overlap. When the horizon is too short
    (P <= floor(L/4) + 1) a single interval [1, P] is used instead. The
    long category's lower bound is capped at mid_max + 1 so the three
    intervals always cover {1..P} with no gaps.
    """
    if L < 1 or P < 1:
        raise ConfigError(f"scale_anchors: need L >= 1 and P >= 1, got ({L}, {P})")
    if P <= L // 4 + 1:
        return ScaleAnchors(mins=(1,), maxs=(P,), degenerate=True)
    short_max = max(1, min(L // 4, P - 1))
    mid_max = max(short_max + 1, min(L // 2, P - 1))
    long_max = P
    short_min = 1
    mid_min = max(2, min(mid_max, short_max + 1))
    long_min = max(3, min(long_max, max(mid_max + 1, long_max // 2)))
    long_min = min(long_min, mid_max + 1)  # gap-free coverage of {1..P}
    mins = (short_min, mid_min, long_min)
    maxs = (short_max, mid_max, long_max)
    for c in range(3):
        if not (1 <= mins[c] <= maxs[c] <= P):
            raise ConfigError(f"scale_anchors: invalid interval for ({L}, {P}): {mins} {maxs}")
    return ScaleAnchors(mins=mins, maxs=maxs, degenerate=False)


@dataclass
class ScaleDecision:
    """One step's scale choice and continuous/integer lengths (single row)."""

    soft: np.ndarray
    hard: np.ndarray
    chosen: int
    lengths: np.ndarray
    executed_len_cont: float
    executed_len_int: int | None = None


def _one_hot_rows(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((indices.size, width))
    out[np.arange(indices.size), indices] = 1.0
    return out


def gumbel_softmax_select(
    logits: Tensor,
    tau: float,
    noise: np.ndarray | None,
) -> tuple[Tensor, np.ndarray]:
    """Soft distribution and hard one-hot from category logits [R x C].

    ``noise`` is a Gumbel(0,1) sample of the same shape, or None for
    noiseless (evaluation) selection. Hard selection is argmax of the
    soft distribution, lowest index winning ties.
    """
    if tau <= 0:
        raise ConfigError(f"gumbel temperature must be positive, got {tau}")
    scores = logits if noise is None else ad.add(logits, noise)
    soft = ad.softmax(ad.mul(scores, 1.0 / tau))
    hard = _one_hot_rows(soft.data.argmax(axis=-1), soft.shape[-1])
    return soft, hard


def high_level_select(
    h: Tensor,
    category_proj: Tensor,
    tau: float,
    mode: str,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray, np.ndarray | None]:
    """Scale-selection distribution for controller states ``h`` [R x hidden].

    In train mode fresh Gumbel noise perturbs the logits (pass ``rng``),
    unless ``noise`` replays a recorded draw; eval mode is noiseless.
    Returns (soft distribution, hard one-hot, noise used).
    """
    logits = ad.matmul(h, category_proj)
    if mode == "train" and noise is None:
        if rng is None:
            raise ValueError("train-mode selection needs an rng for Gumbel noise")
        noise = rng.gumbel(size=logits.shape)
    elif mode not in ("train", "eval", "soft"):
        raise ValueError(f"unknown mode {mode!r}")
    soft, hard = gumbel_softmax_select(logits, tau, noise)
    return soft, hard, noise


def length_candidates(h: Tensor, anchors: ScaleAnchors, length_heads) -> Tensor:
    """Continuous length per category, [R x C]; sigmoid-mapped into each interval."""
    cols = []
    for c in range(anchors.n_categories):
        w, b = length_heads[c]
        raw = ad.add(ad.matmul(h, w), b)
        lo, hi = float(anchors.mins[c]), float(anchors.maxs[c])
        cols.append(ad.add(ad.mul(ad.sigmoid(raw), hi - lo), lo))
    return cols[0] if len(cols) == 1 else ad.concat(cols)


def low_level_length(
    h: Tensor,
    anchors: ScaleAnchors,
    soft: Tensor,
    hard: np.ndarray,
    length_heads,
) -> ScaleDecision:
    """Single-row decision combining the hard scale choice with its length."""
    lengths = length_candidates(h, anchors, length_heads)
    if anchors.degenerate:
        sel = lengths
        chosen = 0
    else:
        routed = ad.straight_through(soft, hard)
        sel = ad.tsum(ad.mul(lengths, routed), axis=-1, keepdims=True)
        chosen = int(hard.reshape(-1).argmax())
    return ScaleDecision(
        soft=soft.data.reshape(-1).copy(),
        hard=np.asarray(hard).reshape(-1).copy(),
        chosen=chosen,
        lengths=lengths.data.reshape(-1).copy(),
        executed_len_cont=float(sel.data.reshape(-1)[0]),
    )


def round_and_clip_length(length_cont: float, cursor: int, P: int) -> int:
    """Integer execution length: clip to the remaining horizon, then round.

    Rounding is half-up, so the result stays within [1, P - cursor + 1].
    Gradients never pass through this (cursor arithmetic only); the soft
    mask keeps the continuous length differentiable.
    """
    if not 1 <= cursor <= P:
        raise ValueError(f"cursor {cursor} outside horizon 1..{P}")
    clipped = min(max(float(length_cont), 1.0), float(P - cursor + 1))
    return int(np.floor(clipped + 0.5))


def round_and_clip_rows(length_cont: np.ndarray, cursor: np.ndarray, P: int) -> np.ndarray:
    """Vectorized ``round_and_clip_length`` over rows (cursor may be P+1 for
    finished rows, which yields 0)."""
    rem = np.maximum(P - cursor + 1, 0)
    clipped = np.clip(length_cont, 1.0, np.maximum(rem, 1.0))
    out = np.floor(clipped + 0.5).astype(np.int64)
    return np.where(rem > 0, np.minimum(out, rem), 0)
