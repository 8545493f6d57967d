"""Numerical simulator for the multi-horizon error-bound comparison.

Setting: single-pass prediction over a horizon P has approximation error
eps(l) = a * l**p with p > 1 (strictly superadditive), and the latent
dynamics amplify carried-over error by a Lipschitz factor lambda >= 1 per
step. Three bounds are compared:

- direct:     eps(P), one shot over the whole horizon;
- recursive:  eps(1) * (lambda**P - 1) / (lambda - 1), P unit steps;
- scheduled:  the infimum over fusion gates alpha in (0, 1) and ordered
  partitions (l_1..l_K) of P of
      (1 - alpha) * eps(P) + alpha * sum_k lambda**(P - tau_k) * eps(l_k),
  tau_k the cumulative steps. The bracket is affine in alpha, so the
  infimum sits at an endpoint of the open interval and equals
  min(eps(P), best schedule term); it is attained only if both sides tie.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "BoundInstance",
    "BoundResult",
    "bound_direct",
    "bound_recursive",
    "bound_leapts_optimal",
    "compositions",
]

MAX_EXHAUSTIVE_P = 20


@dataclass(frozen=True)
class BoundInstance:
    lam: float
    eps_a: float
    eps_p: float
    P: int

    def __post_init__(self):
        if self.lam < 1.0:
            raise ConfigError(f"lambda must be >= 1, got {self.lam}")
        if self.eps_a <= 0:
            raise ConfigError(f"eps amplitude must be positive, got {self.eps_a}")
        if self.eps_p <= 1.0:
            raise ConfigError(
                f"eps exponent must exceed 1 for strict superadditivity, got {self.eps_p}"
            )
        if self.P < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.P}")

    def eps(self, length) -> float:
        return self.eps_a * float(length) ** self.eps_p


@dataclass
class BoundResult:
    value: float
    best_partition: tuple[int, ...]
    best_alpha_endpoint: float  # 0.0 or 1.0
    attained: bool  # infimum reached inside the open alpha interval


def bound_direct(inst: BoundInstance) -> float:
    return inst.eps(inst.P)


def bound_recursive(inst: BoundInstance) -> float:
    """eps(1) * sum_{i=0}^{P-1} lambda^i (the lambda=1 limit is P*eps(1))."""
    powers = np.power(inst.lam, np.arange(inst.P, dtype=np.float64))
    return inst.eps(1) * float(powers.sum())


def compositions(P: int):
    """All ordered partitions of P into positive integers (2^(P-1) of them)."""
    if P == 1:
        yield (1,)
        return
    for first in range(1, P + 1):
        if first == P:
            yield (P,)
        else:
            for rest in compositions(P - first):
                yield (first, *rest)


def _schedule_term(inst: BoundInstance, partition) -> float:
    total = 0.0
    tau = 0
    for length in partition:
        tau += length
        total += inst.lam ** (inst.P - tau) * inst.eps(length)
    return total


def bound_leapts_optimal(inst: BoundInstance) -> BoundResult:
    """Exhaustive search over all compositions of P (P <= 20)."""
    if inst.P > MAX_EXHAUSTIVE_P:
        raise ConfigError(
            f"exhaustive enumeration limited to P <= {MAX_EXHAUSTIVE_P}, got {inst.P}"
        )
    direct = bound_direct(inst)
    best_sched = np.inf
    best_partition = (inst.P,)
    for part in compositions(inst.P):
        term = _schedule_term(inst, part)
        if term < best_sched:
            best_sched, best_partition = term, part
    if best_sched < direct:
        return BoundResult(best_sched, best_partition, best_alpha_endpoint=1.0, attained=False)
    if best_sched > direct:
        return BoundResult(direct, best_partition, best_alpha_endpoint=0.0, attained=False)
    return BoundResult(direct, best_partition, best_alpha_endpoint=1.0, attained=True)
