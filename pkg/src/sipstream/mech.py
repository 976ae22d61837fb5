"""Release policies and the privacy-budget accountant.

The conditional randomized response (CRR) policy mixes the identity channel
with belief sampling::

    a(y|x) = gamma * [x == y] + (1 - gamma) * belief(y)

With ``gamma = 1 - e^-eps`` this is the closed-form optimum for the
instantaneous tradeoff: off-diagonal mass ``belief(y)/e^eps`` and diagonal
``1 - (1 - belief(x))/e^eps``.  That choice keeps every posterior/belief
ratio inside ``[e^-eps, e^eps]`` only while ``min belief >= 1/(e^eps + 1)``;
below that the diagonal ratio of the rarest symbol escapes the band, so the
constructor caps ``gamma`` at ``(e^eps - 1) * b_min / (1 - b_min)``, which
pins that ratio exactly on the upper band edge instead.  Either way the
released symbol has the same marginal distribution as the input and the
audited per-step leakage is exactly ``eps``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .belief import BeliefState

ROW_TOL = 1e-9
EPS_INF = 50.0  # budgets at or above this release essentially raw data

__all__ = [
    "ReleasePolicy",
    "PrivacyBudget",
    "crr_policy",
    "crr_gamma",
    "rr_ldp_policy",
    "privatize_step",
    "compose_linear",
    "compose_advanced",
    "compose_advanced_batched",
    "uniform_schedule",
    "policy_to_json",
    "policy_from_json",
]

_KINDS = ("crr", "rr_ldp", "batched")


@dataclass(frozen=True)
class ReleasePolicy:
    """One step's stochastic release kernel, rows indexed by the input."""

    kernel: np.ndarray
    epsilon: float
    kind: str

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64).copy()
        if k.ndim != 2:
            raise ValueError("kernel must be a matrix")
        if np.any(k < 0):
            raise ValueError("kernel entries must be nonnegative")
        sums = k.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise ValueError(f"kernel rows must sum to 1 within {ROW_TOL}: {sums}")
        k /= sums[:, None]
        if self.kind not in _KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.kind == "crr" and k.shape[0] == k.shape[1]:
            # stay probability dominates every other route into the same symbol
            diag = np.diag(k)
            if np.any(k > diag[None, :] + 1e-12):
                raise ValueError("crr kernel must be column-diagonally dominant")
        k.flags.writeable = False
        object.__setattr__(self, "kernel", k)

    @property
    def size(self) -> int:
        return self.kernel.shape[0]

    def row_cumsums(self) -> np.ndarray:
        return np.cumsum(self.kernel, axis=1)


def crr_gamma(dist: np.ndarray, epsilon: float) -> float:
    """Identity-mixture weight for the CRR policy at this belief."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    gamma = -math.expm1(-epsilon)
    if epsilon >= EPS_INF:
        return gamma
    grow = math.expm1(epsilon)
    cap = math.inf
    for b in dist:
        if 0.0 < b < 1.0:
            cap = min(cap, grow * b / (1.0 - b))
    return min(gamma, cap)


def crr_policy(belief, epsilon: float) -> ReleasePolicy:
    """Conditional randomized response tuned to the current belief."""
    dist = belief.dist if isinstance(belief, BeliefState) else np.asarray(belief, dtype=np.float64)
    n = len(dist)
    if n < 2:
        raise ValueError("alphabet size must be >= 2 for any mechanism use")
    gamma = crr_gamma(dist, epsilon)
    kernel = (1.0 - gamma) * np.tile(dist, (n, 1)) + gamma * np.eye(n)
    return ReleasePolicy(kernel=kernel, epsilon=float(epsilon), kind="crr")


def rr_ldp_policy(alphabet_size: int, epsilon: float) -> ReleasePolicy:
    """k-ary randomized response: the standard eps-LDP baseline.

    Stay probability e^eps/(e^eps + k - 1); the max row ratio over outputs
    is e^eps exactly.
    """
    if alphabet_size < 2:
        raise ValueError("alphabet size must be >= 2")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    # 1/(1 + (k-1)e^-eps) is stable for arbitrarily large eps
    stay = 1.0 / (1.0 + (alphabet_size - 1) * math.exp(-epsilon))
    off = stay * math.exp(-epsilon)
    kernel = np.full((alphabet_size, alphabet_size), off)
    np.fill_diagonal(kernel, stay)
    return ReleasePolicy(kernel=kernel, epsilon=float(epsilon), kind="rr_ldp")


def sample_row(cumulative_row: np.ndarray, u: float) -> int:
    """Inverse-CDF draw over ascending symbol ids."""
    y = int(np.searchsorted(cumulative_row, u, side="right"))
    return min(y, len(cumulative_row) - 1)


def privatize_step(policy: ReleasePolicy, symbol: int, rng: np.random.Generator) -> int:
    """Sample one release from the policy row of ``symbol``."""
    if not 0 <= symbol < policy.size:
        raise ValueError(f"symbol {symbol} out of range")
    cum = np.cumsum(policy.kernel[symbol])
    return sample_row(cum, rng.random())


# ---------------------------------------------------------------------------
# budget composition


def compose_linear(budgets) -> float:
    """Total budget of a mechanism sequence: the per-step sum (delta = 0)."""
    total = 0.0
    for e in budgets:
        if e < 0:
            raise ValueError("per-step budgets must be nonnegative")
        total += e
    return total


def compose_advanced(epsilon: float, steps: int, delta: float) -> float:
    """Sub-linear total for per-step budget ``epsilon`` over ``steps`` releases.

    Azuma-style bound: T*eps*(e^eps - 1) + sqrt(T)*eps*sqrt(2 ln(1/delta)),
    valid together with failure probability ``delta``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return steps * epsilon * math.expm1(epsilon) + math.sqrt(steps) * epsilon * math.sqrt(
        2.0 * math.log(1.0 / delta)
    )


def compose_advanced_batched(epsilon: float, batches: int, delta: float) -> float:
    """Batched-release variant with a linear deviation term.

    The per-batch statement replaces sqrt(tau) by tau in the second term;
    whether that is intentional is unclear, so both accountants are exposed
    and the sqrt form (:func:`compose_advanced`) is never silently swapped in.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if batches < 1:
        raise ValueError("batches must be >= 1")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return batches * epsilon * math.expm1(epsilon) + batches * epsilon * math.sqrt(
        2.0 * math.log(1.0 / delta)
    )


def uniform_schedule(epsilon_total: float, steps: int) -> list[float]:
    """Split a global budget uniformly so the linear total recovers it."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return [epsilon_total / steps] * steps


@dataclass(frozen=True)
class PrivacyBudget:
    """(eps, delta) pair plus the per-step schedule consumed by a run."""

    epsilon: float
    delta: float = 0.0
    schedule: tuple = field(default=())

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        object.__setattr__(self, "schedule", tuple(float(e) for e in self.schedule))

    def linear_total(self) -> float:
        return compose_linear(self.schedule)

    def advanced_total(self) -> float:
        if not self.schedule:
            return 0.0
        eps = max(self.schedule)
        return compose_advanced(eps, len(self.schedule), self.delta)


# ---------------------------------------------------------------------------
# serialization


def policy_to_json(policy: ReleasePolicy) -> str:
    return json.dumps(
        {"kind": policy.kind, "epsilon": policy.epsilon, "kernel": policy.kernel.tolist()}
    )


def policy_from_json(text: str) -> ReleasePolicy:
    d = json.loads(text)
    return ReleasePolicy(kernel=np.asarray(d["kernel"]), epsilon=d["epsilon"], kind=d["kind"])
