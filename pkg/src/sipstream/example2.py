"""Closed-form study of two correlated binary releases.

A symmetric flip channel couples X1 and X2; both are released through
randomized response whose parameters ride the privacy-band boundary, the
second step conditioned on the first release.  The module reproduces the
noise-coupling quantities (noise correlation, noise mutual information,
required noise at step two) and the capped-noise leakage-minimization
curves as CSV.

The boundary parameters here are the printed closed forms
``q(y2) = belief2(y2|y1) / e^eps2`` for a flip; they sit exactly on the
band edge whenever every belief entry is at least ``1/(e^eps + 1)`` and are
kept verbatim (rather than capped like :func:`sipstream.mech.crr_policy`)
because the noise-versus-correlation trends are statements about exactly
this mechanism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audit import mutual_information

__all__ = [
    "TwoStepConfig",
    "rho_x",
    "step_one_kernel",
    "step_two_kernel",
    "belief_after_first_release",
    "optimal_two_step_params",
    "two_step_joint",
    "noise_quantities",
    "min_leakage_under_noise_cap",
    "emit_curves",
    "CURVE_COLUMNS",
]

CURVE_COLUMNS = ("phi", "rho_x", "rho_n", "mi_noise", "pr_n2", "leak_corr", "leak_indep")


@dataclass(frozen=True)
class TwoStepConfig:
    """Pr(X1=1), flip probability of the correlation channel, two budgets."""

    p1: float
    phi: float
    eps1: float = 1.0
    eps2: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p1 < 1.0:
            raise ValueError("p1 must lie strictly inside (0, 1)")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("budgets must be nonnegative")

    @property
    def prior(self) -> np.ndarray:
        return np.array([1.0 - self.p1, self.p1])

    @property
    def channel(self) -> np.ndarray:
        f = self.phi
        return np.array([[1.0 - f, f], [f, 1.0 - f]])


def rho_x(config: TwoStepConfig) -> float:
    """Correlation coefficient of (X1, X2): 1 at phi=0, 0 at 1/2, -1 at 1."""
    p, f = config.p1, config.phi
    num = (1.0 - 2.0 * f) * math.sqrt(p * (1.0 - p))
    den = math.sqrt((p * f + (1.0 - p) * (1.0 - f)) * ((1.0 - p) * f + p * (1.0 - f)))
    return num / den


def _boundary_kernel(dist: np.ndarray, eps: float) -> np.ndarray:
    """Binary randomized response on the band boundary: flip to y w.p. dist(y)/e^eps."""
    scale = math.exp(-eps)
    k = np.empty((2, 2))
    k[0, 1] = dist[1] * scale
    k[0, 0] = 1.0 - k[0, 1]
    k[1, 0] = dist[0] * scale
    k[1, 1] = 1.0 - k[1, 0]
    return k


def step_one_kernel(config: TwoStepConfig) -> np.ndarray:
    return _boundary_kernel(config.prior, config.eps1)


def belief_after_first_release(config: TwoStepConfig, y1: int) -> np.ndarray:
    """Adversary's distribution of X2 given the first release."""
    k1 = step_one_kernel(config)
    post = config.prior * k1[:, y1]
    post /= post.sum()
    return config.channel.T @ post


def step_two_kernel(config: TwoStepConfig, y1: int) -> np.ndarray:
    return _boundary_kernel(belief_after_first_release(config, y1), config.eps2)


def optimal_two_step_params(config: TwoStepConfig) -> dict:
    """The four boundary flip parameters, keyed by the first release.

    ``q1_from_0`` is Pr(Y2=1 | X2=0, Y1=y1) (independent of X1) and
    ``q0_from_1`` its mirror.
    """
    out = {}
    for y1 in (0, 1):
        k2 = step_two_kernel(config, y1)
        out[y1] = {"q1_from_0": k2[0, 1], "q0_from_1": k2[1, 0]}
    return out


def two_step_joint(config: TwoStepConfig) -> np.ndarray:
    """Joint over (x1, x2, y1, y2) under the boundary mechanism."""
    k1 = step_one_kernel(config)
    chan = config.channel
    prior = config.prior
    joint = np.empty((2, 2, 2, 2))
    for y1 in (0, 1):
        k2 = step_two_kernel(config, y1)
        for x1 in (0, 1):
            for x2 in (0, 1):
                base = prior[x1] * k1[x1, y1] * chan[x1, x2]
                joint[x1, x2, y1, 0] = base * k2[x2, 0]
                joint[x1, x2, y1, 1] = base * k2[x2, 1]
    return joint


def noise_quantities(config: TwoStepConfig) -> dict:
    """Flip-indicator statistics: marginals, correlation, mutual information.

    The noise at a step is the event that the released symbol differs from
    the raw one; its cross-step coupling quantifies how much the second
    mechanism leans on the first release.
    """
    joint = two_step_joint(config)
    noise_joint = np.zeros((2, 2))
    for x1 in (0, 1):
        for x2 in (0, 1):
            for y1 in (0, 1):
                for y2 in (0, 1):
                    noise_joint[int(x1 != y1), int(x2 != y2)] += joint[x1, x2, y1, y2]
    pn1 = noise_joint[1, :].sum()
    pn2 = noise_joint[:, 1].sum()
    var1 = pn1 * (1.0 - pn1)
    var2 = pn2 * (1.0 - pn2)
    if var1 > 0.0 and var2 > 0.0:
        rho = (noise_joint[1, 1] - pn1 * pn2) / math.sqrt(var1 * var2)
    else:
        rho = 0.0  # a deterministic flip indicator carries no correlation
    return {
        "pr_n1": pn1,
        "pr_n2": pn2,
        "rho_n": rho,
        "mi_noise": mutual_information(noise_joint),
    }


# ---------------------------------------------------------------------------
# leakage minimization under a noise cap


def _branch_leakage_grid(belief: np.ndarray, p0: np.ndarray, p1: np.ndarray):
    """Worst |log posterior/belief ratio| of step two for every flip pair.

    ``p0``/``p1`` are broadcastable grids of Pr(Y2=1|X2=0) and Pr(Y2=0|X2=1);
    outputs with zero marginal in a cell are skipped as never released.
    """
    b0, b1 = belief
    m0 = b0 * (1.0 - p0) + b1 * p1
    m1 = b0 * p0 + b1 * (1.0 - p1)
    worst = np.zeros(np.broadcast(p0, p1).shape)
    for a, m in (((1.0 - p0), m0), (p1, m0), (p0, m1), ((1.0 - p1), m1)):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(m > 0.0, np.abs(np.log(np.where(m > 0.0, a, 1.0) / np.where(m > 0.0, m, 1.0))), 0.0)
        worst = np.maximum(worst, r)
    return worst


def min_leakage_under_noise_cap(config: TwoStepConfig, noise_cap: float,
                                resolution: int = 1001) -> dict:
    """Least step-two pair leakage achievable with bounded flip probability.

    Both variants search the same exact leakage objective on a flip-parameter
    grid and obey the same per-history noise cap; the correlated variant may
    pick different parameters after each first release, the independent
    baseline must share one pair across histories.  The shared feasible set
    nests inside the per-history one, so the correlated minimum can never be
    worse.
    """
    if not 0.0 <= noise_cap <= 0.5:
        raise ValueError("noise cap must lie in [0, 0.5]")
    if resolution < 100:
        raise ValueError("resolution must be >= 100")
    grid = np.linspace(0.0, 1.0, resolution)
    p0 = grid[:, None]
    p1 = grid[None, :]
    leak = {}
    feasible = {}
    for y1 in (0, 1):
        belief = belief_after_first_release(config, y1)
        noise = belief[0] * p0 + belief[1] * p1
        leak[y1] = _branch_leakage_grid(belief, p0, p1)
        feasible[y1] = noise <= noise_cap + 1e-12
    corr = 0.0
    for y1 in (0, 1):
        if not feasible[y1].any():
            raise ValueError("empty feasible set under the cap")
        corr = max(corr, float(np.min(np.where(feasible[y1], leak[y1], np.inf))))
    shared_mask = feasible[0] & feasible[1]
    if not shared_mask.any():
        raise ValueError("empty feasible set under the cap")
    shared_leak = np.maximum(leak[0], leak[1])
    indep = float(np.min(np.where(shared_mask, shared_leak, np.inf)))
    return {"leak_corr": corr, "leak_indep": indep}


def emit_curves(p1: float, phis, eps1: float, eps2: float, output_path,
                noise_cap: float = 0.25, resolution: int = 1001) -> list[dict]:
    """One CSV row per phi; returns the rows for programmatic use."""
    rows = []
    for phi in phis:
        config = TwoStepConfig(p1=p1, phi=float(phi), eps1=eps1, eps2=eps2)
        nq = noise_quantities(config)
        ml = min_leakage_under_noise_cap(config, noise_cap, resolution)
        rows.append(
            {
                "phi": float(phi),
                "rho_x": rho_x(config),
                "rho_n": nq["rho_n"],
                "mi_noise": nq["mi_noise"],
                "pr_n2": nq["pr_n2"],
                "leak_corr": ml["leak_corr"],
                "leak_indep": ml["leak_indep"],
            }
        )
    with open(output_path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# p1={p1!r} eps1={eps1!r} eps2={eps2!r} cap={noise_cap!r} resolution={resolution}\n"
        )
        fh.write(",".join(CURVE_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(f"{row[c]:.17g}" for c in CURVE_COLUMNS) + "\n")
    return rows
