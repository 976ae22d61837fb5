"""Exact and Monte Carlo privacy-leakage and utility metrics.

Every mechanism audited here is a step machine: a state, a per-step release
kernel over the current symbol (or window), and a state advance driven by
the released symbol.  Exact audits enumerate release histories; within one
history the extremal log posterior/prior ratio over input sequences is found
by a Viterbi-style sweep, because the per-step ratios add along the sequence
while the model only gates which input paths are possible.

Leakage maxima skip pairs whose conditioning event has probability zero
(the ratio is undefined there); pairs with positive prior but zero posterior
drive the report to +inf rather than raising.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .belief import BeliefState, init_batch_belief, init_belief, update_batch, update_inst
from .mech import ReleasePolicy, crr_policy, rr_ldp_policy
from .model import BatchModel, MarkovModel, stream_rng
from .optimize import BatchObjective, batch_distance, solve_batch_policy, symbol_distance

ENUM_BUDGET = 10**6

__all__ = [
    "LeakageReport",
    "CrrMechanism",
    "KrrMechanism",
    "FixedKernelsMechanism",
    "BatchedMechanism",
    "sil_exact",
    "iil_exact",
    "bil_exact",
    "iil_per_step",
    "ldp_log_ratio",
    "mutual_information",
    "sequence_joint",
    "leakage_tail_mass",
    "expected_distortion",
    "mc_realized_leakage",
    "audit_report",
]


class EnumerationBudgetError(ValueError):
    """The release-history space exceeds the exact-enumeration budget."""


# ---------------------------------------------------------------------------
# step mechanisms


class CrrMechanism:
    """Belief-tracking conditional randomized response over a Markov model."""

    def __init__(self, model: MarkovModel, schedule):
        self.model = model
        self.schedule = list(schedule)
        self.horizon = len(self.schedule)
        self.size = model.alphabet_size

    def initial_state(self) -> BeliefState:
        return init_belief(self.model)

    def kernel(self, state: BeliefState) -> np.ndarray:
        return crr_policy(state, self.schedule[state.step - 1]).kernel

    def advance(self, state: BeliefState, released: int) -> BeliefState:
        return update_inst(state, self.kernel(state), released, self.model)


class KrrMechanism:
    """History-independent k-ary randomized response at a per-step schedule."""

    def __init__(self, size: int, schedule):
        self.schedule = list(schedule)
        self.horizon = len(self.schedule)
        self.size = size
        self._kernels = [rr_ldp_policy(size, e).kernel for e in self.schedule]

    def initial_state(self) -> int:
        return 0

    def kernel(self, state: int) -> np.ndarray:
        return self._kernels[state]

    def advance(self, state: int, released: int) -> int:
        return state + 1


class FixedKernelsMechanism:
    """Arbitrary per-step kernels, independent of the release history."""

    def __init__(self, kernels):
        self._kernels = [np.asarray(k, dtype=np.float64) for k in kernels]
        self.horizon = len(self._kernels)
        self.size = self._kernels[0].shape[0]

    def initial_state(self) -> int:
        return 0

    def kernel(self, state: int) -> np.ndarray:
        return self._kernels[state]

    def advance(self, state: int, released: int) -> int:
        return state + 1


class BatchedMechanism:
    """Optimized window kernels over the window chain, memory one window.

    Kernels are solved per belief state and memoized on the rounded belief,
    so long streams reuse solves once the belief trajectory settles.
    """

    def __init__(self, batch_model: BatchModel, schedule, distance_kind: str = "hamming",
                 buckets=None, solver_kwargs=None, cache_decimals: int = 6):
        self.batch_model = batch_model
        self.schedule = list(schedule)
        self.horizon = len(self.schedule)
        self.size = batch_model.batch_count
        self.distance = batch_distance(
            distance_kind, batch_model.base.alphabet_size, batch_model.width, buckets
        )
        self.solver_kwargs = solver_kwargs or {}
        self._cache: dict = {}
        self._decimals = cache_decimals

    def initial_state(self) -> BeliefState:
        return init_batch_belief(self.batch_model)

    def kernel(self, state: BeliefState) -> np.ndarray:
        eps = self.schedule[state.step - 1]
        canonical = np.round(state.dist, self._decimals)
        canonical /= canonical.sum()
        key = (eps, canonical.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            objective = BatchObjective(distance=self.distance, belief=canonical, epsilon=eps)
            policy, _ = solve_batch_policy(objective, **self.solver_kwargs)
            hit = policy.kernel
            self._cache[key] = hit
        return hit

    def advance(self, state: BeliefState, released: int) -> BeliefState:
        return update_batch(state, self.kernel(state), released, self.batch_model)


def _chain_of(model_like):
    """(prior, one-step prediction kernel, symbol count) for a model or batch view."""
    if isinstance(model_like, BatchModel):
        return model_like.batch_prior(), model_like.batch_kernel(), model_like.batch_count
    return model_like.prior, model_like.transition, model_like.alphabet_size


def _check_budget(size: int, horizon: int, budget: int) -> None:
    if size**horizon > budget:
        raise EnumerationBudgetError(
            f"{size}^{horizon} release histories exceed the enumeration budget {budget}"
        )


# ---------------------------------------------------------------------------
# exact leakage


def iil_exact(belief, policy) -> float:
    """Max |log posterior/belief ratio| of one release step.

    ``belief`` is the distribution the mechanism faces; zero-belief inputs
    and zero-marginal outputs are excluded, zero likelihood on a supported
    pair yields +inf.
    """
    b = belief.dist if isinstance(belief, BeliefState) else np.asarray(belief, dtype=np.float64)
    K = np.asarray(getattr(policy, "kernel", policy), dtype=np.float64)
    m = b @ K
    worst = 0.0
    for y in range(K.shape[1]):
        if m[y] <= 0.0:
            continue
        for x in range(K.shape[0]):
            if b[x] <= 0.0:
                continue
            a = K[x, y]
            if a <= 0.0:
                return math.inf
            worst = max(worst, abs(math.log(a / m[y])))
    return worst


def bil_exact(batch_belief, policy) -> float:
    """Window-release leakage: identical to :func:`iil_exact` on window ids."""
    return iil_exact(batch_belief, policy)


def sil_exact(model_like, mech, horizon: int | None = None, budget: int = ENUM_BUDGET,
              threads: int = 1) -> float:
    """Exact whole-sequence leakage max |log Pr(x|y)/Pr(x)|.

    Enumerates all release histories with positive probability; per history,
    the additive per-step ratios are maximized/minimized over model-possible
    input paths by dynamic programming.  Returns +inf when some possible
    input sequence has zero posterior.
    """
    prior, kernel, n = _chain_of(model_like)
    T = mech.horizon if horizon is None else horizon
    _check_budget(n, T, budget)
    positive_trans = kernel > 0.0

    def walk(step, mech_state, belief, mx, mn, has_zero, only=None):
        A = mech.kernel(mech_state)
        best = 0.0
        for y in range(n) if only is None else (only,):
            col = A[:, y]
            m = float(belief @ col)
            if m <= 0.0:
                continue
            with np.errstate(divide="ignore"):
                step_log = np.log(col) - math.log(m)
            nmx = np.full(n, -np.inf)
            nmn = np.full(n, np.inf)
            hz = has_zero
            for v in range(n):
                if step == 1:
                    reachable = prior[v] > 0.0
                    src_max = src_min = 0.0
                else:
                    sources = positive_trans[:, v] & (mx > -np.inf)
                    reachable = bool(np.any(sources))
                    if reachable:
                        src_max = mx[sources].max()
                        src_min = mn[sources].min()
                if not reachable:
                    continue
                if col[v] <= 0.0:
                    hz = True  # a possible input path just lost all posterior mass
                    continue
                nmx[v] = src_max + step_log[v]
                nmn[v] = src_min + step_log[v]
            valid = nmx > -np.inf
            if not np.any(valid) and not hz:
                continue
            if step == T:
                if hz:
                    return math.inf
                best = max(best, abs(nmx[valid].max()), abs(nmn[valid].min()))
            else:
                posterior = col * belief
                posterior /= posterior.sum()
                nxt_belief = kernel.T @ posterior
                nxt_belief /= nxt_belief.sum()
                sub = walk(step + 1, mech.advance(mech_state, y), nxt_belief, nmx, nmn, hz)
                if sub == math.inf:
                    return math.inf
                best = max(best, sub)
        return best

    if threads <= 1 or n < 2:
        return walk(1, mech.initial_state(), prior.copy(), None, None, False)
    # partition on the first release; pure max-reduce over branches
    with ThreadPoolExecutor(max_workers=threads) as pool:
        branches = pool.map(
            lambda y0: walk(1, mech.initial_state(), prior.copy(), None, None, False, only=y0),
            range(n),
        )
        return max(branches)


def iil_per_step(model_like, mech, horizon: int | None = None, budget: int = ENUM_BUDGET) -> list[float]:
    """Per-step worst-case leakage, maximized over reachable histories."""
    prior, kernel, n = _chain_of(model_like)
    T = mech.horizon if horizon is None else horizon
    _check_budget(n, T, budget)
    out = [0.0] * T

    def walk(step, mech_state, belief):
        A = mech.kernel(mech_state)
        out[step - 1] = max(out[step - 1], iil_exact(belief, A))
        if step == T:
            return
        for y in range(n):
            m = float(belief @ A[:, y])
            if m <= 0.0:
                continue
            posterior = A[:, y] * belief
            posterior /= posterior.sum()
            nxt = kernel.T @ posterior
            nxt /= nxt.sum()
            walk(step + 1, mech.advance(mech_state, y), nxt)

    walk(1, mech.initial_state(), prior.copy())
    return out


def ldp_log_ratio(mech, horizon: int | None = None, budget: int = ENUM_BUDGET) -> float:
    """Max |log Pr(y|x)/Pr(y|x~)| over sequences, inputs unconstrained.

    Kernels here depend on inputs only through the current symbol, so the
    per-history extremes are products of per-step column extremes.  Histories
    are explored wherever some input can produce them and the mechanism is
    defined (belief-tracking mechanisms are undefined after impossible
    releases; such branches do not occur).
    """
    n = mech.size
    T = mech.horizon if horizon is None else horizon
    _check_budget(n, T, budget)

    def walk(step, mech_state, lmax, lmin):
        A = mech.kernel(mech_state)
        best = 0.0
        for y in range(n):
            col = A[:, y]
            top = col.max()
            if top <= 0.0:
                continue  # y unreachable from every input
            bot = col.min()
            nlmax = lmax + math.log(top)
            nlmin = lmin + (math.log(bot) if bot > 0.0 else -math.inf)
            if step == T:
                best = max(best, nlmax - nlmin)
            else:
                best = max(best, walk(step + 1, mech.advance(mech_state, y), nlmax, nlmin))
            if best == math.inf:
                return best
        return best

    return walk(1, mech.initial_state(), 0.0, 0.0)


# ---------------------------------------------------------------------------
# distribution-level quantities


def mutual_information(joint) -> float:
    """I(A;B) in nats from a finite joint distribution; 0 log 0 = 0."""
    p = np.asarray(joint, dtype=np.float64)
    if p.ndim != 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("joint must be a nonnegative matrix summing to 1")
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)
    mask = p > 0.0
    ratio = p[mask] / (np.outer(pa, pb)[mask])
    return float(np.sum(p[mask] * np.log(ratio)))


def sequence_joint(model_like, mech, horizon: int | None = None, budget: int = ENUM_BUDGET):
    """Full joint over (input sequence, release sequence), budget permitting.

    Returns (joint matrix indexed by sequence rank, sequence tuples).  Ranks
    order sequences lexicographically, first symbol most significant.
    """
    prior, kernel, n = _chain_of(model_like)
    T = mech.horizon if horizon is None else horizon
    if n ** (2 * T) > budget:
        raise EnumerationBudgetError(f"{n}^{2 * T} sequence pairs exceed budget {budget}")
    seqs = list(product(range(n), repeat=T))
    rank = {s: i for i, s in enumerate(seqs)}
    joint = np.zeros((len(seqs), len(seqs)))

    def walk(step, mech_state, kernels, prefix):
        A = mech.kernel(mech_state)
        kernels = kernels + [A]
        for y in range(n):
            if A[:, y].max() <= 0.0:
                continue
            path = prefix + (y,)
            if step == T:
                yi = rank[path]
                for xi, xs in enumerate(seqs):
                    p = prior[xs[0]] * kernels[0][xs[0], path[0]]
                    for k in range(1, T):
                        p *= kernel[xs[k - 1], xs[k]] * kernels[k][xs[k], path[k]]
                    joint[xi, yi] = p
            else:
                try:
                    walk(step + 1, mech.advance(mech_state, y), kernels, path)
                except ValueError:
                    continue  # release impossible under the model: no mass anywhere
        return None

    walk(1, mech.initial_state(), [], ())
    total = joint.sum()
    if abs(total - 1.0) > 1e-9:
        raise RuntimeError(f"joint mass {total} != 1; mechanism/model mismatch")
    return joint / total, seqs


def leakage_tail_mass(model_like, mech, threshold: float, horizon: int | None = None,
                      budget: int = ENUM_BUDGET) -> float:
    """Joint probability mass of pairs whose realized leakage exceeds the threshold.

    This measures the delta of (eps, delta) guarantees over the joint law of
    (inputs, releases); mass on zero-posterior pairs is zero by construction.
    """
    joint, seqs = sequence_joint(model_like, mech, horizon, budget)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    mass = 0.0
    for xi in range(len(seqs)):
        for yi in range(len(seqs)):
            p = joint[xi, yi]
            if p <= 0.0 or py[yi] <= 0.0:
                continue
            realized = abs(math.log((p / py[yi]) / px[xi]))
            if realized > threshold:
                mass += p
    return mass


# ---------------------------------------------------------------------------
# utility


@dataclass(frozen=True)
class DistortionEstimate:
    mean: float
    stderr: float
    per_step: tuple
    method: str


def expected_distortion(model_like, mech, horizon: int | None = None, samples: int = 0,
                        seed: int = 0, distance_kind: str = "hamming", buckets=None,
                        exact: bool = False, budget: int = ENUM_BUDGET) -> DistortionEstimate:
    """Mean per-step distance between raw and released symbols.

    Exact mode enumerates release histories (budget permitting); Monte Carlo
    mode samples ``samples`` whole trajectories with a per-trajectory seed and
    reports the standard error across trajectories.
    """
    prior, kernel, n = _chain_of(model_like)
    T = mech.horizon if horizon is None else horizon
    if isinstance(model_like, BatchModel):
        D = batch_distance(distance_kind, model_like.base.alphabet_size, model_like.width, buckets)
        sym_per_step = model_like.width
    else:
        D = symbol_distance(distance_kind, n, buckets)
        sym_per_step = 1

    if exact:
        _check_budget(n, T, budget)
        per_step = np.zeros(T)

        def walk(step, mech_state, belief, weight):
            A = mech.kernel(mech_state)
            per_step[step - 1] += weight * float(belief @ (A * D).sum(axis=1))
            if step == T:
                return
            for y in range(n):
                m = float(belief @ A[:, y])
                if m <= 0.0:
                    continue
                posterior = A[:, y] * belief
                posterior /= posterior.sum()
                nxt = kernel.T @ posterior
                nxt /= nxt.sum()
                walk(step + 1, mech.advance(mech_state, y), nxt, weight * m)

        walk(1, mech.initial_state(), prior.copy(), 1.0)
        per_step /= sym_per_step
        return DistortionEstimate(float(per_step.mean()), 0.0, tuple(per_step), "exact")

    if samples < 1:
        raise ValueError("samples must be >= 1 for Monte Carlo distortion")
    per_step = np.zeros(T)
    stream_means = np.empty(samples)
    cum_prior = np.cumsum(prior)
    cum_kernel = np.cumsum(kernel, axis=1)
    for i in range(samples):
        rng = stream_rng(seed, stream=i)
        u_model = rng.random(T)
        u_mech = rng.random(T)
        state = mech.initial_state()
        x = min(int(np.searchsorted(cum_prior, u_model[0], side="right")), n - 1)
        total = 0.0
        for k in range(T):
            if k > 0:
                x = min(int(np.searchsorted(cum_kernel[x], u_model[k], side="right")), n - 1)
            A = mech.kernel(state)
            cum = np.cumsum(A[x])
            y = min(int(np.searchsorted(cum, u_mech[k], side="right")), n - 1)
            d = D[x, y] / sym_per_step
            per_step[k] += d
            total += d
            state = mech.advance(state, y)
        stream_means[i] = total / T
    per_step /= samples
    mean = float(stream_means.mean())
    stderr = float(stream_means.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    return DistortionEstimate(mean, stderr, tuple(per_step), f"monte_carlo({samples})")


def mc_realized_leakage(model_like, mech, horizon: int | None = None, samples: int = 1000,
                        seed: int = 0):
    """Sampled realized-leakage profile when exact enumeration is out of budget.

    Returns (max realized |log posterior/prior|, per-sample array).  A sampled
    maximum only lower-bounds the true leakage; callers must label the method.
    """
    prior, kernel, n = _chain_of(model_like)
    T = mech.horizon if horizon is None else horizon
    cum_prior = np.cumsum(prior)
    cum_kernel = np.cumsum(kernel, axis=1)
    realized = np.empty(samples)
    for i in range(samples):
        rng = stream_rng(seed, stream=i)
        u_model = rng.random(T)
        u_mech = rng.random(T)
        state = mech.initial_state()
        belief = prior.copy()
        x = min(int(np.searchsorted(cum_prior, u_model[0], side="right")), n - 1)
        log_ratio = 0.0
        for k in range(T):
            if k > 0:
                x = min(int(np.searchsorted(cum_kernel[x], u_model[k], side="right")), n - 1)
            A = mech.kernel(state)
            cum = np.cumsum(A[x])
            y = min(int(np.searchsorted(cum, u_mech[k], side="right")), n - 1)
            m = float(belief @ A[:, y])
            log_ratio += math.log(A[x, y]) - math.log(m)
            posterior = A[:, y] * belief
            posterior /= posterior.sum()
            belief = kernel.T @ posterior
            belief /= belief.sum()
            state = mech.advance(state, y)
        realized[i] = abs(log_ratio)
    return float(realized.max()), realized


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class LeakageReport:
    """Leakage figures for one (model, mechanism) pair."""

    sil: float
    per_step_leakage: tuple
    ldp_log_ratio: float
    mutual_information: float | None
    method: str
    mode: str = "instantaneous"

    def to_dict(self) -> dict:
        return {
            "sil": self.sil,
            ("bil_per_batch" if self.mode == "batched" else "iil_per_step"): list(
                self.per_step_leakage
            ),
            "ldp_ratio_log": self.ldp_log_ratio,
            "mutual_information": self.mutual_information,
            "method": self.method,
            "mode": self.mode,
        }

    def csv_rows(self):
        for k, v in enumerate(self.per_step_leakage, start=1):
            yield (k, v)

    def violated_bounds(self, tol: float = 1e-9) -> list[str]:
        """Certified-bound regressions; nonempty means the audit gate fails."""
        out = []
        finite = [v for v in self.per_step_leakage if v != math.inf]
        if self.per_step_leakage and self.sil != math.inf and len(finite) == len(self.per_step_leakage):
            if self.sil > sum(finite) + tol:
                out.append(f"sil {self.sil} exceeds per-step sum {sum(finite)}")
        if self.sil != math.inf and self.ldp_log_ratio != math.inf:
            if self.ldp_log_ratio > 2.0 * self.sil + tol:
                out.append(f"ldp log-ratio {self.ldp_log_ratio} exceeds 2*sil {2 * self.sil}")
        if self.mutual_information is not None and self.sil != math.inf:
            if self.mutual_information > self.sil + tol:
                out.append(
                    f"mutual information {self.mutual_information} exceeds sil {self.sil}"
                )
        return out


def audit_report(model_like, mech, horizon: int | None = None, budget: int = ENUM_BUDGET,
                 threads: int = 1, monte_carlo: int = 0, seed: int = 0) -> LeakageReport:
    """Run the full audit, exact within budget, else Monte Carlo if allowed."""
    prior, kernel, n = _chain_of(model_like)
    T = mech.horizon if horizon is None else horizon
    mode = "batched" if isinstance(model_like, BatchModel) else "instantaneous"
    if n**T <= budget:
        sil = sil_exact(model_like, mech, T, budget, threads)
        per_step = tuple(iil_per_step(model_like, mech, T, budget))
        ldp = ldp_log_ratio(mech, T, budget)
        mi = None
        if n ** (2 * T) <= budget:
            joint, _ = sequence_joint(model_like, mech, T, budget)
            mi = mutual_information(joint)
        return LeakageReport(sil, per_step, ldp, mi, "exact", mode)
    if monte_carlo < 1:
        raise EnumerationBudgetError(
            f"{n}^{T} histories exceed budget {budget}; pass a Monte Carlo sample count"
        )
    mx, realized = mc_realized_leakage(model_like, mech, T, monte_carlo, seed)
    return LeakageReport(mx, (), math.inf, None, f"monte_carlo({monte_carlo})", mode)
