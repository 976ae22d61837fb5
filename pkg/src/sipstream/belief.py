"""Adversary-side posterior tracking over the current symbol or window.

The belief is the exact conditional distribution of the next-to-be-released
symbol (or window) given every past release.  Updates are pure functions:
Bayes correction by the release-policy likelihood, then prediction through
the transition kernel.  Under a first-order chain and policies that depend
only on the current symbol this marginal recursion is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BatchModel, MarkovModel

RENORM_TOL = 1e-12

__all__ = [
    "BeliefState",
    "ZeroProbabilityError",
    "init_belief",
    "update_inst",
    "init_batch_belief",
    "update_batch",
]


class ZeroProbabilityError(ValueError):
    """The released symbol has zero probability under the tracked belief.

    Signals a policy/belief mismatch; silently resetting would mask bugs
    that void the privacy guarantee, so this is always raised.
    """


@dataclass(frozen=True)
class BeliefState:
    dist: np.ndarray
    step: int = 1

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=np.float64).copy()
        if np.any(d < 0):
            raise ValueError("belief entries must be nonnegative")
        s = d.sum()
        if not np.isfinite(s) or s <= 0:
            raise ValueError("belief must have positive mass")
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"belief sums to {s}")
        d /= s
        d.flags.writeable = False
        object.__setattr__(self, "dist", d)


def _kernel_of(policy) -> np.ndarray:
    return np.asarray(getattr(policy, "kernel", policy), dtype=np.float64)


def init_belief(model: MarkovModel) -> BeliefState:
    """First-step belief: the prior."""
    return BeliefState(dist=model.prior, step=1)


def _correct_and_predict(dist: np.ndarray, kernel: np.ndarray, released: int,
                         prediction: np.ndarray) -> np.ndarray:
    likelihood = kernel[:, released]
    posterior = likelihood * dist
    mass = posterior.sum()
    if mass <= 0.0:
        raise ZeroProbabilityError(
            f"released symbol {released} has zero probability under the belief"
        )
    posterior /= mass
    new = prediction.T @ posterior
    total = new.sum()
    if abs(total - 1.0) > RENORM_TOL:
        # prediction rows are stochastic, so drift here is pure rounding
        new /= total
    return new


def update_inst(belief: BeliefState, policy, released: int, model: MarkovModel) -> BeliefState:
    """Posterior over the next symbol after observing one release.

    ``policy`` must be the kernel actually used to emit ``released`` at this
    step (a ReleasePolicy or a raw row-stochastic matrix).
    """
    kernel = _kernel_of(policy)
    new = _correct_and_predict(belief.dist, kernel, int(released), model.transition)
    return BeliefState(dist=new, step=belief.step + 1)


def init_batch_belief(model: BatchModel) -> BeliefState:
    """Belief over the first window: the window prior."""
    return BeliefState(dist=model.batch_prior(), step=1)


def update_batch(belief: BeliefState, policy, released, model: BatchModel,
                 next_width: int | None = None) -> BeliefState:
    """Posterior over the next window after releasing one perturbed window.

    ``released`` is a window id (or a symbol tuple).  ``next_width`` lets the
    final window of a stream shrink when the horizon is not divisible by the
    batch width.
    """
    if np.ndim(released) > 0:
        from .model import batch_to_index

        released = batch_to_index(released, model.base.alphabet_size)
    kernel = _kernel_of(policy)
    prev_width = round(np.log(len(belief.dist)) / np.log(model.base.alphabet_size))
    prediction = model.batch_kernel(prev_width=prev_width, next_width=next_width)
    new = _correct_and_predict(belief.dist, kernel, int(released), prediction)
    return BeliefState(dist=new, step=belief.step + 1)
