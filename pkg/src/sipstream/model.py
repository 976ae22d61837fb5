"""Finite-alphabet probability objects and first-order Markov stream models.

Symbols are dense integer ids ``0..size-1``.  A :class:`MarkovModel` carries
the prior of the first symbol and a row-stochastic transition matrix; a
:class:`BatchModel` views the same chain through fixed-width windows, with
whole windows acting as composite symbols.

Model files are JSON documents with fields ``alphabet_size``, ``prior`` and
``transition`` (row-major).  Corpus files are UTF-8 text, one sequence per
line, whitespace-separated nonnegative integer ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-9

__all__ = [
    "MarkovModel",
    "BatchModel",
    "as_prob_vec",
    "estimate_markov",
    "batch_transition",
    "sample_sequence",
    "sample_corpus",
    "load_model",
    "save_model",
    "read_corpus",
    "write_corpus",
    "batch_to_index",
    "index_to_batch",
]


def as_prob_vec(weights, tol: float = PROB_TOL) -> np.ndarray:
    """Validate a probability vector and renormalize within tolerance.

    Entries must be nonnegative and sum to 1 within ``tol``; the returned
    array is renormalized to sum exactly to 1 and marked read-only.
    """
    v = np.asarray(weights, dtype=np.float64).copy()
    if v.ndim != 1 or v.size == 0:
        raise ValueError("probability vector must be a nonempty 1-d array")
    if np.any(v < 0.0):
        raise ValueError(f"negative probability entry: min={v.min()}")
    s = v.sum()
    if abs(s - 1.0) > tol:
        raise ValueError(f"probabilities sum to {s}, outside tolerance {tol}")
    v /= s
    v.flags.writeable = False
    return v


def _frozen_matrix(rows) -> np.ndarray:
    m = np.asarray(rows, dtype=np.float64).copy()
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {m.shape}")
    for i in range(m.shape[0]):
        m[i] = as_prob_vec(m[i])
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class MarkovModel:
    """Prior distribution plus first-order transition kernel.

    ``transition[u, v]`` is the probability of seeing ``v`` right after ``u``.
    Instances are immutable; the arrays are read-only and safe to share
    across threads.
    """

    prior: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prior", as_prob_vec(self.prior))
        object.__setattr__(self, "transition", _frozen_matrix(self.transition))
        if len(self.prior) != self.transition.shape[0]:
            raise ValueError(
                f"prior length {len(self.prior)} does not match "
                f"transition size {self.transition.shape[0]}"
            )

    @property
    def alphabet_size(self) -> int:
        return len(self.prior)

    def to_dict(self) -> dict:
        return {
            "alphabet_size": self.alphabet_size,
            "prior": self.prior.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovModel":
        model = cls(prior=np.asarray(d["prior"]), transition=np.asarray(d["transition"]))
        if model.alphabet_size != int(d["alphabet_size"]):
            raise ValueError("alphabet_size field disagrees with prior length")
        return model


def binary_symmetric_model(p1: float, q: float) -> MarkovModel:
    """Binary chain with Pr(X1=1)=p1 and stay probability q on both symbols."""
    return MarkovModel(prior=[1.0 - p1, p1], transition=[[q, 1.0 - q], [1.0 - q, q]])


# ---------------------------------------------------------------------------
# estimation


def estimate_markov(corpus, smoothing: float = 0.0, alphabet_size: int | None = None) -> MarkovModel:
    """Estimate prior and transition kernel from symbol-id sequences.

    Additive smoothing is applied to both the first-symbol counts and each
    transition row; rows with zero observations (and zero smoothing) fall
    back to uniform so belief updates never hit a zero-probability trap.
    """
    corpus = [np.asarray(seq, dtype=np.int64) for seq in corpus]
    if not corpus or all(len(s) == 0 for s in corpus):
        raise ValueError("empty corpus")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    observed_max = max(int(s.max()) for s in corpus if len(s))
    observed_min = min(int(s.min()) for s in corpus if len(s))
    if observed_min < 0:
        raise ValueError(f"negative symbol id {observed_min}")
    n = alphabet_size if alphabet_size is not None else observed_max + 1
    if observed_max >= n:
        raise ValueError(f"symbol id {observed_max} out of range for alphabet size {n}")

    first = np.zeros(n)
    pair = np.zeros((n, n))
    for seq in corpus:
        if len(seq) == 0:
            continue
        first[seq[0]] += 1.0
        np.add.at(pair, (seq[:-1], seq[1:]), 1.0)

    prior = first + smoothing
    if prior.sum() == 0.0:
        prior = np.ones(n)
    prior /= prior.sum()

    transition = pair + smoothing
    row_tot = transition.sum(axis=1)
    empty = row_tot == 0.0
    transition[empty] = 1.0 / n
    transition[~empty] /= row_tot[~empty, None]
    return MarkovModel(prior=prior, transition=transition)


# ---------------------------------------------------------------------------
# batched view


def batch_to_index(symbols, size: int) -> int:
    """Encode a symbol window as a single id (first symbol most significant)."""
    idx = 0
    for s in symbols:
        if not 0 <= s < size:
            raise ValueError(f"symbol {s} out of range for alphabet size {size}")
        idx = idx * size + int(s)
    return idx


def index_to_batch(index: int, size: int, width: int) -> tuple[int, ...]:
    out = []
    for _ in range(width):
        out.append(index % size)
        index //= size
    return tuple(reversed(out))


@dataclass(frozen=True)
class BatchModel:
    """Fixed-width window view of a Markov chain.

    Windows of ``width`` consecutive symbols form composite symbols; the
    window-to-window kernel is itself Markov because only the last symbol of
    a window influences the next one.
    """

    base: MarkovModel
    width: int
    _kernel_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("batch width must be >= 1")

    @property
    def batch_count(self) -> int:
        return self.base.alphabet_size ** self.width

    def batch_prior(self, width: int | None = None) -> np.ndarray:
        """Distribution of the first window."""
        w = self.width if width is None else width
        n = self.base.alphabet_size
        dist = self.base.prior
        for _ in range(w - 1):
            last = np.arange(dist.size) % n  # window ids are first-symbol-major
            dist = (dist[:, None] * self.base.transition[last]).reshape(-1)
        out = dist.copy()
        out /= out.sum()
        return out

    def kernel_from_symbol(self, width: int | None = None) -> np.ndarray:
        """Rows: last symbol of the previous window; columns: next window id."""
        w = self.width if width is None else width
        key = ("sym", w)
        if key not in self._kernel_cache:
            n = self.base.alphabet_size
            k = self.base.transition
            for _ in range(w - 1):
                last = np.arange(k.shape[1]) % n
                k = (k[:, :, None] * self.base.transition[last][None, :, :]).reshape(n, -1)
            k = k / k.sum(axis=1, keepdims=True)
            k.flags.writeable = False
            self._kernel_cache[key] = k
        return self._kernel_cache[key]

    def batch_kernel(self, prev_width: int | None = None, next_width: int | None = None) -> np.ndarray:
        """Window-to-window kernel, rows indexed by previous window id."""
        pw = self.width if prev_width is None else prev_width
        nw = self.width if next_width is None else next_width
        key = ("batch", pw, nw)
        if key not in self._kernel_cache:
            n = self.base.alphabet_size
            sym = self.kernel_from_symbol(nw)
            rows = np.empty((n**pw, n**nw))
            for idx in range(n**pw):
                last = index_to_batch(idx, n, pw)[-1]
                rows[idx] = sym[last]
            rows.flags.writeable = False
            self._kernel_cache[key] = rows
        return self._kernel_cache[key]


def batch_transition(model: BatchModel, previous_batch, next_batch) -> float:
    """Probability of ``next_batch`` given ``previous_batch``.

    Product of per-step conditionals across the window boundary; the first
    factor conditions on the last symbol of the previous window.
    """
    prev = tuple(int(s) for s in previous_batch)
    nxt = tuple(int(s) for s in next_batch)
    if len(prev) != model.width or len(nxt) != model.width:
        raise ValueError(
            f"batch length mismatch: expected width {model.width}, "
            f"got {len(prev)} and {len(nxt)}"
        )
    n = model.base.alphabet_size
    t = model.base.transition
    p = 1.0
    last = prev[-1]
    for s in nxt:
        if not 0 <= s < n or not 0 <= last < n:
            raise ValueError("symbol out of range")
        p *= t[last, s]
        last = s
    return p


# ---------------------------------------------------------------------------
# sampling

_PHILOX_STREAM_SPACING = 2**16


def stream_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one stream; distinct streams never collide."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


def sample_sequence(model: MarkovModel, length: int, seed: int, stream: int = 0) -> np.ndarray:
    """Draw one trajectory; deterministic given (seed, stream)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = stream_rng(seed, stream)
    u = rng.random(length)
    cum_prior = np.cumsum(model.prior)
    cum_rows = np.cumsum(model.transition, axis=1)
    out = np.empty(length, dtype=np.int64)
    out[0] = np.searchsorted(cum_prior, u[0], side="right")
    for k in range(1, length):
        out[k] = np.searchsorted(cum_rows[out[k - 1]], u[k], side="right")
    np.clip(out, 0, model.alphabet_size - 1, out=out)
    return out


def sample_corpus(model: MarkovModel, length: int, count: int, seed: int) -> list[np.ndarray]:
    return [sample_sequence(model, length, seed, stream=i) for i in range(count)]


# ---------------------------------------------------------------------------
# file formats


def save_model(model: MarkovModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> MarkovModel:
    with open(path, encoding="utf-8") as fh:
        return MarkovModel.from_dict(json.load(fh))


def read_corpus(path) -> list[np.ndarray]:
    """Parse a corpus file; raises with the offending line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ids = [int(tok) for tok in line.split()]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if any(i < 0 for i in ids):
                raise ValueError(f"{path}:{lineno}: negative symbol id")
            out.append(np.asarray(ids, dtype=np.int64))
    if not out:
        raise ValueError(f"empty corpus: {path}")
    return out


def write_corpus(path, sequences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(" ".join(str(int(s)) for s in seq))
            fh.write("\n")
