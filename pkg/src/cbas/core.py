"""Shared vocabulary: design points, desideratum events, relaxation state, capability contracts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


class CbASError(Exception):
    """Base class for errors raised by this package."""


class DegenerateWeightsError(CbASError):
    pass


class DensityUnderflowError(CbASError):
    pass


class LatentSpaceMismatchError(CbASError):
    pass


class IllPosedFitError(CbASError):
    pass


class ConfigError(CbASError):
    pass


# ---------------------------------------------------------------------------
# Design points
# ---------------------------------------------------------------------------

def as_continuous(x) -> np.ndarray:
    """Validate a batch of continuous design points, returning shape (M, L)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected (M, L) continuous designs, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("continuous design points must be finite")
    return arr


def as_sequences(x, alphabet_size: int, length: int | None = None) -> np.ndarray:
    """Validate a batch of symbol-index sequences, returning an int array of shape (M, L)."""
    arr = np.asarray(x)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("sequences must be a 2-D integer array")
    if length is not None and arr.shape[1] != length:
        raise ValueError(f"sequence length {arr.shape[1]} != model length {length}")
    if arr.size and (arr.min() < 0 or arr.max() >= alphabet_size):
        raise ValueError(f"symbol index outside [0, {alphabet_size})")
    return arr.astype(np.int64, copy=False)


# ---------------------------------------------------------------------------
# Desideratum events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Maximize:
    """The set ``{y : y >= gamma}``; larger gamma is a smaller set."""

    gamma: float = -math.inf

    def contains(self, y: float) -> bool:
        return y >= self.gamma


@dataclass(frozen=True)
class Specify:
    """The interval ``[y0 - gamma, y0 + gamma]``; smaller gamma is a smaller set."""

    y0: float
    gamma: float = math.inf

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"Specify.gamma must be >= 0, got {self.gamma}")

    def contains(self, y: float) -> bool:
        return abs(y - self.y0) <= self.gamma


@dataclass(frozen=True)
class Conjunction:
    events: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.events:
            raise ValueError("Conjunction needs at least one event")

    def contains(self, y) -> bool:
        ys = np.broadcast_to(np.asarray(y, dtype=float), (len(leaves(self)),))
        return all(leaf.contains(float(v)) for leaf, v in zip(leaves(self), ys))


DesideratumEvent = Maximize | Specify | Conjunction


def leaves(event: DesideratumEvent) -> list:
    """Flatten an event into its Maximize/Specify leaves, depth first."""
    if isinstance(event, Conjunction):
        out = []
        for child in event.events:
            out.extend(leaves(child))
        return out
    return [event]


def rebuild(event: DesideratumEvent, new_leaves: Sequence) -> DesideratumEvent:
    """Inverse of :func:`leaves`: replace the leaves of ``event`` in order."""
    it = iter(new_leaves)

    def _walk(e):
        if isinstance(e, Conjunction):
            return Conjunction(tuple(_walk(c) for c in e.events))
        return next(it)

    out = _walk(event)
    if next(it, None) is not None:
        raise ValueError("too many leaves for event structure")
    return out


def event_membership(event: DesideratumEvent, y) -> bool:
    """Whether ``y`` lies in the set encoded by ``event``.

    For a Conjunction, ``y`` is either a scalar shared by all leaves or one
    value per leaf (each leaf has its own property).
    """
    return event.contains(y)


def is_subset(inner: DesideratumEvent, outer: DesideratumEvent) -> bool:
    """Leaf-wise nesting test for two events of identical structure."""
    a, b = leaves(inner), leaves(outer)
    if len(a) != len(b):
        raise ValueError("events have different structure")
    for x, y in zip(a, b):
        if type(x) is not type(y):
            raise ValueError("events have different structure")
        if isinstance(x, Maximize) and not x.gamma >= y.gamma:
            return False
        if isinstance(x, Specify) and (x.y0 != y.y0 or not x.gamma <= y.gamma):
            return False
    return True


def nearest_rank_percentile(values, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q * M)``-th smallest value (1-based)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("no samples")
    if not 0 < q <= 1:
        raise ValueError(f"quantile must lie in (0, 1], got {q}")
    if not np.all(np.isfinite(v)):
        raise ValueError("percentile of non-finite values")
    # guard against 0.8 * 10 == 8.000000000000002
    rank = math.ceil(round(q * v.size, 9))
    rank = min(max(rank, 1), v.size)
    return float(np.partition(v, rank - 1)[rank - 1])


@dataclass(frozen=True)
class RelaxationState:
    """Current relaxed event ``S^(t)`` and the quantile used to tighten it.

    ``target``, when given, is the final set ``S``: thresholds are never
    tightened past it, so the chain of relaxed events ends at ``S``.
    """

    current: DesideratumEvent
    Q: float = 1.0
    t: int = 0
    target: DesideratumEvent | None = None

    def __post_init__(self):
        if not 0 < self.Q <= 1:
            raise ValueError(f"Q must lie in (0, 1], got {self.Q}")
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if self.target is not None and len(leaves(self.target)) != len(leaves(self.current)):
            raise ValueError("target must have the same structure as the current event")

    def gammas(self) -> tuple[float, ...]:
        return tuple(leaf.gamma for leaf in leaves(self.current))

    def advance(self, event: DesideratumEvent) -> "RelaxationState":
        return replace(self, current=event, t=self.t + 1)


# ---------------------------------------------------------------------------
# Capability contracts
# ---------------------------------------------------------------------------

@runtime_checkable
class Oracle(Protocol):
    def predictive_mean(self, x) -> np.ndarray: ...

    def predictive_variance(self, x) -> np.ndarray: ...

    def survival(self, x, gamma: float) -> np.ndarray: ...

    def interval(self, x, y0: float, gamma: float) -> np.ndarray: ...


@runtime_checkable
class GenerativeModel(Protocol):
    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray: ...

    def log_density(self, x) -> np.ndarray: ...

    def fit_weighted(self, samples, weights) -> "GenerativeModel": ...


@runtime_checkable
class LatentGenerativeModel(Protocol):
    latent_dim: int

    def sample_joint(self, rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]: ...

    def log_conditional(self, x, z) -> np.ndarray: ...

    def log_latent_prior(self, z) -> np.ndarray: ...

    def log_joint_density(self, x, z) -> np.ndarray: ...

    def fit_weighted(self, samples, weights) -> "LatentGenerativeModel": ...


def leaf_probability(leaf, oracle: Oracle, x) -> np.ndarray:
    if isinstance(leaf, Maximize):
        return oracle.survival(x, leaf.gamma)
    if isinstance(leaf, Specify):
        return oracle.interval(x, leaf.y0, leaf.gamma)
    raise TypeError(f"not a leaf event: {leaf!r}")


def as_oracle_list(event: DesideratumEvent, oracles) -> list:
    n = len(leaves(event))
    if isinstance(oracles, (list, tuple)):
        if len(oracles) != n:
            raise ValueError(f"event has {n} leaves but {len(oracles)} oracles were given")
        return list(oracles)
    if n != 1:
        raise ValueError("a conjunction needs one oracle per leaf")
    return [oracles]


def event_probability(event: DesideratumEvent, oracles, x) -> np.ndarray:
    """``P(S|x)`` for a batch; conjunctions multiply per-leaf probabilities."""
    ors = as_oracle_list(event, oracles)
    p = None
    for leaf, oracle in zip(leaves(event), ors):
        pl = np.asarray(leaf_probability(leaf, oracle, x), dtype=float)
        p = pl if p is None else p * pl
    return p


def log_event_probability(event: DesideratumEvent, oracles, x) -> np.ndarray:
    ors = as_oracle_list(event, oracles)
    total = 0.0
    for leaf, oracle in zip(leaves(event), ors):
        if isinstance(leaf, Maximize) and hasattr(oracle, "log_survival"):
            total = total + oracle.log_survival(x, leaf.gamma)
        else:
            with np.errstate(divide="ignore"):
                total = total + np.log(leaf_probability(leaf, oracle, x))
    return np.asarray(total, dtype=float)
