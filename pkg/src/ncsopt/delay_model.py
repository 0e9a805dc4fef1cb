"""Bounded stationary Markov chains for the sensor and actuator packet ages.

A :class:`DelayChain` stores the one-step transition matrix over the delay
values ``lo..hi`` (indexed in absolute delay units by the public methods) and
serves n-step probabilities from a cache of matrix powers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRange, RowSumError, ShapeError, SupportError

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TransitionQuery:
    from_value: int
    to_value: int
    steps: int


@dataclass(frozen=True, eq=False)
class DelayChain:
    """Markov chain on the integer delays ``lo..hi``.

    ``step[a - lo, b - lo]`` is the probability of moving from delay ``a`` to
    delay ``b`` in one time step. Construction validates the matrix.
    """

    lo: int
    hi: int
    step: np.ndarray
    _powers: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        step = np.array(self.step, dtype=float)
        step.setflags(write=False)
        object.__setattr__(self, "step", step)
        validate(self)
        eye = np.eye(self.size)
        eye.setflags(write=False)
        self._powers.append(eye)

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def values(self) -> range:
        return range(self.lo, self.hi + 1)

    def power(self, steps: int) -> np.ndarray:
        """Return ``step ** steps``, extending the cache on demand."""
        if steps < 0:
            raise ValueError(f"steps must be non-negative, got {steps}")
        while len(self._powers) <= steps:
            nxt = self._powers[-1] @ self.step
            nxt.setflags(write=False)
            self._powers.append(nxt)
        return self._powers[steps]

    def index(self, value: int) -> int:
        if not self.lo <= value <= self.hi:
            raise OutOfRange(f"delay {value} outside [{self.lo}, {self.hi}]")
        return value - self.lo

    def n_step(self, from_value: int, to_value: int, steps: int) -> float:
        return float(self.power(steps)[self.index(from_value), self.index(to_value)])

    def cdf(self) -> np.ndarray:
        """Row-wise cumulative distribution used by inverse-CDF sampling."""
        c = np.cumsum(self.step, axis=1)
        c[:, -1] = 1.0
        return c

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "step": self.step.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DelayChain":
        try:
            lo, hi, step = int(data["lo"]), int(data["hi"]), data["step"]
        except KeyError as exc:
            raise ShapeError(f"chain is missing field {exc.args[0]!r}") from None
        return cls(lo, hi, step)

    @classmethod
    def constant(cls, value: int) -> "DelayChain":
        """Deterministic chain that always reports ``value``."""
        return cls(value, value, [[1.0]])


def validate(chain: DelayChain) -> None:
    """Check shape, stochasticity and the two-sided support rule.

    The rule is: ``step[a][b] > 0`` if and only if ``b <= a + 1``. Raises on
    the first violation found; returns None when the chain is valid.
    """
    lo, hi, step = chain.lo, chain.hi, chain.step
    if not (isinstance(lo, (int, np.integer)) and isinstance(hi, (int, np.integer))):
        raise ShapeError("chain bounds must be integers")
    if lo < 0 or hi < lo:
        raise ShapeError(f"invalid chain bounds lo={lo}, hi={hi}")
    size = hi - lo + 1
    if step.shape != (size, size):
        raise ShapeError(f"step matrix has shape {step.shape}, expected {(size, size)}")
    if not np.all(np.isfinite(step)):
        raise ShapeError("step matrix has non-finite entries")
    for a in range(size):
        for b in range(size):
            p = step[a, b]
            if p < 0.0 or p > 1.0:
                raise SupportError(a + lo, b + lo, p, f"probability {p!r} outside [0, 1] "
                                   f"at ({a + lo}, {b + lo})")
            if b > a + 1 and p != 0.0:
                raise SupportError(a + lo, b + lo, p, f"positive mass {p!r} at ({a + lo}, "
                                   f"{b + lo}) but a delay cannot grow by more than one step")
            if b <= a + 1 and p <= 0.0:
                raise SupportError(a + lo, b + lo, p, f"zero mass at ({a + lo}, {b + lo}) "
                                   "where a packet must be receivable")
        total = float(step[a].sum())
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise RowSumError(a + lo, total)


def n_step(chain: DelayChain, q: TransitionQuery) -> float:
    if q.steps < 0:
        raise ValueError("steps must be non-negative")
    return chain.n_step(q.from_value, q.to_value, q.steps)


def sample_next(chain: DelayChain, current: int, rng: np.random.Generator) -> int:
    """Draw the next delay given the current one (one uniform per call)."""
    row = chain.cdf()[chain.index(current)]
    u = rng.random()
    return chain.lo + int(np.searchsorted(row, u, side="right"))
