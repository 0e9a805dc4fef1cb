"""Mode-dependent extended-state model.

The extended state stacks the newest plant state known to the controller,
``x_tilde = x[k - r]``, with the packet history ``u_hat``. Its one-step map
depends on the current and next sensor ages and on the actuator ages realized
inside the unknown window.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ModeError, ShapeError, WindowError
from .layout import PacketLayout, SelectorSet, build_selectors


@dataclass(frozen=True, eq=False)
class PlantModel:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        B = np.atleast_2d(np.array(self.B, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ShapeError(f"B must have {A.shape[0]} rows, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ShapeError("plant matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ExtendedState:
    x_tilde: np.ndarray
    u_hat: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.x_tilde, self.u_hat])

    @classmethod
    def split(cls, x_hat, n: int) -> "ExtendedState":
        x_hat = np.asarray(x_hat, dtype=float)
        return cls(x_hat[:n].copy(), x_hat[n:].copy())


@dataclass(frozen=True, eq=False)
class ModeMatrices:
    """``a_tilde``, the ``a_bar[i]`` terms for ``i = r_next..r`` and ``b_tilde``."""

    a_tilde: np.ndarray
    a_bar: dict
    b_tilde: np.ndarray

    def total_a(self) -> np.ndarray:
        return self.a_tilde + sum(self.a_bar.values(), np.zeros_like(self.a_tilde))


@dataclass(frozen=True, eq=False)
class ExtendedModel:
    """Plant, layout and selectors with the cached powers of ``A``."""

    plant: PlantModel
    layout: PacketLayout
    selectors: SelectorSet = None
    a_powers: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.layout.m != self.plant.m:
            raise ShapeError(f"layout width {self.layout.m} != plant input width {self.plant.m}")
        if self.selectors is None:
            object.__setattr__(self, "selectors", build_selectors(self.layout))
        pw = [np.eye(self.plant.n)]
        for _ in range(self.layout.r_hi + 1):
            pw.append(pw[-1] @ self.plant.A)
        object.__setattr__(self, "a_powers", tuple(pw))

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def nx(self) -> int:
        """Width of the extended state."""
        return self.plant.n + self.layout.m_hat

    def _check_r(self, *rs):
        for r in rs:
            if not self.layout.r_lo <= r <= self.layout.r_hi:
                raise ModeError(f"sensor age {r} outside [{self.layout.r_lo}, {self.layout.r_hi}]")

    def _check_d(self, d):
        if not self.layout.d_lo <= d <= self.layout.d_hi:
            raise ModeError(f"actuator age {d} outside [{self.layout.d_lo}, {self.layout.d_hi}]")

    def a_tilde(self, r: int, r_next: int) -> np.ndarray:
        self._check_r(r, r_next)
        if r_next > r + 1:
            raise ModeError(f"impossible transition r={r} -> r_next={r_next}")
        n = self.n
        out = np.zeros((self.nx, self.nx))
        out[:n, :n] = self.a_powers[1 + r - r_next]
        out[n:, n:] = self.selectors.shift_full
        return out

    def a_bar(self, i: int, r_next: int, d: int) -> np.ndarray:
        if i < r_next:
            raise ModeError(f"a_bar index i={i} below r_next={r_next}")
        self._check_d(d)
        n = self.n
        out = np.zeros((self.nx, self.nx))
        out[:n, n:] = self.a_powers[i - r_next] @ self.plant.B @ self.selectors.hat(i, d)
        return out

    def b_tilde(self, r_next: int, d: int) -> np.ndarray:
        self._check_d(d)
        n = self.n
        out = np.zeros((self.nx, self.layout.m_tilde))
        if r_next == 0:
            out[:n] = self.plant.B @ self.selectors.now(d)
        out[n:] = self.selectors.shift_in
        return out

    def mode_matrices(self, r: int, r_next: int, d_args: Mapping[int, int]) -> ModeMatrices:
        """Matrices of one extended step; ``d_args[i]`` is the age realized at ``k - i``."""
        _require_window(d_args, range(r_next, r + 1))
        a_bar = {i: self.a_bar(i, r_next, d_args[i]) for i in range(r_next, r + 1)}
        if r_next == 0:
            _require_window(d_args, [0])
        b = self.b_tilde(r_next, d_args[0] if 0 in d_args else self.layout.d_lo)
        return ModeMatrices(self.a_tilde(r, r_next), a_bar, b)

    def step(self, state: ExtendedState, r: int, r_next: int, d_window: Mapping[int, int],
             u_tilde) -> ExtendedState:
        """Advance the extended state by one time step.

        ``d_window`` maps ``i`` to the actuator age realized at ``k - i`` for
        ``i = r_next..r`` (and ``i = 0`` when ``r_next == 0``).
        """
        u_tilde = np.asarray(u_tilde, dtype=float)
        modes = self.mode_matrices(r, r_next, d_window)
        x_hat = state.vector
        nxt = modes.total_a() @ x_hat + modes.b_tilde @ u_tilde
        return ExtendedState.split(nxt, self.n)

    def reconstruct_state(self, state: ExtendedState, r: int, d_window: Mapping[int, int]):
        """True plant state ``x[k]`` from the extended state and realized ages."""
        self._check_r(r)
        _require_window(d_window, range(1, r + 1))
        B = self.plant.B
        x = self.a_powers[r] @ state.x_tilde
        for i in range(1, r + 1):
            x = x + self.a_powers[i - 1] @ B @ (self.selectors.hat(i, d_window[i]) @ state.u_hat)
        return x

    def reconstruct_input(self, i: int, d: int, u_hat, u_tilde) -> np.ndarray:
        """Input applied ``i`` steps ago, given it came from a packet of age ``d``."""
        if not 0 <= i <= self.layout.r_hi:
            raise IndexError(f"lag {i} outside [0, {self.layout.r_hi}]")
        self._check_d(d)
        u = self.selectors.hat(i, d) @ np.asarray(u_hat, dtype=float)
        if i == 0:
            u = u + self.selectors.now(d) @ np.asarray(u_tilde, dtype=float)
        return u

    def q_tilde(self, weight: np.ndarray, r: int, d_window: Mapping[int, int]) -> np.ndarray:
        """Matrix with ``x_hat' Q~ x_hat = x[k]' W x[k]`` for the realized window."""
        self._check_r(r)
        _require_window(d_window, range(1, r + 1))
        n = self.n
        # x[k] = G x_hat
        G = np.zeros((n, self.nx))
        G[:, :n] = self.a_powers[r]
        for i in range(1, r + 1):
            G[:, n:] += self.a_powers[i - 1] @ self.plant.B @ self.selectors.hat(i, d_window[i])
        return G.T @ weight @ G


def _require_window(window: Mapping[int, int], needed) -> None:
    missing = [i for i in needed if i not in window]
    if missing:
        raise WindowError(f"delay window is missing lags {missing}")


def build_mode_matrices(model: ExtendedModel, r: int, r_next: int,
                        d_args: Mapping[int, int]) -> ModeMatrices:
    return model.mode_matrices(r, r_next, d_args)


def step_extended(model: ExtendedModel, state: ExtendedState, r: int, r_next: int,
                  d_window: Mapping[int, int], u_tilde) -> ExtendedState:
    return model.step(state, r, r_next, d_window, u_tilde)


def reconstruct_state(model: ExtendedModel, state: ExtendedState, r: int,
                      d_window: Mapping[int, int]) -> np.ndarray:
    return model.reconstruct_state(state, r, d_window)


def reconstruct_input(model: ExtendedModel, i: int, d: int, u_hat, u_tilde) -> np.ndarray:
    return model.reconstruct_input(i, d, u_hat, u_tilde)
