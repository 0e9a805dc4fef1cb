"""Offline synthesis of the delay-conditioned gain schedule.

For every step ``k`` and mode ``(r, d)`` (sensor age and newest known actuator
age) the expected stage cost and expected cost-to-go are quadratic in the
extended state ``x_hat`` and the packet ``u_tilde``::

    E1 = u' R_hat u
    E2 = x' Q_hat x
    E3 = x' H_hat x + 2 u' M_hat x + u' O_hat u

Minimizing over ``u`` gives ``u = -L x`` and the next value matrix ``K``.

All probabilities of actuator ages are looked up through :func:`elapsed_phi`
with explicit time stamps relative to ``k``. The newest known age was
realized at ``k - 1 - r``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .delay_model import DelayChain
from .dynamics import ExtendedModel
from .errors import (FormatError, IncompleteTable, ScheduleGap, SolveError,
                     TimeOrderError)

COND_LIMIT = 1e12
FORMAT_TAG = "ncsopt-gain-schedule"
FORMAT_VERSION = 1


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def elapsed_phi(d_chain: DelayChain, from_d: int, to_d: int, t_from: int, t_to: int) -> float:
    """P(d[t_to] = to_d | d[t_from] = from_d)."""
    if t_to < t_from:
        raise TimeOrderError(f"target time {t_to} precedes conditioning time {t_from}")
    return d_chain.n_step(from_d, to_d, t_to - t_from)


def build_R_hat(model: ExtendedModel, d_chain: DelayChain, R: np.ndarray, r: int,
                d_known: int) -> np.ndarray:
    lay = model.layout
    t0 = -1 - r
    m = lay.m
    out = np.zeros((lay.m_tilde, lay.m_tilde))
    for p in range(lay.d_lo, lay.d_hi + 1):
        # component p is charged when the age realized at k + p equals p
        w = elapsed_phi(d_chain, d_known, p, t0, p)
        off = lay.component_offset(p)
        out[off:off + m, off:off + m] = w * R
    return out


def build_Q_hat(model: ExtendedModel, d_chain: DelayChain, W: np.ndarray, r: int,
                d_known: int) -> np.ndarray:
    """Conditional expectation of the matrix mapping ``x_hat`` to ``x[k]' W x[k]``."""
    n, nx = model.n, model.nx
    sel = model.selectors
    Ap, B = model.a_powers, model.plant.B
    d_vals = d_chain.values
    t0 = -1 - r

    def phi(a, b, t_from, t_to):
        return elapsed_phi(d_chain, a, b, t_from, t_to)

    Q11 = Ap[r].T @ W @ Ap[r]
    Q12 = np.zeros((n, nx - n))
    for i in range(1, r + 1):
        expected_pick = sum(phi(d_known, dl, t0, -i) * sel.hat(i, dl) for dl in d_vals)
        Q12 += Ap[r].T @ W @ Ap[i - 1] @ B @ expected_pick

    Q22 = np.zeros((nx - n, nx - n))
    for i in range(1, r + 1):
        for j in range(1, r + 1):
            core = B.T @ Ap[i - 1].T @ W @ Ap[j - 1] @ B
            for d1 in d_vals:
                for d2 in d_vals:
                    if i > j:
                        w = phi(d_known, d1, t0, -i) * phi(d1, d2, -i, -j)
                    elif i < j:
                        w = phi(d_known, d2, t0, -j) * phi(d2, d1, -j, -i)
                    else:
                        w = phi(d_known, d1, t0, -i) if d1 == d2 else 0.0
                    if w == 0.0:
                        continue
                    Q22 += w * sel.hat(i, d1).T @ core @ sel.hat(j, d2)

    out = np.zeros((nx, nx))
    out[:n, :n] = Q11
    out[:n, n:] = Q12
    out[n:, :n] = Q12.T
    out[n:, n:] = Q22
    return sym(out)


class _Table:
    """Read access to ``K_{k+1}`` by absolute mode values."""

    def __init__(self, table, r_lo, d_lo):
        self.table, self.r_lo, self.d_lo = table, r_lo, d_lo

    def __call__(self, rho, delta):
        try:
            K = self.table[rho - self.r_lo, delta - self.d_lo]
        except (KeyError, IndexError):
            raise IncompleteTable(f"K_next has no entry for mode ({rho}, {delta})") from None
        K = np.asarray(K)
        if not np.all(np.isfinite(K)):
            raise IncompleteTable(f"K_next entry for mode ({rho}, {delta}) is not filled")
        return K


def build_E3_kernels(model: ExtendedModel, r_chain: DelayChain, d_chain: DelayChain,
                     K_next, r: int, d_known: int, rho_max: int = None):
    """Return ``(O_hat, M_hat, H_hat)`` for mode ``(r, d_known)``.

    ``K_next[rho - r_lo, delta - d_lo]`` is the value matrix of the next step.
    Only entries with a positive weight are read. ``rho_max`` widens the range
    of next sensor ages (default ``min(r_hi, r + 1)``); ages beyond ``r + 1``
    have zero probability and are skipped.
    """
    lay = model.layout
    nx, mt = model.nx, lay.m_tilde
    d_vals = d_chain.values
    t0 = -1 - r
    K = _Table(K_next, lay.r_lo, lay.d_lo)
    if rho_max is None:
        rho_max = min(lay.r_hi, r + 1)

    def phi(a, b, t_from, t_to):
        return elapsed_phi(d_chain, a, b, t_from, t_to)

    O = np.zeros((mt, mt))
    M1 = np.zeros((mt, nx))
    M2 = np.zeros((mt, nx))
    H11 = np.zeros((nx, nx))
    H12 = np.zeros((nx, nx))
    H22 = np.zeros((nx, nx))

    for rho in range(lay.r_lo, rho_max + 1):
        psi = r_chain.n_step(r, rho, 1)
        if psi == 0.0:
            continue
        At = model.a_tilde(r, rho)
        b_t = {dl: model.b_tilde(rho, dl) for dl in d_vals}
        a_b = {(i, dl): model.a_bar(i, rho, dl) for i in range(rho, r + 1) for dl in d_vals}

        # next newest known age is the one realized at k - rho; d[k] drives b_tilde
        for d1 in d_vals:
            w1 = phi(d_known, d1, t0, -rho)
            if w1 == 0.0:
                continue
            Kn = K(rho, d1)
            H11 += psi * w1 * At.T @ Kn @ At
            for d2 in d_vals:
                w2 = w1 * phi(d1, d2, -rho, 0)
                if w2 == 0.0:
                    continue
                O += psi * w2 * b_t[d2].T @ Kn @ b_t[d2]
                M1 += psi * w2 * b_t[d2].T @ Kn @ At

        for i in range(rho, r + 1):
            for d1 in d_vals:
                w1 = phi(d_known, d1, t0, -i)
                if w1 == 0.0:
                    continue
                for d2 in d_vals:
                    w2 = w1 * phi(d1, d2, -i, -rho)
                    if w2 == 0.0:
                        continue
                    Kn = K(rho, d2)
                    H12 += psi * w2 * At.T @ Kn @ a_b[i, d1]
                    for d3 in d_vals:
                        w3 = w2 * phi(d2, d3, -rho, 0)
                        if w3 == 0.0:
                            continue
                        M2 += psi * w3 * b_t[d3].T @ Kn @ a_b[i, d1]

        for i in range(rho, r + 1):
            for j in range(rho, r + 1):
                for d1 in d_vals:
                    for d2 in d_vals:
                        for d3 in d_vals:
                            if i > j:
                                w = (phi(d_known, d1, t0, -i) * phi(d1, d2, -i, -j)
                                     * phi(d2, d3, -j, -rho))
                            elif i < j:
                                w = (phi(d_known, d2, t0, -j) * phi(d2, d1, -j, -i)
                                     * phi(d1, d3, -i, -rho))
                            elif d1 == d2:
                                w = phi(d_known, d1, t0, -i) * phi(d1, d3, -i, -rho)
                            else:
                                w = 0.0
                            if w == 0.0:
                                continue
                            H22 += psi * w * a_b[i, d1].T @ K(rho, d3) @ a_b[j, d2]

    M = M1 + M2
    H = sym(H11 + H12 + H12.T + H22)
    return sym(O), M, H


@dataclass(frozen=True, eq=False)
class ExpectationKernels:
    R_hat: np.ndarray
    Q_hat: np.ndarray
    O_hat: np.ndarray
    M_hat: np.ndarray
    H_hat: np.ndarray

    def objective(self, x_hat, u_tilde):
        """E1 + E2 + E3 evaluated at ``(x_hat, u_tilde)``.

        The result keeps the precision of the inputs, so extended-precision
        arguments give an extended-precision value.
        """
        x, u = np.asarray(x_hat), np.asarray(u_tilde)
        return (u @ (self.R_hat + self.O_hat) @ u + 2 * u @ self.M_hat @ x
                + x @ (self.Q_hat + self.H_hat) @ x)


def terminal_K(model: ExtendedModel, d_chain: DelayChain, Q_bar: np.ndarray) -> np.ndarray:
    lay = model.layout
    out = np.empty((lay.r_hi - lay.r_lo + 1, lay.d_hi - lay.d_lo + 1, model.nx, model.nx))
    for r in range(lay.r_lo, lay.r_hi + 1):
        for d in range(lay.d_lo, lay.d_hi + 1):
            out[r - lay.r_lo, d - lay.d_lo] = build_Q_hat(model, d_chain, Q_bar, r, d)
    return out


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Value matrices ``K[k]`` for ``k0..N+1`` and gains ``L[k]`` for ``k0..N``.

    Arrays are indexed ``[k - k0, r - r_lo, d - d_lo]``.
    """

    K: np.ndarray
    L: np.ndarray
    k0: int
    N: int
    r_lo: int
    r_hi: int
    d_lo: int
    d_hi: int
    n: int
    m: int
    spec_hash: str = ""
    cond: np.ndarray = None

    @property
    def nx(self) -> int:
        return self.K.shape[-1]

    @property
    def m_tilde(self) -> int:
        return self.L.shape[-2]

    def _idx(self, k, r, d, last):
        if not (self.k0 <= k <= last and self.r_lo <= r <= self.r_hi
                and self.d_lo <= d <= self.d_hi):
            raise ScheduleGap(f"no schedule cell for k={k}, r={r}, d={d}")
        return k - self.k0, r - self.r_lo, d - self.d_lo

    def K_at(self, k: int, r: int, d: int) -> np.ndarray:
        return self.K[self._idx(k, r, d, self.N + 1)]

    def L_at(self, k: int, r: int, d: int) -> np.ndarray:
        return self.L[self._idx(k, r, d, self.N)]

    def value(self, x_hat, r: int, d: int, k: int = None) -> float:
        """Predicted optimal expected cost ``x_hat' K[k](r, d) x_hat``."""
        x_hat = np.asarray(x_hat, dtype=float)
        K = self.K_at(self.k0 if k is None else k, r, d)
        return float(x_hat @ K @ x_hat)

    def header(self) -> dict:
        return {"spec_hash": self.spec_hash, "n": self.n, "m": self.m,
                "m_tilde": self.m_tilde, "m_hat": self.nx - self.n,
                "k0": self.k0, "N": self.N,
                "r_range": [self.r_lo, self.r_hi], "d_range": [self.d_lo, self.d_hi]}

    def dumps(self) -> str:
        lines = [f"{FORMAT_TAG} {FORMAT_VERSION}",
                 "header " + json.dumps(self.header(), sort_keys=True)]
        for name, table, last in (("K", self.K, self.N + 1), ("L", self.L, self.N)):
            for k in range(self.k0, last + 1):
                for r in range(self.r_lo, self.r_hi + 1):
                    for d in range(self.d_lo, self.d_hi + 1):
                        mat = table[k - self.k0, r - self.r_lo, d - self.d_lo]
                        lines.append(f"{name} {k} {r} {d} {mat.shape[0]} {mat.shape[1]}")
                        lines.extend(" ".join(format(float(v), ".17g") for v in row)
                                     for row in mat)
        lines.append("end")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "GainSchedule":
        lines = text.splitlines()
        try:
            tag, version = lines[0].split()
            if tag != FORMAT_TAG or int(version) != FORMAT_VERSION:
                raise FormatError(f"unsupported schedule format {lines[0]!r}")
            if not lines[1].startswith("header "):
                raise FormatError("missing header line")
            hdr = json.loads(lines[1][len("header "):])
            k0, N = hdr["k0"], hdr["N"]
            r_lo, r_hi = hdr["r_range"]
            d_lo, d_hi = hdr["d_range"]
            nx = hdr["n"] + hdr["m_hat"]
            nr, nd = r_hi - r_lo + 1, d_hi - d_lo + 1
            K = np.full((N + 2 - k0, nr, nd, nx, nx), np.nan)
            L = np.full((N + 1 - k0, nr, nd, hdr["m_tilde"], nx), np.nan)
            pos = 2
            while lines[pos] != "end":
                name, k, r, d, rows, cols = lines[pos].split()
                k, r, d, rows, cols = int(k), int(r), int(d), int(rows), int(cols)
                mat = np.array([[float(v) for v in lines[pos + 1 + i].split()]
                                for i in range(rows)]).reshape(rows, cols)
                target = K if name == "K" else L
                target[k - k0, r - r_lo, d - d_lo] = mat
                pos += 1 + rows
        except FormatError:
            raise
        except Exception as exc:
            raise FormatError(f"malformed schedule file: {exc}") from exc
        if np.isnan(K).any() or np.isnan(L).any():
            raise FormatError("schedule file does not cover the full mode table")
        return cls(K, L, k0, N, r_lo, r_hi, d_lo, d_hi, hdr["n"], hdr["m"], hdr["spec_hash"])

    @classmethod
    def load(cls, path) -> "GainSchedule":
        return cls.loads(Path(path).read_text())


def expectation_kernels(spec, K_next, r: int, d_known: int) -> ExpectationKernels:
    """All five kernels of one mode cell, for a given next value table."""
    model = spec.model
    R_hat = build_R_hat(model, spec.d_chain, spec.cost.R, r, d_known)
    Q_hat = build_Q_hat(model, spec.d_chain, spec.cost.Q, r, d_known)
    O, M, H = build_E3_kernels(model, spec.r_chain, spec.d_chain, K_next, r, d_known)
    return ExpectationKernels(R_hat, Q_hat, O, M, H)


def synthesize(spec) -> GainSchedule:
    """Run the backward recursion over ``k = N..k0`` and every mode pair."""
    model, lay, cost = spec.model, spec.layout, spec.cost
    k0, N = cost.k0, cost.N
    nr, nd = lay.r_hi - lay.r_lo + 1, lay.d_hi - lay.d_lo + 1
    nx, mt = model.nx, lay.m_tilde

    K = np.empty((N + 2 - k0, nr, nd, nx, nx))
    L = np.empty((N + 1 - k0, nr, nd, mt, nx))
    cond = np.empty((N + 1 - k0, nr, nd))
    K[N + 1 - k0] = terminal_K(model, spec.d_chain, cost.Q_bar)

    R_hat, Q_hat = {}, {}
    for r in range(lay.r_lo, lay.r_hi + 1):
        for d in range(lay.d_lo, lay.d_hi + 1):
            R_hat[r, d] = build_R_hat(model, spec.d_chain, cost.R, r, d)
            Q_hat[r, d] = build_Q_hat(model, spec.d_chain, cost.Q, r, d)

    for k in range(N, k0 - 1, -1):
        K_next = K[k + 1 - k0]
        for r in range(lay.r_lo, lay.r_hi + 1):
            for d in range(lay.d_lo, lay.d_hi + 1):
                O, M, H = build_E3_kernels(model, spec.r_chain, spec.d_chain, K_next, r, d)
                S = sym(O + R_hat[r, d])
                c = float(np.linalg.cond(S))
                if not np.isfinite(c) or c > COND_LIMIT:
                    raise SolveError(k, r, d, c)
                try:
                    gain = cho_solve(cho_factor(S), M)
                except LinAlgError:
                    raise SolveError(k, r, d, c) from None
                ir, idd = r - lay.r_lo, d - lay.d_lo
                L[k - k0, ir, idd] = gain
                K[k - k0, ir, idd] = sym(H + Q_hat[r, d] - M.T @ gain)
                cond[k - k0, ir, idd] = c

    return GainSchedule(K, L, k0, N, lay.r_lo, lay.r_hi, lay.d_lo, lay.d_hi,
                        model.n, lay.m, spec.spec_hash(), cond)
