"""Closed-loop simulation of the plant, the two delaying links and the controller.

:func:`run_episode` is the readable reference loop producing a full
:class:`SimTrace`. :func:`run_monte_carlo` evaluates many episodes through the
batched kernels in :mod:`ncsopt._kernels`. Both draw the same uniforms for
the same seed, so episode 0 of a Monte-Carlo batch equals ``run_episode``
with that seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._accel import backend_name
from .errors import ChainViolation, ScheduleGap
from .layout import PacketLayout


def draw_counts(spec) -> tuple:
    """Number of uniforms consumed per episode by the r path and the d path."""
    k0, N = spec.cost.k0, spec.cost.N
    n_r = N + 1 - k0
    n_d = N + spec.d_chain.hi - (k0 - 1 - spec.init.r0)
    return n_r, n_d


def draw_uniforms(spec, episodes: int, seed) -> np.ndarray:
    n_r, n_d = draw_counts(spec)
    return np.random.default_rng(seed).random((episodes, n_r + n_d))


def paths_from_uniforms(spec, uniforms: np.ndarray):
    n_r, _ = draw_counts(spec)
    r_paths = _kernels.sample_paths(spec.r_chain.cdf(), spec.r_chain.lo, spec.init.r0,
                                    uniforms[:, :n_r])
    d_paths = _kernels.sample_paths(spec.d_chain.cdf(), spec.d_chain.lo, spec.init.d_init,
                                    uniforms[:, n_r:])
    return r_paths, d_paths


class Controller:
    """Computes packets from the information it is allowed to see.

    Each call receives the current sensor age, the newest plant state and the
    newest known actuator age; everything else comes from the controller's own
    log of packets it has sent.
    """

    def __init__(self, schedule, layout: PacketLayout, pre_history):
        self.schedule = schedule
        self.layout = layout
        self.sent = [np.asarray(p, dtype=float) for p in pre_history]

    def history(self) -> np.ndarray:
        lay = self.layout
        parts = [self.sent[-p][:lay.m_bar[p - 1]] for p in range(1, lay.horizon + 1)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def x_hat(self, x_tilde) -> np.ndarray:
        return np.concatenate([np.asarray(x_tilde, dtype=float), self.history()])

    def act(self, k: int, r: int, x_tilde, d_known: int) -> np.ndarray:
        gain = self.schedule.L_at(k, r, d_known)
        u_tilde = -gain @ self.x_hat(x_tilde)
        self.sent.append(u_tilde)
        return u_tilde


def select_input(packet_log: dict, t: int, d: int, layout: PacketLayout) -> np.ndarray:
    """Actuator rule: apply the age-``d`` component of the packet sent at ``t - d``."""
    off = layout.component_offset(d)
    return packet_log[t - d][off:off + layout.m]


@dataclass
class SimTrace:
    """One closed-loop realization.

    Per-step arrays cover ``k = k0..N``. ``x_full``, ``d_full`` and
    ``packet_log`` are keyed by absolute time and include the pre-start
    values needed to audit the run.
    """

    k: np.ndarray
    x: np.ndarray
    u: np.ndarray
    u_tilde: np.ndarray
    r: np.ndarray
    d: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: float
    J_tilde: float
    J: float
    x_hat0: np.ndarray
    x_final: np.ndarray
    d_full: dict = field(repr=False, default_factory=dict)
    r_full: dict = field(repr=False, default_factory=dict)
    x_full: dict = field(repr=False, default_factory=dict)
    packet_log: dict = field(repr=False, default_factory=dict)
    x_hats: list = field(repr=False, default_factory=list)

    def write_csv(self, path) -> None:
        n, m = self.x.shape[1], self.u.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
                       + ["r", "d", "stage_cost"])
            for row in range(len(self.k)):
                w.writerow([int(self.k[row])] + [repr(float(v)) for v in self.x[row]]
                           + [repr(float(v)) for v in self.u[row]]
                           + [int(self.r[row]), int(self.d[row]),
                              repr(float(self.stage_cost[row]))])


def run_episode(spec, schedule, seed=None, *, uniforms=None, r_path=None, d_path=None,
                controller_cls=Controller) -> SimTrace:
    """Simulate one episode.

    Delay paths come from ``seed`` (or explicit ``uniforms``) unless given
    directly as ``r_path`` (ages at ``k0..N+1``) and ``d_path`` (ages at
    ``k0-1-r0..N+d_hi``).
    """
    lay, plant, cost = spec.layout, spec.plant, spec.cost
    A, B = plant.A, plant.B
    k0, N = cost.k0, cost.N
    r0, d_init = spec.init.r0, spec.init.d_init
    H = lay.horizon
    if schedule.k0 != k0 or schedule.N < N:
        raise ScheduleGap(f"schedule covers k={schedule.k0}..{schedule.N}, need {k0}..{N}")

    if r_path is None or d_path is None:
        if uniforms is None:
            uniforms = draw_uniforms(spec, 1, seed)
        r_paths, d_paths = paths_from_uniforms(spec, np.atleast_2d(uniforms))
        r_path, d_path = r_paths[0], d_paths[0]
    r_path = np.asarray(r_path, dtype=int)
    d_path = np.asarray(d_path, dtype=int)
    td0 = k0 - 1 - r0
    r_full = {k0 + i: int(v) for i, v in enumerate(r_path)}
    d_full = {td0 + i: int(v) for i, v in enumerate(d_path)}
    if r_full[k0] != r0 or d_full[td0] != d_init:
        raise ChainViolation("delay paths do not start at the configured initial values")
    for seq, (lo, hi), name in ((r_full, (lay.r_lo, lay.r_hi), "r"),
                                (d_full, (lay.d_lo, lay.d_hi), "d")):
        ts = sorted(seq)
        for a, b in zip(ts, ts[1:]):
            if not lo <= seq[b] <= hi or seq[b] > seq[a] + 1:
                raise ChainViolation(f"{name} jumps from {seq[a]} to {seq[b]} at time {b}")

    pre = spec.init.pre_history
    packet_log = {k0 - H + j: pre[j].copy() for j in range(H)}
    ctrl = controller_cls(schedule, lay, [pre[j] for j in range(H)])

    x_full = {k0 - r0: spec.init.x0.copy()}
    for t in range(k0 - r0, k0):
        u = select_input(packet_log, t, d_full[t], lay)
        x_full[t + 1] = A @ x_full[t] + B @ u

    ks, xs, us, uts, rs, ds, stage, x_hats = [], [], [], [], [], [], [], []
    for k in range(k0, N + 1):
        r = r_full[k]
        d_known = d_full[k - 1 - r]
        x_hats.append(ctrl.x_hat(x_full[k - r]))
        u_tilde = ctrl.act(k, r, x_full[k - r], d_known)
        packet_log[k] = u_tilde
        u = select_input(packet_log, k, d_full[k], lay)
        x = x_full[k]
        stage.append(float(x @ cost.Q @ x + u @ cost.R @ u))
        ks.append(k)
        xs.append(x)
        us.append(u)
        uts.append(u_tilde)
        rs.append(r)
        ds.append(d_full[k])
        x_full[k + 1] = A @ x + B @ u

    x_end = x_full[N + 1]
    terminal = float(x_end @ cost.Q_bar @ x_end)
    J_tilde = float(sum(stage)) + terminal
    J = terminal + sum(float(x @ cost.Q @ x) for x in xs)
    for k in range(k0, N + 1):
        for p in range(lay.d_lo, lay.d_hi + 1):
            if d_full[k + p] == p:
                c = packet_log[k][lay.component_offset(p):lay.component_offset(p) + lay.m]
                J += float(c @ cost.R @ c)

    return SimTrace(np.array(ks), np.array(xs), np.array(us), np.array(uts), np.array(rs),
                    np.array(ds), np.array(stage), terminal, J_tilde, J,
                    spec.initial_x_hat(), x_end, d_full, r_full, x_full, packet_log, x_hats)


@dataclass(frozen=True)
class MonteCarloSummary:
    mean_J: float
    mean_Jtilde: float
    stderr_J: float
    stderr_Jtilde: float
    v_k0: float
    episodes: int
    seed: int
    backend: str

    def to_text(self) -> str:
        fields = [("mean_J", self.mean_J), ("mean_Jtilde", self.mean_Jtilde),
                  ("stderr_J", self.stderr_J), ("stderr_Jtilde", self.stderr_Jtilde),
                  ("v_k0", self.v_k0), ("episodes", self.episodes), ("seed", self.seed)]
        return "".join(f"{name} = {val!r}\n" for name, val in fields)


def rollout_costs(spec, schedule, r_paths, d_paths, backend=None):
    """``(J, J_tilde)`` arrays for given delay paths, via the batched kernel."""
    lay, c = spec.layout, spec.cost
    return _kernels.rollout(spec.plant.A, spec.plant.B, c.Q, c.R, c.Q_bar, schedule.L,
                            np.array(lay.m_bar, dtype=np.int64), lay.m, lay.d_lo, lay.d_hi,
                            lay.r_lo, c.k0, c.N, spec.init.r0, spec.init.x0,
                            spec.init.pre_history, r_paths, d_paths, backend=backend)


def run_monte_carlo(spec, schedule, episodes: int = None, seed: int = None,
                    backend=None) -> MonteCarloSummary:
    episodes = spec.run.episodes if episodes is None else episodes
    seed = spec.run.seed if seed is None else seed
    if episodes < 2:
        raise ValueError("need at least two episodes for a standard error")
    if schedule.k0 != spec.cost.k0 or schedule.N < spec.cost.N:
        raise ScheduleGap("schedule does not cover the horizon of the spec")
    r_paths, d_paths = paths_from_uniforms(spec, draw_uniforms(spec, episodes, seed))
    J, Jt = rollout_costs(spec, schedule, r_paths, d_paths, backend=backend)
    v = schedule.value(spec.initial_x_hat(), spec.init.r0, spec.init.d_init)
    return MonteCarloSummary(float(J.mean()), float(Jt.mean()),
                             float(J.std(ddof=1) / np.sqrt(episodes)),
                             float(Jt.std(ddof=1) / np.sqrt(episodes)),
                             v, episodes, seed, backend or backend_name())
