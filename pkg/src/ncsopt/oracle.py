"""Brute-force checks for tiny instances.

Everything here recomputes quantities from the raw loop (plant update plus the
actuator's packet selection) and exact path probabilities, without the
selector matrices or expectation kernels used by :mod:`ncsopt.synthesis`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .delay_model import DelayChain
from .dynamics import PlantModel
from .errors import Blowup, LogGap
from .layout import stack_history
from .problem import CostSpec, InitSpec, ProblemSpec
from .simulation import run_episode, run_monte_carlo
from .synthesis import (GainSchedule, build_E3_kernels, build_Q_hat, build_R_hat,
                        expectation_kernels, synthesize)

MAX_SEQUENCES = 10**6
TINY_LIMITS = {"n": 2, "m": 1, "r_hi": 1, "d_hi": 1, "steps": 3}


def require_tiny(spec) -> None:
    """Raise :class:`Blowup` unless ``spec`` is small enough to enumerate."""
    lay = spec.layout
    checks = [("n", spec.n, TINY_LIMITS["n"]), ("m", spec.m, TINY_LIMITS["m"]),
              ("r_hi", lay.r_hi, TINY_LIMITS["r_hi"]), ("d_hi", lay.d_hi, TINY_LIMITS["d_hi"]),
              ("N - k0", spec.cost.N - spec.cost.k0, TINY_LIMITS["steps"])]
    over = [f"{name}={val} (max {cap})" for name, val, cap in checks if val > cap]
    if over:
        raise Blowup("instance too large for exhaustive checks: " + ", ".join(over)
                     + "; shrink the horizon or the delay bounds, or use --level quick")


def enumerate_paths(chain, start: int, steps: int, cap: int = MAX_SEQUENCES):
    """All positive-probability paths of ``steps`` transitions from ``start``."""
    paths = [([start], 1.0)]
    for _ in range(steps):
        nxt = []
        for path, prob in paths:
            a = path[-1]
            for b in chain.values:
                p = chain.step[a - chain.lo, b - chain.lo]
                if p > 0.0:
                    nxt.append((path + [b], prob * p))
        paths = nxt
        if len(paths) > cap:
            raise Blowup(f"more than {cap} delay sequences")
    seqs = np.array([p for p, _ in paths], dtype=np.int64).reshape(len(paths), steps + 1)
    return seqs, np.array([w for _, w in paths])


def _joint_paths(spec, cap=MAX_SEQUENCES):
    k0, N = spec.cost.k0, spec.cost.N
    td0 = k0 - 1 - spec.init.r0
    r_seq, r_w = enumerate_paths(spec.r_chain, spec.init.r0, N + 1 - k0, cap)
    d_seq, d_w = enumerate_paths(spec.d_chain, spec.init.d_init, N + spec.d_chain.hi - td0, cap)
    total = len(r_seq) * len(d_seq)
    if total > cap:
        raise Blowup(f"{total} joint delay sequences exceed the cap of {cap}")
    ri, di = np.meshgrid(np.arange(len(r_seq)), np.arange(len(d_seq)), indexing="ij")
    ri, di = ri.ravel(), di.ravel()
    return r_seq[ri], d_seq[di], r_w[ri] * d_w[di]


def enumerate_expected_cost(spec, schedule, with_tilde: bool = False):
    """Exact E[J] (and optionally E[J_tilde]) of the closed loop under ``schedule``.

    Every joint delay path is replayed through the reference loop
    :func:`ncsopt.simulation.run_episode`.
    """
    r_paths, d_paths, w = _joint_paths(spec)
    J, Jt = np.empty(len(w)), np.empty(len(w))
    for i, (rp, dp) in enumerate(zip(r_paths, d_paths)):
        trace = run_episode(spec, schedule, r_path=rp, d_path=dp)
        J[i], Jt[i] = trace.J, trace.J_tilde
    if with_tilde:
        return float(w @ J), float(w @ Jt)
    return float(w @ J)


def path_probability_total(spec) -> float:
    return float(_joint_paths(spec)[2].sum())


def _open_loop_quadratic(spec, d_path):
    """Cost ``c + 2 g'z + z'Hz`` of one actuator-age path, ``z`` the stacked packets."""
    lay, cost, A, B = spec.layout, spec.cost, spec.plant.A, spec.plant.B
    k0, N, r0 = cost.k0, cost.N, spec.init.r0
    mt, m, H = lay.m_tilde, lay.m, lay.horizon
    td0 = k0 - 1 - r0
    nz = (N + 1 - k0) * mt
    d_at = {td0 + i: int(v) for i, v in enumerate(d_path)}

    # affine maps y = c + S z, stored as (c, S)
    packet = {}
    for j in range(H):
        packet[k0 - H + j] = (spec.init.pre_history[j].copy(), np.zeros((mt, nz)))
    for k in range(k0, N + 1):
        S = np.zeros((mt, nz))
        S[:, (k - k0) * mt:(k - k0 + 1) * mt] = np.eye(mt)
        packet[k] = (np.zeros(mt), S)

    Hq = np.zeros((nz, nz))
    g = np.zeros(nz)
    c0 = 0.0

    def add(c, S, W):
        nonlocal c0, g, Hq
        c0 += c @ W @ c
        g += S.T @ (W @ c)
        Hq += S.T @ W @ S

    xc, xS = spec.init.x0.copy(), np.zeros((spec.n, nz))
    for t in range(k0 - r0, N + 1):
        d = d_at[t]
        pc, pS = packet[t - d]
        off = lay.component_offset(d)
        uc, uS = pc[off:off + m], pS[off:off + m]
        if t >= k0:
            add(xc, xS, cost.Q)
        xc, xS = A @ xc + B @ uc, A @ xS + B @ uS
    add(xc, xS, cost.Q_bar)
    for k in range(k0, N + 1):
        for p in range(lay.d_lo, lay.d_hi + 1):
            if d_at[k + p] == p:
                pc, pS = packet[k]
                off = lay.component_offset(p)
                add(pc[off:off + m], pS[off:off + m], cost.R)
    return c0, g, Hq


def joint_open_loop_min(spec):
    """Minimum over fixed packet sequences of E[J]; returns ``(value, z_opt)``.

    The sensor ages do not influence an open-loop cost, so only actuator-age
    paths are enumerated.
    """
    k0, N = spec.cost.k0, spec.cost.N
    td0 = k0 - 1 - spec.init.r0
    d_seq, d_w = enumerate_paths(spec.d_chain, spec.init.d_init, N + spec.d_chain.hi - td0)
    nz = (N + 1 - k0) * spec.layout.m_tilde
    c0, g, Hq = 0.0, np.zeros(nz), np.zeros((nz, nz))
    for path, w in zip(d_seq, d_w):
        c, gi, Hi = _open_loop_quadratic(spec, path)
        c0 += w * c
        g += w * gi
        Hq += w * Hi
    Hq = 0.5 * (Hq + Hq.T)
    z = np.linalg.lstsq(Hq, -g, rcond=None)[0]
    return float(c0 + g @ z), z


@dataclass(frozen=True)
class CostDecomposition:
    U1: float
    U2: float
    U3: float
    J: float
    J_tilde: float

    @property
    def residual(self) -> float:
        """``J_tilde - (J + U2 - U3)``."""
        return self.J_tilde - (self.J + self.U2 - self.U3)


def check_cost_identity(spec, trace, tol: float = 1e-10) -> CostDecomposition:
    """Split the charged packet costs by index range and check the bookkeeping."""
    lay, R = spec.layout, spec.cost.R
    k0, N = spec.cost.k0, spec.cost.N
    log, d_at = trace.packet_log, trace.d_full

    def charged(k, p):
        if k not in log:
            raise LogGap(f"packet log has no entry for time {k}")
        if k + p not in d_at:
            raise LogGap(f"no realized actuator age at time {k + p}")
        if d_at[k + p] != p:
            return 0.0
        c = log[k][lay.component_offset(p):lay.component_offset(p) + lay.m]
        return float(c @ R @ c)

    ps = range(lay.d_lo, lay.d_hi + 1)
    U1 = sum(charged(k, p) for p in ps for k in range(k0, N + 1))
    U2 = sum(charged(k, p) for p in ps for k in range(k0 - p, k0))
    U3 = sum(charged(k, p) for p in ps for k in range(N + 1 - p, N + 1))
    dec = CostDecomposition(U1, U2, U3, trace.J, trace.J_tilde)
    scale = max(abs(trace.J_tilde), abs(trace.J), 1e-300)
    if abs(dec.residual) > tol * scale:
        raise AssertionError(f"cost identity violated: residual {dec.residual:.3e}")
    return dec


@dataclass(frozen=True)
class KernelReport:
    k: int
    r: int
    d: int
    E1_enum: float
    E2_enum: float
    E3_enum: float
    E1_closed: float
    E2_closed: float
    E3_closed: float

    @staticmethod
    def _rel(a, b):
        s = max(abs(a), abs(b))
        return 0.0 if s == 0.0 else abs(a - b) / s

    @property
    def max_rel_error(self) -> float:
        return max(self._rel(self.E1_enum, self.E1_closed), self._rel(self.E2_enum, self.E2_closed),
                   self._rel(self.E3_enum, self.E3_closed))


def _packets_from_history(spec, k, u_hat):
    """Packet log for times ``k-H..k-1`` holding ``u_hat``'s blocks (other entries 0)."""
    lay = spec.layout
    log = {}
    for p in range(1, lay.horizon + 1):
        off = lay.block_offsets[p - 1]
        pkt = np.zeros(lay.m_tilde)
        pkt[:lay.m_bar[p - 1]] = u_hat[off:off + lay.m_bar[p - 1]]
        log[k - p] = pkt
    return log


def enumerate_stage_expectations(spec, K_next, k, r, d_known, x_hat, u_tilde):
    """E1, E2, E3 for one mode cell by summing over every delay window.

    ``K_next[rho - r_lo, delta - d_lo]`` is the next value table.
    """
    lay, cost, A, B = spec.layout, spec.cost, spec.plant.A, spec.plant.B
    n, m = spec.n, lay.m
    x_hat = np.asarray(x_hat, dtype=float)
    u_tilde = np.asarray(u_tilde, dtype=float)
    x_tilde, u_hat = x_hat[:n], x_hat[n:]
    log = _packets_from_history(spec, k, u_hat)
    log[k] = u_tilde

    t0 = k - 1 - r
    steps = (k + lay.d_hi) - t0
    d_seq, d_w = enumerate_paths(spec.d_chain, d_known, steps)
    E1 = E2 = E3 = 0.0
    for path, w in zip(d_seq, d_w):
        d_at = {t0 + i: int(v) for i, v in enumerate(path)}
        xs = {k - r: x_tilde}
        for t in range(k - r, k + 1):
            pkt = log[t - d_at[t]]
            off = lay.component_offset(d_at[t])
            xs[t + 1] = A @ xs[t] + B @ pkt[off:off + m]
        E2 += w * float(xs[k] @ cost.Q @ xs[k])
        for p in range(lay.d_lo, lay.d_hi + 1):
            if d_at[k + p] == p:
                c = u_tilde[lay.component_offset(p):lay.component_offset(p) + m]
                E1 += w * float(c @ cost.R @ c)
        u_hat_next = stack_history([log[k + 1 - p] for p in range(1, lay.horizon + 1)], lay)
        for rho in spec.r_chain.values:
            psi = spec.r_chain.step[r - spec.r_chain.lo, rho - spec.r_chain.lo]
            if psi == 0.0:
                continue
            x_next = np.concatenate([xs[k + 1 - rho], u_hat_next])
            Kn = K_next[rho - lay.r_lo, d_at[k - rho] - lay.d_lo]
            E3 += w * psi * float(x_next @ Kn @ x_next)
    return E1, E2, E3


def check_kernel_expectations(spec, schedule, k, r, d_known, x_hat, u_tilde) -> KernelReport:
    model = spec.model
    K_next = schedule.K[k + 1 - schedule.k0]
    E1, E2, E3 = enumerate_stage_expectations(spec, K_next, k, r, d_known, x_hat, u_tilde)
    R_hat = build_R_hat(model, spec.d_chain, spec.cost.R, r, d_known)
    Q_hat = build_Q_hat(model, spec.d_chain, spec.cost.Q, r, d_known)
    O, M, H = build_E3_kernels(model, spec.r_chain, spec.d_chain, K_next, r, d_known)
    x, u = np.asarray(x_hat), np.asarray(u_tilde)
    return KernelReport(k, r, d_known, E1, E2, E3, float(u @ R_hat @ u), float(x @ Q_hat @ x),
                        float(x @ H @ x + 2 * u @ M @ x + u @ O @ u))


def stage_objective(spec, schedule, k, r, d_known, x_hat):
    """``u -> E1 + E2 + E3`` by enumeration, for finite-difference checks."""
    K_next = schedule.K[k + 1 - schedule.k0]

    def f(u_tilde):
        return sum(enumerate_stage_expectations(spec, K_next, k, r, d_known, x_hat, u_tilde))
    return f


def classic_riccati(A, B, Q, Q_bar, R, k0, N):
    """Textbook finite-horizon LQR: ``K[k]`` for ``k0..N+1`` and ``L[k]`` for ``k0..N``."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    P = np.array(Q_bar, dtype=float)
    Ks, Ls = [P], []
    for _ in range(N, k0 - 1, -1):
        gain = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P = 0.5 * (P + P.T)
        Ks.append(P)
        Ls.append(gain)
    return Ks[::-1], Ls[::-1]


def unit_delay_lqr(A, B, Q, Q_bar, R, k0, N):
    """LQR on the plant augmented with the last two packets.

    For a sensor age and an actuator age that are both always one, the
    controller sees ``z = [x[k-1]; v[k-1]; v[k-2]]`` with ``v`` the packets
    and ``u[k] = v[k-1]``. Returns the Riccati matrices on ``z``.
    """
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    n, m = B.shape
    nz = n + 2 * m
    # x[k] = G z[k]
    G = np.hstack([A, np.zeros((n, m)), B])
    Az = np.zeros((nz, nz))
    Az[:n] = G
    Az[n + m:, n:n + m] = np.eye(m)
    Bz = np.zeros((nz, m))
    Bz[n:n + m] = np.eye(m)
    return classic_riccati(Az, Bz, G.T @ Q @ G, G.T @ Q_bar @ G, R, k0, N)


def random_chain(lo: int, hi: int, rng, concentration: float = 2.0) -> DelayChain:
    """Chain with Dirichlet rows on the admissible support ``b <= a + 1``."""
    size = hi - lo + 1
    step = np.zeros((size, size))
    for a in range(size):
        allowed = min(a + 2, size)
        step[a, :allowed] = rng.dirichlet(np.full(allowed, concentration))
        step[a, :allowed] = np.maximum(step[a, :allowed], 1e-3)
        step[a] /= step[a].sum()
        # put the rounding residue on the largest entry so the row sums to 1
        step[a, np.argmax(step[a])] += 1.0 - step[a].sum()
    return DelayChain(lo, hi, step)


def random_tiny_spec(rng, *, n=None, r_bounds=None, d_bounds=None, steps=None,
                     pre_history=True) -> ProblemSpec:
    """A random instance inside the exhaustive-check limits."""
    n = int(rng.integers(1, 3)) if n is None else n
    r_lo, r_hi = r_bounds or (0, 1)
    d_lo, d_hi = d_bounds or (0, 1)
    steps = int(rng.integers(1, 4)) if steps is None else steps
    A = rng.normal(scale=0.7, size=(n, n))
    B = rng.normal(size=(n, 1))
    G = rng.normal(size=(n, n))
    Q = G @ G.T / n
    Q_bar = np.eye(n) * rng.uniform(0.5, 2.0)
    R = np.array([[rng.uniform(0.2, 2.0)]])
    r_chain = random_chain(r_lo, r_hi, rng)
    d_chain = random_chain(d_lo, d_hi, rng)
    k0 = int(rng.integers(0, 3))
    H = d_hi + r_hi
    pre = rng.normal(size=(H, d_hi - d_lo + 1)) if pre_history else None
    init = InitSpec(rng.normal(size=n), int(rng.integers(r_lo, r_hi + 1)),
                    int(rng.integers(d_lo, d_hi + 1)), pre)
    return ProblemSpec(PlantModel(A, B), CostSpec(Q, Q_bar, R, k0, k0 + steps),
                       r_chain, d_chain, init)


def random_schedule(spec, rng, scale: float = 0.5, zero_tail: bool = False) -> GainSchedule:
    """Gains drawn at random, for exercising the loop with arbitrary packets.

    With ``zero_tail`` the rows producing components that can only be
    delivered after ``N`` are zeroed, as they are in an optimal schedule.
    """
    lay, model = spec.layout, spec.model
    k0, N = spec.cost.k0, spec.cost.N
    nr, nd = lay.r_hi - lay.r_lo + 1, lay.d_hi - lay.d_lo + 1
    K = np.zeros((N + 2 - k0, nr, nd, model.nx, model.nx))
    L = rng.normal(scale=scale, size=(N + 1 - k0, nr, nd, lay.m_tilde, model.nx))
    if zero_tail:
        for k in range(k0, N + 1):
            for p in range(max(lay.d_lo, N + 1 - k), lay.d_hi + 1):
                off = lay.component_offset(p)
                L[k - k0, :, :, off:off + lay.m] = 0.0
    return GainSchedule(K, L, k0, N, lay.r_lo, lay.r_hi, lay.d_lo, lay.d_hi,
                        spec.n, lay.m, spec.spec_hash())


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return (f"{status}  {self.name}: measured {self.measured:.3e}, "
                f"tolerance {self.tolerance:.1e}{extra}")


def _rel(a, b):
    s = max(abs(a), abs(b))
    return 0.0 if s == 0.0 else abs(a - b) / s


def _cells(spec):
    lay = spec.layout
    for k in range(spec.cost.k0, spec.cost.N + 1):
        for r in range(lay.r_lo, lay.r_hi + 1):
            for d in range(lay.d_lo, lay.d_hi + 1):
                yield k, r, d


def fd_gradient(f, u, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` at ``u``.

    Evaluated in extended precision: with values of ``f`` in the thousands the
    float64 rounding error ``eps * |f| / h`` alone would exceed 1e-7.
    """
    u = np.asarray(u, dtype=np.longdouble)
    eye = np.eye(len(u), dtype=np.longdouble)
    h = np.longdouble(h)
    return np.array([(f(u + h * e) - f(u - h * e)) / (2 * h) for e in eye], dtype=float)


def structural_checks(spec, schedule, rng) -> list:
    """Sampling-based checks on a synthesized schedule."""
    lay = spec.layout
    k0, N = spec.cost.k0, spec.cost.N
    min_eig = float(np.linalg.eigvalsh(schedule.K).min())
    asym = float(np.abs(schedule.K - np.swapaxes(schedule.K, -1, -2)).max())
    pd_eig, cos_err, grad, tail = np.inf, 0.0, 0.0, 0.0
    for k, r, d in _cells(spec):
        kern = expectation_kernels(spec, schedule.K[k + 1 - k0], r, d)
        pd_eig = min(pd_eig, float(np.linalg.eigvalsh(kern.O_hat + kern.R_hat).min()))
        x = rng.normal(size=schedule.nx)
        gain = schedule.L_at(k, r, d)
        u = -gain @ x
        cos_err = max(cos_err, _rel(kern.objective(x, u), schedule.value(x, r, d, k)))
        g = fd_gradient(lambda v: kern.objective(x, v), u)
        grad = max(grad, float(np.linalg.norm(g)) / (1.0 + float(np.linalg.norm(x))))
        for p in range(lay.d_lo, lay.d_hi + 1):
            if k + p > N:
                off = lay.component_offset(p)
                tail = max(tail, float(np.linalg.norm(gain[off:off + lay.m])))
    return [
        CheckResult("K symmetric", asym <= 1e-9, asym, 1e-9),
        CheckResult("K positive semidefinite", min_eig >= -1e-8, -min(min_eig, 0.0), 1e-8,
                    f"smallest eigenvalue {min_eig:.3e}"),
        CheckResult("O_hat + R_hat positive definite", pd_eig > 0, pd_eig, 0.0,
                    "smallest eigenvalue"),
        CheckResult("completion of squares", cos_err <= 1e-9, cos_err, 1e-9),
        CheckResult("first-order optimality", grad <= 1e-8, grad, 1e-8,
                    "gradient norm / (1 + |x_hat|)"),
        CheckResult("tail gains vanish", tail <= 1e-9, tail, 1e-9),
    ]


def identity_checks(spec, rng, traces: int = 100) -> list:
    """Cost bookkeeping on traces driven by random gains and random pre-history."""
    lay = spec.layout
    worst = 0.0
    for _ in range(traces):
        pre = rng.normal(size=(lay.horizon, lay.m_tilde))
        sp = spec.with_init(pre_history=pre)
        trace = run_episode(sp, random_schedule(sp, rng), seed=int(rng.integers(2**31)))
        dec = check_cost_identity(sp, trace, tol=np.inf)
        worst = max(worst, abs(dec.residual) / max(abs(dec.J_tilde), abs(dec.J), 1e-300))
    return [CheckResult("cost identity J_tilde = J + U2 - U3", worst <= 1e-10, worst, 1e-10,
                        f"{traces} random traces")]


def monte_carlo_check(spec, schedule, episodes: int = 10_000, seed: int = 0) -> CheckResult:
    s = run_monte_carlo(spec, schedule, episodes=episodes, seed=seed)
    gap = abs(s.mean_J - s.v_k0)
    ratio = gap / s.stderr_J if s.stderr_J > 0 else (0.0 if gap == 0 else np.inf)
    return CheckResult("Monte-Carlo mean J vs predicted value", ratio <= 3.0, ratio, 3.0,
                       f"mean {s.mean_J:.6g}, predicted {s.v_k0:.6g}, in standard errors")


def exhaustive_checks(spec, schedule, rng) -> list:
    require_tiny(spec)
    total = path_probability_total(spec)
    mu = enumerate_expected_cost(spec, schedule)
    v = schedule.value(spec.initial_x_hat(), spec.init.r0, spec.init.d_init)
    mu_bar, _ = joint_open_loop_min(spec)
    kern = 0.0
    for k, r, d in _cells(spec):
        rep = check_kernel_expectations(spec, schedule, k, r, d, rng.normal(size=schedule.nx),
                                        rng.normal(size=schedule.m_tilde))
        kern = max(kern, rep.max_rel_error)
    return [
        CheckResult("path probabilities sum to one", abs(total - 1) <= 1e-12, abs(total - 1),
                    1e-12),
        CheckResult("enumerated E[J] equals predicted value", _rel(mu, v) <= 1e-8, _rel(mu, v), 1e-8),
        CheckResult("closed loop no worse than open loop", mu <= mu_bar + 1e-9,
                    max(mu - mu_bar, 0.0), 1e-9, f"gap {mu_bar - mu:.3e}"),
        CheckResult("kernel expectations by enumeration", kern <= 1e-10, kern, 1e-10),
    ]


def verify(spec, level: str = "quick", seed: int = 0, schedule=None) -> list:
    """Run the property suite; ``level`` is ``"quick"`` or ``"exhaustive"``."""
    if level not in ("quick", "exhaustive"):
        raise ValueError(f"unknown verification level {level!r}")
    if level == "exhaustive":
        require_tiny(spec)
    rng = np.random.default_rng(seed)
    schedule = synthesize(spec) if schedule is None else schedule
    results = structural_checks(spec, schedule, rng)
    results += identity_checks(spec, rng)
    results.append(monte_carlo_check(spec, schedule, seed=seed))
    if level == "exhaustive":
        results += exhaustive_checks(spec, schedule, rng)
    return results
