"""Hot loops: delay-path sampling and batched closed-loop rollouts.

Each kernel has a scalar-loop form compiled with numba and a pure-numpy form
vectorized across episodes. Both consume the same inputs and return the same
values (up to floating-point summation order).

Time conventions shared by all rollouts (``td0 = k0 - 1 - r0``):

* ``r_paths[e, k - k0]`` is the sensor age at ``k = k0..N+1``;
* ``d_paths[e, t - td0]`` is the actuator age at ``t = td0..N+d_hi``;
* ``pre`` holds the packets sent at ``k0 - H .. k0 - 1``, oldest first.
"""
import numpy as np

from ._accel import njit, numba_enabled


def _sample_paths_loop(cdf, lo, start, uniforms):
    E, T = uniforms.shape
    S = cdf.shape[1]
    out = np.empty((E, T + 1), np.int64)
    for e in range(E):
        cur = start - lo
        out[e, 0] = start
        for t in range(T):
            u = uniforms[e, t]
            j = 0
            while j < S - 1 and cdf[cur, j] <= u:
                j += 1
            cur = j
            out[e, t + 1] = cur + lo
    return out


def _sample_paths_numpy(cdf, lo, start, uniforms):
    E, T = uniforms.shape
    S = cdf.shape[1]
    out = np.empty((E, T + 1), np.int64)
    out[:, 0] = start
    cur = np.full(E, start - lo)
    for t in range(T):
        rows = cdf[cur]
        cur = np.minimum((rows <= uniforms[:, t, None]).sum(axis=1), S - 1)
        out[:, t + 1] = cur + lo
    return out


def _quad(M, v):
    s = 0.0
    for i in range(v.shape[0]):
        acc = 0.0
        for j in range(v.shape[0]):
            acc += M[i, j] * v[j]
        s += v[i] * acc
    return s


def _rollout_loop(A, B, Q, R, Qbar, L, mbar, m, d_lo, d_hi, r_lo, k0, N, r0, x0, pre,
                  r_paths, d_paths):
    E = r_paths.shape[0]
    n = A.shape[0]
    mt = L.shape[3]
    nx = L.shape[4]
    H = mbar.shape[0]
    t_start = k0 - r0
    td0 = k0 - 1 - r0
    base = k0 - H
    J = np.zeros(E)
    Jt = np.zeros(E)
    packets = np.zeros((N - base + 1, mt))
    xs = np.zeros((N + 2 - t_start, n))
    xhat = np.zeros(nx)
    u = np.zeros(m)
    for e in range(E):
        packets[:, :] = 0.0
        for j in range(H):
            packets[j, :] = pre[j, :]
        xs[0, :] = x0
        for t in range(t_start, N + 1):
            k = t
            x = xs[t - t_start]
            if k >= k0:
                r = r_paths[e, k - k0]
                dk = d_paths[e, k - 1 - r - td0]
                xhat[:n] = xs[k - r - t_start]
                pos = n
                for p in range(1, H + 1):
                    w = mbar[p - 1]
                    xhat[pos:pos + w] = packets[k - p - base, :w]
                    pos += w
                G = L[k - k0, r - r_lo, dk - d_lo]
                for a in range(mt):
                    acc = 0.0
                    for b in range(nx):
                        acc += G[a, b] * xhat[b]
                    packets[k - base, a] = -acc
            d = d_paths[e, t - td0]
            off = (d_hi - d) * m
            for a in range(m):
                u[a] = packets[t - d - base, off + a]
            nxt = xs[t + 1 - t_start]
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += A[a, b] * x[b]
                for b in range(m):
                    acc += B[a, b] * u[b]
                nxt[a] = acc
            if k >= k0:
                xq = _quad(Q, x)
                J[e] += xq
                Jt[e] += xq + _quad(R, u)
        term = _quad(Qbar, xs[N + 1 - t_start])
        J[e] += term
        Jt[e] += term
        for k in range(k0, N + 1):
            for p in range(d_lo, d_hi + 1):
                if d_paths[e, k + p - td0] == p:
                    off = (d_hi - p) * m
                    J[e] += _quad(R, packets[k - base, off:off + m])
    return J, Jt


def _rollout_numpy(A, B, Q, R, Qbar, L, mbar, m, d_lo, d_hi, r_lo, k0, N, r0, x0, pre,
                   r_paths, d_paths):
    E = r_paths.shape[0]
    n = A.shape[0]
    mt = L.shape[3]
    H = mbar.shape[0]
    t_start = k0 - r0
    td0 = k0 - 1 - r0
    base = k0 - H
    ar = np.arange(E)
    comp = np.arange(m)

    packets = np.zeros((E, N - base + 1, mt))
    packets[:, :H] = pre
    xs = np.zeros((E, N + 2 - t_start, n))
    xs[:, 0] = x0
    J = np.zeros(E)
    Jt = np.zeros(E)

    def applied(t):
        d = d_paths[:, t - td0]
        rows = packets[ar, t - d - base]
        cols = ((d_hi - d) * m)[:, None] + comp
        return np.take_along_axis(rows, cols, axis=1)

    for t in range(t_start, N + 1):
        if t >= k0:
            r = r_paths[:, t - k0]
            dk = d_paths[ar, t - 1 - r - td0]
            parts = [xs[ar, t - r - t_start]]
            parts += [packets[:, t - p - base, :mbar[p - 1]] for p in range(1, H + 1)]
            xhat = np.concatenate(parts, axis=1)
            G = L[t - k0, r - r_lo, dk - d_lo]
            packets[:, t - base] = -np.einsum("eij,ej->ei", G, xhat)
        u = applied(t)
        x = xs[:, t - t_start]
        xs[:, t + 1 - t_start] = x @ A.T + u @ B.T
        if t >= k0:
            xq = np.einsum("ei,ij,ej->e", x, Q, x)
            J += xq
            Jt += xq + np.einsum("ei,ij,ej->e", u, R, u)
    xN = xs[:, N + 1 - t_start]
    term = np.einsum("ei,ij,ej->e", xN, Qbar, xN)
    J += term
    Jt += term
    for k in range(k0, N + 1):
        for p in range(d_lo, d_hi + 1):
            hit = d_paths[:, k + p - td0] == p
            off = (d_hi - p) * m
            c = packets[:, k - base, off:off + m]
            J += hit * np.einsum("ei,ij,ej->e", c, R, c)
    return J, Jt


_sample_paths_jit = njit(_sample_paths_loop)
_quad_jit = njit(_quad)
if _quad_jit is not None:
    # the rollout calls _quad; rebind the module global numba resolves at compile time
    _quad = _quad_jit
_rollout_jit = njit(_rollout_loop)


def sample_paths(cdf, lo, start, uniforms):
    """Markov paths by inverse-CDF sampling, one uniform per transition."""
    cdf = np.ascontiguousarray(cdf, dtype=np.float64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    if numba_enabled():
        return _sample_paths_jit(cdf, int(lo), int(start), uniforms)
    return _sample_paths_numpy(cdf, int(lo), int(start), uniforms)


def rollout(A, B, Q, R, Qbar, L, mbar, m, d_lo, d_hi, r_lo, k0, N, r0, x0, pre,
            r_paths, d_paths, backend=None):
    """Closed-loop costs ``(J, J_tilde)`` for a batch of realized delay paths.

    ``backend`` is ``"numba"``, ``"numpy"`` or None (follow the environment
    flag). Requesting numba when it is not installed falls back to numpy.
    """
    if backend is None:
        backend = "numba" if numba_enabled() else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")

    def f64(a):
        return np.ascontiguousarray(a, dtype=np.float64)

    mbar = np.ascontiguousarray(mbar, dtype=np.int64)
    pre = f64(pre).reshape(len(mbar), np.shape(L)[3])
    args = (f64(A), f64(B), f64(Q), f64(R), f64(Qbar), f64(L), mbar, int(m), int(d_lo),
            int(d_hi), int(r_lo), int(k0), int(N), int(r0), f64(x0), pre,
            np.ascontiguousarray(r_paths, dtype=np.int64),
            np.ascontiguousarray(d_paths, dtype=np.int64))
    if backend == "numba" and _rollout_jit is not None:
        return _rollout_jit(*args)
    return _rollout_numpy(*args)
