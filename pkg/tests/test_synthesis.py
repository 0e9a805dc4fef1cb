import numpy as np
import pytest
from hypothesis import given, strategies as st

from ncsopt import DelayChain, GainSchedule, synthesize
from ncsopt import synthesis
from ncsopt._kernels import sample_paths
from ncsopt.errors import FormatError, IncompleteTable, ScheduleGap, SolveError, TimeOrderError
from ncsopt.oracle import classic_riccati, enumerate_paths, fd_gradient, random_tiny_spec
from ncsopt.synthesis import (build_E3_kernels, build_Q_hat, build_R_hat, elapsed_phi,
                              expectation_kernels, terminal_K)

from conftest import MIXING_D, MIXING_R, make_spec

seeds = st.integers(0, 2**32 - 1)


def test_elapsed_phi_time_differences():
    c = DelayChain(0, 1, MIXING_D)
    k, r, i = 5, 2, 1
    assert elapsed_phi(c, 0, 1, k - 1 - r, k - i) == c.n_step(0, 1, 1 + r - i)
    assert elapsed_phi(c, 1, 1, 3, 3) == 1.0
    with pytest.raises(TimeOrderError):
        elapsed_phi(c, 0, 0, 4, 3)


def test_R_hat_single_delay_is_R():
    spec = make_spec(np.eye(2), np.ones((2, 1)), R=[[3.0]], d_chain=DelayChain.constant(1))
    assert np.array_equal(build_R_hat(spec.model, spec.d_chain, spec.cost.R, 0, 1), [[3.0]])


def test_R_hat_uniform_chain():
    R = np.array([[2.0, 0.5], [0.5, 1.0]])
    d = DelayChain(0, 1, [[0.5, 0.5], [0.5, 0.5]])
    spec = make_spec(np.eye(2), np.eye(2), R=R, d_chain=d, r_chain=DelayChain(0, 1, MIXING_R))
    for r in (0, 1):
        for dk in (0, 1):
            got = build_R_hat(spec.model, d, R, r, dk)
            want = 0.5 * np.block([[R, np.zeros((2, 2))], [np.zeros((2, 2)), R]])
            assert np.allclose(got, want, rtol=0, atol=1e-15)


@given(seeds)
def test_R_hat_positive_definite(seed):
    spec = random_tiny_spec(np.random.default_rng(seed), d_bounds=(0, 2), r_bounds=(0, 2))
    lay = spec.layout
    for r in range(lay.r_lo, lay.r_hi + 1):
        for d in range(lay.d_lo, lay.d_hi + 1):
            R_hat = build_R_hat(spec.model, spec.d_chain, spec.cost.R, r, d)
            assert np.linalg.eigvalsh(R_hat).min() > 0


def test_Q_hat_fresh_state():
    W = np.array([[2.0, 0.3], [0.3, 1.0]])
    spec = make_spec(np.eye(2), np.ones((2, 1)), d_chain=DelayChain(0, 1, MIXING_D),
                     r_chain=DelayChain(0, 1, MIXING_R))
    got = build_Q_hat(spec.model, spec.d_chain, W, 0, 1)
    want = np.zeros_like(got)
    want[:2, :2] = W
    assert np.array_equal(got, want)


def window_average(spec, W, r, d_known):
    """Exact average of the realized-window quadratic matrix over all windows."""
    paths, probs = enumerate_paths(spec.d_chain, d_known, r)
    total = 0.0
    for path, p in zip(paths, probs):
        # path[j] is the age at time k - 1 - r + j; lag i sits at index 1 + r - i
        window = {i: int(path[1 + r - i]) for i in range(1, r + 1)}
        total = total + p * spec.model.q_tilde(W, r, window)
    return total


@given(seeds)
def test_Q_hat_is_window_expectation(seed):
    rng = np.random.default_rng(seed)
    spec = random_tiny_spec(rng, n=2, r_bounds=(0, 2), d_bounds=(0, 2))
    lay = spec.layout
    for r in range(lay.r_lo, lay.r_hi + 1):
        for d in range(lay.d_lo, lay.d_hi + 1):
            got = build_Q_hat(spec.model, spec.d_chain, spec.cost.Q, r, d)
            assert np.allclose(got, window_average(spec, spec.cost.Q, r, d), rtol=1e-12, atol=1e-12)


def test_Q_hat_sampling_oracle():
    rng = np.random.default_rng(3)
    spec = random_tiny_spec(rng, n=2, r_bounds=(0, 2), d_bounds=(0, 1))
    r, d_known = 2, 1
    x = rng.normal(size=spec.model.nx)
    paths = sample_paths(spec.d_chain.cdf(), spec.d_chain.lo, d_known, rng.random((100_000, r)))
    uniq, counts = np.unique(paths, axis=0, return_counts=True)
    vals = []
    for p in uniq:
        Qt = spec.model.q_tilde(spec.cost.Q, r, {i: int(p[1 + r - i]) for i in (1, 2)})
        vals.append(x @ Qt @ x)
    samples = np.repeat(vals, counts)
    want = x @ build_Q_hat(spec.model, spec.d_chain, spec.cost.Q, r, d_known) @ x
    assert abs(samples.mean() - want) <= 3 * samples.std(ddof=1) / np.sqrt(samples.size)


def test_E3_scalar_lqr_kernels():
    a, b, kn = 0.8, 1.5, 2.5
    spec = make_spec([[a]], [[b]])
    K_next = np.full((1, 1, 1, 1), kn)
    O, M, H = build_E3_kernels(spec.model, spec.r_chain, spec.d_chain, K_next, 0, 0)
    assert O[0, 0] == pytest.approx(b * b * kn, abs=1e-15)
    assert M[0, 0] == pytest.approx(b * kn * a, abs=1e-15)
    assert H[0, 0] == pytest.approx(a * a * kn, abs=1e-15)


def random_K_next(spec, rng):
    lay = spec.layout
    nr, nd = lay.r_hi - lay.r_lo + 1, lay.d_hi - lay.d_lo + 1
    G = rng.normal(size=(nr, nd, spec.model.nx, spec.model.nx))
    return G @ np.swapaxes(G, -1, -2)


@given(seeds)
def test_E3_widened_range_identical(seed):
    rng = np.random.default_rng(seed)
    spec = random_tiny_spec(rng, r_bounds=(0, 3), d_bounds=(0, 1))
    Kn = random_K_next(spec, rng)
    for r in range(0, 4):
        base = build_E3_kernels(spec.model, spec.r_chain, spec.d_chain, Kn, r, 0)
        wide = build_E3_kernels(spec.model, spec.r_chain, spec.d_chain, Kn, r, 0, rho_max=3)
        assert all(np.array_equal(p, q) for p, q in zip(base, wide))


def next_step_average(spec, K_next, r, d_known, x, u):
    """Exact E[x_next' K x_next] by enumerating the next sensor age and the ages."""
    model, lay = spec.model, spec.layout
    paths, probs = enumerate_paths(spec.d_chain, d_known, 1 + r)
    total = 0.0
    for rho in range(lay.r_lo, min(lay.r_hi, r + 1) + 1):
        psi = spec.r_chain.n_step(r, rho, 1)
        for path, p in zip(paths, probs):
            window = {i: int(path[1 + r - i]) for i in range(0, r + 2)}
            mm = model.mode_matrices(r, rho, window)
            nxt = mm.total_a() @ x + mm.b_tilde @ u
            total += psi * p * nxt @ K_next[rho - lay.r_lo, window[rho] - lay.d_lo] @ nxt
    return total


@given(seeds)
def test_E3_matches_mode_matrix_expectation(seed):
    rng = np.random.default_rng(seed)
    spec = random_tiny_spec(rng, r_bounds=(0, 2), d_bounds=(0, 2))
    Kn = random_K_next(spec, rng)
    lay = spec.layout
    for r in range(lay.r_lo, lay.r_hi + 1):
        for d in range(lay.d_lo, lay.d_hi + 1):
            x, u = rng.normal(size=spec.model.nx), rng.normal(size=lay.m_tilde)
            O, M, H = build_E3_kernels(spec.model, spec.r_chain, spec.d_chain, Kn, r, d)
            got = x @ H @ x + 2 * u @ M @ x + u @ O @ u
            assert got == pytest.approx(next_step_average(spec, Kn, r, d, x, u), rel=1e-10)


def test_H_hat_sampling_oracle():
    rng = np.random.default_rng(11)
    spec = random_tiny_spec(rng, n=2, r_bounds=(0, 2), d_bounds=(0, 1))
    model, lay = spec.model, spec.layout
    Kn = random_K_next(spec, rng)
    r, d_known = 2, 0
    x = rng.normal(size=model.nx)
    E = 100_000
    rho = spec.r_chain.lo + np.searchsorted(spec.r_chain.cdf()[r], rng.random(E), side="right")
    paths = sample_paths(spec.d_chain.cdf(), spec.d_chain.lo, d_known, rng.random((E, 1 + r)))
    keys = np.column_stack([rho, paths])
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    vals = []
    for key in uniq:
        rh, path = int(key[0]), key[1:]
        window = {i: int(path[1 + r - i]) for i in range(0, r + 2)}
        mm = model.mode_matrices(r, rh, window)
        y = mm.total_a() @ x
        vals.append(y @ Kn[rh - lay.r_lo, window[rh] - lay.d_lo] @ y)
    samples = np.repeat(vals, counts)
    _, _, H = build_E3_kernels(model, spec.r_chain, spec.d_chain, Kn, r, d_known)
    assert abs(samples.mean() - x @ H @ x) <= 3 * samples.std(ddof=1) / np.sqrt(E)


class RecordingTable:
    def __init__(self, K):
        self.K, self.seen = K, set()

    def __getitem__(self, idx):
        self.seen.add(idx)
        return self.K[idx]


@given(seeds)
def test_kernels_read_only_reachable_modes(seed):
    rng = np.random.default_rng(seed)
    spec = random_tiny_spec(rng, r_bounds=(0, 3), d_bounds=(0, 3))
    lay = spec.layout
    for r in range(lay.r_lo, lay.r_hi + 1):
        for d in range(lay.d_lo, lay.d_hi + 1):
            table = RecordingTable(random_K_next(spec, rng))
            build_E3_kernels(spec.model, spec.r_chain, spec.d_chain, table, r, d)
            for ir, idd in table.seen:
                rho, delta = ir + lay.r_lo, idd + lay.d_lo
                assert spec.r_chain.n_step(r, rho, 1) > 0
                assert spec.d_chain.n_step(d, delta, 1 + r - rho) > 0


def test_incomplete_table():
    spec = make_spec(np.eye(1), np.ones((1, 1)), r_chain=DelayChain(0, 1, MIXING_R),
                     d_chain=DelayChain(0, 1, MIXING_D))
    Kn = np.ones((2, 2, spec.model.nx, spec.model.nx))
    Kn[0, 1] = np.nan
    with pytest.raises(IncompleteTable):
        build_E3_kernels(spec.model, spec.r_chain, spec.d_chain, Kn, 0, 0)


def test_terminal_K_cases():
    Qb = np.array([[3.0, 1.0], [1.0, 2.0]])
    spec = make_spec(np.eye(2), np.ones((2, 1)), Q_bar=Qb, r_chain=DelayChain(0, 1, MIXING_R),
                     d_chain=DelayChain(0, 1, MIXING_D))
    T = terminal_K(spec.model, spec.d_chain, Qb)
    assert np.array_equal(T[0, 0][:2, :2], Qb) and not T[0, 0][2:].any()
    assert not terminal_K(spec.model, spec.d_chain, np.zeros((2, 2))).any()


@given(seeds)
def test_terminal_K_psd(seed):
    spec = random_tiny_spec(np.random.default_rng(seed), r_bounds=(0, 2), d_bounds=(0, 2))
    T = terminal_K(spec.model, spec.d_chain, spec.cost.Q_bar)
    assert np.linalg.eigvalsh(T).min() >= -1e-10


def test_degenerate_spec_matches_riccati(rng):
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    spec = make_spec(A, B, Q=np.diag([1.0, 2.0, 0.5]), Q_bar=np.eye(3) * 3, R=np.eye(2), N=6)
    s = synthesize(spec)
    Ks, Ls = classic_riccati(A, B, spec.cost.Q, spec.cost.Q_bar, spec.cost.R, 0, 6)
    for k in range(0, 7):
        assert np.allclose(s.K_at(k, 0, 0), Ks[k], rtol=1e-10, atol=1e-12 * np.abs(Ks[k]).max())
        assert np.allclose(s.L_at(k, 0, 0), Ls[k], rtol=1e-10, atol=1e-12 * np.abs(Ls[k]).max())


def test_zero_state_cost_gives_zero_schedule(mixing_spec):
    spec = make_spec(mixing_spec.plant.A, mixing_spec.plant.B, Q=np.zeros((2, 2)),
                     Q_bar=np.zeros((2, 2)), r_chain=mixing_spec.r_chain,
                     d_chain=mixing_spec.d_chain)
    s = synthesize(spec)
    assert not s.K.any() and not s.L.any()


def test_solve_error_reports_mode(mixing_spec, monkeypatch):
    monkeypatch.setattr(synthesis, "COND_LIMIT", 0.5)
    with pytest.raises(SolveError) as err:
        synthesize(mixing_spec)
    assert err.value.k == mixing_spec.cost.N


@given(seeds)
def test_schedule_invariants(seed):
    rng = np.random.default_rng(seed)
    spec = random_tiny_spec(rng, r_bounds=(0, 2), d_bounds=(0, 2), steps=4)
    s = synthesize(spec)
    lay, k0, N = spec.layout, spec.cost.k0, spec.cost.N
    assert np.abs(s.K - np.swapaxes(s.K, -1, -2)).max() <= 1e-9
    assert np.linalg.eigvalsh(s.K).min() >= -1e-8
    for k in range(k0, N + 1):
        for r in range(lay.r_lo, lay.r_hi + 1):
            for d in range(lay.d_lo, lay.d_hi + 1):
                kern = expectation_kernels(spec, s.K[k + 1 - k0], r, d)
                assert np.linalg.eigvalsh(kern.O_hat + kern.R_hat).min() > 0
                x = rng.normal(size=s.nx)
                u = -s.L_at(k, r, d) @ x
                assert kern.objective(x, u) == pytest.approx(s.value(x, r, d, k), rel=1e-9)
                grad = fd_gradient(lambda v: kern.objective(x, v), u)
                assert np.linalg.norm(grad) <= 1e-8 * (1 + np.linalg.norm(x))
                for p in range(lay.d_lo, lay.d_hi + 1):
                    if k + p > N:
                        off = lay.component_offset(p)
                        assert np.linalg.norm(s.L_at(k, r, d)[off:off + lay.m]) <= 1e-9


def test_schedule_round_trip(mixing_spec, tmp_path):
    s = synthesize(mixing_spec)
    path = tmp_path / "gains.txt"
    s.save(path)
    back = GainSchedule.load(path)
    assert np.array_equal(back.K, s.K) and np.array_equal(back.L, s.L)
    assert back.spec_hash == mixing_spec.spec_hash()
    assert back.dumps() == s.dumps()
    assert synthesize(mixing_spec).dumps() == s.dumps()


def test_schedule_format_errors(mixing_spec):
    text = synthesize(mixing_spec).dumps()
    with pytest.raises(FormatError):
        GainSchedule.loads("not-a-schedule 1\n")
    with pytest.raises(FormatError):
        GainSchedule.loads(text.replace("ncsopt-gain-schedule 1", "ncsopt-gain-schedule 9"))
    lines = text.splitlines()
    with pytest.raises(FormatError):
        GainSchedule.loads("\n".join(lines[:10]))


def test_schedule_gap(mixing_spec):
    s = synthesize(mixing_spec)
    with pytest.raises(ScheduleGap):
        s.L_at(mixing_spec.cost.N + 1, 0, 0)
    with pytest.raises(ScheduleGap):
        s.K_at(0, 5, 0)
