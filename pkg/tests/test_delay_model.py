import numpy as np
import pytest
from hypothesis import given, strategies as st

from ncsopt import DelayChain, TransitionQuery, n_step, sample_next, validate
from ncsopt.errors import OutOfRange, RowSumError, ShapeError, SupportError
from ncsopt.oracle import random_chain


def chains(max_size=4):
    @st.composite
    def build(draw):
        lo = draw(st.integers(0, 2))
        size = draw(st.integers(1, max_size))
        seed = draw(st.integers(0, 2**32 - 1))
        return random_chain(lo, lo + size - 1, np.random.default_rng(seed))
    return build()


def test_support_violation_above_diagonal():
    step = [[0.5, 0.4, 0.1], [0.3, 0.3, 0.4], [0.2, 0.3, 0.5]]
    with pytest.raises(SupportError) as err:
        DelayChain(0, 2, step)
    assert (err.value.row, err.value.col) == (0, 2)


def test_support_requires_strict_positivity():
    with pytest.raises(SupportError):
        DelayChain(0, 1, [[1.0, 0.0], [0.5, 0.5]])


def test_single_state_chain_is_valid():
    validate(DelayChain(0, 0, [[1.0]]))


def test_mixing_two_state_chain_is_valid():
    validate(DelayChain(0, 1, [[0.6, 0.4], [0.5, 0.5]]))


def test_row_sum_error_names_row():
    with pytest.raises(RowSumError) as err:
        DelayChain(0, 1, [[0.6, 0.4], [0.5, 0.4]])
    assert err.value.row == 1


def test_shape_error():
    with pytest.raises(ShapeError):
        DelayChain(0, 2, [[0.5, 0.5], [0.5, 0.5]])


def test_zero_steps_is_identity():
    c = DelayChain(0, 1, [[0.6, 0.4], [0.5, 0.5]])
    assert n_step(c, TransitionQuery(1, 1, 0)) == 1.0
    assert n_step(c, TransitionQuery(1, 0, 0)) == 0.0


def test_uniform_rows_fixed_under_powers():
    c = DelayChain(0, 1, [[0.5, 0.5], [0.5, 0.5]])
    assert n_step(c, TransitionQuery(0, 1, 2)) == pytest.approx(0.5, abs=1e-15)


def test_two_step_by_hand():
    c = DelayChain(0, 1, [[0.6, 0.4], [0.5, 0.5]])
    assert n_step(c, TransitionQuery(0, 0, 2)) == pytest.approx(0.6 * 0.6 + 0.4 * 0.5, abs=1e-15)


def test_out_of_range():
    c = DelayChain(1, 2, [[0.6, 0.4], [0.5, 0.5]])
    with pytest.raises(OutOfRange):
        c.n_step(0, 1, 1)
    with pytest.raises(OutOfRange):
        sample_next(c, 3, np.random.default_rng(0))


def test_sample_deterministic_and_point_mass():
    rng = np.random.default_rng(0)
    assert sample_next(DelayChain(0, 0, [[1.0]]), 0, rng) == 0
    # a point mass on 1 from 0 is not admissible (0 must stay reachable), so use a near one
    c = DelayChain(0, 1, [[1e-300, 1.0 - 1e-300], [0.5, 0.5]])
    assert all(sample_next(c, 0, rng) == 1 for _ in range(100))


def test_sample_frequency():
    c = DelayChain(0, 1, [[0.6, 0.4], [0.5, 0.5]])
    rng = np.random.default_rng(42)
    draws = np.array([sample_next(c, 0, rng) for _ in range(100_000)])
    assert abs(np.mean(draws == 0) - 0.6) < 0.01


def test_sample_reproducible():
    c = DelayChain(0, 2, [[0.3, 0.7, 0.0], [0.2, 0.3, 0.5], [0.1, 0.2, 0.7]])
    a = [sample_next(c, 1, r) for r in [np.random.default_rng(9)] for _ in range(50)]
    b = [sample_next(c, 1, r) for r in [np.random.default_rng(9)] for _ in range(50)]
    assert a == b


def test_dict_round_trip():
    c = DelayChain(1, 2, [[0.6, 0.4], [0.5, 0.5]])
    d = DelayChain.from_dict(c.to_dict())
    assert (d.lo, d.hi) == (1, 2) and np.array_equal(d.step, c.step)


@given(chains(), st.integers(0, 8))
def test_rows_of_powers_sum_to_one(chain, n):
    assert np.allclose(chain.power(n).sum(axis=1), 1.0, atol=1e-10)


@given(chains(), st.integers(0, 4), st.integers(0, 4))
def test_chapman_kolmogorov(chain, n, m):
    for a in chain.values:
        for c in chain.values:
            lhs = chain.n_step(a, c, n + m)
            rhs = sum(chain.n_step(a, b, n) * chain.n_step(b, c, m) for b in chain.values)
            assert abs(lhs - rhs) <= 1e-10


@given(chains(), st.integers(0, 5))
def test_support_growth_bound(chain, n):
    for a in chain.values:
        for b in chain.values:
            if b > a + n:
                assert chain.n_step(a, b, n) == 0.0
