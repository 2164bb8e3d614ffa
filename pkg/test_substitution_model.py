import math

import numpy as np
import pytest

from errors import InvalidArgumentError, InvalidParameterError
from substitution_model import (GtrParams, build_rate_matrix, discrete_gamma_rates, transition_matrices,
                                transition_matrix)


def random_params(rng):
    return GtrParams.from_arrays(rng.uniform(0.1, 5.0, 6), rng.dirichlet(np.full(4, 2.0)))


def test_jukes_cantor_rate_matrix():
    q = build_rate_matrix(GtrParams.jukes_cantor()).q
    expected = np.full((4, 4), 1.0 / 3.0)
    np.fill_diagonal(expected, -1.0)
    np.testing.assert_allclose(q, expected, atol=1e-12)


def test_rate_matrix_invariants():
    rng = np.random.default_rng(1)
    for _ in range(50):
        params = random_params(rng)
        q, pi = build_rate_matrix(params).q, params.pi
        off = q[~np.eye(4, dtype=bool)]
        assert np.all(off >= 0)
        np.testing.assert_allclose(q.sum(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(pi[:, None] * q, (pi[:, None] * q).T, atol=1e-12)
        assert -np.dot(pi, np.diag(q)) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(pi @ q, 0.0, atol=1e-12)


def test_rate_matrix_against_direct_construction():
    e = (1.0, 2.0, 1.0, 1.0, 2.0, 1.0)
    q = build_rate_matrix(GtrParams(e, (0.25,) * 4)).q
    # every row already has total rate 1, so no rescaling
    expected = np.array([[-1.00, 0.25, 0.50, 0.25],
                         [0.25, -1.00, 0.25, 0.50],
                         [0.50, 0.25, -1.00, 0.25],
                         [0.25, 0.50, 0.25, -1.00]])
    np.testing.assert_allclose(q, expected, atol=1e-12)


def test_rate_matrix_scale_invariant_in_exchangeabilities():
    rng = np.random.default_rng(2)
    params = random_params(rng)
    scaled = GtrParams.from_arrays(params.e * 7.3, params.pi)
    np.testing.assert_allclose(build_rate_matrix(params).q, build_rate_matrix(scaled).q, atol=1e-12)


def test_invalid_params_rejected():
    with pytest.raises(InvalidParameterError):
        GtrParams((1.0, 1.0, 0.0, 1.0, 1.0, 1.0), (0.25,) * 4)
    with pytest.raises(InvalidParameterError):
        GtrParams((1.0,) * 6, (0.5, 0.5, 0.0, 0.0))
    with pytest.raises(InvalidParameterError):
        GtrParams((1.0,) * 6, (0.3, 0.3, 0.3, 0.3))


def test_transition_identity_at_zero():
    q = build_rate_matrix(random_params(np.random.default_rng(3)))
    assert np.array_equal(transition_matrix(q, 0.0), np.eye(4))


def test_jukes_cantor_transition_closed_form():
    p = transition_matrix(build_rate_matrix(GtrParams.jukes_cantor()), 0.1)
    expected = 0.25 + 0.75 * math.exp(-4 * 0.1 / 3)
    np.testing.assert_allclose(np.diag(p), expected, atol=1e-12)
    assert expected == pytest.approx(0.906389, abs=1e-6)


def test_transition_properties_on_random_params():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        params = random_params(rng)
        q = build_rate_matrix(params)
        s, t = rng.uniform(0, 5, size=2)
        ps, pt, pst = q.transition(s), q.transition(t), q.transition(s + t)
        np.testing.assert_allclose(pt.sum(axis=1), 1.0, atol=1e-10)
        assert np.all((pt >= 0) & (pt <= 1))
        np.testing.assert_allclose(ps @ pt, pst, atol=1e-10)
        flux = params.pi[:, None] * pt
        np.testing.assert_allclose(flux, flux.T, atol=1e-10)


def test_vectorised_transitions_match_single():
    q = build_rate_matrix(random_params(np.random.default_rng(5)))
    ts = [0.0, 0.01, 0.3, 2.0]
    stacked = transition_matrices(q, ts)
    for k, t in enumerate(ts):
        np.testing.assert_allclose(stacked[k], transition_matrix(q, t), atol=1e-14)


@pytest.mark.parametrize("t", [-0.1, math.inf, math.nan])
def test_invalid_branch_length(t):
    q = build_rate_matrix(GtrParams.jukes_cantor())
    with pytest.raises(InvalidArgumentError):
        transition_matrix(q, t)


def test_discrete_gamma_single_class():
    assert discrete_gamma_rates(0.37, 1).rates == (1.0,)


def test_discrete_gamma_exponential_quartiles():
    rates = discrete_gamma_rates(1.0, 4).array
    np.testing.assert_allclose(rates, [0.1369, 0.4768, 1.0000, 2.3863], atol=1e-3)


def test_discrete_gamma_closed_form_exponential():
    # conditional means of Exp(1) over quartiles: 4((a+1)e^-a - (b+1)e^-b)
    cuts = [0.0] + [-math.log(1 - q) for q in (0.25, 0.5, 0.75)]
    exact = []
    for a, b in zip(cuts, cuts[1:] + [math.inf]):
        tail_b = 0.0 if math.isinf(b) else (b + 1) * math.exp(-b)
        exact.append(4 * ((a + 1) * math.exp(-a) - tail_b))
    np.testing.assert_allclose(discrete_gamma_rates(1.0, 4).array, exact, atol=1e-9)


def test_discrete_gamma_large_alpha():
    assert np.all(np.abs(discrete_gamma_rates(1e6, 4).array - 1.0) < 1e-2)


def test_discrete_gamma_properties():
    spreads = []
    for alpha in (0.5, 1.0, 10.0, 1000.0):
        rates = discrete_gamma_rates(alpha, 4).array
        assert np.all(np.diff(rates) > 0)
        assert rates.mean() == pytest.approx(1.0, abs=1e-12)
        spreads.append(np.max(np.abs(rates - 1.0)))
    assert all(b < a for a, b in zip(spreads, spreads[1:]))


@pytest.mark.parametrize("alpha", [1e-3, 1e-4])
def test_discrete_gamma_tiny_alpha(alpha):
    rates = discrete_gamma_rates(alpha, 4).array
    assert np.all(rates > 0)
    assert np.all(np.diff(rates) > 0)
    # nearly all mass sits in the top class
    assert rates[-1] == pytest.approx(4.0, rel=1e-9)
    assert rates.mean() == pytest.approx(1.0, abs=1e-12)
    p = transition_matrix(build_rate_matrix(GtrParams.jukes_cantor()), 0.3 * rates[0])
    np.testing.assert_allclose(p, np.eye(4), atol=1e-12)


@pytest.mark.parametrize("alpha,k", [(0.0, 4), (-1.0, 4), (1.0, 0)])
def test_discrete_gamma_invalid(alpha, k):
    with pytest.raises(InvalidParameterError):
        discrete_gamma_rates(alpha, k)
