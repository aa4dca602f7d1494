import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abcmodel.oracle import (OracleCapError, ProductMeasure, StateSpace, adjoint_identity,
                             adjoint_left, adjoint_right, build_generator, dirichlet_form,
                             dirichlet_form_identity, exact_distribution, exact_expectation,
                             numerical_adjoint, relative_entropy)
from abcmodel.simulator import RateTable
from abcmodel.species import ReservoirDensities
from conftest import LEFT, RIGHT, make_params

LOG2 = 0.6931471805599453


def test_state_space_roundtrip():
    sp = StateSpace(5)
    assert sp.size == 81
    for i in (0, 17, 80):
        assert sp.encode(sp.decode(i)) == i
    assert np.array_equal(sp.all_states()[17], sp.decode(17))


def test_cap():
    with pytest.raises(OracleCapError):
        StateSpace(8)
    with pytest.raises(OracleCapError):
        build_generator(make_params(N=8))


@pytest.mark.parametrize("N", [3, 4, 5])
def test_rows_sum_to_zero(N):
    gen = build_generator(make_params(N=N))
    assert gen.max_row_sum() < 1e-12
    assert gen.min_offdiag() >= 0.0


def test_parts_are_additive():
    p = make_params(N=5)
    whole = build_generator(p)
    summed = build_generator(p, "bulk") + build_generator(p, "left") + build_generator(p, "right")
    assert np.allclose(whole.Q, summed.Q, atol=1e-15)
    bonds = sum((build_generator(p, [("bond", x)]) for x in (2, 3)), build_generator(p, [("bond", 1)]))
    assert np.allclose(bonds.Q, build_generator(p, "bulk").Q, atol=1e-15)


def test_single_swap_entry():
    p = make_params(N=3, beta=2.0)
    gen = build_generator(p, "bulk")
    sp = gen.space
    i, j = sp.encode([0, 1]), sp.encode([1, 0])
    assert gen.Q[i, j] == pytest.approx(1 - 2.0 / 6)
    assert gen.Q[j, i] == pytest.approx(1 + 2.0 / 6)
    assert gen.Q[sp.encode([2, 2])].tolist() == [0.0] * 9


def test_left_flip_entries():
    p = make_params(N=4, theta=1.0, delta=1.0, beta_tilde=1.0)
    gen = build_generator(p, "left")
    sp = gen.space
    i = sp.encode([0, 0, 0])
    # A -> B with (N^-delta + bt/2N^theta) r_B; A -> E with (N^-delta - bt/2N^theta) r_E
    assert gen.Q[i, sp.encode([1, 0, 0])] == pytest.approx((0.25 + 0.125) * LEFT.rB)
    assert gen.Q[i, sp.encode([2, 0, 0])] == pytest.approx((0.25 - 0.125) * LEFT.rE)


@pytest.mark.parametrize("N", [3, 4, 5])
def test_transcription_matches_simulator_rate_table(N):
    p = make_params(N=N, beta=1.7, beta_tilde=0.6, theta=1.2, delta=0.8)
    assert np.allclose(build_generator(p).Q, build_generator(p, rates=RateTable(p)).Q, atol=1e-15)


def test_expectation_at_time_zero():
    p = make_params(N=4)
    gen = build_generator(p)
    p0 = np.zeros(gen.space.size)
    p0[gen.space.encode([0, 1, 2])] = 1.0
    obs = np.stack([gen.space.indicator(x, a) for x in (1, 2, 3) for a in (0, 1, 2)], axis=1)
    assert exact_expectation(gen, p0, obs, 0.0).tolist() == [1, 0, 0, 0, 1, 0, 0, 0, 1]


def test_distribution_preserves_mass():
    gen = build_generator(make_params(N=4))
    p0 = np.full(gen.space.size, 1 / gen.space.size)
    pt = exact_distribution(gen, p0, 0.3)
    assert abs(pt.sum() - 1) < 1e-12 and pt.min() >= -1e-15
    with pytest.raises(ValueError):
        exact_distribution(gen, p0, -1.0)


def test_symmetric_equilibrium_density():
    p = make_params(N=4, beta=0.0, beta_tilde=0.0, left=LEFT, right=LEFT)
    gen = build_generator(p)
    p0 = np.zeros(gen.space.size)
    p0[0] = 1.0
    pt = exact_distribution(gen, p0, 20.0)
    for x in (1, 2, 3):
        assert abs(pt @ gen.space.indicator(x, 0) - LEFT.rA) < 1e-8
    nu = ProductMeasure.constant(LEFT.as_tuple(), 4).probabilities(gen.space)
    assert np.max(np.abs(nu @ gen.Q)) < 1e-14


@pytest.mark.parametrize("side", ["left", "right"])
def test_adjoint_reduces_to_self_when_symmetric(side):
    p = make_params(N=4, beta_tilde=0.0)
    r = LEFT if side == "left" else RIGHT
    nu = ProductMeasure.constant(r.as_tuple(), 4)
    gen = build_generator(p, side)
    adj = (adjoint_left if side == "left" else adjoint_right)(p, nu)
    assert np.allclose(adj.Q, gen.Q, atol=1e-15)
    assert np.allclose(numerical_adjoint(gen, nu), gen.Q, atol=1e-14)


@pytest.mark.parametrize("side", ["left", "right"])
def test_analytic_adjoint_matches_matrix_adjoint(side):
    p = make_params(N=4, beta_tilde=1.3, theta=1.2, delta=1.0)
    r = LEFT if side == "left" else RIGHT
    marg = np.array([r.as_tuple(), (0.2, 0.5, 0.3), r.as_tuple()])
    nu = ProductMeasure(marg)
    gen = build_generator(p, side)
    adj = (adjoint_left if side == "left" else adjoint_right)(p, nu)
    assert np.max(np.abs(adj.Q - numerical_adjoint(gen, nu))) < 1e-13


def test_adjoint_multiplicative_term_vanishes_at_uniform_reservoir():
    third = ReservoirDensities(1 / 3, 1 / 3, 1 / 3)
    p = make_params(N=3, beta_tilde=1.0, left=third, right=third)
    adj = adjoint_left(p, ProductMeasure.constant(third.as_tuple(), 3))
    assert np.max(np.abs(adj.Q.sum(axis=1))) < 1e-15


def test_adjoint_requires_reservoir_marginal():
    p = make_params(N=4)
    with pytest.raises(ValueError):
        adjoint_left(p, ProductMeasure.constant((1 / 3, 1 / 3, 1 / 3), 4))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1.9), st.floats(1.0, 2.0), st.integers(0, 2 ** 32 - 1))
def test_adjoint_identity_random_pairs(bt, theta, seed):
    p = make_params(N=4, beta_tilde=bt, theta=theta, delta=1.0)
    for side, r in (("left", LEFT), ("right", RIGHT)):
        nu = ProductMeasure.constant(r.as_tuple(), 4)
        rep = adjoint_identity(p, nu, side, np.random.default_rng(seed), pairs=10)
        assert rep.passed, rep.line()


def test_adjoint_identity_detects_missigned_rates(missigned_rates):
    p = make_params(N=4)
    nu = ProductMeasure.constant(RIGHT.as_tuple(), 4)
    rep = adjoint_identity(p, nu, "right", np.random.default_rng(1), pairs=20,
                           rates=missigned_rates(p))
    assert not rep.passed


def test_entropy_of_point_mass():
    sp = StateSpace(5)
    nu = ProductMeasure.constant((0.5, 0.25, 0.25), 5)
    mu = np.zeros(sp.size)
    mu[sp.encode([0, 0, 0, 0])] = 1.0
    assert relative_entropy(mu, nu) == pytest.approx(4 * LOG2, abs=1e-12)
    assert relative_entropy(nu.probabilities(sp), nu) == pytest.approx(0.0, abs=1e-14)


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_entropy_bound(seed):
    g = np.random.default_rng(seed)
    nu = ProductMeasure(g.dirichlet(np.ones(3), size=3) * 0.97 + 0.01)
    sp = StateSpace(4)
    mu = g.dirichlet(np.full(sp.size, 0.3))
    H = relative_entropy(mu, nu)
    r0 = nu.marginals.min()
    assert -1e-12 <= H <= 3 * np.log(1 / r0) + 1e-12


def test_dirichlet_form_of_constant_density():
    p = make_params(N=4)
    nu = ProductMeasure.constant(LEFT.as_tuple(), 4)
    f = np.ones(StateSpace(4).size)
    assert dirichlet_form(build_generator(p), nu, f) == 0.0
    for rep in dirichlet_form_identity(p, nu, f):
        assert rep.passed and rep.details["D"] == 0.0


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_dirichlet_form_identity_random_density(seed):
    g = np.random.default_rng(seed)
    p = make_params(N=4, beta=g.uniform(0, 3), beta_tilde=g.uniform(0, 1))
    nu = ProductMeasure(g.dirichlet(np.ones(3) * 2, size=3))
    sp = StateSpace(4)
    f = g.exponential(size=sp.size)
    f /= nu.probabilities(sp) @ f
    for rep in dirichlet_form_identity(p, nu, f):
        assert rep.passed, rep.line()
        assert rep.details["D"] >= 0.0


def test_dirichlet_form_identity_cap_and_validation():
    with pytest.raises(OracleCapError):
        dirichlet_form_identity(make_params(N=7), ProductMeasure.constant(LEFT.as_tuple(), 7),
                                np.ones(3 ** 6))
    p = make_params(N=3)
    nu = ProductMeasure.constant(LEFT.as_tuple(), 3)
    with pytest.raises(ValueError):
        dirichlet_form_identity(p, nu, np.full(9, 2.0))
