import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abcmodel import testfns as tf
from abcmodel.empirical import (DensityProfile, InsufficientSnapshotsError, block_average,
                                dynkin_residual, f_boundary, f_boundary_long, g_bulk,
                                generator_action, generator_tables, h_boundary, h_boundary_long,
                                pair_empirical, profile_from_ensemble)
from abcmodel.simulator import simulate, simulate_ensemble
from abcmodel.species import ReservoirDensities
from conftest import make_params

A, B, E = 0, 1, 2
R = ReservoirDensities(0.5, 0.3, 0.2)

occupancies = st.lists(st.integers(0, 2), min_size=2, max_size=12).map(
    lambda v: np.array(v, dtype=np.int8))
triples = st.tuples(st.floats(0.02, 0.96), st.floats(0.02, 0.96)).filter(
    lambda ab: ab[0] + ab[1] < 0.98).map(lambda ab: ReservoirDensities(ab[0], ab[1], 1 - ab[0] - ab[1]))


def test_pair_empirical_examples():
    all_a = np.zeros(9, dtype=np.int8)
    one = lambda u: np.ones_like(u)
    assert pair_empirical(all_a, one, A) == pytest.approx(9 / 10)
    assert pair_empirical(all_a, one, B) == 0.0
    assert pair_empirical(np.array([A, B, E], dtype=np.int8), lambda u: u, B) == pytest.approx(0.125)


@given(occupancies)
def test_pairing_sums_over_species(occ):
    phi = lambda u: np.cos(3 * u) + u
    N = occ.size + 1
    total = sum(pair_empirical(occ, phi, a) for a in range(3))
    assert total == pytest.approx(np.sum(phi(np.arange(1, N) / N)) / N, abs=1e-12)


def test_block_average_examples():
    all_a = np.zeros(10, dtype=np.int8)
    assert block_average(all_a, 3, 4, A, "right") == 1.0
    alt = np.array([A, B] * 5, dtype=np.int8)
    assert block_average(alt, 0, 2, A, "right") == 0.5
    for x in range(0, 9):
        assert block_average(alt, x, 1, B, "right") == float(alt[x] == B)
    assert block_average(alt, 5, 2, B, "left") == 0.5
    with pytest.raises(IndexError):
        block_average(alt, 8, 3, A, "right")
    with pytest.raises(IndexError):
        block_average(alt, 2, 2, A, "left")


def test_g_bulk_examples():
    assert g_bulk(np.array([B, A], dtype=np.int8), 1, A) == 0.5
    assert g_bulk(np.array([A, A], dtype=np.int8), 1, A) == 0.0
    assert g_bulk(np.array([E, A], dtype=np.int8), 1, A) == -0.5
    with pytest.raises(IndexError):
        g_bulk(np.array([E, A], dtype=np.int8), 2, A)


def test_g_bulk_sums_to_zero_over_all_pairs():
    for a in range(3):
        for b in range(3):
            occ = np.array([a, b], dtype=np.int8)
            assert sum(g_bulk(occ, 1, s) for s in range(3)) == 0.0


def test_f_h_examples():
    occ_b = np.array([B, A, A], dtype=np.int8)
    occ_a = np.array([A, A, A], dtype=np.int8)
    occ_e = np.array([E, A, A], dtype=np.int8)
    assert f_boundary(occ_b, 1, A, R) == pytest.approx(0.5)
    assert f_boundary(occ_a, 1, A, R) == pytest.approx(-0.5)
    assert h_boundary(occ_a, 1, A, R) == pytest.approx(-0.05)
    assert h_boundary(occ_e, 1, A, R) == pytest.approx(0.25)
    with pytest.raises(IndexError):
        f_boundary(occ_a, 2, A, R)


@given(triples, st.integers(0, 2), st.integers(0, 2), st.sampled_from(["left", "right"]))
def test_long_and_short_forms_agree(r, s, alpha, side):
    occ = np.array([s, 0, s], dtype=np.int8)
    site = 1 if side == "left" else 3
    assert f_boundary_long(occ, site, alpha, r) == pytest.approx(f_boundary(occ, site, alpha, r), abs=1e-12)
    assert h_boundary_long(occ, site, alpha, r) == pytest.approx(h_boundary(occ, site, alpha, r), abs=1e-12)


@given(triples, st.integers(0, 2), st.sampled_from([1, 3]))
def test_boundary_observables_sum_to_zero(r, s, site):
    occ = np.array([s, s, s], dtype=np.int8)
    assert abs(sum(f_boundary(occ, site, a, r) for a in range(3))) < 1e-12
    assert abs(sum(h_boundary(occ, site, a, r) for a in range(3))) < 1e-12


def test_generator_action_compact_support_kills_boundary_terms(rng):
    p = make_params(N=40, beta=0.0, beta_tilde=1.0, theta=1.0, delta=1.0)
    phi = tf.bump(0.25, 0.75)
    for _ in range(20):
        occ = rng.integers(0, 3, 39).astype(np.int8)
        occ2 = occ.copy()
        occ2[[0, -1]] = (occ2[[0, -1]] + 1) % 3
        for a in range(3):
            assert generator_action(occ, phi, a, p) == pytest.approx(generator_action(occ2, phi, a, p),
                                                                      abs=1e-12)


def test_generator_action_linear_phi_telescopes():
    # beta = 0 and phi(u) = u: the interior Laplacian vanishes, leaving boundary pieces only
    N = 6
    p = make_params(N=N, beta=0.0, beta_tilde=0.0, theta=1.0, delta=1.0)
    phi = tf.affine(0.0, 1.0)
    for code in range(3 ** (N - 1)):
        occ = np.array([(code // 3 ** i) % 3 for i in range(N - 1)], dtype=np.int8)
        for a in range(3):
            xi1, xiL = float(occ[0] == a), float(occ[-1] == a)
            want = (p.left[a] - xi1) / N + (N - 1) / N * (p.right[a] - xiL) + xi1 - xiL
            assert generator_action(occ, phi, a, p) == pytest.approx(want, abs=1e-12)


def test_generator_tables_match_direct(rng):
    p = make_params(N=12, beta=1.3, beta_tilde=0.7, theta=1.2, delta=0.8)
    phi = tf.cosine(1.5, 0.2, offset=0.3)
    T = generator_tables(p, phi)
    for _ in range(20):
        occ = rng.integers(0, 3, 11)
        for a in range(3):
            via = (np.sum(T.site[occ == a]) + np.sum(T.bond * T.g[a, occ[:-1], occ[1:]])
                   + T.left[a, occ[0]] + T.right[a, occ[-1]])
            assert via == pytest.approx(generator_action(occ, phi, a, p), abs=1e-10)


def test_generator_tables_reject_time_dependent():
    with pytest.raises(ValueError):
        generator_tables(make_params(), tf.cosine(1.0, lam=1.0))


def test_dynkin_residual_zero_at_t0():
    p = make_params(N=16)
    phi = tf.cosine(1.0)
    tr = simulate(p, np.zeros(15, dtype=np.int8), 0.0, [0.0], 3, dynkin=generator_tables(p, phi))
    assert dynkin_residual(tr, phi, A)[0] == 0.0


def test_dynkin_quadrature_needs_snapshots():
    p = make_params(N=16)
    tr = simulate(p, np.zeros(15, dtype=np.int8), 0.05, [0.05], 3)
    with pytest.raises(InsufficientSnapshotsError):
        dynkin_residual(tr, tf.cosine(1.0), A)


def test_dynkin_quadrature_agrees_with_inline_for_dense_snapshots():
    p = make_params(N=8)
    phi = tf.cosine(1.0, 0.4)
    times = np.linspace(0, 0.02, 4001)
    tr = simulate(p, np.zeros(7, dtype=np.int8), 0.02, times, 21, dynkin=generator_tables(p, phi))
    inline = dynkin_residual(tr, phi, B)
    tr.dynkin_integral = None
    quad = dynkin_residual(tr, phi, B)
    assert abs(inline[-1] - quad[-1]) < 0.05


def test_density_profile_roundtrip(tmp_path):
    p = make_params(N=10)
    ens = simulate_ensemble(p, (0.2, 0.5, 0.3), 0.01, [0.01], 4, 30)
    prof = profile_from_ensemble(ens, 0)
    assert np.allclose(prof.values.sum(axis=0), 1.0, atol=1e-12)
    path = tmp_path / "p.csv"
    prof.to_csv(path)
    back = DensityProfile.from_csv(path)
    assert np.array_equal(back.values, prof.values)
    assert np.array_equal(back.stderr, prof.stderr)


def test_density_profile_single_configuration():
    prof = DensityProfile.from_occupancy(np.array([A, B, E, A], dtype=np.int8))
    assert np.allclose(prof.values.sum(axis=0), 1.0)
    assert list(prof.values[A]) == [1, 0, 0, 1]


def test_bump_vanishes_with_derivatives_at_ends():
    for phi in tf.dirichlet_family():
        for fn in (phi.phi, phi.grad, phi.lap):
            assert np.allclose(fn(0.0, np.array([0.0, 1.0])), 0.0)


@settings(max_examples=25)
@given(st.floats(0.05, 0.45), st.floats(0.55, 0.95), st.floats(0.1, 0.9))
def test_bump_derivatives_match_finite_differences(a, b, u):
    phi = tf.bump(a, b, (0.3, -1.0, 2.0))
    h = 1e-5
    fd1 = (phi.phi(0, u + h) - phi.phi(0, u - h)) / (2 * h)
    fd2 = (phi.phi(0, u + h) - 2 * phi.phi(0, u) + phi.phi(0, u - h)) / h ** 2
    # third derivative jumps at the support edges, so scale by the global size of phi''
    scale = 1 + np.abs(phi.lap(0, np.linspace(0, 1, 401))).max()
    assert abs(fd1 - phi.grad(0, u)) < 1e-5 * scale
    assert abs(fd2 - phi.lap(0, u)) < 1e-3 * scale
