import math

import numpy as np
import pytest
import scipy.integrate as sint
import scipy.linalg as sla
from hypothesis import given, strategies as st

from bdcalc import ConfigurationError, DiracSystem, Field, Grid, SolverError, ValidationError, symbol_higher_order
from bdcalc.calculus import (
    Quadrature,
    Semigroup,
    default_quadrature,
    duality_check,
    engine,
    exterior_derivative,
    inhomogeneous_split,
    newton_sign,
    offdiag_profile,
    pi_b,
    qt,
    random_accretive_matrix,
    resolvent,
    sector_distance,
    sgn,
    sgn_columns,
    sgn_constant,
    sgn_oracle,
    spectral_projections,
    spectrum,
    square_function,
    square_function_ratios,
    sum_op,
)
from bdcalc.calculus.resolvent import backward_residual, operator_norm_bound
from bdcalc.operators import identity_multop, random_accretive, scalar_multop, symbol_inhomogeneous

from conftest import hodge_system


def range_field(system, rng):
    f = Field.random(system.grid, rng)
    return Field(system.grid, system.D.project_range_array(f.values[None])[0])


# quadrature


def test_quadrature_integrates_dt_over_t_exactly():
    q = Quadrature(1e-3, 1e2, 10)
    nodes, w = q.nodes()
    assert np.sum(w) == pytest.approx(math.log(1e5), rel=1e-14)
    assert nodes[0] == pytest.approx(1e-3) and nodes[-1] == pytest.approx(1e2)


def test_quadrature_against_adaptive_integration():
    g = lambda t: t**2 / (1 + t**2) ** 2
    ref, _ = sint.quad(lambda t: g(t) / t, 1e-4, 1e4, limit=400)
    for rule in ("trapezoid-log", "midpoint-log"):
        nodes, w = Quadrature(1e-4, 1e4, 20, rule).nodes()
        assert np.sum(w * g(nodes)) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize(
    "args", [(1.0, 0.5, 10), (0.0, 1.0, 10), (1e-3, 1.0, 3), (1e-3, 1.0, 10.5), (1e-3, np.inf, 10)]
)
def test_quadrature_rejects_bad_windows(args):
    with pytest.raises(ConfigurationError):
        Quadrature(*args)
    with pytest.raises(ConfigurationError):
        Quadrature(1e-3, 1.0, 10, "simpson")


def test_quadrature_serialization():
    q = Quadrature(1e-3, 1.0, 12, "midpoint-log")
    assert Quadrature.from_dict(q.to_dict()) == q


# resolvents and Q_t


@pytest.mark.parametrize("side", ["BD", "DB"])
def test_engines_agree_on_random_coefficients(rng, random_hodge, side):
    u = Field.random(random_hodge.grid, rng)
    dense = resolvent(random_hodge, 0.7, u, side, "dense")
    it = resolvent(random_hodge, 0.7, u, side, "iterative")
    np.testing.assert_allclose(it.flat, dense.flat, atol=1e-8)


def test_engines_agree_on_identity(rng, identity_hodge):
    u = Field.random(identity_hodge.grid, rng)
    ref = qt(identity_hodge, 0.05, u, "BD", "fourier")
    for method in ("dense", "iterative"):
        np.testing.assert_allclose(qt(identity_hodge, 0.05, u, "BD", method).flat, ref.flat, atol=1e-8)


@given(st.integers(0, 1000), st.floats(-3.0, 3.0))
def test_resolvent_solves_the_shifted_system(seed, log_s):
    system = hodge_system(16, seed=seed)
    s = 10.0**log_s
    u = Field.random(system.grid, np.random.default_rng(seed))
    w = resolvent(system, s, u)
    lhs = w.flat + 1j * s * system.bd(w).flat
    res = backward_residual(
        lambda X: system.dense().BD @ X, s, w.flat[:, None], u.flat[:, None], operator_norm_bound(system)
    )
    assert res[0] < 1e-12
    np.testing.assert_allclose(lhs, u.flat, atol=1e-9 * (1 + s * operator_norm_bound(system)) * np.linalg.norm(u.flat))


def test_qt_on_a_single_mode_for_identity_coefficients():
    g = Grid(1, 2, 32)
    system = DiracSystem(symbol_higher_order(g, 1), identity_multop(g))
    j = 3
    xi = 2 * np.pi * j
    # eigenvector of the symbol for eigenvalue |xi| at frequency j
    vec = np.linalg.eigh(system.D.symbol(np.array([xi])))[1][:, -1]
    u = Field.mode(g, (j,), vec)
    for t in (0.01, 0.1, 1.0):
        expected = t * xi / (1 + (t * xi) ** 2)
        assert qt(system, t, u).norm() == pytest.approx(expected * u.norm(), rel=1e-12)


def test_qt_rejects_nonpositive_t(identity_hodge, rng):
    with pytest.raises(ConfigurationError):
        qt(identity_hodge, 0.0, Field.random(identity_hodge.grid, rng))


def test_resolvent_requires_validation(rng):
    g = Grid(1, 2, 16)
    system = DiracSystem(hodge_system(16).D, scalar_multop(g, -1.0))
    with pytest.raises(ValidationError):
        engine(system)


# square functions


def scalar_constant(k):
    """int_0^inf x^(2k) / (1 + x^(2k))^2 dx / x by adaptive quadrature."""
    f = lambda x: x ** (2 * k - 1) / (1 + x ** (2 * k)) ** 2
    return sint.quad(f, 0, 1)[0] + sint.quad(lambda y: f(1 / y) / y**2, 0, 1)[0]


@pytest.mark.parametrize("k", [1, 2])
def test_square_function_constant_for_identity(k, rng):
    g = Grid(1, 1 + 1, 128)
    system = DiracSystem(symbol_higher_order(g, k), identity_multop(g))
    q = default_quadrature(system)
    us = [range_field(system, rng) for _ in range(5)]
    ratios = square_function_ratios(system, us, q)
    np.testing.assert_allclose(ratios, scalar_constant(k), atol=1e-6)
    rep = square_function(system, us[0], q)
    assert rep.resolved and not rep.tail_flags["head"] and not rep.tail_flags["tail"]
    assert rep.ratio == pytest.approx(ratios[0], rel=1e-12)


def test_square_function_bounded_for_random_coefficients(rng):
    system = hodge_system(64, seed=1)
    q = default_quadrature(system)
    ratios = square_function_ratios(system, [range_field(system, rng) for _ in range(10)], q)
    assert np.all(np.isfinite(ratios)) and np.all(ratios > 0)
    assert ratios.max() < 10


def test_duality_identity(random_hodge):
    q = Quadrature(1e-3, 1e1, 4)
    assert duality_check(random_hodge, q, trials=2) < 1e-10


def test_inhomogeneous_split_is_finite():
    g = Grid(1, 3, 32)
    system = DiracSystem(symbol_inhomogeneous(g), random_accretive(g, 0.5, 0.3, 2))
    rep = inhomogeneous_split(system, default_quadrature(system), probes=4)
    assert np.isfinite(rep["sup_ratio"])
    assert rep["head_partial_max"] + rep["tail_partial_max"] == pytest.approx(rep["sup_ratio"], rel=0.5)
    assert np.isfinite(rep["head_first_order_comparison"]) and np.isfinite(rep["tail_theta_d_bound"])


# sign function


@pytest.mark.parametrize("k", [1, 2, 3])
def test_sgn_constant(k):
    assert sgn_constant(k) == pytest.approx(16 * k / math.pi, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_newton_sign_matches_scipy_signm(seed, size):
    r = np.random.default_rng(seed)
    A = r.standard_normal((size, size)) + 1j * r.standard_normal((size, size))
    ev = np.linalg.eigvals(A)
    if np.min(np.abs(ev.real)) < 1e-2:
        return  # too close to the imaginary axis for a fair comparison
    ref = sla.signm(A)
    cond = np.linalg.cond(A)
    np.testing.assert_allclose(newton_sign(A), ref, atol=1e-8 * cond)


def test_newton_sign_fails_on_imaginary_spectrum():
    with pytest.raises(SolverError):
        newton_sign(np.diag([1j, 1.0]), maxiter=30)


def test_sgn_routes_agree(random_hodge, rng):
    q = default_quadrature(random_hodge)
    S = sgn_oracle(random_hodge)
    X = rng.standard_normal((random_hodge.grid.dof, 3)) + 0j
    np.testing.assert_allclose(sgn_columns(random_hodge, X, q), S @ X, atol=1e-6 * np.linalg.norm(X))
    u = Field(random_hodge.grid, X[:, 0])
    np.testing.assert_allclose(sgn(random_hodge, u, q).flat, S @ X[:, 0], atol=1e-6 * np.linalg.norm(X[:, 0]))


def test_sgn_identity_is_sign_of_symbol(identity_hodge, rng):
    S = sgn_oracle(identity_hodge)
    u = Field.random(identity_hodge.grid, rng)
    # for B = I the sign is the Fourier multiplier sign(symbol)
    vals, vecs = np.linalg.eigh(identity_hodge.D.lattice)
    sign_sym = np.einsum("...ij,...j,...kj->...ik", vecs, np.sign(np.round(vals, 10)), np.conj(vecs))
    fh = np.fft.fftn(u.values, axes=(0,))
    ref = np.fft.ifftn(np.einsum("...ij,...j->...i", sign_sym, fh), axes=(0,))
    np.testing.assert_allclose(S @ u.flat, ref.reshape(-1), atol=1e-10)


def test_spectral_projections(random_hodge):
    sp = spectral_projections(random_hodge, "DB")
    Ep, Em, P = sp.E_plus.matrix, sp.E_minus.matrix, sp.Pi_range.matrix
    scale = max(1.0, np.linalg.norm(Ep, 2)) ** 2
    assert np.linalg.norm(Ep @ Ep - Ep, 2) / scale < 1e-9
    assert np.linalg.norm(Ep @ Em, 2) / scale < 1e-9
    np.testing.assert_allclose(Ep + Em, P, atol=1e-12)
    S = sp.sign.matrix
    assert np.linalg.norm(S @ S - P, 2) / scale < 1e-9
    # sgn(BD) BD has spectrum in the right half plane
    ev = np.linalg.eigvals(S @ random_hodge.dense().DB)
    assert np.min(ev.real) > -1e-8


# semigroup and spectrum


def test_semigroup_properties(random_hodge, rng):
    sg = Semigroup(random_hodge)
    Ep = sg.projections.E_plus.matrix
    v = Field(random_hodge.grid, Ep @ Field.random(random_hodge.grid, rng).flat)
    a = sg.apply(0.3, sg.apply(0.2, v))
    b = sg.apply(0.5, v)
    np.testing.assert_allclose(a.flat, b.flat, atol=1e-10 * v.norm())
    # the generator: d/dt e^{-t DB} v = -DB e^{-t DB} v at t = 0
    h = 1e-6
    fd = (sg.apply(h, v).flat - v.flat) / h
    np.testing.assert_allclose(fd, -random_hodge.db(v).flat, atol=1e-3 * np.linalg.norm(random_hodge.db(v).flat))
    diag = sg.diagnostics(v)
    assert diag["small_t_defect"] < 1e-6 and diag["large_t_norm"] < 1e-10
    with pytest.raises(ValidationError):
        sg.apply(0.1, Field.random(random_hodge.grid, rng))


def test_sector_distance_cases():
    omega = np.pi / 4
    assert sector_distance(1.0 + 0.5j, omega) == 0.0
    assert sector_distance(-2.0, omega) == 0.0
    assert sector_distance(1j, omega) == pytest.approx(math.sin(np.pi / 4))
    assert sector_distance(3j, 0.0) == pytest.approx(3.0)


def test_spectrum_identity_is_real(identity_hodge):
    system = hodge_system(32)
    rep = spectrum(system)
    assert np.max(np.abs(rep.eigenvalues.imag)) < 1e-10
    assert rep.max_violation < 1e-10


@pytest.mark.parametrize("seed", [0, 1])
def test_spectrum_in_double_sector(seed):
    rep = spectrum(hodge_system(32, seed=seed), angles=3, radii=5)
    assert rep.max_violation <= 1e-8
    assert rep.max_product <= 10
    assert "re,im" in rep.eigenvalues_csv().splitlines()[0]


# Hodge splittings on finite-dimensional spaces


@pytest.mark.parametrize("dim", [1, 2])
def test_pi_b_splitting(dim):
    rng = np.random.default_rng(dim)
    G = exterior_derivative(4, dim)
    size = G.shape[0]
    B1 = random_accretive_matrix(size, rng)
    B2 = np.linalg.inv(B1)  # compatible with any Gamma
    sp = pi_b(G, B1, B2)
    assert sp.max_defect < 1e-9
    assert sum(sp.dims) == size


def test_pi_b_rejects_non_nilpotent():
    with pytest.raises(ValidationError):
        pi_b(np.eye(3), np.eye(3), np.eye(3))


def test_sum_op_splitting():
    rng = np.random.default_rng(5)
    G = exterior_derivative(4, 2)
    B1 = random_accretive_matrix(G.shape[0], rng)
    B2 = np.linalg.inv(B1)
    sp = sum_op(G, B1, G, B2)
    assert sp.defects["diagonal"] < 1e-9
    assert sp.max_defect < 1e-9


# off-diagonal decay


def test_offdiag_decay_fit():
    system = hodge_system(128, seed=2, smooth_modes=8)
    g = system.grid
    x = g.coordinates()[..., 0]
    E = x < 0.25
    F = (x >= 0.5) & (x < 0.75)
    d = 0.25 + g.spacing
    prof = offdiag_profile(system, E, F, d / np.linspace(4, 24, 11), trials=3, seed=0)
    assert prof.distance == pytest.approx(d)
    assert prof.alpha > 0 and prof.r_squared >= 0.95
    assert prof.in_window.sum() >= 3


def test_offdiag_rejects_overlap(random_hodge):
    E = np.zeros(random_hodge.grid.shape, bool)
    E[:10] = True
    with pytest.raises(ConfigurationError):
        offdiag_profile(random_hodge, E, E, [0.01])
