import numpy as np
import pytest
from hypothesis import given, strategies as st

from bdcalc import ConfigurationError, Field, Grid, SolverError, ValidationError
from bdcalc.bvp import (
    CoefficientBlock,
    cauchy_norm,
    cauchy_operator,
    continuity_path,
    hat_transform,
    k_symmetry_defect,
    kato_sqrt,
    neumann_solve,
    neumann_system,
    positive_projection,
    rellich_check,
)
from bdcalc.calculus import default_quadrature


def mean_free(grid, rng):
    f = Field.random(grid, rng)
    return f - Field(grid, np.broadcast_to(f.values.mean(axis=tuple(range(grid.n))), grid.field_shape))


def fourier_multiplier(f: Field, symbol) -> np.ndarray:
    axes = tuple(range(f.grid.n))
    return np.fft.ifftn(symbol[..., None] * np.fft.fftn(f.values, axes=axes), axes=axes)


# Kato square roots


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (1, 2)])
def test_kato_identity_is_the_fourier_multiplier(n, k, rng):
    g = Grid(n, 1, 16 if n == 2 else 32)
    p = 1 if n == 1 else (n if k == 1 else None)
    u = mean_free(g, rng)
    res = kato_sqrt(np.eye(p), k, [u])
    xi = np.linalg.norm(g.frequencies(), axis=-1)
    np.testing.assert_allclose(res.sqrt_u[0].values, fourier_multiplier(u, xi**k), atol=1e-9 * u.norm() * xi.max() ** k)
    assert res.ratios[0] == pytest.approx(1.0, abs=1e-10)


def test_kato_routes_agree_and_ratios_are_bounded(rng):
    g = Grid(1, 1, 32)
    r = np.random.default_rng(7)
    a = 1.0 + 0.5 * r.uniform(size=g.shape) + 0.3j * r.standard_normal(g.shape)
    us = [mean_free(g, rng) for _ in range(3)]
    oracle = kato_sqrt(a[..., None, None], 1, us)
    q = default_quadrature(oracle.system)
    quad = kato_sqrt(a[..., None, None], 1, us, route="quadrature", q=q)
    for x, y in zip(oracle.sqrt_u, quad.sqrt_u):
        np.testing.assert_allclose(y.values, x.values, atol=1e-6 * x.norm())
    # bounded above and below by powers of the extremes of |a|
    lo, hi = np.abs(a).min(), np.abs(a).max()
    assert np.all(oracle.ratios > 0.1 * np.sqrt(lo)) and np.all(oracle.ratios < 10 * np.sqrt(hi))


def test_kato_rejects_non_accretive_coefficient(rng):
    g = Grid(1, 1, 16)
    with pytest.raises(ValidationError):
        kato_sqrt(-np.eye(1), 1, [mean_free(g, rng)])
    with pytest.raises(ConfigurationError):
        kato_sqrt(np.eye(1), 1, [Field.random(g.with_fiber(2), rng)])


# Cauchy integral


def test_cauchy_flat_curve_is_the_sign_multiplier(rng):
    g = Grid(1, 1, 64)
    u = Field.random(g, rng)
    out = cauchy_operator(np.ones(g.shape), u)
    sign = np.sign(g.frequencies()[..., 0])
    np.testing.assert_allclose(out.values, fourier_multiplier(u, sign), atol=1e-12)
    assert cauchy_norm(g, np.ones(g.shape)) == pytest.approx(1.0)


@given(st.floats(-1.4, 1.4))
def test_cauchy_constant_rotation_keeps_the_sign(theta):
    g = Grid(1, 1, 32)
    a = np.full(g.shape, np.exp(1j * theta))
    u = Field.random(g, np.random.default_rng(0))
    ref = cauchy_operator(np.ones(g.shape), u)
    np.testing.assert_allclose(cauchy_operator(a, u).values, ref.values, atol=1e-9)


def test_cauchy_sign_squares_to_range_projection(rng):
    g = Grid(1, 1, 64)
    x = g.coordinates()[..., 0]
    a = 1.0 + 0.5j * np.sin(2 * np.pi * x)
    u = Field.random(g, rng)
    once = cauchy_operator(a, u)
    twice = cauchy_operator(a, once)
    # projection onto R(BD) = (1/a) R(D) along the constants: remove c with mean(a (u - c)) = 0
    c = np.mean(a * u.values[..., 0]) / np.mean(a)
    np.testing.assert_allclose(twice.values[..., 0], u.values[..., 0] - c, atol=1e-9)
    assert cauchy_norm(g, a) >= 1.0


def test_cauchy_rejects_non_accretive():
    g = Grid(1, 1, 16)
    with pytest.raises(ValidationError):
        cauchy_operator(-np.ones(g.shape), Field.zeros(g))


# A -> A_hat


@given(st.integers(0, 500), st.sampled_from([0.0, 0.4]))
def test_hat_is_an_involution(seed, skew):
    g = Grid(1, 2, 16)
    A = CoefficientBlock.random(g, 1, 0.5, seed, skew=skew)
    H = hat_transform(A)
    assert H.diagnostics["involution"] < 1e-11
    assert H.diagnostics["accretive"]
    np.testing.assert_allclose(hat_transform(H).matrices, A.matrices, atol=1e-11)
    if skew == 0.0:
        assert H.diagnostics["k_symmetry"] < 1e-12


def test_hat_of_identity_is_identity():
    A = CoefficientBlock.identity(Grid(2, 1, 8))
    np.testing.assert_allclose(hat_transform(A).matrices, A.matrices)
    assert k_symmetry_defect(A) == 0.0


def test_hat_rejects_singular_block():
    g = Grid(1, 2, 8)
    M = np.eye(2, dtype=complex)
    M[0, 0] = 0.0
    with pytest.raises(ConfigurationError):
        hat_transform(CoefficientBlock(g, 1, M))


# Neumann problem


def test_neumann_identity_matches_explicit_solution(rng):
    g = Grid(1, 2, 64)
    A = CoefficientBlock.identity(g)
    w = mean_free(g.with_fiber(1), rng)
    times = [0.01, 0.1, 1.0]
    sol = neumann_solve(A, w, times)
    xi = g.frequencies()[..., 0]
    what = np.fft.fft(w.values[..., 0])
    vhat = np.stack([what, -1j * np.sign(xi) * what], axis=-1)
    np.testing.assert_allclose(sol.v.values, np.fft.ifft(vhat, axis=0), atol=1e-10)
    for t, V in zip(times, sol.V):
        ref = np.fft.ifft(np.exp(-t * np.abs(xi))[:, None] * vhat, axis=0)
        np.testing.assert_allclose(V.values, ref, atol=1e-9)
    assert sol.well_posed and sol.condition == pytest.approx(1.0)


def test_neumann_random_self_adjoint(rng):
    g = Grid(1, 2, 32)
    A = CoefficientBlock.random(g, 1, 0.5, 3, smooth_modes=4)
    w = mean_free(g.with_fiber(1), rng)
    sol = neumann_solve(A, w, [0.01, 0.1])
    d = sol.diagnostics
    assert sol.well_posed and np.isfinite(sol.condition)
    assert d["trace_defect"] < 1e-10 and d["membership_defect"] < 1e-8
    assert d["pde_residual"] < 1e-6
    assert not sol.warnings


def test_neumann_rejects_bad_data(rng):
    g = Grid(1, 2, 16)
    A = CoefficientBlock.identity(g)
    with pytest.raises(ConfigurationError):
        neumann_solve(A, Field.constant(g.with_fiber(1), [1.0]), [0.1])
    skew = CoefficientBlock.random(g, 1, 0.5, 0, skew=0.5)
    with pytest.raises(ConfigurationError):
        neumann_solve(skew, mean_free(g.with_fiber(1), rng), [0.1])
    with pytest.raises(ConfigurationError):
        neumann_solve(A, mean_free(g.with_fiber(1), rng), [0.0])


# Rellich identity and the continuity path


@pytest.mark.parametrize("n", [1, 2])
def test_rellich_identity(n, rng):
    g = Grid(n, 1 + n, 32 if n == 1 else 8)
    A = CoefficientBlock.random(g, 1, 0.5, 11)
    system = neumann_system(A)
    X = Field.random(system.grid, rng).flat[:, None]
    v = Field(system.grid, positive_projection(system, X)[:, 0])
    res = rellich_check(system, v)
    assert res["residual"] < 1e-10
    assert np.isfinite(res["ratio"])
    with pytest.raises(ValidationError):
        rellich_check(system, Field.random(system.grid, rng))


def test_continuity_path_is_lipschitz():
    g = Grid(1, 2, 16)
    A = CoefficientBlock.random(g, 1, 0.5, 2)
    rep = continuity_path(A, steps=6, probes=2)
    assert not rep.failures and len(rep.conditions) == 6
    assert rep.conditions[0] == pytest.approx(1.0)
    assert all(np.isfinite(rep.conditions))
    assert rep.order_estimate == pytest.approx(1.0, abs=0.2)
    with pytest.raises(ConfigurationError):
        continuity_path(A, steps=1)
