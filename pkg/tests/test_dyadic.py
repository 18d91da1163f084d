import math

import numpy as np
import pytest
import scipy.integrate as sint
from hypothesis import given, strategies as st

from bdcalc import ConfigurationError, Field, Grid, RangeError
from bdcalc.spectral import inner
from bdcalc.dyadic import (
    DyadicCube,
    GammaFamily,
    build_test_function,
    bump_profile,
    carleson_embedding_ratio,
    carleson_norm,
    cubes_at_level,
    cutoff_profile,
    gamma_family,
    image_subspace,
    level_of,
    littlewood_paley,
    littlewood_paley_constant,
    make_sector,
    principal_part,
    pt_mollify,
    sector_cover,
    sector_inequality,
    smoothstep,
    st_average,
    stopping_time,
    tb_pipeline,
    top_level,
)
from bdcalc.dyadic.principal import cube_average_bound, level_nodes

from conftest import hodge_system


# cubes


def test_children_partition_parent():
    g = Grid(2, 1, 16)
    Q = DyadicCube(g, 2, (1, 3))
    kids = Q.children()
    assert len(kids) == 4
    total = np.zeros(g.shape, int)
    for c in kids:
        assert c.parent() == Q and Q.contains(c) and not c.contains(Q)
        total += c.mask()
    np.testing.assert_array_equal(total.astype(bool), Q.mask())
    assert total.max() == 1
    assert sum(c.volume for c in kids) == pytest.approx(Q.volume)


def test_level_count_and_top():
    g = Grid(2, 1, 16)
    J = top_level(g)
    assert J == 4
    assert len(cubes_at_level(g, J)) == 1
    assert len(cubes_at_level(g, 1)) == 64
    assert DyadicCube(g, J, (0, 0)).parent() is None


@pytest.mark.parametrize("bad", [dict(level=9, corner=(0,)), dict(level=1, corner=(8,)), dict(level=1, corner=(0, 0))])
def test_cube_rejects_bad_arguments(bad):
    with pytest.raises((RangeError, ConfigurationError)):
        DyadicCube(Grid(1, 1, 16), **bad)


@given(st.floats(1e-6, 1.0))
def test_level_of_brackets_t(t):
    g = Grid(1, 1, 64)
    h = g.spacing
    if t <= h / 2:
        with pytest.raises(RangeError):
            level_of(g, t)
        return
    j = level_of(g, t)
    side = h * 2**j
    assert t <= side * (1 + 1e-12) and side < 2 * t * (1 + 1e-12)


# S_t and P_t


@given(st.integers(0, 1000), st.sampled_from([1 / 64, 1 / 16, 0.2, 1.0]))
def test_st_is_an_orthogonal_projection(seed, t):
    g = Grid(1, 2, 64)
    r = np.random.default_rng(seed)
    f, h = Field.random(g, r), Field.random(g, r)
    Sf = st_average(f, t)
    np.testing.assert_allclose(st_average(Sf, t).values, Sf.values, atol=1e-13)
    assert inner(Sf, h) == pytest.approx(inner(f, st_average(h, t)), abs=1e-12)
    assert np.sum(Sf.values, axis=0) == pytest.approx(np.sum(f.values, axis=0))


def test_st_coarsest_level_is_the_mean(rng):
    g = Grid(2, 1, 8)
    f = Field.random(g, rng)
    np.testing.assert_allclose(st_average(f, 1.0).values, np.broadcast_to(f.values.mean(axis=(0, 1)), g.field_shape))


def test_bump_profile_shape():
    r = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 2.0])
    b = bump_profile(r)
    np.testing.assert_array_equal(b[[0, 1, 2]], 1.0)
    np.testing.assert_array_equal(b[[4, 5]], 0.0)
    assert 0 < b[3] < 1
    assert np.all(np.diff(bump_profile(np.linspace(0, 1.2, 500))) <= 0)


def test_pt_keeps_low_modes_and_kills_high_modes():
    g = Grid(1, 1, 64)
    t = 0.05
    low = Field.mode(g, (1,), [1.0])  # t |xi| = 0.31
    high = Field.mode(g, (20,), [1.0])  # t |xi| = 6.3
    np.testing.assert_allclose(pt_mollify(low, t).values, low.values, atol=1e-14)
    assert pt_mollify(high, t).norm() < 1e-14


def lp_constant_oracle(k, xi):
    """int_0^inf (1 - bump(t xi))^2 t^(-2k-1) dt / xi^(2k) integrated in t."""
    f = lambda t: (1 - float(bump_profile(t * xi))) ** 2 * t ** (-2 * k - 1)
    a, b = 0.5 / xi, 1.0 / xi
    head = sint.quad(f, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    tail = sint.quad(f, b, np.inf, epsabs=0, epsrel=1e-12)[0]
    return (head + tail) / xi ** (2 * k)


@pytest.mark.parametrize("k", [1, 2])
def test_littlewood_paley_constant_against_direct_integral(k):
    assert littlewood_paley_constant(k) == pytest.approx(lp_constant_oracle(k, 7.3), rel=1e-9)


@pytest.mark.parametrize("k", [1, 2])
def test_littlewood_paley_identity_on_random_fields(k, rng):
    g = Grid(1, 2, 64)
    f = Field.random(g, rng)
    f = f - Field(g, np.broadcast_to(f.values.mean(axis=0), g.field_shape))
    res = littlewood_paley(f, k, 1e-3, 1e3, nodes_per_decade=60)
    assert res["ratio"] == pytest.approx(littlewood_paley_constant(k), rel=1e-4)
    assert res["tail_bound"] / res["grad_k_norm_sq"] < 1e-4


def test_littlewood_paley_rejects_large_t_min(rng):
    with pytest.raises(ConfigurationError):
        littlewood_paley(Field.random(Grid(1, 1, 64), rng), 1, 0.1, 1.0)


# principal part and Carleson


def test_gamma_vanishes_for_identity_coefficients():
    system = hodge_system(32)
    fam = gamma_family(system, per_level=2)
    assert np.max(np.abs(fam.matrices)) < 1e-12
    rep = carleson_norm(fam)
    assert rep.norm_squared < 1e-20


def test_level_nodes_are_aligned():
    g = Grid(1, 2, 32)
    t, w = level_nodes(g, per_level=3)
    assert len(t) == 3 * (top_level(g) + 1)
    with pytest.raises(ConfigurationError):
        GammaFamily(g, t, w * 1.01, np.zeros((len(t),) + g.shape + (2, 2)))


def test_gamma_is_qt_of_b_columns(random_hodge):
    from bdcalc.calculus import qt

    pp = principal_part(random_hodge, 0.1)
    g = random_hodge.grid
    for j in range(g.m):
        col = Field(g, np.ascontiguousarray(random_hodge.B.matrices[..., j]))
        np.testing.assert_allclose(pp.matrices[..., j], qt(random_hodge, 0.1, col).values, atol=1e-12)
    bound = cube_average_bound(pp, g)
    assert bound["max"] >= bound["median"] > 0


def test_carleson_box_against_direct_sum():
    system = hodge_system(32, seed=4)
    fam = gamma_family(system, per_level=2)
    rep = carleson_norm(fam, restrict_to_D=False)
    g = system.grid
    Q = DyadicCube(g, 3, (2,))
    direct = 0.0
    for lvl, w, mats in zip(fam.levels, fam.weights, fam.matrices):
        if lvl <= Q.level:
            direct += w * np.sum(np.linalg.norm(mats[Q.slices], ord=2, axis=(-2, -1)) ** 2) * g.cell_volume
    assert rep.boxes[3][2] == pytest.approx(direct, rel=1e-12)
    assert rep.norm_squared == max(float(v.max()) for v in rep.normalized.values())
    assert rep.to_csv().startswith("level,corner")


def test_carleson_embedding_ratio_is_finite():
    system = hodge_system(32, seed=4)
    fam = gamma_family(system, per_level=1)
    res = carleson_embedding_ratio(system, fam, trials=20)
    assert res["trials"] == 20
    assert 0 < res["kappa"] < 10


# test functions, sectors and stopping


def test_smoothstep_and_cutoff():
    x = np.linspace(0, 1, 1001)
    for order in (1, 3, 6):
        s = smoothstep(x, order)
        assert s[0] == 0 and s[-1] == pytest.approx(1.0)
        assert np.all(np.diff(s) >= -1e-11)  # the alternating sum rounds near x = 1
    y = np.array([0.0, 0.1, 0.149, 0.2])
    c = cutoff_profile(y, 0.1, 3)
    assert c[0] == 1 and c[1] == 1 and 0 < c[2] < 1e-3 and c[3] == 0


def test_phase_cover_of_the_circle():
    basis = np.ones((1, 1), complex)
    cover = sector_cover(0.5, basis, certificate=20_000)
    assert cover.mode == "phases" and cover.coverage == 1.0
    assert len(cover.sectors) == math.ceil(math.pi / (2 * math.asin(0.25)))


@given(st.integers(0, 1000), st.floats(0.05, 0.6))
def test_sector_inequality_holds_inside(seed, nu):
    r = np.random.default_rng(seed)
    basis = np.linalg.qr(r.standard_normal((2, 2)) + 0j)[0]
    gamma = r.standard_normal((2, 2)) + 1j * r.standard_normal((2, 2))
    sec = make_sector(gamma, basis)
    # perturbations of gamma of operator norm < nu, at random scales
    pert = r.standard_normal((200, 2, 2)) + 1j * r.standard_normal((200, 2, 2))
    pert *= nu * r.uniform(0, 1, (200, 1, 1)) / np.linalg.norm(pert, ord=2, axis=(-2, -1))[:, None, None]
    kappas = (sec.gamma[None] + pert) * r.uniform(0.1, 5, (200, 1, 1))
    assert sector_inequality(sec, kappas, nu) >= -1e-12


def test_random_sector_cover_certificate():
    basis = np.eye(2, dtype=complex)[:, :1]
    cover = sector_cover(0.9, basis, m=2, budget=512, certificate=2000)
    assert cover.mode == "random"
    assert cover.coverage > 0.9


def test_test_function_for_identity_coefficients():
    system = hodge_system(64)
    g = system.grid
    Q = DyadicCube(g, top_level(g) - 2, (1,))
    basis = image_subspace(system)
    sec = make_sector(np.outer(basis[:, 0], [1, 0]), basis)
    bundle = build_test_function(system, Q, sec.w, 0.1)
    assert bundle.checks["b_identity"] < 1e-10
    assert bundle.checks["etaL_off_3Q"] == 0.0
    assert bundle.constants["C4"] < 1e-20  # gamma_t = 0
    # b = D v and v solves the resolvent equation
    np.testing.assert_allclose(bundle.b.values, system.D.apply(bundle.v).values, atol=1e-12)
    rep = stopping_time(bundle, sec, nu=0.5)
    assert rep.stopping == [] and rep.packing == 0.0 and rep.packing_ok


def test_cutoff_defect_converges_with_resolution():
    # D(eta L) = w on 2Q holds exactly in the continuum; the discrete defect
    # is the spectral error of a finitely smooth cutoff
    defects = []
    for P in (64, 128, 256):
        system = hodge_system(P)
        g = system.grid
        Q = DyadicCube(g, top_level(g) - 2, (1,))
        bundle = build_test_function(system, Q, image_subspace(system)[:, 0], 0.1)
        defects.append(bundle.checks["wQ_on_2Q"])
    assert defects[-1] < 1e-5
    assert defects[0] / defects[1] > 30 and defects[1] / defects[2] > 30


def test_test_function_rejects_bad_w():
    system = hodge_system(64)
    Q = DyadicCube(system.grid, 3, (0,))
    with pytest.raises(ConfigurationError):
        build_test_function(system, Q, [1.0, 0.0, 0.0], 0.1)
    with pytest.raises(RangeError):
        build_test_function(system, DyadicCube(system.grid, top_level(system.grid), (0,)), [1.0, 0.0], 0.1)


@pytest.mark.parametrize("seed", [0, 1])
def test_tb_pipeline_at_small_eps(seed):
    system = hodge_system(64, seed=seed, smooth_modes=4)
    Q = DyadicCube(system.grid, top_level(system.grid) - 2, (0,))
    rep = tb_pipeline(system, Q, 0.1, 0.5)
    d = rep.to_dict()
    assert d["packing_ok"]
    assert d["good_set_violations"] == 0
    assert all(b.checks["b_identity"] < 1e-8 for b in rep.bundles)
