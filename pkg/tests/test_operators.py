import numpy as np
import pytest
from hypothesis import given, strategies as st

from bdcalc import (
    BudgetError,
    ConfigurationError,
    DimensionError,
    DiracSystem,
    Field,
    Grid,
    MultOp,
    ValidationError,
    make_multop,
    symbol_dirac1d,
    symbol_higher_order,
    symbol_hodge_dirac,
    symbol_inhomogeneous,
    validate,
)
from bdcalc.operators import (
    identity_multop,
    numerical_range_angle,
    random_accretive,
    read_coefficients,
    scalar_multop,
    write_coefficients,
)
from bdcalc.spectral import multi_indices

from conftest import hodge_system


def all_symbols():
    yield symbol_dirac1d(Grid(1, 1, 16))
    yield symbol_hodge_dirac(Grid(1, 2, 16), 1)
    yield symbol_hodge_dirac(Grid(2, 6, 8), 2)
    yield symbol_higher_order(Grid(1, 2, 16), 2, 1)
    yield symbol_higher_order(Grid(2, 4, 8), 2, 1)
    yield symbol_inhomogeneous(Grid(1, 3, 16))


@pytest.mark.parametrize("D", list(all_symbols()), ids=lambda D: f"{D.kind}-n{D.grid.n}-m{D.grid.m}")
def test_symbols_are_hermitian(D):
    sym = D.lattice
    np.testing.assert_allclose(sym, np.conj(np.swapaxes(sym, -1, -2)), atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_higher_order_symbol_is_homogeneous(k):
    g = Grid(2, 1 + len(multi_indices(2, k)), 8)
    D = symbol_higher_order(g, k)
    xi = np.array([[0.3, -1.2], [2.0, 0.5]])
    np.testing.assert_allclose(D.symbol(3.0 * xi), 3.0**k * D.symbol(xi), atol=1e-12)


def test_first_order_block_is_minus_hodge():
    g = Grid(2, 3, 8)
    np.testing.assert_allclose(symbol_higher_order(g, 1).lattice, -symbol_hodge_dirac(g).lattice, atol=1e-15)


def test_hodge_symbol_squares_to_laplacian_on_range():
    g = Grid(2, 3, 8)
    D = symbol_hodge_dirac(g)
    xi = np.array([0.7, -1.1])
    S = D.symbol(xi)
    ev = np.linalg.eigvalsh(S)
    np.testing.assert_allclose(np.sort(np.abs(ev)), [0.0, np.linalg.norm(xi), np.linalg.norm(xi)], atol=1e-14)


def test_range_projector(rng):
    D = symbol_hodge_dirac(Grid(2, 3, 8))
    f = Field.random(D.grid, rng)
    Pf = D.project_range_array(f.values[None])[0]
    np.testing.assert_allclose(D.project_range_array(Pf[None])[0], Pf, atol=1e-12)
    np.testing.assert_allclose(D.apply_array(Pf[None]), D.apply_array(f.values[None]), atol=1e-10)
    # the complement is the null space
    assert np.max(np.abs(D.apply_array((f.values - Pf)[None]))) < 1e-10


def test_range_and_null_bases_are_complementary():
    D = symbol_hodge_dirac(Grid(1, 2, 16))
    R, N = D.range_basis(), D.null_basis()
    assert R.shape[1] + N.shape[1] == D.grid.dof
    assert np.max(np.abs(np.conj(R.T) @ N)) < 1e-12
    # on the circle the null space of the Hodge operator is the constants in each slot
    assert N.shape[1] == 2


@given(st.integers(0, 10_000), st.floats(0.05, 2.0), st.floats(0.0, 2.0))
def test_random_accretive_pointwise_bound(seed, delta, skew):
    g = Grid(1, 2, 8)
    B = random_accretive(g, delta, skew, seed)
    herm = 0.5 * (B.matrices + np.conj(np.swapaxes(B.matrices, -1, -2)))
    assert np.min(np.linalg.eigvalsh(herm)) >= delta - 1e-12
    if skew == 0:
        np.testing.assert_allclose(B.matrices, np.conj(np.swapaxes(B.matrices, -1, -2)), atol=1e-14)


def test_random_accretive_is_seed_deterministic():
    g = Grid(1, 2, 16)
    a = random_accretive(g, 0.5, 0.5, 7).matrices
    b = random_accretive(g, 0.5, 0.5, 7).matrices
    c = random_accretive(g, 0.5, 0.5, 8).matrices
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_smooth_coefficients_do_not_depend_on_the_grid():
    coarse = random_accretive(Grid(1, 2, 16), 0.5, 0.5, 3, smooth_modes=4).matrices
    fine = random_accretive(Grid(1, 2, 64), 0.5, 0.5, 3, smooth_modes=4).matrices
    np.testing.assert_allclose(fine[::4], coarse, atol=1e-12)


def test_smooth_modes_must_fit_the_grid():
    with pytest.raises(ConfigurationError):
        random_accretive(Grid(1, 2, 8), 0.5, 0.5, 0, smooth_modes=4)


def test_numerical_range_angle_against_sampling():
    rng = np.random.default_rng(1)
    mats = np.array([[[1.0, 0.8j], [0.3, 2.0 + 0.5j]], [[2.0, 0.0], [0.0, 1.0 + 1.0j]]])
    exact = numerical_range_angle(mats)
    v = rng.standard_normal((200_000, 2)) + 1j * rng.standard_normal((200_000, 2))
    for M, w in zip(mats, exact):
        sampled = np.max(np.abs(np.angle(np.einsum("vi,ij,vj->v", np.conj(v), M, v))))
        assert sampled <= w + 1e-12
        assert sampled >= w - 5e-3
    assert exact[1] == pytest.approx(np.pi / 4)


def test_numerical_range_angle_non_accretive():
    assert numerical_range_angle(np.array([[[-1.0]]]))[0] == pytest.approx(np.pi / 2)


def test_validate_identity():
    rep = validate(symbol_hodge_dirac(Grid(1, 2, 32)), identity_multop(Grid(1, 2, 32)))
    assert rep.passed
    assert rep.delta == pytest.approx(1.0, abs=1e-10)
    assert rep.omega == pytest.approx(0.0, abs=1e-12)
    assert rep.c3 == pytest.approx(1.0)


def test_validate_flags_non_accretive_coefficients():
    g = Grid(1, 2, 16)
    rep = validate(symbol_hodge_dirac(g), scalar_multop(g, -1.0))
    assert not rep.h5 and not rep.passed
    system = DiracSystem(symbol_hodge_dirac(g), scalar_multop(g, -1.0))
    with pytest.raises(ValidationError):
        system.require_validated()


def test_validate_rejects_negative_slot_on_range():
    # R(D) meets the second slot, where B is negative
    g = Grid(1, 2, 16)
    B = MultOp(g, np.diag([1.0, -1.0]))
    assert not validate(symbol_hodge_dirac(g), B).h5


@given(st.integers(0, 10_000))
def test_restricted_delta_dominates_pointwise_bound(seed):
    system = hodge_system(16, seed=seed)
    rep = system.report
    assert rep.delta >= rep.pointwise_delta - 1e-9
    assert rep.delta_eig <= rep.delta_probe + 1e-9
    assert rep.omega_sampled <= rep.omega + 1e-12


def test_dense_assembly_agrees_with_fast_path(rng, random_hodge):
    dense = random_hodge.dense()
    u = Field.random(random_hodge.grid, rng)
    np.testing.assert_allclose(dense.BD @ u.flat, random_hodge.bd(u).flat, atol=1e-10)
    np.testing.assert_allclose(dense.DB @ u.flat, random_hodge.db(u).flat, atol=1e-10)


def test_dense_assembly_respects_the_budget():
    g = Grid(1, 2, 64)
    system = DiracSystem(symbol_hodge_dirac(g), identity_multop(g), budget=100)
    with pytest.raises(BudgetError):
        system.dense()


def test_make_multop_kinds(tmp_path):
    g = Grid(1, 2, 8)
    assert make_multop(g, "identity").is_identity
    s = make_multop(g, {"kind": "scalar", "value": [1.0, 2.0]})
    assert s.matrices[0, 0, 0] == 1 + 2j
    r = make_multop(g, {"kind": "random_accretive", "delta_target": 0.5, "skew_scale": 0.1, "seed": 4})
    assert r.delta >= 0.5 - 1e-12
    with pytest.raises(ConfigurationError):
        make_multop(g, {"kind": "random_accretive", "delta_target": 0.5, "skew_scale": 0.1})
    with pytest.raises(ConfigurationError):
        make_multop(g, {"kind": "nonsense"})
    big = Grid(1, 3, 8)
    bd = make_multop(big, {"kind": "block_diag", "identity_dim": 1, "A": {"kind": "scalar", "value": 2.0}})
    np.testing.assert_allclose(bd.matrices[3], np.diag([1.0, 2.0, 2.0]))


@pytest.mark.parametrize("payload", ["json", "binary"])
def test_coefficient_file_roundtrip(tmp_path, payload):
    g = Grid(2, 2, 4)
    B = random_accretive(g, 0.5, 0.5, 1)
    path = tmp_path / "coef.json"
    write_coefficients(path, g, B.matrices, payload)
    g2, mats = read_coefficients(path)
    assert g2 == g
    assert np.array_equal(mats, B.matrices)
    loaded = make_multop(g, {"kind": "file", "path": str(path)})
    assert np.array_equal(loaded.matrices, B.matrices)
    with pytest.raises(DimensionError):
        make_multop(Grid(2, 2, 8), {"kind": "file", "path": str(path)})


def test_coefficient_file_entry_order(tmp_path):
    # entries within a sample are column-major
    g = Grid(1, 2, 4)
    mats = np.zeros(g.shape + (2, 2), dtype=complex)
    mats[0] = [[1, 2], [3, 4]]
    path = tmp_path / "c.json"
    write_coefficients(path, g, mats)
    import json

    entries = json.load(open(path))["entries"]
    assert entries[:8] == [1, 0, 3, 0, 2, 0, 4, 0]


def test_corrupt_coefficient_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "bdcalc.coefficients", "n": 1, "m": 2, "points_per_axis": 4, "period": 1.0, "entries": [1, 2]}')
    with pytest.raises(ConfigurationError):
        read_coefficients(path)


def test_multop_is_immutable_and_checks_shapes():
    g = Grid(1, 2, 4)
    B = identity_multop(g)
    with pytest.raises(ValueError):
        B.matrices[0, 0, 0] = 3
    with pytest.raises(DimensionError):
        MultOp(g, np.ones((4, 3, 3)))
    with pytest.raises(ConfigurationError):
        MultOp(g, np.full((2, 2), np.nan))


def test_adjoint_system_uses_adjoint_coefficients(random_hodge):
    adj = random_hodge.adjoint()
    np.testing.assert_allclose(adj.B.matrices, np.conj(np.swapaxes(random_hodge.B.matrices, -1, -2)))
