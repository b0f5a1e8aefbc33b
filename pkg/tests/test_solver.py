import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tdbem.assembly import BlockToeplitzOperator, GalerkinBlock
from tdbem.solver import SolverError, SpaceTimeDensity, apply, energy_form, mot_solve
from tdbem.timebasis import TimeGrid


def test_zero_rhs_gives_zero_density(ico0_operator):
    mesh, grid, op = ico0_operator
    dens = mot_solve(op, np.zeros((grid.n_steps, mesh.n_vertices)), grid)
    assert not dens.coeffs.any()


@pytest.mark.parametrize("fixture", ["ico0_operator", "square2_operator"])
def test_apply_inverts_solve(fixture, request, rng):
    op = request.getfixturevalue(fixture)[-1]
    n_t = 30
    b = rng.normal(size=(n_t, op.n_nodes))
    dens = mot_solve(op, b)
    back = apply(op, dens)
    assert np.abs(back - b).max() <= 1e-8 * np.abs(b).max()


def test_single_step_is_a0_solve(ico0_operator, rng):
    mesh, _, op = ico0_operator
    b = rng.normal(size=(1, mesh.n_vertices))
    dens = mot_solve(op, b)
    np.testing.assert_allclose(op.block(0) @ dens.coeffs[:, 0], b[0], atol=1e-12)


def test_impulse_response_reads_off_blocks(ico0_operator, rng):
    mesh, grid, op = ico0_operator
    coeffs = np.zeros((mesh.n_vertices, grid.n_steps))
    v = rng.normal(size=mesh.n_vertices)
    coeffs[:, 2] = v
    out = apply(op, SpaceTimeDensity(coeffs, grid))
    assert not out[:2].any()
    for n in range(3, grid.n_steps + 1):
        np.testing.assert_allclose(out[n - 1], op.block(n - 3) @ v, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_solver_is_linear(ico0_operator, a, b, seed):
    mesh, grid, op = ico0_operator
    r = np.random.default_rng(seed)
    f1, f2 = r.normal(size=(2, grid.n_steps, mesh.n_vertices))
    lhs = mot_solve(op, a * f1 + b * f2, grid).coeffs
    rhs = a * mot_solve(op, f1, grid).coeffs + b * mot_solve(op, f2, grid).coeffs
    assert np.abs(lhs - rhs).max() <= 1e-9 * (1 + np.abs(rhs).max())


def test_cg_fallback_agrees_with_direct(square2_operator, rng):
    grid, op = square2_operator
    b = rng.normal(size=(grid.n_steps, op.n_nodes))
    direct = mot_solve(op, b, grid).coeffs
    iterative = mot_solve(op, b, grid, memory_cap=0).coeffs
    np.testing.assert_allclose(iterative, direct, rtol=1e-8, atol=1e-8 * np.abs(direct).max())


def test_energy_form_is_the_pairing(ico0_operator, rng):
    mesh, grid, op = ico0_operator
    dens = SpaceTimeDensity(rng.normal(size=(mesh.n_vertices, grid.n_steps)), grid)
    assert energy_form(op, dens) == pytest.approx(np.sum(dens.coeffs.T * apply(op, dens)))
    assert energy_form(op, dens.scaled(2.0)) == pytest.approx(4 * energy_form(op, dens))


class TestErrors:
    def test_shape_mismatch(self, ico0_operator):
        mesh, grid, op = ico0_operator
        with pytest.raises(ValueError):
            mot_solve(op, np.zeros((grid.n_steps, mesh.n_vertices + 1)))
        with pytest.raises(ValueError):
            mot_solve(op, np.zeros((3, mesh.n_vertices)), grid)
        with pytest.raises(ValueError):
            apply(op, SpaceTimeDensity.zeros(mesh.n_vertices, TimeGrid(0.1, 3)))

    def test_singular_lag_zero(self):
        zero = BlockToeplitzOperator(0.1, 3, (GalerkinBlock(0, sp.csr_matrix((3, 3))),))
        with pytest.raises(SolverError, match="zero"):
            mot_solve(zero, np.ones((2, 3)))
        bad = sp.csr_matrix(np.array([[1.0, 1.0, 0], [1.0, 1.0, 0], [0, 0, 1.0]]))
        with pytest.raises(SolverError):
            mot_solve(BlockToeplitzOperator(0.1, 3, (GalerkinBlock(0, bad),)), np.ones((2, 3)))

    def test_condition_limit(self, ico0_operator):
        mesh, grid, op = ico0_operator
        with pytest.raises(SolverError, match="condition"):
            mot_solve(op, np.ones((grid.n_steps, mesh.n_vertices)), grid, cond_limit=1.0)

    def test_density_validation(self):
        grid = TimeGrid(0.1, 4)
        with pytest.raises(ValueError):
            SpaceTimeDensity(np.zeros((3, 5)), grid)
        with pytest.raises(ValueError):
            SpaceTimeDensity(np.full((3, 4), np.nan), grid)
        d = SpaceTimeDensity(np.ones((3, 4)), grid)
        assert not d.step(0).any() and d.step(4).sum() == 3
        assert not (d - d).coeffs.any()
        np.testing.assert_array_equal((d + d).coeffs, d.scaled(2).coeffs)
