import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from adaptive_cr.cr_space import (CRSpace, CRSystem, assemble, assemble_adjoint_action,
                                  broken_gradient, broken_h1_error, element_matrices, evaluate,
                                  l2_normalize, mass_norm_sq, vertex_values)
from adaptive_cr.errors import ContractError, GeometryError
from adaptive_cr.exact import SquareEigenfunction
from adaptive_cr.mesh import ElementGeometry, build_lshape, build_structured_square, refine, uniform_refine

UNIT_TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class Affine:
    def __init__(self, a, g):
        self.a, self.g = a, np.asarray(g, dtype=float)

    def value(self, p):
        return self.a + np.atleast_2d(p) @ self.g

    def gradient(self, p):
        return np.tile(self.g, (len(np.atleast_2d(p)), 1))

    __call__ = value


def test_element_matrices_unit_triangle():
    geom = ElementGeometry.from_vertices(UNIT_TRI)
    a0, m0 = element_matrices(geom, (0.0, 0.0))
    np.testing.assert_allclose(a0, [[4, -2, -2], [-2, 2, 0], [-2, 0, 2]], atol=1e-15)
    np.testing.assert_array_equal(m0, np.eye(3) / 6)
    a1, _ = element_matrices(geom, (1.0, 0.0))
    conv = a1 - a0
    np.testing.assert_allclose(conv, np.tile([1 / 3, -1 / 3, 0.0], (3, 1)), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=6))
def test_element_matrices_random_triangle(xs):
    p = np.array(xs).reshape(3, 2)
    area = 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))
    if area < 1e-3:
        return
    geom = ElementGeometry.from_vertices(p)
    a, m = element_matrices(geom, (0.0, 0.0))
    np.testing.assert_allclose(a, a.T, atol=1e-12)
    np.testing.assert_allclose(a.sum(axis=1), 0.0, atol=1e-10 * np.abs(a).max())
    assert np.array_equal(m, np.eye(3) * (geom.area / 3.0))


def test_element_matrices_degenerate():
    geom = ElementGeometry(index=0, area=0.0, diameter=1.0, bary_grads=np.zeros((3, 2)))
    with pytest.raises(GeometryError):
        element_matrices(geom, (0.0, 0.0))


def test_space_layout(unit_square):
    space = CRSpace(unit_square)
    assert space.n_dof == 5 and space.n_free == 1
    np.testing.assert_array_equal(space.boundary_dofs, np.flatnonzero(unit_square.is_boundary))
    assert np.all(np.diff(space.interior_dofs) > 0)


def test_assemble_one_unknown(unit_square):
    system = assemble(CRSpace(unit_square), (0.0, 0.0))
    assert system.n == 1
    assert system.M.toarray()[0, 0] == pytest.approx(1.0 / 3.0, rel=1e-15)


@pytest.mark.parametrize("mesh", [build_structured_square(16), build_lshape(4),
                                  refine(build_lshape(2), {0, 3, 9})])
def test_total_mass_and_structure(mesh):
    system = assemble(CRSpace(mesh), (2.0, -1.0))
    assert system.mass_full.sum() == pytest.approx(mesh.area, rel=1e-12)
    M = system.M
    assert sp.issparse(M) and (M - sp.diags(M.diagonal())).nnz == 0
    assert np.all(M.diagonal() > 0)
    np.testing.assert_allclose((system.diffusion + system.convection - system.A).toarray(), 0.0, atol=1e-14)


def test_symmetric_without_convection():
    system = assemble(CRSpace(build_structured_square(16)), (0.0, 0.0))
    A = system.A.toarray()
    assert np.max(np.abs(A - A.T)) <= 1e-14 * np.abs(A).max()
    assert abs(system.convection).sum() == 0.0
    assert np.linalg.eigvalsh(system.diffusion.toarray()).min() > 0


def test_adjoint_action(system2):
    AH = assemble_adjoint_action(system2)
    np.testing.assert_array_equal(AH.toarray(), system2.A.toarray().T)
    np.testing.assert_array_equal(AH.conj().T.toarray(), system2.A.toarray())
    mu = np.sort_complex(np.linalg.eigvals(np.linalg.solve(system2.M.toarray(), AH.toarray())))
    lam = np.sort_complex(np.linalg.eigvals(np.linalg.solve(system2.M.toarray(), system2.A.toarray())))
    np.testing.assert_allclose(np.sort_complex(np.conj(lam)), mu, rtol=1e-10)


def test_broken_gradient_linear_reproduction():
    space = CRSpace(build_structured_square(4))
    # affine fields are reproduced exactly when every midpoint value is kept
    full = Affine(0.3, (1.0, 0.0)).value(space.mesh.edge_midpoints)
    local = full[space.mesh.tri_edges]
    grads = -2.0 * np.einsum("ti,tik->tk", local, space.mesh.bary_grads)
    np.testing.assert_allclose(grads, np.tile([1.0, 0.0], (space.mesh.n_triangles, 1)), atol=1e-13)
    assert np.all(broken_gradient(space, np.zeros(space.n_free)) == 0)
    with pytest.raises(ContractError):
        broken_gradient(space, np.zeros(space.n_free + 1))


def test_broken_gradient_quadratic_oracle():
    mesh = build_structured_square(2)
    space = CRSpace(mesh)
    coeffs = space.interpolate(lambda p: p[:, 0] ** 2)
    grads = broken_gradient(space, coeffs)
    full = space.extend(coeffs)
    for t in range(mesh.n_triangles):
        # solve for the affine function through the three midpoint values
        mids = mesh.edge_midpoints[mesh.tri_edges[t]]
        coef = np.linalg.solve(np.column_stack([np.ones(3), mids]), full[mesh.tri_edges[t]])
        np.testing.assert_allclose(grads[t], coef[1:], atol=1e-13)
    assert len({tuple(np.round(g, 12)) for g in grads}) > 1


def test_midpoint_continuity_and_boundary_zero(rng):
    mesh = build_lshape(2)
    space = CRSpace(mesh)
    c = rng.standard_normal(space.n_free)
    mid_bary = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    vals = np.stack([evaluate(space, c, np.arange(mesh.n_triangles), np.tile(mid_bary[i], (mesh.n_triangles, 1)))
                     for i in range(3)], axis=1)
    full = space.extend(c)
    np.testing.assert_allclose(vals, full[mesh.tri_edges], atol=1e-12)
    np.testing.assert_array_equal(full[space.boundary_dofs], 0.0)


def test_vertex_values(rng):
    mesh = build_structured_square(2)
    space = CRSpace(mesh)
    c = rng.standard_normal(space.n_free)
    vv = vertex_values(space, c)
    for j in range(3):
        bary = np.zeros((mesh.n_triangles, 3))
        bary[:, j] = 1.0
        np.testing.assert_allclose(vv[:, j], evaluate(space, c, np.arange(mesh.n_triangles), bary), atol=1e-14)


def test_l2_normalize(system2, rng):
    c = rng.standard_normal(system2.n)
    c4 = c * 2.0 / math.sqrt(mass_norm_sq(system2, c))
    out = l2_normalize(system2, c4)
    assert mass_norm_sq(system2, out) == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(out, c4 / 2 * np.sign(c4[0]), rtol=1e-14)
    np.testing.assert_allclose(l2_normalize(system2, out), out, rtol=1e-15)
    z = rng.standard_normal(system2.n) + 1j * rng.standard_normal(system2.n)
    zn = l2_normalize(system2, z)
    assert mass_norm_sq(system2, zn) == pytest.approx(1.0, abs=1e-14)
    assert zn[0].real > 0 and abs(zn[0].imag) < 1e-15
    with pytest.raises(ContractError):
        l2_normalize(system2, np.zeros(system2.n))


def test_system_from_matrices():
    s = CRSystem(A=sp.csr_matrix([[3.0]]), M=sp.csr_matrix([[2.0]]))
    assert s.n == 1 and s.space is None


class _Piecewise:
    """Reference field equal to a given elementwise-constant gradient.

    broken_h1_error evaluates six quadrature points per triangle in order,
    so the gradient array is expanded accordingly.
    """

    def __init__(self, grads):
        self.grads = grads

    def value(self, p):
        return np.zeros(len(p))

    def gradient(self, p):
        return np.repeat(self.grads, 6, axis=0)


def test_broken_h1_error_trivial_cases(rng):
    space = CRSpace(build_structured_square(4))
    c = rng.standard_normal(space.n_free)
    assert broken_h1_error(space, c, _Piecewise(broken_gradient(space, c))) == pytest.approx(0.0, abs=1e-13)
    unit = Affine(0.0, (1.0, 0.0))
    assert broken_h1_error(space, np.zeros(space.n_free), unit) == pytest.approx(1.0, rel=1e-13)


def test_eigenfunction_satisfies_pde():
    u = SquareEigenfunction((1.0, 0.5))
    p = np.random.default_rng(0).uniform(0.05, 0.95, size=(20, 2))
    lhs = -u.laplacian(p) + u.gradient(p) @ u.b
    np.testing.assert_allclose(lhs, u.eigenvalue * u.value(p), rtol=1e-10, atol=1e-10)


def test_broken_h1_error_rate():
    from adaptive_cr.eigensolver import solve_primal
    u = SquareEigenfunction((1.0, 0.0))
    mesh = build_structured_square(4)
    errs = []
    for _ in range(3):
        space = CRSpace(mesh)
        pair = solve_primal(assemble(space, (1.0, 0.0)), 1)
        errs.append(broken_h1_error(space, pair.vector, u))
        mesh = uniform_refine(mesh)
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.diff(errs) < 0)
    assert np.all((rates > 0.8) & (rates < 1.2))
