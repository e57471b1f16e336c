"""Crouzeix-Raviart space, element matrices and Dirichlet-reduced assembly.

The local basis function attached to local edge ``i`` is ``phi_i = 1 - 2*lambda_i``
where ``lambda_i`` is the barycentric coordinate of the opposite vertex; it
equals one at the midpoint of edge ``i`` and vanishes at the other two
midpoints.  All element integrals are evaluated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, GeometryError
from .mesh import ElementGeometry, Mesh

# symmetric 6-point rule, exact for degree 4 (weights sum to one)
_Q6_BARY = np.array([
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.445948490915965, 0.445948490915965, 0.108103018168070],
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
])
_Q6_WEIGHTS = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)


class CRSpace:
    """Lowest-order Crouzeix-Raviart space over a mesh.

    Degrees of freedom are the edge midpoint values, numbered like the
    edges.  Boundary DOFs are eliminated (homogeneous Dirichlet data); the
    remaining *free* DOFs are the interior edges in ascending edge order.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.n_dof = mesh.n_edges
        self.dof_of_edge = np.arange(self.n_dof)
        self.boundary_dofs = np.flatnonzero(mesh.is_boundary)
        self.interior_dofs = np.flatnonzero(~mesh.is_boundary)
        self.n_free = len(self.interior_dofs)
        self.free_index = np.full(self.n_dof, -1, dtype=np.int64)
        self.free_index[self.interior_dofs] = np.arange(self.n_free)

    def extend(self, coeffs) -> np.ndarray:
        """Free-DOF coefficients -> all-edge coefficients (zero on the boundary)."""
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (self.n_free,):
            raise ContractError(f"expected {self.n_free} free coefficients, got shape {coeffs.shape}")
        full = np.zeros(self.n_dof, dtype=np.result_type(coeffs, float))
        full[self.interior_dofs] = coeffs
        return full

    def restrict(self, full) -> np.ndarray:
        return np.asarray(full)[self.interior_dofs]

    def interpolate(self, func) -> np.ndarray:
        """Free-DOF coefficients of the CR interpolant of ``func(points)``.

        Boundary midpoint values are discarded, so this is only the true
        interpolant for functions vanishing on the boundary midpoints.
        """
        return np.asarray(func(self.mesh.edge_midpoints[self.interior_dofs]))

    def local_coefficients(self, coeffs) -> np.ndarray:
        """Per-element CR coefficients, shape ``(nt, 3)``, local edge order."""
        return self.extend(coeffs)[self.mesh.tri_edges]


@dataclass
class CRSystem:
    """Dirichlet-reduced pencil ``A u = lambda M u`` over the free DOFs.

    ``A = diffusion + convection``; ``M`` is diagonal.  ``mass_full`` keeps
    the diagonal of the mass matrix before boundary rows were deleted.
    """

    A: sp.csr_matrix
    M: sp.csr_matrix
    b: np.ndarray = field(default_factory=lambda: np.zeros(2))
    space: CRSpace | None = None
    diffusion: sp.csr_matrix | None = None
    convection: sp.csr_matrix | None = None
    mass_full: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.A.shape[0]


def element_matrices(geom: ElementGeometry, b):
    """Local CR matrices of one triangle.

    Returns ``(local_a, local_m)`` with
    ``local_a[i, j] = int_K grad(phi_j).grad(phi_i) + (b.grad(phi_j)) phi_i``
    and ``local_m = |K|/3 * I``.
    """
    if not geom.area > 0.0:
        raise GeometryError(f"element {geom.index} has non-positive area {geom.area:g}")
    b = np.asarray(b, dtype=float).reshape(2)
    g = -2.0 * np.asarray(geom.bary_grads)
    stiff = geom.area * g @ g.T
    # int_K phi_i = |K|/3 for every i, so all convection rows coincide
    conv = np.tile((g @ b) * geom.area / 3.0, (3, 1))
    return stiff + conv, np.eye(3) * (geom.area / 3.0)


def _local_arrays(mesh: Mesh, b):
    g = -2.0 * mesh.bary_grads
    area = mesh.areas
    stiff = area[:, None, None] * np.einsum("tik,tjk->tij", g, g)
    conv = np.broadcast_to((area / 3.0)[:, None, None] * (g @ b)[:, None, :], stiff.shape)
    return stiff, np.array(conv)


def assemble(space: CRSpace, b=(0.0, 0.0)) -> CRSystem:
    """Assemble the reduced CR pencil for convection vector ``b``."""
    mesh = space.mesh
    b = np.asarray(b, dtype=float).reshape(2)
    stiff, conv = _local_arrays(mesh, b)
    te = mesh.tri_edges
    rows = np.repeat(te, 3, axis=1).ravel()
    cols = np.tile(te, (1, 3)).ravel()
    n = space.n_dof

    def to_free(vals):
        mat = sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        mat.sum_duplicates()
        return mat[space.interior_dofs][:, space.interior_dofs].tocsr()

    diffusion = to_free(stiff)
    convection = to_free(conv)
    mass_full = np.zeros(n)
    np.add.at(mass_full, te.ravel(), np.repeat(mesh.areas / 3.0, 3))
    M = sp.diags(mass_full[space.interior_dofs]).tocsr()
    A = (diffusion + convection).tocsr()
    A.sort_indices()
    return CRSystem(A=A, M=M, b=b, space=space, diffusion=diffusion,
                    convection=convection, mass_full=mass_full)


def assemble_adjoint_action(system: CRSystem) -> sp.csr_matrix:
    """Conjugate transpose of ``A``: left eigenvectors of the pencil solve
    ``A^H w = mu M w`` with ``mu = conj(lambda)``."""
    return system.A.conj().T.tocsr()


def broken_gradient(space: CRSpace, coeffs) -> np.ndarray:
    """Elementwise constant gradient of a CR function, shape ``(nt, 2)``."""
    local = space.local_coefficients(coeffs)
    return -2.0 * np.einsum("ti,tik->tk", local, space.mesh.bary_grads)


def vertex_values(space: CRSpace, coeffs) -> np.ndarray:
    """Values of each element's affine restriction at its three vertices.

    At vertex ``j`` the barycentric coordinates are the unit vector ``e_j``,
    so the value is ``sum(c) - 2 c_j``.
    """
    local = space.local_coefficients(coeffs)
    return local.sum(axis=1, keepdims=True) - 2.0 * local


def evaluate(space: CRSpace, coeffs, tri, bary) -> np.ndarray:
    """Evaluate a CR function on triangles ``tri`` at barycentric points ``bary``."""
    local = space.local_coefficients(coeffs)[tri]
    return np.einsum("...i,...i->...", local, 1.0 - 2.0 * np.asarray(bary))


def mass_norm_sq(system: CRSystem, coeffs) -> float:
    c = np.asarray(coeffs)
    return float(np.real(np.vdot(c, system.M @ c)))


def _fix_phase_first(c):
    mags = np.abs(c)
    if mags.max() == 0.0:
        return c
    i = int(np.argmax(mags > 1e-14 * mags.max()))
    return c * (np.conj(c[i]) / mags[i])


def l2_normalize(system: CRSystem, coeffs) -> np.ndarray:
    """Scale ``coeffs`` to unit L2 norm (``c^H M c = 1``).

    The phase is fixed so the first entry that is not negligibly small is
    real and positive.
    """
    c = np.asarray(coeffs)
    nrm2 = mass_norm_sq(system, c)
    if not nrm2 > 0.0:
        raise ContractError("cannot normalize a zero vector")
    c = c / np.sqrt(nrm2)
    if np.iscomplexobj(c):
        return _fix_phase_first(c)
    i = int(np.argmax(np.abs(c) > 1e-14 * np.abs(c).max()))
    return c if c[i] > 0 else -c


def broken_h1_error(space: CRSpace, coeffs, reference) -> float:
    """``|| grad u - grad_h u_h ||_{L2}`` by a degree-4 rule on every element.

    ``reference`` must provide ``value(points)`` and ``gradient(points)``
    for ``(N, 2)`` arrays of points.  ``u_h`` is first rotated by the unit
    scalar that best aligns it with the reference in L2, which removes the
    sign/phase ambiguity of eigenvectors.
    """
    mesh = space.mesh
    pts = np.einsum("qi,tid->tqd", _Q6_BARY, mesh.vertices[mesh.triangles])
    flat = pts.reshape(-1, 2)
    nt, nq = mesh.n_triangles, len(_Q6_WEIGHTS)
    w = (mesh.areas[:, None] * _Q6_WEIGHTS[None, :])

    u_ref = np.asarray(reference.value(flat)).reshape(nt, nq)
    g_ref = np.asarray(reference.gradient(flat)).reshape(nt, nq, 2)
    local = space.local_coefficients(coeffs)
    u_h = local @ (1.0 - 2.0 * _Q6_BARY).T
    grad_h = broken_gradient(space, coeffs)

    overlap = np.sum(w * np.conj(u_h) * u_ref)
    if abs(overlap) > 0.0:
        phase = overlap / abs(overlap)
        grad_h = grad_h * phase
    diff = g_ref - grad_h[:, None, :]
    return float(np.sqrt(np.sum(w * np.sum(np.abs(diff) ** 2, axis=2))))
