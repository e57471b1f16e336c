"""Residual a posteriori indicators for the primal and dual CR eigenpairs.

Per element ``K`` the squared indicator is

    h_K^2 ||lam u + Lap_h u - s b.grad_h u||_K^2
      + 1/2 sum_{interior E of K} h_E ||[g].nu_E||_E^2
      + 1/2 sum_{all E of K}      h_E ||[g].tau_E||_E^2

with ``s = +1, g = grad_h u`` for the primal pair and ``s = -1,
g = grad_h u* + b u*`` for the dual pair.  On boundary edges the jump is
replaced by the one-sided trace.  Each interior edge therefore enters the
global sum exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cr_space import CRSpace, broken_gradient, vertex_values
from .errors import ContractError
from .mesh import ElementGeometry, Mesh

_GAUSS_S = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass
class IndicatorField:
    """Per-element squared indicators and their ingredients.

    ``edge_*`` arrays hold the full (unhalved) per-edge terms; normal terms
    are zero on boundary edges.
    """

    eta_sq: np.ndarray
    eta_star_sq: np.ndarray
    residual_sq: np.ndarray
    normal_sq: np.ndarray
    tangential_sq: np.ndarray
    residual_star_sq: np.ndarray
    normal_star_sq: np.ndarray
    tangential_star_sq: np.ndarray
    edge_normal: np.ndarray
    edge_tangential: np.ndarray
    edge_normal_star: np.ndarray
    edge_tangential_star: np.ndarray
    lambda_h: complex
    lambda_star_h: complex

    @property
    def combined(self) -> np.ndarray:
        return self.eta_sq + self.eta_star_sq

    def totals(self) -> tuple[float, float]:
        return float(self.eta_sq.sum()), float(self.eta_star_sq.sum())


def _sign(role):
    if role not in ("primal", "dual"):
        raise ContractError(f"role must be 'primal' or 'dual', got {role!r}")
    return 1.0 if role == "primal" else -1.0


def element_residual(geom: ElementGeometry, u_local, lam, b, role="primal") -> float:
    """Element residual indicator of one triangle.

    ``u_local`` holds the three CR coefficients of the field on ``K`` in
    local edge order.  The residual is affine on ``K``; its square is
    integrated exactly by the edge-midpoint rule.
    """
    s = _sign(role)
    u = np.asarray(u_local).reshape(3)
    b = np.asarray(b, dtype=float).reshape(2)
    grad = -2.0 * u @ np.asarray(geom.bary_grads)
    lap = 0.0  # second derivatives of an affine field
    f = lam * u + lap - s * (b @ grad)
    return float(geom.diameter * np.sqrt(geom.area / 3.0 * np.sum(np.abs(f) ** 2)))


def dual_element_residual(geom: ElementGeometry, u_local, lam_star, b) -> float:
    return element_residual(geom, u_local, lam_star, b, role="dual")


def broken_laplacian(space: CRSpace, coeffs) -> np.ndarray:
    """Elementwise Laplacian of a CR field: identically zero for P1 pieces."""
    local = space.local_coefficients(coeffs)
    # the Hessian of sum_i c_i (1 - 2 lambda_i) vanishes because each lambda_i is affine
    hess_trace = np.zeros(local.shape[0], dtype=local.dtype)
    return hess_trace


def element_residuals_sq(space: CRSpace, coeffs, lam, b, role="primal") -> np.ndarray:
    """Squared element residual indicators for every triangle."""
    s = _sign(role)
    mesh = space.mesh
    b = np.asarray(b, dtype=float).reshape(2)
    local = space.local_coefficients(coeffs)
    grad = broken_gradient(space, coeffs)
    lap = broken_laplacian(space, coeffs)
    f = lam * local + lap[:, None] - s * (grad @ b)[:, None]
    return mesh.diameters ** 2 * mesh.areas / 3.0 * np.sum(np.abs(f) ** 2, axis=1)


def _edge_local_index(mesh: Mesh) -> np.ndarray:
    """Local edge index of each edge inside its k_plus / k_minus triangle."""
    cached = mesh.__dict__.get("_edge_local")
    if cached is not None:
        return cached
    nt = mesh.n_triangles
    t = np.repeat(np.arange(nt), 3)
    i = np.tile(np.arange(3), nt)
    e = mesh.tri_edges.ravel()
    loc = np.full((mesh.n_edges, 2), -1, dtype=np.int64)
    plus = t == mesh.edge_tris[e, 0]
    loc[e[plus], 0] = i[plus]
    loc[e[~plus], 1] = i[~plus]
    mesh.__dict__["_edge_local"] = loc
    return loc


def _side_traces(mesh: Mesh, grads, u_vertex, side):
    """Gradient and endpoint values of one side's affine field on each edge.

    Returns ``grad`` of shape ``(ne, 2)`` and values at the two stored edge
    endpoints, shape ``(ne, 2)``.  Missing (boundary ``k_minus``) sides are
    zero.
    """
    ne = mesh.n_edges
    tri = mesh.edge_tris[:, side]
    loc = _edge_local_index(mesh)[:, side]
    ok = tri >= 0
    g = np.zeros((ne, 2), dtype=grads.dtype)
    vals = np.zeros((ne, 2), dtype=u_vertex.dtype)
    if not ok.any():
        return g, vals
    t, li = tri[ok], loc[ok]
    g[ok] = grads[t]
    j1, j2 = (li + 1) % 3, (li + 2) % 3
    v1 = mesh.triangles[t, j1]
    first_is_a = v1 == mesh.edges[ok, 0]
    va = np.where(first_is_a, u_vertex[t, j1], u_vertex[t, j2])
    vb = np.where(first_is_a, u_vertex[t, j2], u_vertex[t, j1])
    vals[ok] = np.column_stack([va, vb])
    return g, vals


def _jump_terms(mesh, grads, b, u_vertex, role, direction):
    s = _sign(role)
    b = np.asarray(b, dtype=float).reshape(2)
    conv = 0.0 if s > 0 else 1.0
    gp, up = _side_traces(mesh, grads, u_vertex, 0)
    gm, um = _side_traces(mesh, grads, u_vertex, 1)
    d = direction
    dg = np.einsum("ek,ek->e", gp - gm, d)
    du = up - um
    bd = d @ b
    # values along the edge at the two Gauss points
    jump_q = dg[:, None] + conv * bd[:, None] * (
        du[:, [0]] * (1.0 - _GAUSS_S)[None, :] + du[:, [1]] * _GAUSS_S[None, :])
    h = mesh.edge_lengths
    return h * (0.5 * h) * np.sum(np.abs(jump_q) ** 2, axis=1)


def normal_jump_terms(mesh: Mesh, grads, b, u_vertex, role="primal") -> np.ndarray:
    """``h_E ||[g].nu_E||^2_E`` per edge; zero on boundary edges."""
    out = _jump_terms(mesh, np.asarray(grads), b, np.asarray(u_vertex), role, mesh.edge_normals)
    out[mesh.is_boundary] = 0.0
    return out


def tangential_jump_terms(mesh: Mesh, grads, b, u_vertex, role="primal") -> np.ndarray:
    """``h_E ||[g].tau_E||^2_E`` per edge; boundary edges use the one-sided trace."""
    return _jump_terms(mesh, np.asarray(grads), b, np.asarray(u_vertex), role, mesh.edge_tangents)


def _per_role(space, coeffs, lam, b, role):
    mesh = space.mesh
    grads = broken_gradient(space, coeffs)
    uv = vertex_values(space, coeffs)
    res = element_residuals_sq(space, coeffs, lam, b, role)
    en = normal_jump_terms(mesh, grads, b, uv, role)
    et = tangential_jump_terms(mesh, grads, b, uv, role)
    normal = 0.5 * en[mesh.tri_edges].sum(axis=1)
    tang = 0.5 * et[mesh.tri_edges].sum(axis=1)
    return res, normal, tang, en, et


def local_indicators(space: CRSpace, primal, dual, b) -> IndicatorField:
    """Primal and dual indicators ``eta_h(K)^2`` and ``eta*_h(K)^2``."""
    for pair in (primal, dual):
        if np.shape(pair.vector) != (space.n_free,):
            raise ContractError("eigenvector length does not match the CR space")
    r, n, t, en, et = _per_role(space, primal.vector, primal.lam, b, "primal")
    rs, ns, ts, ens, ets = _per_role(space, dual.vector, dual.lam, b, "dual")
    return IndicatorField(
        eta_sq=r + n + t, eta_star_sq=rs + ns + ts,
        residual_sq=r, normal_sq=n, tangential_sq=t,
        residual_star_sq=rs, normal_star_sq=ns, tangential_star_sq=ts,
        edge_normal=en, edge_tangential=et, edge_normal_star=ens, edge_tangential_star=ets,
        lambda_h=complex(primal.lam), lambda_star_h=complex(dual.lam),
    )


def subset_total(field: IndicatorField, subset) -> tuple[float, float]:
    """Sums of ``eta_sq`` and ``eta_star_sq`` over a set of elements."""
    idx = np.fromiter(subset, dtype=np.int64) if not isinstance(subset, np.ndarray) else subset
    if idx.size == 0:
        return 0.0, 0.0
    return float(field.eta_sq[idx].sum()), float(field.eta_star_sq[idx].sum())
