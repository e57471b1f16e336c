"""Targeted eigenpairs of the CR pencil by shift-invert Krylov-Schur iteration.

The operator ``OP = (A - sigma M)^{-1} M`` is applied through a sparse LU
factorization (SuperLU with COLAMD ordering).  Its dominant eigenvalues
``mu = 1/(lambda - sigma)`` correspond to the pencil eigenvalues closest to
the shift.  A thick (Krylov-Schur) restart keeps the ``num_ritz`` wanted
Schur vectors between sweeps.

The k-th eigenvalue is chosen by ascending real part (ties: ascending
imaginary part) among the wanted Ritz values, and the solve only stops once
the first ``k`` of them have converged.  The index is therefore exact as
long as the wanted set reaches down to the bottom of the spectrum, which is
what the adaptive driver sizes ``num_ritz`` for.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cr_space import CRSpace, CRSystem, assemble_adjoint_action
from .errors import ContractError, ConvergenceError, ShiftError

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000


@dataclass
class SolverConfig:
    shift: complex = 0.0
    num_ritz: int | None = None  # defaults to k + 5
    tol: float = 1e-10
    max_iters: int = 300
    initial_vector: np.ndarray | None = None

    def resolved_num_ritz(self, k: int) -> int:
        m = k + 5 if self.num_ritz is None else int(self.num_ritz)
        if m < k + 3:
            raise ContractError(f"num_ritz={m} must be at least k + 3 = {k + 3}")
        if not self.tol > 0:
            raise ContractError("tolerance must be positive")
        return m


@dataclass
class EigenPair:
    lam: complex
    vector: np.ndarray
    role: str
    residual_norm: float
    k: int
    ritz_values: np.ndarray = field(default=None, repr=False)


class DenseEigen(NamedTuple):
    lam: complex
    right: np.ndarray
    left: np.ndarray


def ordering(values, role="primal", rtol=1e-10):
    """Indices sorting ``values`` by real part, ties by imaginary part.

    Real parts within ``rtol`` (relative) count as tied.  For the dual role
    the imaginary part is negated so that ``conj(lambda*)`` follows the
    primal order.
    """
    z = np.asarray(values, dtype=complex)
    if role == "dual":
        z = np.conj(z)
    idx = sorted(range(len(z)), key=lambda i: z[i].real)
    groups, current = [], []
    for i in idx:
        if current and abs(z[i].real - z[current[0]].real) > rtol * max(abs(z[i]), 1.0):
            groups.append(current)
            current = []
        current.append(i)
    if current:
        groups.append(current)
    return [i for g in groups for i in sorted(g, key=lambda i: z[i].imag)]


class _ShiftedSolve:
    """``x -> (A - sigma M)^{-1} x`` for complex ``x`` through one LU factor."""

    def __init__(self, A, M, sigma):
        sigma = complex(sigma)
        real = not np.iscomplexobj(A.data) and sigma.imag == 0.0
        shifted = (A - (sigma.real if real else sigma) * M).tocsc()
        if not real:
            shifted = shifted.astype(complex)
        try:
            self.lu = spla.splu(shifted, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise ShiftError(f"factorization of A - sigma*M failed at sigma={sigma}: {exc}") from exc
        self.real = real

    def __call__(self, x):
        if self.real:
            out = self.lu.solve(np.column_stack([x.real, x.imag]))
            return out[:, 0] + 1j * out[:, 1]
        return self.lu.solve(x.astype(complex))


def _residuals(A, M, lams, X):
    R = A @ X - (M @ X) * lams[None, :]
    return np.linalg.norm(R, axis=0) / np.linalg.norm(X, axis=0)


def _fix_phase(v):
    i = int(np.argmax(np.abs(v)))
    return v * (np.conj(v[i]) / abs(v[i]))


def _start_vector(n, v0, seed=2024):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(n) + 0j
    if v0 is None:
        return noise / np.linalg.norm(noise)
    v = np.asarray(v0, dtype=complex).ravel()
    if v.shape != (n,) or not np.all(np.isfinite(v)) or np.linalg.norm(v) == 0.0:
        return noise / np.linalg.norm(noise)
    # a little noise keeps eigen-directions the warm start has (nearly) lost
    v = v / np.linalg.norm(v) + 1e-3 * noise / np.linalg.norm(noise)
    return v / np.linalg.norm(v)


def _krylov_schur(A, M, k, cfg, role):
    n = A.shape[0]
    nwant = min(cfg.resolved_num_ritz(k), n)
    if k > n:
        raise ContractError(f"requested eigenvalue index {k} exceeds system size {n}")
    m = min(n, max(2 * nwant + 1, nwant + 8))
    sigma = complex(cfg.shift)
    solve = _ShiftedSolve(A, M, sigma)

    def op(x):
        return solve(M @ x)

    rng = np.random.default_rng(7)
    V = np.zeros((n, m + 1), dtype=complex)
    H = np.zeros((m + 1, m), dtype=complex)
    V[:, 0] = _start_vector(n, cfg.initial_vector)
    p = 0
    best = np.inf

    for sweep in range(cfg.max_iters):
        for j in range(p, m):
            w = op(V[:, j])
            h = np.zeros(j + 1, dtype=complex)
            for _ in range(2):  # classical Gram-Schmidt with one reorthogonalization
                c = V[:, :j + 1].conj().T @ w
                w = w - V[:, :j + 1] @ c
                h += c
            H[:j + 1, j] = h
            beta = np.linalg.norm(w)
            if beta > 1e-12 * max(np.linalg.norm(h), 1e-300):
                H[j + 1, j] = beta
                V[:, j + 1] = w / beta
                continue
            # invariant subspace: continue with a fresh orthogonal direction
            H[j + 1, j] = 0.0
            if j + 1 >= n:
                V[:, j + 1] = 0.0
                continue
            for _ in range(5):
                z = rng.standard_normal(n) + 0j
                for _ in range(2):
                    z -= V[:, :j + 1] @ (V[:, :j + 1].conj().T @ z)
                if np.linalg.norm(z) > 1e-8:
                    break
            V[:, j + 1] = z / np.linalg.norm(z)

        Hm = H[:m, :m]
        mu, Y = la.eig(Hm)
        order = np.argsort(-np.abs(mu), kind="stable")
        want = order[:nwant]
        want = want[np.abs(mu[want]) > 0]
        lams = sigma + 1.0 / mu[want]
        X = V[:, :m] @ Y[:, want]
        res = _residuals(A, M, lams, X)

        ranked = ordering(lams, role)
        if len(ranked) >= k:
            lead = ranked[:k]
            best = min(best, float(res[lead[-1]]))
            if np.all(res[lead] <= cfg.tol):
                t = lead[-1]
                conv = res <= cfg.tol
                log.debug("%s solve converged after %d sweeps (k=%d, lambda=%s)",
                          role, sweep + 1, k, lams[t])
                return lams[t], X[:, t], res[t], np.sort_complex(lams[conv])
        if m <= 2 or (m >= n and sweep >= 2):
            break

        # thick restart: keep the Schur vectors of the nwant dominant Ritz values
        keep = nwant
        mags = np.sort(np.abs(mu))[::-1]
        while keep < m - 1 and mags[keep - 1] - mags[keep] <= 1e-12 * mags[0]:
            keep += 1
        if keep >= m:
            keep = m - 1
        thr = 0.5 * (mags[keep - 1] + mags[keep])
        T, Z, sdim = la.schur(Hm, output="complex", sort=lambda x: abs(x) > thr)
        p = max(1, min(int(sdim), m - 1))
        V[:, :p] = V[:, :m] @ Z[:, :p]
        V[:, p] = V[:, m]
        Hn = np.zeros_like(H)
        Hn[:p, :p] = T[:p, :p]
        Hn[p, :p] = H[m, :m] @ Z[:, :p]
        H = Hn
        V[:, p + 1:] = 0.0

    raise ConvergenceError(
        f"{role} eigensolve did not converge in {cfg.max_iters} sweeps (k={k}, sigma={sigma})",
        best_residual=best)


def _finish(system, A, lam, x, role, k, ritz):
    x = x / np.sqrt(np.real(np.vdot(x, system.M @ x)))
    x = _fix_phase(x)
    r = float(np.linalg.norm(A @ x - lam * (system.M @ x)) / np.linalg.norm(x))
    return EigenPair(lam=complex(lam), vector=x, role=role, residual_norm=r, k=k, ritz_values=ritz)


def solve_primal(system: CRSystem, k: int = 1, cfg: SolverConfig | None = None) -> EigenPair:
    """k-th eigenpair of ``A u = lambda M u`` (k is 1-based)."""
    cfg = cfg or SolverConfig()
    if k < 1:
        raise ContractError("eigenvalue index k is 1-based")
    lam, x, _, ritz = _krylov_schur(system.A, system.M, k, cfg, "primal")
    return _finish(system, system.A, lam, x, "primal", k, ritz)


def solve_dual(system: CRSystem, k: int = 1, cfg: SolverConfig | None = None) -> EigenPair:
    """k-th eigenpair of the adjoint pencil ``A^H w = lambda* M w``.

    ``lambda*`` is the conjugate of the matching primal eigenvalue and ``w``
    is a left eigenvector of ``(A, M)``: ``w^H A = conj(lambda*) w^H M``.
    """
    cfg = cfg or SolverConfig()
    if k < 1:
        raise ContractError("eigenvalue index k is 1-based")
    AH = assemble_adjoint_action(system)
    if cfg.shift is not None and complex(cfg.shift).imag != 0.0:
        cfg = SolverConfig(**{**cfg.__dict__, "shift": np.conj(complex(cfg.shift))})
    lam, x, _, ritz = _krylov_schur(AH, system.M, k, cfg, "dual")
    return _finish(system, AH, lam, x, "dual", k, ritz)


def residual_norm(system: CRSystem, pair: EigenPair) -> float:
    A = system.A if pair.role == "primal" else assemble_adjoint_action(system)
    v = pair.vector
    return float(np.linalg.norm(A @ v - pair.lam * (system.M @ v)) / np.linalg.norm(v))


def dense_reference(system: CRSystem) -> list[DenseEigen]:
    """Full generalized eigendecomposition with LAPACK (QZ); test oracle only."""
    n = system.A.shape[0]
    if n > DENSE_LIMIT:
        raise ContractError(f"dense reference limited to {DENSE_LIMIT} unknowns, got {n}")
    A = system.A.toarray() if sp.issparse(system.A) else np.asarray(system.A)
    M = system.M.toarray() if sp.issparse(system.M) else np.asarray(system.M)
    w, vl, vr = la.eig(A, M, left=True, right=True)
    out = []
    for i in ordering(w):
        r, l_ = vr[:, i], vl[:, i]
        r = r / np.sqrt(np.real(np.vdot(r, M @ r)))
        l_ = l_ / np.sqrt(np.real(np.vdot(l_, M @ l_)))
        out.append(DenseEigen(complex(w[i]), r, l_))
    return out


def dense_eigenvalues(system: CRSystem) -> np.ndarray:
    """All eigenvalues of the pencil, ordered like :func:`dense_reference`.

    ``M`` is diagonal and positive, so the pencil is reduced to the standard
    problem ``M^{-1/2} A M^{-1/2}`` and no eigenvectors are formed.
    """
    n = system.A.shape[0]
    if n > DENSE_LIMIT:
        raise ContractError(f"dense reference limited to {DENSE_LIMIT} unknowns, got {n}")
    A = system.A.toarray() if sp.issparse(system.A) else np.asarray(system.A)
    d = system.M.diagonal() if sp.issparse(system.M) else np.diag(np.asarray(system.M))
    s = 1.0 / np.sqrt(d)
    w = la.eigvals(s[:, None] * A * s[None, :])
    return w[ordering(w)]


def warm_start(old_space: CRSpace, old_vector, new_space: CRSpace) -> np.ndarray:
    """Carry a CR field from a mesh to a refinement of it.

    Each new interior midpoint gets the old elementwise-affine field
    evaluated on the old triangle(s) containing it; the two one-sided
    values are averaged when the midpoint sits on an old edge.  Needs the
    ``parent`` lineage written by :func:`adaptive_cr.mesh.refine`; without
    it a constant vector is returned.
    """
    old_vector = np.asarray(old_vector)
    if new_space.mesh is old_space.mesh:
        return old_vector.copy()
    new_mesh, old_mesh = new_space.mesh, old_space.mesh
    parent = new_mesh.parent
    if (parent is None or len(parent) != new_mesh.n_triangles
            or parent.max() >= old_mesh.n_triangles or old_vector.shape != (old_space.n_free,)):
        return np.ones(new_space.n_free, dtype=old_vector.dtype)

    local = old_space.local_coefficients(old_vector)
    edges = new_space.interior_dofs
    x = new_mesh.edge_midpoints[edges]
    sides = new_mesh.edge_tris[edges]

    def value_on(old_tris):
        p = old_mesh.vertices[old_mesh.triangles[old_tris]]
        g = old_mesh.bary_grads[old_tris]
        # lambda_i vanishes at vertex i+1, so lambda_i(x) = grad_i . (x - p_{i+1})
        bary = np.stack([np.einsum("nk,nk->n", g[:, i], x - p[:, (i + 1) % 3]) for i in range(3)], axis=1)
        return np.einsum("ni,ni->n", local[old_tris], 1.0 - 2.0 * bary)

    return 0.5 * (value_on(parent[sides[:, 0]]) + value_on(parent[sides[:, 1]]))
