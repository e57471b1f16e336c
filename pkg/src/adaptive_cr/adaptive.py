"""Adaptive solve, estimate, mark and refine loop with bulk (Dörfler) marking."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mesh as meshmod
from .cr_space import CRSpace, assemble
from .eigensolver import (DENSE_LIMIT, SolverConfig, dense_eigenvalues,
                          solve_dual, solve_primal, warm_start)
from .errors import ConfigurationError, ContractError, ConvergenceError, ShiftError
from .estimator import IndicatorField, local_indicators

log = logging.getLogger(__name__)

DOMAINS = ("square", "lshape", "file")
SHIFT_RETRIES = 3


@dataclass(frozen=True)
class AdaptiveConfig:
    """Parameters of an adaptive (or uniform) run.

    ``domain="file"`` reads the initial mesh from ``mesh_file``; the other
    domains use a structured mesh with ``initial_n`` cells per unit length.
    """

    domain: str = "square"
    b: tuple[float, float] = (1.0, 0.0)
    theta: float = 0.5
    k: int = 1
    initial_n: int = 16
    max_dof: int = 50_000
    max_iter: int = 100
    tol: float = 1e-10
    exact_lambda: float | None = None
    mesh_file: str | None = None
    keep_meshes: bool = False

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigurationError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        if self.domain == "file" and not self.mesh_file:
            raise ConfigurationError("domain 'file' needs mesh_file")
        if not 0.0 < self.theta < 1.0:
            raise ConfigurationError(f"theta must lie in (0, 1), got {self.theta}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError(f"k must be a positive integer, got {self.k}")
        if self.initial_n < 1:
            raise ConfigurationError("initial_n must be positive")
        if self.max_iter < 0:
            raise ConfigurationError("max_iter must be non-negative")
        if not self.tol > 0.0:
            raise ConfigurationError("tol must be positive")
        b = tuple(float(x) for x in self.b)
        if len(b) != 2 or not all(np.isfinite(b)):
            raise ConfigurationError(f"b must be a finite 2-vector, got {self.b}")
        object.__setattr__(self, "b", b)

    def initial_mesh(self) -> meshmod.Mesh:
        if self.domain == "square":
            return meshmod.build_structured_square(self.initial_n)
        if self.domain == "lshape":
            return meshmod.build_lshape(self.initial_n)
        return meshmod.read_mesh(self.mesh_file)


@dataclass
class ConvergenceRecord:
    iter: int
    n_dof: int
    lambda_h: complex
    lambda_star_h: complex
    eta_sq_total: float
    eta_star_sq_total: float
    err_exact: float | None
    wall_time: float
    n_triangles: int = 0

    @property
    def estimator_total(self) -> float:
        return self.eta_sq_total + self.eta_star_sq_total


@dataclass
class ConvergenceHistory:
    config: AdaptiveConfig
    records: list[ConvergenceRecord] = field(default_factory=list)
    termination: str = ""
    meshes: list[meshmod.Mesh] = field(default_factory=list)

    @property
    def final(self) -> ConvergenceRecord:
        return self.records[-1]

    def first_at(self, n_dof: int) -> ConvergenceRecord | None:
        """First record with at least ``n_dof`` free DOFs."""
        return next((r for r in self.records if r.n_dof >= n_dof), None)

    def config_dict(self) -> dict:
        return asdict(self.config)


def mark(field_or_values, theta: float) -> set[int]:
    """Minimal set of elements carrying a ``theta`` share of the indicator sum.

    Elements are taken greedily by descending ``eta^2 + eta*^2`` (ties by
    ascending index) until the running sum reaches ``theta`` times the total.

    Parameters
    ----------
    field_or_values : IndicatorField or array_like
        Either a full indicator field or the combined per-element values.
    theta : float
        Bulk parameter in (0, 1).
    """
    if not 0.0 < theta < 1.0:
        raise ConfigurationError(f"theta must lie in (0, 1), got {theta}")
    if isinstance(field_or_values, IndicatorField):
        d = field_or_values.combined
    else:
        d = np.asarray(field_or_values, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ContractError("marking needs a nonempty 1-d indicator array")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ContractError("indicators must be finite and non-negative")
    total = d.sum()
    if total == 0.0:
        return {0}
    order = np.lexsort((np.arange(d.size), -d))
    csum = np.cumsum(d[order])
    n = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return set(order[:min(n, d.size)].tolist())


class _Continuation:
    """Shift and Krylov-size bookkeeping for the k-th eigenvalue across meshes."""

    def __init__(self, k: int, tol: float):
        self.k = k
        self.tol = tol
        self.sigma = None
        self.num_ritz = k + 5
        self.primal = None
        self.dual = None
        self.space = None

    def _bootstrap(self, system):
        k = self.k
        if system.n <= DENSE_LIMIT:
            lams = dense_eigenvalues(system)
        else:
            probe = solve_primal(system, k, SolverConfig(shift=0.0, num_ritz=3 * k + 6, tol=self.tol))
            lams = np.sort_complex(probe.ritz_values)
        if len(lams) < k:
            raise ContractError(f"only {len(lams)} eigenvalues available, k={k}")
        self.sigma = float(lams[k - 1].real) - 0.5
        radius = np.max(np.abs(lams[:k] - self.sigma))
        inside = int(np.sum(np.abs(lams - self.sigma) <= radius * (1 + 1e-8)))
        self.num_ritz = max(k + 5, inside + 2)
        self.num_ritz = min(self.num_ritz, max(system.n - 1, 1))

    def solve(self, space, system):
        if self.sigma is None:
            self._bootstrap(system)
        v0 = w0 = None
        if self.primal is not None:
            v0 = warm_start(self.space, self.primal.vector, space)
            w0 = warm_start(self.space, self.dual.vector, space)
        sigma = self.sigma
        last = None
        for attempt in range(SHIFT_RETRIES + 1):
            num_ritz = max(self.k + 3, min(self.num_ritz, system.n))
            cfg_p = SolverConfig(shift=sigma, num_ritz=num_ritz, tol=self.tol, initial_vector=v0)
            cfg_d = SolverConfig(shift=sigma, num_ritz=num_ritz, tol=self.tol, initial_vector=w0)
            try:
                primal = solve_primal(system, self.k, cfg_p)
                dual = solve_dual(system, self.k, cfg_d)
                break
            except (ShiftError, ConvergenceError) as exc:
                last = exc
                log.warning("eigensolve failed at sigma=%g (attempt %d): %s", sigma, attempt + 1, exc)
                # perturb the shift and drop the warm start
                sigma = sigma - (attempt + 1) * 1e-2 * max(1.0, abs(sigma))
                v0 = w0 = None
        else:
            raise last
        self.primal, self.dual, self.space = primal, dual, space
        lam = primal.lam
        self.sigma = float(lam.real) - 1e-3 * abs(lam)
        return primal, dual


def _check_mesh(mesh: meshmod.Mesh, euler: int):
    mesh.check_conformity()
    if mesh.euler_characteristic() != euler:
        raise ContractError(f"Euler characteristic changed from {euler} to {mesh.euler_characteristic()}")


def _drive(config: AdaptiveConfig, choose, callback=None) -> ConvergenceHistory:
    mesh = config.initial_mesh()
    history = ConvergenceHistory(config=config)
    space = CRSpace(mesh)
    if config.max_dof < space.n_free:
        raise ConfigurationError(
            f"max_dof={config.max_dof} is below the initial DOF count {space.n_free}")
    euler = mesh.euler_characteristic()
    cont = _Continuation(config.k, config.tol)
    t0 = time.perf_counter()
    level = 0
    while True:
        system = assemble(space, config.b)
        try:
            primal, dual = cont.solve(space, system)
        except (ShiftError, ConvergenceError) as exc:
            log.error("terminating at iteration %d: %s", level, exc)
            history.termination = "solver_failure"
            break
        field_ = local_indicators(space, primal, dual, config.b)
        eta, eta_star = field_.totals()
        err = None if config.exact_lambda is None else float(abs(config.exact_lambda - primal.lam))
        rec = ConvergenceRecord(iter=level, n_dof=space.n_free, lambda_h=primal.lam,
                                lambda_star_h=dual.lam, eta_sq_total=eta, eta_star_sq_total=eta_star,
                                err_exact=err, wall_time=time.perf_counter() - t0,
                                n_triangles=mesh.n_triangles)
        history.records.append(rec)
        if config.keep_meshes:
            history.meshes.append(mesh)
        log.info("l=%d ndof=%d lambda=%.12g eta^2=%.3e", level, rec.n_dof, rec.lambda_h.real, eta)
        if callback is not None:
            callback(rec, mesh, field_)
        if space.n_free > config.max_dof:
            history.termination = "max_dof"
            break
        if level == config.max_iter:
            history.termination = "max_iter"
            break
        mesh = choose(mesh, field_)
        _check_mesh(mesh, euler)
        space = CRSpace(mesh)
        level += 1
    if not history.records:
        # a failure on the very first mesh still yields a record-free history; callers check termination
        log.error("no iteration completed")
    return history


def run(config: AdaptiveConfig, callback=None) -> ConvergenceHistory:
    """Adaptive loop: solve both eigenproblems, estimate, mark, refine.

    Stops after the first iteration whose DOF count exceeds ``max_dof`` or
    at iteration ``max_iter``.  A persistent eigensolver failure ends the
    run early with termination ``"solver_failure"`` and the records so far.

    ``callback(record, mesh, field)`` is invoked after every iteration.
    """
    return _drive(config, lambda m, f: meshmod.refine(m, mark(f, config.theta)), callback)


def uniform_study(config: AdaptiveConfig, n_levels: int, callback=None) -> ConvergenceHistory:
    """Uniform-refinement baseline: every level halves the mesh size.

    Produces ``n_levels + 1`` records (the initial mesh plus one per
    refinement) unless ``max_dof`` stops it earlier.
    """
    if n_levels < 1:
        raise ConfigurationError("n_levels must be at least 1")
    cfg = AdaptiveConfig(**{**asdict(config), "max_iter": n_levels})
    return _drive(cfg, lambda m, f: meshmod.uniform_refine(m), callback)
