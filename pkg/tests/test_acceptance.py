"""Acceptance criteria 1-9, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (shown even
without ``-s``) and then asserts.
"""
import time

import numpy as np
import pytest

from adaptive_cr.adaptive import AdaptiveConfig, mark, run
from adaptive_cr.cli import format_log
from adaptive_cr.cr_space import CRSpace, assemble, element_matrices
from adaptive_cr.eigensolver import dense_reference, solve_dual, solve_primal
from adaptive_cr.estimator import local_indicators, normal_jump_terms, tangential_jump_terms
from adaptive_cr.exact import square_eigenvalue
from adaptive_cr.mesh import build_lshape, build_structured_square, refine

import runs

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return _report


def _err_at(history, n_dof, exact):
    rec = history.first_at(n_dof)
    if rec is None:
        return None, float("inf")
    return rec, abs(rec.lambda_h - exact)


def test_criterion_1_oracle(report):
    t0 = time.perf_counter()
    system = assemble(CRSpace(build_structured_square(2)), (1.0, 0.0))
    ref = dense_reference(system)
    worst_p = worst_d = 0.0
    for k in range(1, 5):
        lam = ref[k - 1].lam
        p, d = solve_primal(system, k), solve_dual(system, k)
        worst_p = max(worst_p, abs(p.lam - lam) / abs(lam))
        worst_d = max(worst_d, abs(np.conj(d.lam) - p.lam) / abs(p.lam))
    dt = time.perf_counter() - t0
    ok = system.n == 8 and worst_p <= 1e-9 and worst_d <= 1e-9 and dt < 1.0
    report(1, ok, f"n_free={system.n} primal rel err {worst_p:.1e}, dual conj rel err {worst_d:.1e}, {dt:.2f}s")


def test_criterion_2_square_b1(report):
    h = runs.history("square_b1")
    exact = square_eigenvalue((1.0, 0.0))
    r1, e1 = _err_at(h, 6_000, exact)
    r2, e2 = _err_at(h, 33_000, exact)
    runtime = h.final.wall_time
    ok = e1 <= 2e-2 and e2 <= 5e-3 and runtime <= 300
    report(2, ok, f"err {e1:.2e} at N={r1 and r1.n_dof}, err {e2:.2e} at N={r2 and r2.n_dof}, {runtime:.1f}s")


def test_criterion_3_square_b3(report):
    h = runs.history("square_b3")
    rec, err = _err_at(h, 6_500, square_eigenvalue((3.0, 0.0)))
    report(3, err <= 2e-2, f"err {err:.2e} at N={rec and rec.n_dof}")


def test_criterion_4_square_b10(report):
    h = runs.history("square_b10")
    rec, err = _err_at(h, 21_000, square_eigenvalue((10.0, 0.0)))
    report(4, err <= 2e-2, f"err {err:.2e} at N={rec and rec.n_dof}")


def test_criterion_5_second_eigenvalue(report):
    h = runs.history("square_b1_k2")
    rec, err = _err_at(h, 17_000, 0.25 + 5 * np.pi ** 2)
    report(5, err <= 3e-2, f"err {err:.2e} at N={rec and rec.n_dof}")


def test_criterion_6_lshape(report):
    h = runs.history("lshape_b1")
    rec = h.first_at(20_000)
    lam = float("nan") if rec is None else rec.lambda_h.real
    runtime = h.final.wall_time
    ok = rec is not None and 9.87 <= lam <= 9.90 and runtime <= 300
    report(6, ok, f"lambda_h={lam:.6f} at N={rec and rec.n_dof}, {runtime:.1f}s")


def test_criterion_7_uniform_rate(report):
    h = runs.uniform_history()
    errs = np.array([r.err_exact for r in h.records])
    factors = errs[:-1] / errs[1:]
    ok = len(h.records) == 4 and np.all((factors >= 3.0) & (factors <= 5.0))
    report(7, ok, "reduction factors " + ", ".join(f"{f:.3f}" for f in factors))


def test_criterion_8_effectivity(report):
    h = runs.history("square_b1")
    ratio = np.array([r.estimator_total / r.err_exact for r in h.records if r.iter >= 3])
    med = np.median(ratio)
    spread = max(ratio.max() / med, med / ratio.min())
    report(8, spread <= 10.0, f"{len(ratio)} iterations, median {med:.1f}, max deviation factor {spread:.2f}")


def test_criterion_9_properties(report):
    t0 = time.perf_counter()
    failures = []
    rng = np.random.default_rng(9)
    meshes = [build_structured_square(16), build_lshape(8), refine(build_lshape(4), {0, 5, 17, 40})]

    # CR mass matrix and total mass
    for mesh in meshes:
        for t in range(mesh.n_triangles):
            _, m = element_matrices(mesh.geometry(t), (1.0, 0.0))
            if not np.array_equal(m, np.eye(3) * (mesh.areas[t] / 3.0)):
                failures.append(f"local mass on element {t}")
                break
        mass = assemble(CRSpace(mesh), (1.0, 0.0)).mass_full.sum()
        if abs(mass - mesh.area) > 1e-12 * mesh.area:
            failures.append("total mass")

    # affine patch test
    for mesh in meshes:
        full = 0.3 + mesh.edge_midpoints @ np.array([1.5, -0.7])
        local = full[mesh.tri_edges]
        grads = -2.0 * np.einsum("ti,tik->tk", local, mesh.bary_grads)
        uv = local.sum(axis=1, keepdims=True) - 2.0 * local
        inner = ~mesh.is_boundary
        for role in ("primal", "dual"):
            jn = normal_jump_terms(mesh, grads, (1.0, 0.0), uv, role)
            jt = tangential_jump_terms(mesh, grads, (1.0, 0.0), uv, role)
            if np.abs(jn).max() > 1e-24 or np.abs(jt[inner]).max() > 1e-24:
                failures.append("affine jumps")
        if not np.allclose(grads, [1.5, -0.7], atol=1e-12):
            failures.append("affine gradient")

    # orientation invariance
    mesh = meshes[2]
    space, flipped = CRSpace(mesh), CRSpace(mesh.with_flipped_orientation())
    system = assemble(space, (3.0, 0.0))
    p, d = solve_primal(system, 1), solve_dual(system, 1)
    a, b = local_indicators(space, p, d, (3.0, 0.0)), local_indicators(flipped, p, d, (3.0, 0.0))
    for x, y in ((a.eta_sq, b.eta_sq), (a.eta_star_sq, b.eta_star_sq)):
        if np.max(np.abs(x - y) / x) > 1e-14:
            failures.append("orientation invariance")

    # Dörfler minimality on random indicator fields
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        dvals = rng.exponential(size=n) ** 3
        theta = float(rng.uniform(0.05, 0.95))
        marked = sorted(mark(dvals, theta))
        s = dvals[marked].sum()
        smallest = min(dvals[marked])
        if s < theta * dvals.sum() or (len(marked) > 1 and s - smallest >= theta * dvals.sum()):
            failures.append("minimality")
            break

    # conformity and Euler formula after every refinement of an adaptive run
    h = run(AdaptiveConfig(domain="lshape", initial_n=4, max_iter=8, keep_meshes=True))
    for m in h.meshes:
        try:
            m.check_conformity()
        except Exception as exc:  # noqa: BLE001
            failures.append(f"conformity: {exc}")
        if m.euler_characteristic() != 1:
            failures.append("euler")

    # determinism of the convergence log
    cfg = AdaptiveConfig(b=(3.0, 0.0), initial_n=8, max_iter=6, exact_lambda=square_eigenvalue((3.0, 0.0)))
    if format_log(run(cfg)).encode() != format_log(run(cfg)).encode():
        failures.append("determinism")

    dt = time.perf_counter() - t0
    ok = not failures and dt < 30.0
    report(9, ok, f"{dt:.1f}s" + (f", failed: {sorted(set(failures))}" if failures else ", all property checks hold"))


_CLUSTER_XFAIL = pytest.mark.xfail(
    strict=True, reason="k=2 targets the double eigenvalue 5*pi^2+1/4; one step raises the total by 0.7%")


@pytest.mark.parametrize("name", [
    pytest.param(n, marks=_CLUSTER_XFAIL) if n == "square_b1_k2" else n for n in runs.CASES])
def test_estimator_non_increasing_after_iteration_2(name):
    totals = [r.estimator_total for r in runs.history(name).records if r.iter >= 2]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
