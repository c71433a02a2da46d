"""Jacobi-PCG behavior: convergence, honesty of the report, refinement."""

import numpy as np
import pytest

from topofuse.element import SimpParams
from topofuse.mesh import build_edof, make_preset
from topofuse.operator import MatFreeOperator
from topofuse.solver import (
    CgConfig,
    DivergenceError,
    IrConfig,
    fp64_relative_residual,
    pcg,
    solve_equilibrium,
    solve_refined,
)


def make_problem(scale, rho_val=0.5, precision="fp64", **kwargs):
    pb = make_preset("cantilever", scale=scale)
    m, bcs = pb.mesh, pb.bcs
    edof = build_edof(m)
    rho = np.full(m.n_elem, rho_val)
    op = MatFreeOperator(m, edof, bcs, rho, SimpParams(3.0), precision, **kwargs)
    return op, bcs


def test_cg_config_validation():
    with pytest.raises(ValueError):
        CgConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        CgConfig(max_iter=0)
    with pytest.raises(ValueError):
        CgConfig(recompute_every=-1)
    assert CgConfig(recompute_every=0).recompute_every == 0  # disabled is legal


def test_pcg_solves_spd_system():
    rng = np.random.default_rng(12)
    q = rng.standard_normal((40, 40))
    a = q @ q.T + 40 * np.eye(40)
    b = rng.standard_normal(40)
    x, report = pcg(lambda v: a @ v, b, np.diag(a).copy(), CgConfig(rel_tol=1e-12, max_iter=200))
    assert report.converged and report.termination == "converged"
    assert np.linalg.norm(b - a @ x) / np.linalg.norm(b) <= 1e-11
    assert len(report.residual_history) == report.iterations + 1


def test_pcg_zero_rhs_short_circuits():
    x, report = pcg(lambda v: v, np.zeros(7), np.ones(7), CgConfig())
    assert report.converged and report.iterations == 0 and report.matvecs == 0
    assert np.all(x == 0.0)


def test_pcg_true_residual_refresh_costs_extra_matvecs():
    rng = np.random.default_rng(13)
    q = rng.standard_normal((40, 40))
    a = q @ q.T + 40 * np.eye(40)
    b = rng.standard_normal(40)
    cfg = CgConfig(rel_tol=1e-12, max_iter=200, recompute_every=3)
    x, report = pcg(lambda v: a @ v, b, np.diag(a).copy(), cfg)
    assert report.converged
    assert report.matvecs > report.iterations  # refreshes are counted


def test_pcg_breakdown_on_indefinite_operator():
    a = np.diag([1.0, -2.0, 3.0])
    _, report = pcg(lambda v: a @ v, np.ones(3), np.ones(3), CgConfig(rel_tol=1e-12, max_iter=10))
    assert report.termination == "breakdown"
    assert not report.converged


def test_pcg_raises_on_non_finite_values():
    with pytest.raises(DivergenceError):
        pcg(lambda v: v * np.nan, np.ones(3), np.ones(3), CgConfig())


def test_equilibrium_solve_matches_dense():
    from topofuse.element import assemble_dense, simp_scale

    op, bcs = make_problem(1 / 15)
    u, report = solve_equilibrium(op, bcs.force, CgConfig(rel_tol=1e-10, max_iter=2000))
    assert report.converged
    k = assemble_dense(op.mesh, op.edof, simp_scale(op.density, op.simp), bcs.fixed_dofs)
    u_dense = np.linalg.solve(k, bcs.force)
    err = u - u_dense
    knorm = float(np.sqrt(err @ (k @ err)) / np.sqrt(u_dense @ (k @ u_dense)))
    assert knorm <= 1e-8
    assert abs(report.compliance - bcs.force @ u_dense) <= 1e-8 * abs(report.compliance)


def test_equilibrium_report_fields():
    op, bcs = make_problem(1 / 30)
    u, report = solve_equilibrium(op, bcs.force, CgConfig())
    assert report.precision == "fp64" and report.variant == "fused"
    assert report.verified_rel_residual is not None
    assert report.verified_rel_residual <= 2.0 * 1e-5
    assert abs(fp64_relative_residual(op, bcs.force, u) - report.verified_rel_residual) == 0.0


def test_equilibrium_zero_rhs():
    op, _ = make_problem(1 / 30)
    u, report = solve_equilibrium(op, np.zeros(op.n_dof), CgConfig())
    assert report.converged and report.iterations == 0
    assert report.verified_rel_residual == 0.0 and report.compliance == 0.0


def test_warm_start_from_solution_is_free():
    op, bcs = make_problem(1 / 15)
    u, _ = solve_equilibrium(op, bcs.force, CgConfig(rel_tol=1e-8, max_iter=2000))
    _, report = solve_equilibrium(op, bcs.force, CgConfig(rel_tol=1e-8, max_iter=2000), x0=u)
    assert report.converged and report.iterations <= 1


def test_fp32_attainable_floor_is_reported_honestly():
    # desk-scale problem: the recurrence passes 1e-5 but the fp64-verified
    # residual sits just past 2e-5, so the report must not claim convergence
    op, bcs = make_problem(0.2, precision="fp32")
    u, report = solve_equilibrium(op, bcs.force, CgConfig())
    assert report.termination == "floor"
    assert not report.converged
    assert report.rel_residual <= 1e-5  # the recurrence did pass
    assert 2e-5 < report.verified_rel_residual < 1e-4
    assert 100 <= report.iterations <= 120


def test_quantized_false_convergence_surfaces_as_floor():
    op, bcs = make_problem(1 / 15, precision="bf16")
    u, report = solve_equilibrium(op, bcs.force, CgConfig())
    assert report.termination == "floor"
    assert report.verified_rel_residual > 1e-2  # far from the claimed 1e-5


def test_refinement_converges_on_easy_problem():
    op32, bcs = make_problem(1 / 30, precision="fp32")
    opbf, _ = make_problem(1 / 30, precision="bf16")
    u, ir = solve_refined(op32, opbf, bcs.force, IrConfig(), CgConfig(max_iter=500))
    assert ir.converged and not ir.stagnated
    assert ir.outer_residuals[-1] <= 1e-5
    assert ir.outer_steps == len(ir.inner_iterations)
    assert ir.total_inner == sum(ir.inner_iterations)
    op64, _ = make_problem(1 / 30)
    _, r64 = solve_equilibrium(op64, bcs.force, CgConfig(rel_tol=1e-10, max_iter=2000))
    assert abs(ir.compliance - r64.compliance) <= 1e-4 * r64.compliance


def test_refinement_hits_outer_cap_when_quantization_dominates():
    op32, bcs = make_problem(1 / 15, precision="fp32")
    opbf, _ = make_problem(1 / 15, precision="bf16")
    u, ir = solve_refined(op32, opbf, bcs.force, IrConfig(max_outer=8), CgConfig(max_iter=500))
    assert not ir.converged
    assert ir.outer_steps == 8
    # refinement still recovers the compliance far better than a plain
    # quantized solve on the same mesh
    op64, _ = make_problem(1 / 15)
    _, r64 = solve_equilibrium(op64, bcs.force, CgConfig(rel_tol=1e-10, max_iter=2000))
    assert abs(ir.compliance - r64.compliance) <= 5e-3 * r64.compliance
    assert ir.outer_residuals[-1] < ir.outer_residuals[0]
