"""Extremal-eigenvalue estimation and condition-number reporting."""

import numpy as np
import pytest

from topofuse.conditioning import (
    BF16_KAPPA_LIMIT,
    KAPPA_CSV_COLUMNS,
    KappaReport,
    estimate_kappa,
    inverse_iteration,
    kappa_csv_rows,
    power_iteration,
)
from topofuse.element import SimpParams, assemble_dense, simp_scale
from topofuse.mesh import build_edof, make_preset
from topofuse.precision import EPS_BF16


def dense_extremes(pb, rho, p=3.0):
    m, bcs = pb.mesh, pb.bcs
    k = assemble_dense(m, build_edof(m), simp_scale(rho, SimpParams(p)), bcs.fixed_dofs)
    free = bcs.free_mask(m.n_dof)
    eig = np.linalg.eigvalsh(k[np.ix_(free, free)])
    return float(eig[-1]), float(eig[0])


def test_power_iteration_on_known_spectrum():
    diag = np.linspace(1.0, 9.0, 30)
    apply_op = lambda v: diag * v
    free = np.ones(30, dtype=bool)
    res = power_iteration(apply_op, 30, free, rel_tol=1e-10, max_steps=500)
    assert not res.capped
    assert abs(res.value - 9.0) <= 1e-6 * 9.0
    assert np.all(np.diff(res.history) >= -1e-12 * res.history[-1])


def test_power_iteration_cap_flag():
    diag = np.linspace(1.0, 9.0, 30)
    res = power_iteration(lambda v: diag * v, 30, np.ones(30, dtype=bool), max_steps=2)
    assert res.capped and res.steps == 2
    assert res.value <= 9.0  # Rayleigh quotient underestimates from below


def test_power_iteration_rejects_broken_operator():
    rng = np.random.default_rng(19)
    a = rng.standard_normal((20, 20))  # not symmetric: quotient oscillates
    with pytest.raises(RuntimeError):
        power_iteration(lambda v: a @ v, 20, np.ones(20, dtype=bool), max_steps=50)


def test_inverse_iteration_on_known_spectrum():
    diag = np.linspace(2.0, 50.0, 40)
    res = inverse_iteration(
        lambda v: diag * v, diag.copy(), 40, np.ones(40, dtype=bool), rel_tol=1e-8, max_steps=50
    )
    assert abs(res.value - 2.0) <= 1e-4 * 2.0
    assert res.inner_iterations > 0


def test_kappa_matches_dense_eigensolve():
    pb = make_preset("cantilever", scale=1 / 15)
    rng = np.random.default_rng(22)
    rho = rng.uniform(0.3, 1.0, pb.mesh.n_elem)
    lam_max, lam_min = dense_extremes(pb, rho)
    rep = estimate_kappa(pb.mesh, pb.bcs, rho)
    assert abs(rep.kappa - lam_max / lam_min) <= 0.05 * (lam_max / lam_min)
    assert abs(rep.lambda_max - lam_max) <= 0.02 * lam_max
    assert abs(rep.lambda_min - lam_min) <= 0.05 * lam_min
    assert rep.eps_kappa == EPS_BF16 * rep.kappa


def test_kappa_invariant_under_penalization_at_uniform_density():
    # uniform density scales K by a constant, so kappa must not move
    pb = make_preset("cantilever", scale=1 / 15)
    rho = np.full(pb.mesh.n_elem, 0.5)
    r2 = estimate_kappa(pb.mesh, pb.bcs, rho, SimpParams(2.0))
    r4 = estimate_kappa(pb.mesh, pb.bcs, rho, SimpParams(4.0))
    assert abs(r2.kappa - r4.kappa) <= 1e-6 * r2.kappa


def test_kappa_deterministic():
    pb = make_preset("cantilever", scale=1 / 15)
    rho = np.full(pb.mesh.n_elem, 0.5)
    a = estimate_kappa(pb.mesh, pb.bcs, rho)
    b = estimate_kappa(pb.mesh, pb.bcs, rho)
    assert a.kappa == b.kappa
    assert a.lambda_max == b.lambda_max and a.lambda_min == b.lambda_min


def test_bf16_barrier_flag():
    assert BF16_KAPPA_LIMIT == 256.0  # eps * kappa = 1 at 2^8
    rep = KappaReport(8, 3.0, 1.0, 1 / 200.0, 200.0, EPS_BF16 * 200, 3, 2, False)
    assert not rep.beyond_bf16_barrier
    rep2 = KappaReport(8, 3.0, 1.0, 1 / 300.0, 300.0, EPS_BF16 * 300, 3, 2, False)
    assert rep2.beyond_bf16_barrier


def test_csv_rows_follow_column_contract():
    pb = make_preset("cantilever", scale=1 / 30)
    rho = np.full(pb.mesh.n_elem, 0.5)
    rep = estimate_kappa(pb.mesh, pb.bcs, rho)
    rows = kappa_csv_rows([rep])
    assert len(rows) == 1
    assert tuple(rows[0].keys()) == KAPPA_CSV_COLUMNS
    assert rows[0]["n_elem"] == pb.mesh.n_elem
    assert rows[0]["capped"] in (0, 1)
    assert rows[0]["kappa"] == rep.kappa
