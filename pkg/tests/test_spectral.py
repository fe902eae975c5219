import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from epmlab.errors import NonConvergenceError
from epmlab.kernels import assemble_backward, assemble_forward
from epmlab.spectral import (StochasticKernel, apply_F, apply_F_star, build_forward_kernel,
                             estimate_gap, solve, solve_backward, solve_forward,
                             stationary_vector)
from epmlab.torus import ModelParams, PotentialSpec, TorusGrid


@pytest.mark.parametrize("eps,h,P", [(1.0, 1.0, 0.0), (1.0, 1.0, 1.0), (0.5, 0.3, -0.4), (0.2, 0.8, 2.0)])
def test_free_lambda_closed_form(eps, h, P):
    m = max(16, int(math.ceil(3 / (h * math.sqrt(eps)))))
    sol = solve_forward(assemble_forward(ModelParams(eps, h, (P,)), TorusGrid(1, m)))
    assert sol.lam == pytest.approx(oracles.free_lambda(eps, h, P), abs=1e-10)


def test_free_lambda_2d():
    sol = solve_forward(assemble_forward(ModelParams(1.0, 1.0, (0.0, 0.0)), TorusGrid(2, 16)))
    assert sol.lam == pytest.approx(-math.log(2 * math.pi), abs=1e-8)


@pytest.mark.parametrize("P", [0.0, 0.5])
def test_log_solver_matches_dense_eig(P):
    p = ModelParams(0.5, 0.5, (P,), PotentialSpec.cosine(1))
    A = assemble_forward(p, TorusGrid(1, 64))
    sol = solve_forward(A)
    rho, u = oracles.dense_principal(A.entries)
    assert sol.lam == pytest.approx(-0.25 * math.log(rho), abs=1e-12)
    assert np.allclose(sol.u, u, rtol=1e-9)


def test_linear_and_log_methods_agree():
    p = ModelParams(0.5, 0.5, (0.3,), PotentialSpec.cosine(1))
    A = assemble_forward(p, TorusGrid(1, 64))
    a, b = solve_forward(A), solve_forward(A, method="linear")
    assert a.lam == pytest.approx(b.lam, abs=1e-11)
    assert np.allclose(a.phi.values, b.phi.values, atol=1e-9)


def test_self_convergence_in_m():
    # the spectral value converges rapidly once the kernel is resolved
    lams = []
    for m in (64, 128, 256):
        p = ModelParams(0.3, 0.5, (0.0,), PotentialSpec.cosine(1))
        lams.append(solve_forward(assemble_forward(p, TorusGrid(1, m), 14)).lam)
    assert abs(lams[1] - lams[2]) < 1e-9
    assert abs(lams[0] - lams[2]) < 1e-6


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3))
def test_potential_shift_moves_lambda(c):
    p = ModelParams(0.5, 0.5, (0.2,), PotentialSpec.cosine(1))
    g = TorusGrid(1, 48)
    l0 = solve_forward(assemble_forward(p, g)).lam
    l1 = solve_forward(assemble_forward(p.replace(potential=p.potential.shifted(c)), g)).lam
    assert l1 == pytest.approx(l0 - 0.5 * c, abs=1e-10)


@pytest.mark.parametrize("P", [0.0, 0.4, -1.1])
def test_forward_backward_lambda(P):
    p = ModelParams(0.4, 0.6, (P,), PotentialSpec.cosine(1))
    g = TorusGrid(1, 64)
    a = solve_forward(assemble_forward(p, g))
    b = solve_backward(assemble_backward(p, g))
    assert a.lam == pytest.approx(b.lam, abs=1e-10)


def test_nonconvergence_raises():
    p = ModelParams(0.5, 0.5, (0.0,), PotentialSpec.cosine(1))
    with pytest.raises(NonConvergenceError) as exc:
        solve_forward(assemble_forward(p, TorusGrid(1, 64)), max_iter=2)
    assert exc.value.iterations == 2


def test_structure(cos_sol):
    K, Q, th = cos_sol.K, cos_sol.Q, cos_sol.theta.values
    assert K.row_sum_defect() <= 1e-12
    assert K.stationary_defect() <= 1e-10
    assert Q.row_sum_defect() <= 1e-10
    assert np.allclose(th, oracles.dense_left(K.matrix), rtol=1e-9)
    assert cos_sol.K.diagnostics["theta_formula_l1_discrepancy"] < 1e-8


def test_reversible_when_untilted(cos_sol):
    K, Q = cos_sol.K.matrix, cos_sol.Q.matrix
    assert np.max(np.abs(K - Q)) < 1e-10


def test_adjointness(tilted_sol, rng):
    K, Q, th = tilted_sol.K, tilted_sol.Q, tilted_sol.theta.values
    for _ in range(20):
        f, g = rng.standard_normal((2, K.size))
        lhs = np.dot(f * apply_F(K, g).values, th)
        rhs = np.dot(g * apply_F_star(Q, f).values, th)
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(g)


def test_stationary_vector_recovers_uniform():
    g = TorusGrid(1, 8)
    P = np.roll(np.eye(8), 1, axis=1) * 0.5 + np.eye(8) * 0.5
    th = stationary_vector(StochasticKernel(g, P))
    assert np.allclose(th.values, 1 / 8)


@pytest.mark.parametrize("eps,h", [(1.0, 0.5), (0.05, 0.25), (0.3, 0.3)])
def test_gap_free_fourier(eps, h):
    m = max(64, int(math.ceil(3 / (h * math.sqrt(eps)))))
    sol = solve(ModelParams(eps, h, (0.0,)), TorusGrid(1, m))
    est = estimate_gap(sol.K)
    assert est.converged
    assert est.lambda2_modulus == pytest.approx(oracles.free_lambda2(eps, h), abs=1e-6)


def test_gap_matches_dense(cos_sol):
    est = estimate_gap(cos_sol.K)
    assert est.lambda2_modulus == pytest.approx(oracles.second_modulus(cos_sol.K.matrix), rel=1e-8)
    lam = oracles.reversible_spectrum(cos_sol.K.matrix, cos_sol.theta.values)
    assert abs(lam[0] - 1) < 1e-12
    assert est.lambda2_modulus == pytest.approx(max(abs(lam[1]), abs(lam[-1])), rel=1e-8)


def test_gap_complex_pair(tilted_sol):
    ev = np.linalg.eigvals(tilted_sol.K.matrix)
    ev = ev[np.argsort(-np.abs(ev))]
    assert abs(ev[1].imag) > 1e-6
    est = estimate_gap(tilted_sol.K)
    assert est.converged and est.method == "recurrence"
    assert est.lambda2_modulus == pytest.approx(abs(ev[1]), rel=1e-8)


def test_kernel_rejects_bad_solution():
    p = ModelParams(0.5, 0.5, (0.0,), PotentialSpec.cosine(1))
    g = TorusGrid(1, 64)
    A = assemble_forward(p, g)
    sol = solve_forward(A)
    bad = dataclasses.replace(sol, phi=sol.phi.with_values(sol.phi.values + 1e-3 * np.sin(2 * np.pi * g.points()[:, 0])))
    with pytest.raises(NonConvergenceError):
        build_forward_kernel(A, bad)
