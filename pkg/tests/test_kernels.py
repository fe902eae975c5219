import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from epmlab.errors import ConfigurationError, LinearDomainOverflow
from epmlab.kernels import (apply_G, assemble_backward, assemble_forward, eval_L,
                            write_kernel_csv)
from epmlab.torus import ModelParams, PotentialSpec, TorusGrid


def _Ufun(U):
    return lambda x: float(U.evaluate(np.asarray(x)[None, :])[0])


def test_eval_L():
    p = ModelParams(1.0, 1.0, (0.5,), PotentialSpec.cosine(1))
    assert eval_L(p, 0.0, 2.0) == pytest.approx(2.0 - 1.0 + 1.0)


@pytest.mark.parametrize("P,U,n,m", [
    ((0.0,), PotentialSpec.zero(1), 1, 8),
    ((0.3,), PotentialSpec.cosine(1), 1, 10),
    ((0.2, -0.1), PotentialSpec.cosine(2, 0.7, 1), 2, 5),
])
@pytest.mark.parametrize("backward", [False, True])
def test_matches_brute_force(P, U, n, m, backward):
    p = ModelParams(0.5, 0.4, P, U)
    A = (assemble_backward if backward else assemble_forward)(p, TorusGrid(n, m), cutoff_sigmas=30)
    ref = oracles.brute_force_matrix(0.5, 0.4, P, _Ufun(U), n, m, backward=backward)
    assert np.max(np.abs(A.entries - ref)) <= 1e-14 * ref.max()


def test_free_row_sums_closed_form():
    g = TorusGrid(1, 64)
    for P, want in [(0.0, math.sqrt(2 * math.pi)), (1.0, math.sqrt(2 * math.pi) * math.exp(0.5))]:
        A = assemble_forward(ModelParams(1.0, 1.0, (P,)), g)
        assert np.allclose(A.row_sums(), want, rtol=1e-13)


@pytest.mark.parametrize("P", [0.0, 0.7, -1.3])
def test_backward_is_transpose(P):
    p = ModelParams(0.3, 0.5, (P,), PotentialSpec.cosine(1))
    g = TorusGrid(1, 64)
    A, B = assemble_forward(p, g), assemble_backward(p, g)
    assert np.max(np.abs(B.entries - A.T)) <= 1e-13 * np.max(A.entries)


def test_log_domain_and_overflow_guard():
    p = ModelParams(0.01, 0.5, (0.0,), PotentialSpec.cosine(1, 8.0))
    A = assemble_forward(p, TorusGrid(1, 4))
    assert A.domain == "log"
    with pytest.raises(LinearDomainOverflow):
        A.entries


def test_apply_G_against_high_precision():
    eps, h, amp = 0.01, 0.5, 8.0
    U = PotentialSpec.cosine(1, amp)
    p = ModelParams(eps, h, (0.0,), U)
    g = TorusGrid(1, 4)
    A = assemble_forward(p, g)
    phi = np.array([0.0, 0.3, 1.1, 0.2])
    got = apply_G(p, A, g.field(phi)).values
    import mpmath as mp
    want = oracles.mp_apply_G(eps, h, 0.0, lambda x: amp * mp.cos(2 * mp.pi * x),
                              [0.0, 0.25, 0.5, 0.75], phi)
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_cutoff_validation():
    p = ModelParams(1.0, 1.0, (0.0,))
    with pytest.raises(ConfigurationError):
        assemble_forward(p, TorusGrid(1, 16), cutoff_sigmas=5)


def test_cutoff_convergence():
    p = ModelParams(0.5, 0.5, (0.4,), PotentialSpec.cosine(1))
    g = TorusGrid(1, 32)
    a12 = assemble_forward(p, g, 12).entries
    a20 = assemble_forward(p, g, 20).entries
    # beyond 12 sigma the Gaussian tail is far below rounding
    assert np.max(np.abs(a12 - a20)) <= 1e-14 * a20.max()


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(-2, 2), st.floats(0, 3))
def test_positive_entries_and_transpose(eps, h, P, amp):
    m = max(8, int(math.ceil(3 / (h * math.sqrt(eps)))))
    m = min(m, 96)
    p = ModelParams(eps, h, (P,), PotentialSpec.cosine(1, amp))
    g = TorusGrid(1, m)
    A, B = assemble_forward(p, g), assemble_backward(p, g)
    a, b = A.log_entries, B.log_entries.T
    fin = np.isfinite(a)
    assert np.array_equal(fin, np.isfinite(b))
    assert np.max(np.abs(a[fin] - b[fin])) <= 1e-13 * max(1.0, np.abs(a[fin]).max())
    assert np.all(np.isfinite(A.log_entries.max(axis=1)))


def test_kernel_csv(tmp_path):
    p = ModelParams(1.0, 1.0, (0.0,))
    A = assemble_forward(p, TorusGrid(1, 8))
    path = tmp_path / "k.csv"
    write_kernel_csv(A, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["i", "j", "A_ij"]
    row = lines[1].split(",")
    assert float(row[2]) == pytest.approx(A.entries[int(row[0]), int(row[1])], rel=1e-16)
