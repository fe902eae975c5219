import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from epmlab import _backend, _fallback, chain
from epmlab.chain import (SamplerTable, minimal_image, read_binary, sample_initial, simulate,
                          step)
from epmlab.errors import ConfigurationError, ShapeError, UsageError
from epmlab.spectral import StochasticKernel
from epmlab.torus import TorusGrid


def _alias_probs(prob, alias):
    """Distribution implied by one row of alias tables."""
    n = prob.size
    out = prob / n
    np.add.at(out, alias, (1 - prob) / n)
    return out


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=40).filter(lambda w: sum(w) > 1e-6))
def test_alias_tables_exact(w):
    w = np.asarray(w)
    t = SamplerTable.from_rows(w)
    assert np.allclose(_alias_probs(t.prob[0], t.alias[0]), w / w.sum(), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31))
def test_alias_build_backends_identical(n, seed):
    rows = np.random.default_rng(seed).dirichlet(np.ones(n), size=3)
    p1, a1 = _backend.alias_build(rows)
    p2, a2 = _fallback.alias_build(rows)
    assert np.array_equal(p1, p2) and np.array_equal(a1, a2)


def test_alias_walk_backends_identical():
    rows = np.random.default_rng(3).dirichlet(np.ones(16), size=16)
    prob, alias = _fallback.alias_build(rows)
    p0, a0 = _fallback.alias_build(np.full((1, 16), 1 / 16))
    u = np.random.default_rng(4).random((5000, 2))
    s1 = _backend.alias_walk(prob, alias, p0[0], a0[0], u)
    s2 = _fallback.alias_walk(prob, alias, p0[0], a0[0], u)
    assert np.array_equal(s1, s2)
    assert np.array_equal(_backend.alias_walk(prob, alias, p0[0], a0[0], u, start=5),
                          _fallback.alias_walk(prob, alias, p0[0], a0[0], u, start=5))


def test_bad_weights():
    with pytest.raises(ConfigurationError):
        SamplerTable.from_rows([0.5, -0.1])
    with pytest.raises(ConfigurationError):
        SamplerTable.from_rows([0.0, 0.0])


def test_step_chi_square(cos_sol):
    K = cos_sol.K
    rng = np.random.default_rng(7)
    i = 3
    draws = np.array([step(K, i, rng) for _ in range(40000)])
    p = K.matrix[i]
    counts = np.bincount(draws, minlength=K.size)
    keep = p * draws.size >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(p[keep], p[~keep].sum()) * draws.size
    assert stats.chisquare(obs[exp > 0], exp[exp > 0]).pvalue > 1e-3


def test_step_rejects_bad_state(cos_sol):
    with pytest.raises(ShapeError):
        step(cos_sol.K, -1, np.random.default_rng(0))


def test_initial_follows_theta(cos_sol):
    rng = np.random.default_rng(11)
    table = SamplerTable.from_rows(cos_sol.theta.values)
    draws = np.array([sample_initial(cos_sol.theta, rng, table) for _ in range(20000)])
    occ = np.bincount(draws, minlength=cos_sol.grid.size) / draws.size
    assert 0.5 * np.abs(occ - cos_sol.theta.values).sum() < 3 * np.sqrt(cos_sol.grid.size / draws.size)


def test_simulate_deterministic(cos_sol):
    a = simulate(cos_sol.K, cos_sol.theta, 5000, 42)
    b = simulate(cos_sol.K, cos_sol.theta, 5000, 42)
    c = simulate(cos_sol.K, cos_sol.theta, 5000, 43)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    assert a.T == 5000


def test_simulate_chunking_invisible(cos_sol, monkeypatch):
    full = simulate(cos_sol.K, cos_sol.theta, 3000, 5)
    monkeypatch.setattr(chain, "_CHUNK", 257)
    assert np.array_equal(simulate(cos_sol.K, cos_sol.theta, 3000, 5).states, full.states)


def test_simulate_across_backends(cos_sol, monkeypatch):
    ref = simulate(cos_sol.K, cos_sol.theta, 4000, 9)
    monkeypatch.setattr(_backend, "kernels", _fallback)
    K2 = StochasticKernel(cos_sol.grid, cos_sol.K.matrix, cos_sol.K.direction, cos_sol.theta)
    assert np.array_equal(simulate(K2, cos_sol.theta, 4000, 9).states, ref.states)


def test_zero_length():
    g = TorusGrid(1, 4)
    K = StochasticKernel(g, np.full((4, 4), 0.25))
    tr = simulate(K, np.full(4, 0.25), 0, 1)
    assert tr.states.size == 1
    with pytest.raises(ConfigurationError):
        simulate(K, np.full(4, 0.25), -1, 1)


def test_binary_roundtrip(tmp_path, cos_sol):
    tr = simulate(cos_sol.K, cos_sol.theta, 1000, 1)
    path = tmp_path / "t.bin"
    tr.write_binary(path)
    raw = path.read_bytes()
    assert raw[:8] == b"EPMTRAJ1" and len(raw) == 12 + 4 * 1001
    back = read_binary(path, cos_sol.grid)
    assert np.array_equal(back.states, tr.states)
    with pytest.raises(ShapeError):
        read_binary(path, TorusGrid(1, 64))
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(UsageError):
        read_binary(tmp_path / "junk.bin", cos_sol.grid)


def test_csv(tmp_path, cos_sol):
    tr = simulate(cos_sol.K, cos_sol.theta, 10, 1)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,flat_index,x0"
    assert len(lines) == 12
    t, s, x = lines[3].split(",")
    assert int(s) == tr.states[2] and float(x) == tr.states[2] / 128


def test_minimal_image():
    g = TorusGrid(2, 8)
    i = g.to_flat(np.array([[7, 0]]))
    j = g.to_flat(np.array([[0, 3]]))
    assert minimal_image(g, i, j).tolist() == [[0.125, 0.375]]
    assert minimal_image(g, j, i).tolist() == [[-0.125, -0.375]]
