"""Pure Python/numpy versions of the compiled kernels in ``_core.pyx``.

The chain routines reproduce the compiled ones draw for draw; the dense
linear algebra agrees with them to rounding.
"""
import numpy as np

BACKEND = "python"


def row_logsumexp(logA, shift, nthreads=1):
    z = logA + shift[None, :]
    mx = np.max(z, axis=1)
    out = np.full(logA.shape[0], -np.inf)
    ok = np.isfinite(mx)
    if np.any(ok):
        s = np.sum(np.exp(z[ok] - mx[ok, None]), axis=1)
        out[ok] = mx[ok] + np.log(s)
    return out


def matvec(K, g, nthreads=1):
    return K @ g


def rmatvec(K, w, nthreads=1):
    return w @ K


def _vose_row(p, prob, alias):
    n = len(p)
    total = 0.0
    for x in p:
        total += x
    ps = [x / total * n for x in p]
    small = [i for i in range(n) if ps[i] < 1.0]
    large = [i for i in range(n) if not ps[i] < 1.0]
    while small and large:
        l = small.pop()
        g = large.pop()
        prob[l] = ps[l]
        alias[l] = g
        ps[g] = (ps[g] + ps[l]) - 1.0
        if ps[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    while large:
        g = large.pop()
        prob[g] = 1.0
        alias[g] = g
    while small:
        g = small.pop()
        prob[g] = 1.0
        alias[g] = g


def alias_build(P):
    P = np.asarray(P, dtype=np.float64)
    R, n = P.shape
    prob = np.empty((R, n), dtype=np.float64)
    alias = np.empty((R, n), dtype=np.int32)
    for r in range(R):
        pr = [0.0] * n
        al = [0] * n
        _vose_row(P[r].tolist(), pr, al)
        prob[r] = pr
        alias[r] = al
    return prob, alias


def alias_walk(prob, alias, prob0, alias0, u, start=-1):
    n = prob.shape[1]
    prob_l = prob.tolist()
    alias_l = alias.tolist()
    cols = np.minimum((u[:, 0] * n).astype(np.int64), n - 1).tolist()
    u2 = u[:, 1].tolist()
    if start >= 0:
        s = int(start)
        states = []
        t0 = 0
    else:
        c = cols[0]
        s = c if u2[0] < prob0[c] else int(alias0[c])
        states = [s]
        t0 = 1
    append = states.append
    for t in range(t0, len(cols)):
        c = cols[t]
        s = c if u2[t] < prob_l[s][c] else alias_l[s][c]
        append(s)
    return np.asarray(states, dtype=np.int64)
