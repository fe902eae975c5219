# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Every public function mirrors one in ``_fallback.py``.

Row-parallel loops use ``prange`` with a fixed summation order inside each
row, so results do not depend on the thread count.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log, INFINITY

cnp.import_array()

BACKEND = "compiled"


def row_logsumexp(const double[:, ::1] logA, const double[::1] shift, int nthreads=1):
    """out[i] = log sum_j exp(logA[i, j] + shift[j])."""
    cdef Py_ssize_t N = logA.shape[0], M = logA.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s, t
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in prange(N, nogil=True, num_threads=nthreads, schedule="static"):
        mx = -INFINITY
        for j in range(M):
            t = logA[i, j] + shift[j]
            if t > mx:
                mx = t
        if mx == -INFINITY:
            out[i] = -INFINITY
        else:
            s = 0.0
            for j in range(M):
                s = s + exp(logA[i, j] + shift[j] - mx)
            out[i] = mx + log(s)
    return out_arr


def matvec(const double[:, ::1] K, const double[::1] g, int nthreads=1):
    """out[i] = sum_j K[i, j] g[j], summed left to right."""
    cdef Py_ssize_t N = K.shape[0], M = K.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in prange(N, nogil=True, num_threads=nthreads, schedule="static"):
        s = 0.0
        for j in range(M):
            s = s + K[i, j] * g[j]
        out[i] = s
    return out_arr


def rmatvec(const double[:, ::1] K, const double[::1] w, int nthreads=1):
    """out[j] = sum_i w[i] K[i, j], summed in increasing i."""
    cdef Py_ssize_t N = K.shape[0], M = K.shape[1]
    cdef Py_ssize_t i, j, b, j0, j1, nblocks
    cdef Py_ssize_t BS = 64
    out_arr = np.zeros(M, dtype=np.float64)
    cdef double[::1] out = out_arr
    nblocks = (M + BS - 1) // BS
    for b in prange(nblocks, nogil=True, num_threads=nthreads, schedule="static"):
        j0 = b * BS
        j1 = j0 + BS
        if j1 > M:
            j1 = M
        for i in range(N):
            for j in range(j0, j1):
                out[j] = out[j] + w[i] * K[i, j]
    return out_arr


cdef void _vose_row(const double* p, Py_ssize_t n, double* prob, int* alias,
                    double* ps, Py_ssize_t* small, Py_ssize_t* large) noexcept nogil:
    cdef Py_ssize_t i, ns = 0, nl = 0, l, g
    cdef double total = 0.0
    for i in range(n):
        total = total + p[i]
    for i in range(n):
        ps[i] = p[i] / total * n
    for i in range(n):
        if ps[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        l = small[ns]
        nl -= 1
        g = large[nl]
        prob[l] = ps[l]
        alias[l] = <int>g
        ps[g] = (ps[g] + ps[l]) - 1.0
        if ps[g] < 1.0:
            small[ns] = g
            ns += 1
        else:
            large[nl] = g
            nl += 1
    while nl > 0:
        nl -= 1
        g = large[nl]
        prob[g] = 1.0
        alias[g] = <int>g
    while ns > 0:
        ns -= 1
        g = small[ns]
        prob[g] = 1.0
        alias[g] = <int>g


def alias_build(const double[:, ::1] P):
    """Vose alias tables, one per row of ``P``."""
    cdef Py_ssize_t R = P.shape[0], n = P.shape[1], r
    prob_arr = np.empty((R, n), dtype=np.float64)
    alias_arr = np.empty((R, n), dtype=np.int32)
    cdef double[:, ::1] prob = prob_arr
    cdef int[:, ::1] alias = alias_arr
    ps_arr = np.empty(n, dtype=np.float64)
    small_arr = np.empty(n, dtype=np.intp)
    large_arr = np.empty(n, dtype=np.intp)
    cdef double[::1] ps = ps_arr
    cdef Py_ssize_t[::1] small = small_arr
    cdef Py_ssize_t[::1] large = large_arr
    with nogil:
        for r in range(R):
            _vose_row(&P[r, 0], n, &prob[r, 0], &alias[r, 0], &ps[0], &small[0], &large[0])
    return prob_arr, alias_arr


def alias_walk(const double[:, ::1] prob, const int[:, ::1] alias,
               const double[::1] prob0, const int[::1] alias0,
               const double[:, ::1] u, long long start=-1):
    """Run a chain: state 0 from (prob0, alias0), then one row draw per step.

    ``u`` has shape (T + 1, 2); row t holds the two uniforms for draw t.
    With ``start >= 0`` every row of ``u`` is a transition out of the
    previous state, beginning at ``start`` (used to continue in chunks).
    """
    cdef Py_ssize_t T1 = u.shape[0], n = prob.shape[1], t, c
    states_arr = np.empty(T1, dtype=np.int64)
    cdef long long[::1] states = states_arr
    cdef Py_ssize_t s
    cdef Py_ssize_t t0 = 1
    with nogil:
        if start >= 0:
            s = start
            t0 = 0
        else:
            c = <Py_ssize_t>(u[0, 0] * n)
            if c >= n:
                c = n - 1
            s = c if u[0, 1] < prob0[c] else alias0[c]
            states[0] = s
        for t in range(t0, T1):
            c = <Py_ssize_t>(u[t, 0] * n)
            if c >= n:
                c = n - 1
            if u[t, 1] < prob[s, c]:
                s = c
            else:
                s = alias[s, c]
            states[t] = s
    return states_arr
