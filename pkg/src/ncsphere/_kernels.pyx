# cython: language_level=3
"""Compiled hot kernels.

Every function here has a numpy twin in ``_fallback`` with the same
signature and semantics; ``_backend`` picks one at import time. Reductions
run in a fixed loop order so results are reproducible run to run.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, INFINITY

cnp.import_array()

MODE_NORMFACE = 0
MODE_NTCE = 1
MODE_NONL = 2


def jacobi_eigh(const double[:, :] S, double tol=1e-15, int max_sweeps=100):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ``(w, V)`` with unsorted eigenvalues ``w`` and eigenvectors in
    the columns of ``V``.
    """
    cdef Py_ssize_t n = S.shape[0]
    cdef Py_ssize_t i, j, p, q, k
    cdef int sweep
    cdef double off, total, theta, t, c, s, tau_, apq, app, aqq, akp, akq, vkp, vkq
    A_arr = np.array(S, dtype=np.float64, copy=True)
    V_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] V = V_arr

    total = 0.0
    for i in range(n):
        for j in range(n):
            total += A[i, j] * A[i, j]
    if total == 0.0:
        return np.zeros(n), V_arr

    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += A[i, j] * A[i, j]
        if off <= tol * tol * total:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                tau_ = s / (1.0 + c)
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = A[k, p]
                        akq = A[k, q]
                        A[k, p] = akp - s * (akq + tau_ * akp)
                        A[p, k] = A[k, p]
                        A[k, q] = akq + s * (akp - tau_ * akq)
                        A[q, k] = A[k, q]
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = vkp - s * (vkq + tau_ * vkp)
                    V[k, q] = vkq + s * (vkp - tau_ * vkq)

    w_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] w = w_arr
    for i in range(n):
        w[i] = A[i, i]
    return w_arr, V_arr


def proto_contrast(const double[:, :] S, const long[:] labels, const long[:] counts,
                   double inv_tau, int mode):
    """Value and ``dL/dS`` for the instance/prototype contrast losses.

    ``S[i, c]`` is the similarity between sample ``i`` and prototype ``c``.
    Mode 0 normalizes each row over prototypes (NormFace, and plain softmax
    CE with ``inv_tau=1``); mode 1 normalizes each prototype column over the
    batch (NTCE); mode 2 does the same over out-of-class samples only (NONL).
    """
    cdef Py_ssize_t M = S.shape[0]
    cdef Py_ssize_t K = S.shape[1]
    cdef Py_ssize_t i, j, c
    cdef long y
    cdef double m, tot, lse, l, value = 0.0, scale = inv_tau / M
    cdef double[:, ::1] G

    if mode == MODE_NORMFACE:
        G_arr = np.zeros((M, K), dtype=np.float64)
        G = G_arr
        for i in range(M):
            y = labels[i]
            m = -INFINITY
            for c in range(K):
                l = S[i, c] * inv_tau
                if l > m:
                    m = l
            tot = 0.0
            for c in range(K):
                l = exp(S[i, c] * inv_tau - m)
                G[i, c] = l
                tot += l
            lse = m + log(tot)
            value += lse - S[i, y] * inv_tau
            for c in range(K):
                G[i, c] = G[i, c] / tot * scale
            G[i, y] -= scale
        return value / M, G_arr

    # Column modes run on transposed copies so the inner loops are contiguous.
    ST_arr = np.ascontiguousarray(np.asarray(S).T)
    cdef const double[:, ::1] ST = ST_arr
    GT_arr = np.zeros((K, M), dtype=np.float64)
    cdef double[:, ::1] GT = GT_arr
    for c in range(K):
        if counts[c] == 0:
            continue
        m = -INFINITY
        for j in range(M):
            if mode == MODE_NONL and labels[j] == c:
                continue
            l = ST[c, j] * inv_tau
            if l > m:
                m = l
        if m == -INFINITY:
            raise ValueError(f"no negatives for anchor class {c}")
        tot = 0.0
        for j in range(M):
            if mode == MODE_NONL and labels[j] == c:
                continue
            l = exp(ST[c, j] * inv_tau - m)
            GT[c, j] = l
            tot += l
        lse = m + log(tot)
        value += counts[c] * lse
        for j in range(M):
            GT[c, j] = counts[c] * GT[c, j] / tot * scale
            if labels[j] == c:
                value -= ST[c, j] * inv_tau
                GT[c, j] -= scale
    return value / M, np.ascontiguousarray(GT_arr.T)


def scl_contrast(const double[:, :] T, const long[:] labels, const long[:] counts,
                 double inv_tau):
    """Value and ``dL/dT`` of the supervised contrastive loss on a Gram matrix ``T``."""
    cdef Py_ssize_t N = T.shape[0]
    cdef Py_ssize_t i, j
    cdef long y, npos
    cdef double m, tot, l, pos, value = 0.0, scale = inv_tau / N
    R_arr = np.zeros((N, N), dtype=np.float64)
    cdef double[:, ::1] R = R_arr

    for i in range(N):
        y = labels[i]
        npos = counts[y] - 1
        if npos < 1:
            raise ValueError(f"isolated anchor {i}: no other sample of class {y}")
        m = -INFINITY
        for j in range(N):
            if j != i:
                l = T[i, j] * inv_tau
                if l > m:
                    m = l
        tot = 0.0
        pos = 0.0
        for j in range(N):
            if j != i:
                l = exp(T[i, j] * inv_tau - m)
                R[i, j] = l
                tot += l
                if labels[j] == y:
                    pos += T[i, j] * inv_tau
        value += m + log(tot) - pos / npos
        for j in range(N):
            if j != i:
                R[i, j] = R[i, j] / tot * scale
                if labels[j] == y:
                    R[i, j] -= scale / npos
    return value / N, R_arr


def proto_softmax(const double[:, :] S, const long[:] labels, const long[:] counts,
                  double inv_tau):
    """Value and ``dL/dS`` of the class-mean prototype loss.

    ``S[i, c] = a_i . mu_c`` with raw class means; the denominator is
    ``sum_c n_c exp(S_ic / tau) - exp(S_iy / tau)``.
    """
    cdef Py_ssize_t N = S.shape[0]
    cdef Py_ssize_t K = S.shape[1]
    cdef Py_ssize_t i, c
    cdef long y
    cdef double m, den, l, ey, value = 0.0, scale = inv_tau / N
    E_arr = np.zeros((N, K), dtype=np.float64)
    cdef double[:, ::1] E = E_arr

    for i in range(N):
        y = labels[i]
        m = -INFINITY
        for c in range(K):
            if counts[c] > 0:
                l = S[i, c] * inv_tau
                if l > m:
                    m = l
        den = 0.0
        for c in range(K):
            if counts[c] > 0:
                l = counts[c] * exp(S[i, c] * inv_tau - m)
                E[i, c] = l
                den += l
        ey = exp(S[i, y] * inv_tau - m)
        den -= ey
        if not den > 0.0:
            raise ValueError(f"degenerate prototype denominator at anchor {i}")
        value += m + log(den) - S[i, y] * inv_tau
        for c in range(K):
            E[i, c] = E[i, c] / den * scale
        E[i, y] -= (ey / den + 1.0) * scale
    return value / N, E_arr
