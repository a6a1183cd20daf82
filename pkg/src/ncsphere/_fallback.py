"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

MODE_NORMFACE = 0
MODE_NTCE = 1
MODE_NONL = 2


def jacobi_eigh(S, tol=1e-15, max_sweeps=100):
    # LAPACK stands in for the Jacobi sweep here; both meet the same accuracy contract.
    w, V = np.linalg.eigh(np.asarray(S, dtype=np.float64))
    return w, V


def _row_lse(L):
    m = L.max(axis=1, keepdims=True)
    e = np.exp(L - m)
    tot = e.sum(axis=1, keepdims=True)
    return (m + np.log(tot))[:, 0], e / tot


def proto_contrast(S, labels, counts, inv_tau, mode):
    S = np.asarray(S, dtype=np.float64)
    M, K = S.shape
    L = S * inv_tau
    rows = np.arange(M)
    onehot = np.zeros((M, K))
    onehot[rows, labels] = 1.0
    scale = inv_tau / M

    if mode == MODE_NORMFACE:
        lse, P = _row_lse(L)
        value = float(np.sum(lse - L[rows, labels])) / M
        return value, (P - onehot) * scale

    present = np.flatnonzero(counts)
    Lc = L[:, present].T.copy()  # one row per anchor class
    if mode == MODE_NONL:
        Lc[onehot[:, present].T.astype(bool)] = -np.inf
        if np.any(np.all(np.isneginf(Lc), axis=1)):
            bad = present[np.all(np.isneginf(Lc), axis=1)][0]
            raise ValueError(f"no negatives for anchor class {bad}")
    lse, Q = _row_lse(Lc)
    n = counts[present].astype(np.float64)
    value = float(np.sum(n * lse) - np.sum(L[rows, labels])) / M
    G = np.zeros((M, K))
    G[:, present] = (n[:, None] * Q).T * scale
    G -= onehot * scale
    return value, G


def scl_contrast(T, labels, counts, inv_tau):
    T = np.asarray(T, dtype=np.float64)
    N = T.shape[0]
    npos = counts[labels] - 1
    if np.any(npos < 1):
        i = int(np.flatnonzero(npos < 1)[0])
        raise ValueError(f"isolated anchor {i}: no other sample of class {labels[i]}")
    L = T * inv_tau
    np.fill_diagonal(L, -np.inf)
    lse, P = _row_lse(L)
    pos = (labels[:, None] == labels[None, :]) & ~np.eye(N, dtype=bool)
    pos_mean = np.where(pos, T * inv_tau, 0.0).sum(axis=1) / npos
    value = float(np.sum(lse - pos_mean)) / N
    R = (P - pos / npos[:, None]) * (inv_tau / N)
    return value, R


def proto_softmax(S, labels, counts, inv_tau):
    S = np.asarray(S, dtype=np.float64)
    N, K = S.shape
    rows = np.arange(N)
    present = counts > 0
    L = np.where(present[None, :], S * inv_tau, -np.inf)
    m = L.max(axis=1)
    e = np.where(present[None, :], counts[None, :] * np.exp(L - m[:, None]), 0.0)
    ey = np.exp(L[rows, labels] - m)
    den = e.sum(axis=1) - ey
    if np.any(~(den > 0.0)):
        i = int(np.flatnonzero(~(den > 0.0))[0])
        raise ValueError(f"degenerate prototype denominator at anchor {i}")
    value = float(np.sum(m + np.log(den) - L[rows, labels])) / N
    scale = inv_tau / N
    E = e / den[:, None] * scale
    E[rows, labels] -= (ey / den + 1.0) * scale
    return value, E
