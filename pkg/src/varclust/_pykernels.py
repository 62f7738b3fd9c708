"""Pure-numpy kernels; the reference implementation for ``_ckernels``.

All arrays are float64.  Shapes: ``R`` (N, q, q) upper triangular, ``yq``
(N, q, m), ``S`` (N, m, m) residual Gram matrices outside span(X), ``B``
coefficient blocks (q, m) or (K, q, m), ``Linv`` (K, m, m) inverse
Cholesky factors.
"""

import numpy as np


def psi_grid(R, yq, S, B, Linv):
    D = yq[:, None] - np.einsum("nij,kjm->nkim", R, B)
    M = np.einsum("nkib,kab->nkia", D, Linv)
    outside = np.einsum("kab,nbc,kac->nk", Linv, S, Linv)
    return outside + np.einsum("nkia,nkia->nk", M, M)


def weighted_gram(R, yq, S, B, w):
    nz = np.flatnonzero(w)
    if nz.size == 0:
        return np.zeros((yq.shape[2], yq.shape[2]))
    D = yq[nz] - R[nz] @ B
    wn = w[nz]
    return np.einsum("n,nab->ab", wn, S[nz]) + np.einsum("n,nia,nib->ab", wn, D, D)


def var_recursion(intercept, lags, noise):
    n, m = noise.shape
    p = lags.shape[0]
    A = np.hstack(list(lags)) if p else np.zeros((m, 0))
    Y = np.zeros((n, m))
    hist = np.zeros(m * p)
    for t in range(n):
        y = intercept + noise[t] + A @ hist
        Y[t] = y
        if p:
            hist[m:] = hist[:-m]
            hist[:m] = y
    return Y
