# Compiled versions of the inner loops in _pykernels.py.  Same signatures,
# same results up to floating-point summation order.
import numpy as np
cimport numpy as cnp

cnp.import_array()


def psi_grid(const double[:, :, ::1] R, const double[:, :, ::1] yq,
             const double[:, :, ::1] S, const double[:, :, ::1] B,
             const double[:, :, ::1] Linv):
    cdef Py_ssize_t N = R.shape[0], q = R.shape[1], m = yq.shape[2]
    cdef Py_ssize_t K = B.shape[0]
    cdef Py_ssize_t n, k, i, j, a, b, c
    cdef double acc, s, tr
    out = np.empty((N, K))
    cdef double[:, ::1] o = out
    cdef double[::1] d = np.empty(m)
    cdef double[:, ::1] LS = np.empty((m, m))
    with nogil:
        for n in range(N):
            for k in range(K):
                # trace(Linv S Linv^T): the part of psi outside span(X)
                tr = 0.0
                for a in range(m):
                    for c in range(m):
                        s = 0.0
                        for b in range(a + 1):
                            s = s + Linv[k, a, b] * S[n, b, c]
                        LS[a, c] = s
                    for c in range(m):
                        tr = tr + LS[a, c] * Linv[k, a, c]
                acc = tr
                for i in range(q):
                    # row i of D = yq - R B; R is upper triangular
                    for b in range(m):
                        s = yq[n, i, b]
                        for j in range(i, q):
                            s = s - R[n, i, j] * B[k, j, b]
                        d[b] = s
                    for a in range(m):
                        s = 0.0
                        for b in range(a + 1):
                            s = s + Linv[k, a, b] * d[b]
                        acc = acc + s * s
                o[n, k] = acc
    return out


def weighted_gram(const double[:, :, ::1] R, const double[:, :, ::1] yq,
                  const double[:, :, ::1] S, const double[:, ::1] B,
                  const double[::1] w):
    cdef Py_ssize_t N = R.shape[0], q = R.shape[1], m = yq.shape[2]
    cdef Py_ssize_t n, i, j, a, b
    cdef double s, wn
    out = np.zeros((m, m))
    cdef double[:, ::1] G = out
    cdef double[::1] d = np.empty(m)
    with nogil:
        for n in range(N):
            wn = w[n]
            if wn == 0.0:
                continue
            for a in range(m):
                for b in range(m):
                    G[a, b] += wn * S[n, a, b]
            for i in range(q):
                for b in range(m):
                    s = yq[n, i, b]
                    for j in range(i, q):
                        s = s - R[n, i, j] * B[j, b]
                    d[b] = s
                for a in range(m):
                    for b in range(m):
                        G[a, b] += wn * d[a] * d[b]
    return out


def var_recursion(const double[::1] intercept, const double[:, :, ::1] lags,
                  const double[:, ::1] noise):
    cdef Py_ssize_t n = noise.shape[0], m = noise.shape[1], p = lags.shape[0]
    cdef Py_ssize_t t, i, a, b
    cdef double s
    out = np.zeros((n, m))
    cdef double[:, ::1] Y = out
    with nogil:
        for t in range(n):
            for a in range(m):
                s = intercept[a] + noise[t, a]
                for i in range(p):
                    if t - i - 1 < 0:
                        break
                    for b in range(m):
                        s = s + lags[i, a, b] * Y[t - i - 1, b]
                Y[t, a] = s
    return out
