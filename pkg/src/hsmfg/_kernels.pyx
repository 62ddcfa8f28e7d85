# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of hsmfg._kernels_py: the backward Riccati RK4 sweep.

The sequencer re-integrates small dense Riccati systems thousands of times
inside its fixed-point loops, which makes this loop the runtime hot spot of
the solve/sequence stages.  Matrices are tiny (d <= 4n), so hand-rolled
loops in i,k,j order (contiguous inner stream) beat any BLAS dispatch.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline void _matmul(const double* A, const double* B, double* C,
                         Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double a
    for i in range(d):
        for j in range(d):
            C[i * d + j] = 0.0
        for k in range(d):
            a = A[i * d + k]
            for j in range(d):
                C[i * d + j] += a * B[k * d + j]


cdef inline void _riccati_rhs(const double* X, const double* A,
                              const double* S, const double* P,
                              double* XA, double* XS, double* XSX,
                              double* out, Py_ssize_t d) noexcept nogil:
    # out = X A + (X A)^T - X S X + P for symmetric X
    cdef Py_ssize_t i, j
    _matmul(X, A, XA, d)
    _matmul(X, S, XS, d)
    _matmul(XS, X, XSX, d)
    for i in range(d):
        for j in range(d):
            out[i * d + j] = XA[i * d + j] + XA[j * d + i] \
                - XSX[i * d + j] + P[i * d + j]


def rk4_riccati_sweep(double[:, :, ::1] A_st, double[:, ::1] S,
                      double[:, ::1] P, double[:, ::1] Pi_end,
                      double dt, double blowup=1e12):
    """See hsmfg._kernels_py.rk4_riccati_sweep."""
    cdef Py_ssize_t steps = (A_st.shape[0] - 1) // 2
    cdef Py_ssize_t d = A_st.shape[1]
    cdef Py_ssize_t dd = d * d
    cdef cnp.ndarray out_arr = np.empty((steps + 1, d, d), dtype=np.float64)
    cdef double[:, :, ::1] out_mv = out_arr
    cdef cnp.ndarray scratch = np.ascontiguousarray(
        np.empty((8, d, d), dtype=np.float64))
    cdef double[:, :, ::1] w_mv = scratch
    cdef cnp.ndarray S_c = np.ascontiguousarray(S)
    cdef cnp.ndarray P_c = np.ascontiguousarray(P)
    cdef double[:, ::1] S_mv = S_c
    cdef double[:, ::1] P_mv = P_c
    cdef double* Sp = &S_mv[0, 0]
    cdef double* Pp = &P_mv[0, 0]
    cdef double* Ap = &A_st[0, 0, 0]
    cdef double* outp = &out_mv[0, 0, 0]
    cdef double* Pi = &w_mv[0, 0, 0]
    cdef double* X = &w_mv[1, 0, 0]
    cdef double* XA = &w_mv[2, 0, 0]
    cdef double* XS = &w_mv[3, 0, 0]
    cdef double* XSX = &w_mv[4, 0, 0]
    cdef double* k1 = &w_mv[5, 0, 0]
    cdef double* k23 = &w_mv[6, 0, 0]
    cdef double* ksum = &w_mv[7, 0, 0]
    cdef Py_ssize_t i, j, s, q
    cdef double half = 0.5 * dt
    cdef double sixth = dt / 6.0
    cdef double limit = blowup * blowup
    cdef double nrm, v
    cdef Py_ssize_t escaped = -1

    for i in range(d):
        for j in range(d):
            Pi[i * d + j] = 0.5 * (Pi_end[i, j] + Pi_end[j, i])
            outp[i * d + j] = Pi[i * d + j]

    with nogil:
        for s in range(steps):
            _riccati_rhs(Pi, Ap + 2 * s * dd, Sp, Pp, XA, XS, XSX, k1, d)
            for q in range(dd):
                ksum[q] = k1[q]
                X[q] = Pi[q] + half * k1[q]
            _riccati_rhs(X, Ap + (2 * s + 1) * dd, Sp, Pp, XA, XS, XSX,
                         k23, d)
            for q in range(dd):
                ksum[q] += 2.0 * k23[q]
                X[q] = Pi[q] + half * k23[q]
            _riccati_rhs(X, Ap + (2 * s + 1) * dd, Sp, Pp, XA, XS, XSX,
                         k23, d)
            for q in range(dd):
                ksum[q] += 2.0 * k23[q]
                X[q] = Pi[q] + dt * k23[q]
            _riccati_rhs(X, Ap + (2 * s + 2) * dd, Sp, Pp, XA, XS, XSX,
                         k23, d)
            for q in range(dd):
                X[q] = Pi[q] + sixth * (ksum[q] + k23[q])
            nrm = 0.0
            for i in range(d):
                for j in range(d):
                    v = 0.5 * (X[i * d + j] + X[j * d + i])
                    Pi[i * d + j] = v
                    outp[(s + 1) * dd + i * d + j] = v
                    nrm += v * v
            if nrm > limit:
                escaped = s + 1
                break

    return out_arr, int(escaped)
