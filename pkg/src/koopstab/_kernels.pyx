# cython: language_level=3
"""Compiled kernels: dense real eigenvalues and the fused lifted rollout.

Same algorithms as ``_fallback.py``; the two are cross-checked in the tests.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, copysign

cnp.import_array()


class ConvergenceError(ArithmeticError):
    pass


cdef void _balance(double[:, ::1] a) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j
    cdef double radix = 2.0, sqrdx = 4.0
    cdef double c, r, g, f, s
    cdef bint done = False
    while not done:
        done = True
        for i in range(n):
            c = 0.0
            r = 0.0
            for j in range(n):
                if j != i:
                    c += fabs(a[j, i])
                    r += fabs(a[i, j])
            if c != 0.0 and r != 0.0:
                g = r / radix
                f = 1.0
                s = c + r
                while c < g:
                    f *= radix
                    c *= sqrdx
                g = r * radix
                while c > g:
                    f /= radix
                    c /= sqrdx
                if (c + r) / f < 0.95 * s:
                    done = False
                    g = 1.0 / f
                    for j in range(n):
                        a[i, j] *= g
                    for j in range(n):
                        a[j, i] *= f


cdef void _hessenberg(double[:, ::1] a, double[::1] v) noexcept nogil:
    # Householder reduction to upper Hessenberg form, in place.
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t k, i, j, m
    cdef double alpha, vnorm, dot
    for k in range(n - 2):
        m = n - k - 1
        alpha = 0.0
        for i in range(m):
            v[i] = a[k + 1 + i, k]
            alpha += v[i] * v[i]
        alpha = sqrt(alpha)
        if alpha == 0.0:
            continue
        alpha = -copysign(alpha, v[0])
        v[0] -= alpha
        vnorm = 0.0
        for i in range(m):
            vnorm += v[i] * v[i]
        vnorm = sqrt(vnorm)
        if vnorm == 0.0:
            continue
        for i in range(m):
            v[i] /= vnorm
        for j in range(k, n):
            dot = 0.0
            for i in range(m):
                dot += v[i] * a[k + 1 + i, j]
            dot *= 2.0
            for i in range(m):
                a[k + 1 + i, j] -= dot * v[i]
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += a[i, k + 1 + j] * v[j]
            dot *= 2.0
            for j in range(m):
                a[i, k + 1 + j] -= dot * v[j]
        for i in range(k + 2, n):
            a[i, k] = 0.0


cdef int _hqr(double[:, ::1] a, double[::1] wr, double[::1] wi, int max_its) noexcept nogil:
    # Francis double-shift QR on an upper Hessenberg matrix. Returns 0 on
    # success, -1 when an eigenvalue needs more than max_its sweeps.
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t nn, m, l, k, j, i, mmin
    cdef int its
    cdef double z = 0.0, y = 0.0, x = 0.0, w = 0.0, vv, u, t, s, r = 0.0, q = 0.0, p = 0.0, anorm

    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += fabs(a[i, j])
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = fabs(a[l - 1, l - 1]) + fabs(a[l, l])
                if s == 0.0:
                    s = anorm
                if fabs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
            else:
                y = a[nn - 1, nn - 1]
                w = a[nn, nn - 1] * a[nn - 1, nn]
                if l == nn - 1:
                    p = 0.5 * (y - x)
                    q = p * p + w
                    z = sqrt(fabs(q))
                    x += t
                    if q >= 0.0:
                        z = p + copysign(z, p)
                        wr[nn - 1] = x + z
                        wr[nn] = x + z
                        if z != 0.0:
                            wr[nn] = x - w / z
                        wi[nn - 1] = 0.0
                        wi[nn] = 0.0
                    else:
                        wr[nn - 1] = x + p
                        wr[nn] = x + p
                        wi[nn - 1] = -z
                        wi[nn] = z
                    nn -= 2
                else:
                    if its == max_its:
                        return -1
                    if its > 0 and its % 10 == 0:
                        # exceptional shift
                        t += x
                        for i in range(nn + 1):
                            a[i, i] -= x
                        s = fabs(a[nn, nn - 1]) + fabs(a[nn - 1, nn - 2])
                        x = 0.75 * s
                        y = x
                        w = -0.4375 * s * s
                    its += 1
                    m = nn - 2
                    while m >= l:
                        z = a[m, m]
                        r = x - z
                        s = y - z
                        p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                        q = a[m + 1, m + 1] - z - r - s
                        r = a[m + 2, m + 1]
                        s = fabs(p) + fabs(q) + fabs(r)
                        p /= s
                        q /= s
                        r /= s
                        if m == l:
                            break
                        u = fabs(a[m, m - 1]) * (fabs(q) + fabs(r))
                        vv = fabs(p) * (fabs(a[m - 1, m - 1]) + fabs(z) + fabs(a[m + 1, m + 1]))
                        if u + vv == vv:
                            break
                        m -= 1
                    for i in range(m + 2, nn + 1):
                        a[i, i - 2] = 0.0
                        if i != m + 2:
                            a[i, i - 3] = 0.0
                    for k in range(m, nn):
                        if k != m:
                            p = a[k, k - 1]
                            q = a[k + 1, k - 1]
                            r = 0.0
                            if k != nn - 1:
                                r = a[k + 2, k - 1]
                            x = fabs(p) + fabs(q) + fabs(r)
                            if x != 0.0:
                                p /= x
                                q /= x
                                r /= x
                        s = copysign(sqrt(p * p + q * q + r * r), p)
                        if s != 0.0:
                            if k == m:
                                if l != m:
                                    a[k, k - 1] = -a[k, k - 1]
                            else:
                                a[k, k - 1] = -s * x
                            p += s
                            x = p / s
                            y = q / s
                            z = r / s
                            q /= p
                            r /= p
                            for j in range(k, nn + 1):
                                p = a[k, j] + q * a[k + 1, j]
                                if k != nn - 1:
                                    p += r * a[k + 2, j]
                                    a[k + 2, j] -= p * z
                                a[k + 1, j] -= p * y
                                a[k, j] -= p * x
                            mmin = nn if nn < k + 3 else k + 3
                            for i in range(l, mmin + 1):
                                p = x * a[i, k] + y * a[i, k + 1]
                                if k != nn - 1:
                                    p += z * a[i, k + 2]
                                    a[i, k + 2] -= p * r
                                a[i, k + 1] -= p * q
                                a[i, k] -= p
            if nn < 0 or l >= nn - 1:
                break
    return 0


def eigvals(a, bint balance=True, int max_its=60):
    """Real and imaginary parts of the eigenvalues of a square real matrix."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] work = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = work.shape[0]
    if work.ndim != 2 or work.shape[1] != n:
        raise ValueError("eigvals needs a square matrix")
    wr = np.zeros(n)
    wi = np.zeros(n)
    if n == 0:
        return wr, wi
    cdef double[:, ::1] aw = work
    cdef double[::1] wrv = wr
    cdef double[::1] wiv = wi
    cdef double[::1] scratch = np.zeros(n)
    cdef int status
    with nogil:
        if balance:
            _balance(aw)
        _hessenberg(aw, scratch)
        status = _hqr(aw, wrv, wiv, max_its)
    if status != 0:
        raise ConvergenceError("QR iteration did not converge")
    return wr, wi


def rollout_forward(A, Z0, Py_ssize_t T):
    """Stack [Z0, A Z0, ..., A^(T-1) Z0] column-block-wise into an N x T*k array."""
    cdef double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] z0 = np.ascontiguousarray(Z0, dtype=np.float64)
    cdef Py_ssize_t N = a.shape[0], k = z0.shape[1]
    out = np.empty((N, T * k))
    cdef double[:, ::1] z = out
    cdef Py_ssize_t t, i, j, c, off, prev
    cdef double acc, aij
    with nogil:
        for i in range(N):
            for c in range(k):
                z[i, c] = z0[i, c]
        for t in range(1, T):
            off = t * k
            prev = off - k
            for i in range(N):
                for c in range(k):
                    z[i, off + c] = 0.0
                for j in range(N):
                    aij = a[i, j]
                    if aij != 0.0:
                        for c in range(k):
                            z[i, off + c] += aij * z[j, prev + c]
    return out


def rollout_backward(A, Z, G, Py_ssize_t T):
    """Adjoint of ``rollout_forward``: returns (dL/dA, dL/dZ0) given dL/dZ."""
    cdef double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t N = a.shape[0]
    cdef Py_ssize_t k = z.shape[1] // T
    dA_arr = np.zeros((N, N))
    lam_arr = np.array(G[:, (T - 1) * k:], dtype=np.float64, order="C")
    nxt_arr = np.empty((N, k))
    cdef double[:, ::1] dA = dA_arr
    cdef double[:, ::1] lam = lam_arr
    cdef double[:, ::1] nxt = nxt_arr
    cdef Py_ssize_t t, i, j, c, prev
    cdef double acc
    with nogil:
        for t in range(T - 1, 0, -1):
            prev = (t - 1) * k
            # dA += lam_t z_{t-1}^T
            for i in range(N):
                for j in range(N):
                    acc = 0.0
                    for c in range(k):
                        acc += lam[i, c] * z[j, prev + c]
                    dA[i, j] += acc
            # lam_{t-1} = G_{t-1} + A^T lam_t
            for j in range(N):
                for c in range(k):
                    nxt[j, c] = g[j, prev + c]
            for i in range(N):
                for j in range(N):
                    acc = a[i, j]
                    if acc != 0.0:
                        for c in range(k):
                            nxt[j, c] += acc * lam[i, c]
            for j in range(N):
                for c in range(k):
                    lam[j, c] = nxt[j, c]
    return dA_arr, lam_arr
