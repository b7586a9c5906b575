"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Same algorithms, with the innermost loops vectorised through numpy slices.
"""
import math

import numpy as np


class ConvergenceError(ArithmeticError):
    pass


def _balance(a):
    n = a.shape[0]
    radix, sqrdx = 2.0, 4.0
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.abs(a[:, i]).sum() - abs(a[i, i])
            r = np.abs(a[i, :]).sum() - abs(a[i, i])
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
                    a[i, :] *= 1.0 / f
                    a[:, i] *= f


def _hessenberg(a):
    n = a.shape[0]
    for k in range(n - 2):
        v = a[k + 1:, k].copy()
        alpha = math.sqrt(float(v @ v))
        if alpha == 0.0:
            continue
        alpha = -math.copysign(alpha, v[0])
        v[0] -= alpha
        vnorm = math.sqrt(float(v @ v))
        if vnorm == 0.0:
            continue
        v /= vnorm
        a[k + 1:, k:] -= 2.0 * np.outer(v, v @ a[k + 1:, k:])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ v, v)
        a[k + 2:, k] = 0.0


def _hqr(a, wr, wi, max_its):
    n = a.shape[0]
    anorm = float(np.abs(np.triu(a, -1)).sum())
    nn = n - 1
    t = 0.0
    x = y = z = w = p = q = r = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
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
                    z = math.sqrt(abs(q))
                    x += t
                    if q >= 0.0:
                        z = p + math.copysign(z, p)
                        wr[nn - 1] = wr[nn] = x + z
                        if z != 0.0:
                            wr[nn] = x - w / z
                        wi[nn - 1] = wi[nn] = 0.0
                    else:
                        wr[nn - 1] = wr[nn] = x + p
                        wi[nn - 1] = -z
                        wi[nn] = z
                    nn -= 2
                else:
                    if its == max_its:
                        raise ConvergenceError("QR iteration did not converge")
                    if its > 0 and its % 10 == 0:
                        t += x
                        idx = np.arange(nn + 1)
                        a[idx, idx] -= x
                        s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                        x = y = 0.75 * s
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
                        s = abs(p) + abs(q) + abs(r)
                        p /= s
                        q /= s
                        r /= s
                        if m == l:
                            break
                        u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                        v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                        if u + v == v:
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
                            r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                            x = abs(p) + abs(q) + abs(r)
                            if x != 0.0:
                                p /= x
                                q /= x
                                r /= x
                        s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                        if s == 0.0:
                            continue
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
                        rows = a[k, k:nn + 1] + q * a[k + 1, k:nn + 1]
                        if k != nn - 1:
                            rows = rows + r * a[k + 2, k:nn + 1]
                            a[k + 2, k:nn + 1] -= rows * z
                        a[k + 1, k:nn + 1] -= rows * y
                        a[k, k:nn + 1] -= rows * x
                        mmin = min(nn, k + 3)
                        cols = x * a[l:mmin + 1, k] + y * a[l:mmin + 1, k + 1]
                        if k != nn - 1:
                            cols = cols + z * a[l:mmin + 1, k + 2]
                            a[l:mmin + 1, k + 2] -= cols * r
                        a[l:mmin + 1, k + 1] -= cols * q
                        a[l:mmin + 1, k] -= cols
            if nn < 0 or l >= nn - 1:
                break


def eigvals(a, balance=True, max_its=60):
    """Real and imaginary parts of the eigenvalues of a square real matrix."""
    work = np.array(a, dtype=np.float64, order="C", copy=True)
    if work.ndim != 2 or work.shape[0] != work.shape[1]:
        raise ValueError("eigvals needs a square matrix")
    n = work.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    if n == 0:
        return wr, wi
    if balance:
        _balance(work)
    _hessenberg(work)
    _hqr(work, wr, wi, max_its)
    return wr, wi


def rollout_forward(A, Z0, T):
    N, k = Z0.shape
    out = np.empty((N, T * k))
    out[:, :k] = Z0
    for t in range(1, T):
        out[:, t * k:(t + 1) * k] = A @ out[:, (t - 1) * k:t * k]
    return out


def rollout_backward(A, Z, G, T):
    k = Z.shape[1] // T
    dA = np.zeros_like(A, dtype=np.float64)
    lam = np.array(G[:, (T - 1) * k:], dtype=np.float64)
    At = A.T
    for t in range(T - 1, 0, -1):
        prev = Z[:, (t - 1) * k:t * k]
        dA += lam @ prev.T
        lam = G[:, (t - 1) * k:t * k] + At @ lam
    return dA, lam
