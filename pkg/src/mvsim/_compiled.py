"""Numba kernels for the Euler-Maruyama particle system.

All reductions run over particles sorted by position, so every per-particle
result depends only on the multiset of positions: relabelling particles
permutes the output bit for bit.

Kernel kinds: 0 affine (c0, cx, cy), 1 bump (r, scale), 2 gauss (rate).
"""

import numpy as np
from numba import njit

AFFINE, BUMP, GAUSS = 0, 1, 2
OK = -1


def encode_kernel(form):
    kind = form[0]
    p = np.zeros(3)
    if kind == "affine":
        p[:] = form[1:4]
        return AFFINE, p
    if kind == "bump":
        p[0], p[1] = form[1], form[2]
        return BUMP, p
    if kind == "gauss":
        p[0] = form[1]
        return GAUSS, p
    raise ValueError(f"no compiled form for {kind!r}")


@njit(cache=True, nogil=True)
def _insertion_sort(order, x):
    # particles move little per step, so the previous order is nearly sorted
    n = order.size
    for k in range(1, n):
        idx = order[k]
        v = x[idx]
        j = k - 1
        while j >= 0 and x[order[j]] > v:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = idx


@njit(cache=True, nogil=True)
def _kahan_prefix(t, power, out):
    # out[k] = sum_{j<k} t[j]**power, compensated
    acc = 0.0
    comp = 0.0
    out[0] = 0.0
    for j in range(t.size):
        v = t[j] ** power - comp
        nxt = acc + v
        comp = (nxt - acc) - v
        acc = nxt
        out[j + 1] = acc


@njit(cache=True, nogil=True)
def _bump_windowed(s, r, scale, out):
    n = s.size
    ref = s[n // 2]
    t = s - ref
    npow = 2 * r
    pref = np.zeros((npow + 1, n + 1))
    for q in range(1, npow + 1):
        _kahan_prefix(t, q, pref[q])
    c2 = scale * scale
    lo = 0
    hi = 0
    for k in range(n):
        sk = s[k]
        while scale * (sk - s[lo]) > 1.0:
            lo += 1
        if hi < k:
            hi = k
        while hi + 1 < n and scale * (s[hi + 1] - sk) <= 1.0:
            hi += 1
        cnt = float(hi + 1 - lo)
        if r == 0:
            out[k] = cnt
            continue
        y = t[k]
        m1 = pref[1, hi + 1] - pref[1, lo]
        m2 = pref[2, hi + 1] - pref[2, lo]
        q2 = cnt * y * y - 2.0 * y * m1 + m2
        if r == 1:
            out[k] = cnt - c2 * q2
        else:
            m3 = pref[3, hi + 1] - pref[3, lo]
            m4 = pref[4, hi + 1] - pref[4, lo]
            y2 = y * y
            q4 = cnt * y2 * y2 - 4.0 * y2 * y * m1 + 6.0 * y2 * m2 - 4.0 * y * m3 + m4
            out[k] = cnt - 2.0 * c2 * q2 + c2 * c2 * q4


@njit(cache=True, nogil=True)
def _bump_direct(s, r, scale, out):
    n = s.size
    lo = 0
    for k in range(n):
        sk = s[k]
        while scale * (sk - s[lo]) > 1.0:
            lo += 1
        acc = 0.0
        comp = 0.0
        j = lo
        while j < n:
            if sk >= s[j]:
                u = scale * (sk - s[j])
            else:
                u = scale * (s[j] - sk)
            if u > 1.0:
                break
            v = (1.0 - u * u) ** r - comp
            nxt = acc + v
            comp = (nxt - acc) - v
            acc = nxt
            j += 1
        out[k] = acc


@njit(cache=True, nogil=True)
def _gauss_direct(s, rate, out):
    n = s.size
    for k in range(n):
        sk = s[k]
        acc = 0.0
        comp = 0.0
        for j in range(n):
            u = sk - s[j]
            v = np.exp(-rate * u * u) - comp
            nxt = acc + v
            comp = (nxt - acc) - v
            acc = nxt
        out[k] = acc


@njit(cache=True, nogil=True)
def mean_field_sorted(s, kind, p, out):
    """out[k] = (1/n) sum_j kernel(s[k], s[j]) for ascending s."""
    n = s.size
    if kind == AFFINE:
        acc = 0.0
        comp = 0.0
        for j in range(n):
            v = s[j] - comp
            nxt = acc + v
            comp = (nxt - acc) - v
            acc = nxt
        mean = acc / n
        for k in range(n):
            out[k] = p[0] + p[1] * s[k] + p[2] * mean
        return
    if kind == BUMP:
        r = int(p[0])
        if r <= 2:
            _bump_windowed(s, r, p[1], out)
        else:
            _bump_direct(s, r, p[1], out)
    else:
        _gauss_direct(s, p[0], out)
    for k in range(n):
        out[k] = out[k] / n


@njit(cache=True, nogil=True)
def mean_field_all(x, kind, p):
    order = np.argsort(x, kind="mergesort")
    s = x[order]
    tmp = np.empty(x.size)
    mean_field_sorted(s, kind, p, tmp)
    out = np.empty(x.size)
    for k in range(x.size):
        out[order[k]] = tmp[k]
    return out


@njit(cache=True, nogil=True)
def run_system(x0, gauss, dt, sqdt, coef, k1kind, k1p, k2kind, k2p, record):
    """Euler-Maruyama for one system.

    coef = (a0, ax, ay, s0, sx, sy) for a = a0 + ax x + ay y and the same for sigma.
    Returns (x, failed_step, failed_particle, path); failed_step == -1 on success.
    """
    n = x0.size
    n_steps = gauss.shape[0]
    x = x0.copy()
    xn = np.empty(n)
    path = np.empty((n_steps + 1 if record else 1, n))
    path[0] = x
    order = np.argsort(x, kind="mergesort")
    s = np.empty(n)
    m1 = np.empty(n)
    m2 = np.empty(n)
    for step in range(n_steps):
        _insertion_sort(order, x)
        for k in range(n):
            s[k] = x[order[k]]
        mean_field_sorted(s, k1kind, k1p, m1)
        mean_field_sorted(s, k2kind, k2p, m2)
        g = gauss[step]
        for k in range(n):
            i = order[k]
            xi = s[k]
            a = coef[0] + coef[1] * xi + coef[2] * m1[k]
            sg = coef[3] + coef[4] * xi + coef[5] * m2[k]
            xn[i] = xi + a * dt + sg * sqdt * g[i]
        for i in range(n):
            if not np.isfinite(xn[i]):
                return x, step, i, path
        x, xn = xn, x
        if record:
            path[step + 1] = x
    return x, OK, -1, path
