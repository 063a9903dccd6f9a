"""Compiled numeric kernels for integration and adjoint sweeps.

Everything in here works on plain float64 arrays so the hot loops can be
JIT-compiled with numba.  Set ``TBDELAY_NO_NUMBA=1`` to force the pure-Python
fallback (two orders of magnitude slower, identical results).

Parameter packing (see ``ModelParams.as_array``):
    0 beta, 1 mu, 2 delta, 3 phi, 4 omega, 5 omega_r, 6 sigma, 7 sigma_r,
    8 tau0, 9 tau1, 10 tau2, 11 n_pop, 12 eps1, 13 eps2
"""
from __future__ import annotations

import os

import numpy as np

if os.environ.get("TBDELAY_NO_NUMBA"):
    def _jit(fn):
        return fn
else:
    from numba import njit as _numba_njit

    def _jit(fn):
        return _numba_njit(cache=True, nogil=True)(fn)


@_jit
def rhs5(x, y, v1, v2, p, out):
    """Controlled five-compartment vector field; y = delayed I, v = delayed controls."""
    beta = p[0]; mu = p[1]; delta = p[2]; phi = p[3]; omega = p[4]
    omega_r = p[5]; sigma = p[6]; sigma_r = p[7]; tau0 = p[8]
    tau1 = p[9]; tau2 = p[10]; n = p[11]; e1 = p[12]; e2 = p[13]
    s = x[0]; l1 = x[1]; i = x[2]; l2 = x[3]; r = x[4]
    force = beta / n * i
    out[0] = mu * n - force * s - mu * s
    out[1] = force * (s + sigma * l2 + sigma_r * r) - (delta + tau1 + e1 * v1 + mu) * l1
    out[2] = phi * delta * l1 + omega * l2 + omega_r * r - tau0 * y - mu * i
    out[3] = (1 - phi) * delta * l1 - sigma * force * l2 - (omega + e2 * v2 + tau2 + mu) * l2
    out[4] = (tau0 * y + (tau1 + e1 * v1) * l1 + (tau2 + e2 * v2) * l2
              - sigma_r * force * r - (omega_r + mu) * r)


@_jit
def rhs4(x, y, v1, v2, p, out):
    """Four-state reduction (R eliminated by complement)."""
    beta = p[0]; mu = p[1]; delta = p[2]; phi = p[3]; omega = p[4]
    omega_r = p[5]; sigma = p[6]; sigma_r = p[7]; tau0 = p[8]
    tau1 = p[9]; tau2 = p[10]; n = p[11]; e1 = p[12]; e2 = p[13]
    s = x[0]; l1 = x[1]; i = x[2]; l2 = x[3]
    r = n - s - l1 - i - l2
    force = beta / n * i
    out[0] = mu * n - force * s - mu * s
    out[1] = force * (s + sigma * l2 + sigma_r * r) - (delta + tau1 + e1 * v1 + mu) * l1
    out[2] = phi * delta * l1 + omega * l2 + omega_r * r - tau0 * y - mu * i
    out[3] = (1 - phi) * delta * l1 - sigma * force * l2 - (omega + e2 * v2 + tau2 + mu) * l2


@_jit
def jac4(x, v1, v2, p, j):
    """Jacobian of ``rhs4`` in the instantaneous state (delayed I slot excluded)."""
    beta = p[0]; mu = p[1]; delta = p[2]; phi = p[3]; omega = p[4]
    omega_r = p[5]; sigma = p[6]; sigma_r = p[7]
    tau1 = p[9]; tau2 = p[10]; n = p[11]; e1 = p[12]; e2 = p[13]
    s = x[0]; l1 = x[1]; i = x[2]; l2 = x[3]
    r = n - s - l1 - i - l2
    bn = beta / n
    j[0, 0] = -bn * i - mu
    j[0, 1] = 0.0
    j[0, 2] = -bn * s
    j[0, 3] = 0.0
    j[1, 0] = bn * i * (1 - sigma_r)
    j[1, 1] = -bn * i * sigma_r - (delta + tau1 + e1 * v1 + mu)
    j[1, 2] = bn * (s + sigma * l2 + sigma_r * r) - bn * i * sigma_r
    j[1, 3] = bn * i * (sigma - sigma_r)
    j[2, 0] = -omega_r
    j[2, 1] = phi * delta - omega_r
    j[2, 2] = -omega_r - mu
    j[2, 3] = omega - omega_r
    j[3, 0] = 0.0
    j[3, 1] = (1 - phi) * delta
    j[3, 2] = -sigma * bn * l2
    j[3, 3] = -sigma * bn * i - (omega + e2 * v2 + tau2 + mu)


@_jit
def _hermite_i(tq, tl, tr, xl, xr, fl, fr):
    """Cubic Hermite value of the I component at tq within [tl, tr]."""
    hh = tr - tl
    u = (tq - tl) / hh
    h00 = (1 + 2 * u) * (1 - u) ** 2
    h10 = u * (1 - u) ** 2
    h01 = u * u * (3 - 2 * u)
    h11 = u * u * (u - 1)
    return h00 * xl + h10 * hh * fl + h01 * xr + h11 * hh * fr


@_jit
def _history_i(tq, ts, xs, fl, fr, upto, hist_i):
    """I(tq) from the stored solution up to node ``upto`` (constant pre-history)."""
    if tq <= ts[0]:
        return hist_i
    lo = 0
    hi = upto
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ts[mid] <= tq:
            lo = mid
        else:
            hi = mid
    if tq == ts[lo]:
        return xs[lo, 2]
    return _hermite_i(tq, ts[lo], ts[lo + 1], xs[lo, 2], xs[lo + 1, 2],
                      fl[lo, 2], fr[lo, 2])


@_jit
def rk4_sweep(x0, p, d_i, ts, v1seg, v2seg, hist_i):
    """Classic RK4 method of steps over the partition ``ts``.

    ``v1seg``/``v2seg`` hold the (piecewise-constant) delayed control values on
    each sub-step; the delayed I is read from already-computed nodes, with
    mid-step values from cubic Hermite interpolation.  Returns node states and
    the per-segment endpoint derivatives (left/right limits differ across
    control jumps).  A non-finite state aborts with the offending node index.
    """
    n = ts.shape[0] - 1
    xs = np.empty((n + 1, 5))
    flft = np.empty((n, 5))
    frgt = np.empty((n, 5))
    xs[0] = x0
    k1 = np.empty(5); k2 = np.empty(5); k3 = np.empty(5); k4 = np.empty(5)
    xt = np.empty(5)
    for j in range(n):
        tl = ts[j]
        tr = ts[j + 1]
        hh = tr - tl
        tm = tl + 0.5 * hh
        v1 = v1seg[j]
        v2 = v2seg[j]
        if d_i > 0.0:
            y = _history_i(tl - d_i, ts, xs, flft, frgt, j, hist_i)
        else:
            y = xs[j, 2]
        rhs5(xs[j], y, v1, v2, p, k1)
        for c in range(5):
            flft[j, c] = k1[c]
            xt[c] = xs[j, c] + 0.5 * hh * k1[c]
        if d_i > 0.0:
            ym = _history_i(tm - d_i, ts, xs, flft, frgt, j, hist_i)
        else:
            ym = xt[2]
        rhs5(xt, ym, v1, v2, p, k2)
        for c in range(5):
            xt[c] = xs[j, c] + 0.5 * hh * k2[c]
        if d_i == 0.0:
            ym = xt[2]
        rhs5(xt, ym, v1, v2, p, k3)
        for c in range(5):
            xt[c] = xs[j, c] + hh * k3[c]
        if d_i > 0.0:
            yr = _history_i(tr - d_i, ts, xs, flft, frgt, j, hist_i)
        else:
            yr = xt[2]
        rhs5(xt, yr, v1, v2, p, k4)
        ok = True
        for c in range(5):
            xs[j + 1, c] = xs[j, c] + hh / 6.0 * (k1[c] + 2 * k2[c] + 2 * k3[c] + k4[c])
            if not np.isfinite(xs[j + 1, c]):
                ok = False
        if not ok:
            return xs, flft, frgt, j + 1
        # right-limit derivative at the segment end, with this segment's controls
        if d_i > 0.0:
            yr = _history_i(tr - d_i, ts, xs, flft, frgt, j + 1, hist_i)
        else:
            yr = xs[j + 1, 2]
        rhs5(xs[j + 1], yr, v1, v2, p, k1)
        for c in range(5):
            frgt[j, c] = k1[c]
    return xs, flft, frgt, -1


@_jit
def trap_forward(x0, u, hist_i, mi, mu1, mu2, h, p, tol):
    """Implicit-trapezoid propagation of the four-state reduction on a uniform grid.

    ``u`` holds node controls; delays are realized by index shifts (``mi`` on
    the state, ``mu1``/``mu2`` on the controls) with zero control history and
    constant I history.  Each step solves the trapezoid equation by
    fixed-point iteration to ``tol``.
    """
    n = u.shape[0] - 1
    xs = np.empty((n + 1, 4))
    xs[0] = x0
    fj = np.empty(4); fn = np.empty(4); xn = np.empty(4)
    for j in range(n):
        yj = xs[j - mi, 2] if j >= mi else hist_i
        v1j = u[j - mu1, 0] if j >= mu1 else 0.0
        v2j = u[j - mu2, 1] if j >= mu2 else 0.0
        rhs4(xs[j], yj, v1j, v2j, p, fj)
        v1n = u[j + 1 - mu1, 0] if j + 1 >= mu1 else 0.0
        v2n = u[j + 1 - mu2, 1] if j + 1 >= mu2 else 0.0
        for c in range(4):
            xn[c] = xs[j, c] + h * fj[c]
        for _ in range(60):
            if mi > 0:
                yn = xs[j + 1 - mi, 2] if j + 1 >= mi else hist_i
            else:
                yn = xn[2]
            rhs4(xn, yn, v1n, v2n, p, fn)
            dmax = 0.0
            for c in range(4):
                new = xs[j, c] + 0.5 * h * (fj[c] + fn[c])
                d = abs(new - xn[c])
                if d > dmax:
                    dmax = d
                xn[c] = new
            if dmax < tol:
                break
        for c in range(4):
            xs[j + 1, c] = xn[c]
            if not np.isfinite(xn[c]):
                return xs, j + 1
    return xs, -1


@_jit
def _solve4(a, b):
    """Solve a 4x4 linear system by Gaussian elimination with partial pivoting."""
    m = a.copy()
    x = b.copy()
    for c in range(4):
        piv = c
        best = abs(m[c, c])
        for rr in range(c + 1, 4):
            if abs(m[rr, c]) > best:
                best = abs(m[rr, c])
                piv = rr
        if piv != c:
            for k in range(4):
                t = m[c, k]; m[c, k] = m[piv, k]; m[piv, k] = t
            t = x[c]; x[c] = x[piv]; x[piv] = t
        for rr in range(c + 1, 4):
            f = m[rr, c] / m[c, c]
            for k in range(c, 4):
                m[rr, k] -= f * m[c, k]
            x[rr] -= f * x[c]
    for c in range(3, -1, -1):
        ssum = x[c]
        for k in range(c + 1, 4):
            ssum -= m[c, k] * x[k]
        x[c] = ssum / m[c, c]
    return x


@_jit
def trap_adjoint_gradient(xs, u, mi, mu1, mu2, h, p, w1, w2, quad):
    """Exact discrete adjoint of ``trap_forward`` and the objective gradient.

    The objective is the trapezoid quadrature of I + L2 + W1*c(u1) + W2*c(u2)
    with c linear (``quad`` false) or quadratic.  Multipliers for the delayed
    state are read from future nodes during the backward sweep; the advanced
    coupling past the horizon is cut off by the index guard.
    """
    n = u.shape[0] - 1
    tau0 = p[8]; e1 = p[12]; e2 = p[13]
    lam = np.zeros((n + 1, 4))
    grad = np.zeros((n + 1, 2))
    jmat = np.empty((4, 4))
    b = np.empty(4)
    for k in range(n, 0, -1):
        v1k = u[k - mu1, 0] if k >= mu1 else 0.0
        v2k = u[k - mu2, 1] if k >= mu2 else 0.0
        jac4(xs[k], v1k, v2k, p, jmat)
        if mi == 0:
            jmat[2, 2] -= tau0
        wk = 0.5 if k == n else 1.0
        b[0] = 0.0; b[1] = 0.0; b[2] = h * wk; b[3] = h * wk
        if k <= n - 1:
            for r in range(4):
                acc = lam[k + 1, r]
                for c in range(4):
                    acc += 0.5 * h * jmat[c, r] * lam[k + 1, c]
                b[r] += acc
        if mi > 0 and k + mi <= n:
            adv = lam[k + mi, 2]
            if k + mi <= n - 1:
                adv += lam[k + mi + 1, 2]
            b[2] -= tau0 * 0.5 * h * adv
        amat = np.empty((4, 4))
        for r in range(4):
            for c in range(4):
                amat[r, c] = (1.0 if r == c else 0.0) - 0.5 * h * jmat[c, r]
        lam[k] = _solve4(amat, b)
    for k in range(n + 1):
        wk = 0.5 if (k == 0 or k == n) else 1.0
        if quad:
            grad[k, 0] = h * wk * 2.0 * w1 * u[k, 0]
            grad[k, 1] = h * wk * 2.0 * w2 * u[k, 1]
        else:
            grad[k, 0] = h * wk * w1
            grad[k, 1] = h * wk * w2
        j1 = k + mu1
        if j1 <= n:
            lw = (lam[j1, 1] if j1 >= 1 else 0.0) + (lam[j1 + 1, 1] if j1 <= n - 1 else 0.0)
            grad[k, 0] += -e1 * xs[j1, 1] * 0.5 * h * lw
        j2 = k + mu2
        if j2 <= n:
            lw = (lam[j2, 3] if j2 >= 1 else 0.0) + (lam[j2 + 1, 3] if j2 <= n - 1 else 0.0)
            grad[k, 1] += -e2 * xs[j2, 3] * 0.5 * h * lw
    return lam, grad


@_jit
def adjoint_ode_backward(xs, u, mi, mu1, mu2, h, p):
    """Implicit-trapezoid backward integration of the continuous adjoint system.

    Terminal condition lambda(T) = 0; only the I adjoint carries the advanced
    term, read from already-computed future nodes.  States and node controls
    are taken from the forward solution.
    """
    n = u.shape[0] - 1
    tau0 = p[8]
    lam = np.zeros((n + 1, 4))
    jmat = np.empty((4, 4))
    g1 = np.empty(4)
    b = np.empty(4)
    for k in range(n - 1, -1, -1):
        # backward derivative at node k+1
        v1 = u[k + 1 - mu1, 0] if k + 1 >= mu1 else 0.0
        v2 = u[k + 1 - mu2, 1] if k + 1 >= mu2 else 0.0
        jac4(xs[k + 1], v1, v2, p, jmat)
        if mi == 0:
            jmat[2, 2] -= tau0
        for r in range(4):
            acc = 0.0
            for c in range(4):
                acc += jmat[c, r] * lam[k + 1, c]
            g1[r] = acc
        g1[2] += 1.0
        g1[3] += 1.0
        if mi > 0 and k + 1 + mi <= n:
            g1[2] -= tau0 * lam[k + 1 + mi, 2]
        # implicit step at node k
        v1 = u[k - mu1, 0] if k >= mu1 else 0.0
        v2 = u[k - mu2, 1] if k >= mu2 else 0.0
        jac4(xs[k], v1, v2, p, jmat)
        if mi == 0:
            jmat[2, 2] -= tau0
        for r in range(4):
            b[r] = lam[k + 1, r] + 0.5 * h * g1[r]
        b[2] += 0.5 * h
        b[3] += 0.5 * h
        if mi > 0 and k + mi <= n:
            b[2] -= 0.5 * h * tau0 * lam[k + mi, 2]
        amat = np.empty((4, 4))
        for r in range(4):
            for c in range(4):
                amat[r, c] = (1.0 if r == c else 0.0) - 0.5 * h * jmat[c, r]
        lam[k] = _solve4(amat, b)
    return lam


@_jit
def trapezoid_objective(xs, u, h, w1, w2, quad):
    """Trapezoid quadrature of the running cost over the stored nodes."""
    n = u.shape[0] - 1
    total = 0.0
    for j in range(n + 1):
        w = 0.5 if (j == 0 or j == n) else 1.0
        if quad:
            total += w * (xs[j, 2] + xs[j, 3] + w1 * u[j, 0] * u[j, 0] + w2 * u[j, 1] * u[j, 1])
        else:
            total += w * (xs[j, 2] + xs[j, 3] + w1 * u[j, 0] + w2 * u[j, 1])
    return total * h
