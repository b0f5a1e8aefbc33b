"""Compiled inner integration engine.

For an observation point ``x`` and a flat source triangle ``Y`` the engine
integrates the P1 shape functions of ``Y`` against the retarded kernel,
split into radial pieces ``r in [r0 + k dt, r0 + (k+1) dt]``.  Polar
coordinates about the foot point ``p`` of ``x`` in the plane of ``Y`` are
used; ``Y`` is decomposed into signed sectors ``(p, a, b)`` per edge.  Since
``rho d rho = r dr`` the radial integrals are elementary and are done in
closed form; the angular integrals use Gauss-Legendre after the substitution
``t = h sinh(u)`` along each edge (which removes the near-singular
behaviour when ``p`` approaches an edge line) and after splitting at every
angle where the outer radius crosses a piece boundary.

Two quantities are produced:

* potential moments ``M[k, a, i] = int_{Y, piece k} xi_i(y) u^a / r dy`` with
  ``u = (r - r0)/dt - k`` in [0, 1];
* gradient moments ``G[k, i, :] = int_{Y, piece k} xi_i(y) (x - y) / r^3 dy``
  as a principal value when ``x`` lies in ``Y``, together with the light-cone
  circle terms ``C[k, i, :] = (1/B_k) int_{|x - y| = B_k} xi_i(y) (x - y) dtheta``
  at the piece boundaries ``B_k = r0 + k dt`` (these carry the jumps of a
  piecewise constant density).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .timebasis import LAG_SHAPES

_GL8_X = np.array([
    0.019855071751231856, 0.10166676129318664, 0.2372337950418355, 0.4082826787521751,
    0.5917173212478249, 0.7627662049581645, 0.8983332387068134, 0.9801449282487681,
])
_GL8_W = np.array([
    0.05061426814518813, 0.11119051722668724, 0.15685332293894363, 0.18134189168918100,
    0.18134189168918100, 0.15685332293894363, 0.11119051722668724, 0.05061426814518813,
])

MODE_POTENTIAL = 0
MODE_GRADIENT = 1


@njit(cache=True)
def _bary_grads(Y, n, grads):
    """Surface gradients of the three barycentric functions of triangle Y."""
    e1x = Y[1, 0] - Y[0, 0]
    e1y = Y[1, 1] - Y[0, 1]
    e1z = Y[1, 2] - Y[0, 2]
    e2x = Y[2, 0] - Y[0, 0]
    e2y = Y[2, 1] - Y[0, 1]
    e2z = Y[2, 2] - Y[0, 2]
    cx = e1y * e2z - e1z * e2y
    cy = e1z * e2x - e1x * e2z
    cz = e1x * e2y - e1y * e2x
    twice_area = math.sqrt(cx * cx + cy * cy + cz * cz)
    n[0] = cx / twice_area
    n[1] = cy / twice_area
    n[2] = cz / twice_area
    for i in range(3):
        a = (i + 1) % 3
        b = (i + 2) % 3
        # grad lambda_i = n x (Y_b - Y_a) / (2 area)
        ex = Y[b, 0] - Y[a, 0]
        ey = Y[b, 1] - Y[a, 1]
        ez = Y[b, 2] - Y[a, 2]
        grads[i, 0] = (n[1] * ez - n[2] * ey) / twice_area
        grads[i, 1] = (n[2] * ex - n[0] * ez) / twice_area
        grads[i, 2] = (n[0] * ey - n[1] * ex) / twice_area
    return 0.5 * twice_area


@njit(cache=True)
def _radial_pot(lo, hi, c, dt, d, far, pw):
    """pw[0:3] = int u^a dr, pw[3:6] = int w u^a dr over [lo, hi], u = (r - c)/dt."""
    ul = (lo - c) / dt
    uh = (hi - c) / dt
    pw[0] = hi - lo
    pw[1] = dt * (uh * uh - ul * ul) * 0.5
    pw[2] = dt * (uh * uh * uh - ul * ul * ul) / 3.0
    d2 = d * d
    if d2 == 0.0:
        # w = r: exact polynomial moments, r = c + dt u
        pw[3] = (hi * hi - lo * lo) * 0.5
        pw[4] = c * pw[1] + dt * pw[2]
        pw[5] = c * pw[2] + dt * dt * (uh ** 4 - ul ** 4) / 4.0
        return
    if far:
        half = 0.5 * (hi - lo)
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        for q in range(8):
            r = lo + (hi - lo) * _GL8_X[q]
            w = math.sqrt(r * r - d2)
            u = (r - c) / dt
            wq = _GL8_W[q] * w
            s0 += wq
            s1 += wq * u
            s2 += wq * u * u
        scale = 2.0 * half
        pw[3] = s0 * scale
        pw[4] = s1 * scale
        pw[5] = s2 * scale
        return
    wl = math.sqrt(max(lo * lo - d2, 0.0))
    wh = math.sqrt(max(hi * hi - d2, 0.0))
    lg = math.log((hi + wh) / (lo + wl))
    dq0 = 0.5 * (hi * wh - lo * wl - d2 * lg)
    dq1 = (wh * wh * wh - wl * wl * wl) / 3.0
    dq2 = (hi * wh * wh * wh - lo * wl * wl * wl) / 4.0 + d2 * dq0 / 4.0
    pw[3] = dq0
    pw[4] = (dq1 - c * dq0) / dt
    pw[5] = (dq2 - 2.0 * c * dq1 + c * c * dq0) / (dt * dt)


@njit(cache=True)
def _radial_grad(lo, hi, d, far, drop_lower, out):
    """out = (int dr/r^2, int w/r^2 dr, int w^2/r^2 dr) over [lo, hi]."""
    d2 = d * d
    if far:
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        for q in range(8):
            r = lo + (hi - lo) * _GL8_X[q]
            w = math.sqrt(r * r - d2)
            ir2 = 1.0 / (r * r)
            s1 += _GL8_W[q] * ir2
            s2 += _GL8_W[q] * w * ir2
            s3 += _GL8_W[q] * w * w * ir2
        L = hi - lo
        out[0] = s1 * L
        out[1] = s2 * L
        out[2] = s3 * L
        return
    wh = math.sqrt(max(hi * hi - d2, 0.0))
    j1h = -1.0 / hi
    j2h = math.log(hi + wh) - wh / hi
    j3h = hi + d2 / hi
    if drop_lower:
        # lower limit at r = 0 with d = 0: its contributions cancel over the
        # signed sectors (or vanish as a principal value), so any finite
        # constant may stand in for them
        out[0] = 0.0
        out[1] = j2h
        out[2] = j3h
        return
    wl = math.sqrt(max(lo * lo - d2, 0.0))
    out[0] = j1h + 1.0 / lo
    out[1] = math.log((hi + wh) / (lo + wl)) - wh / hi + wl / lo
    out[2] = (hi - lo) + d2 * (1.0 / hi - 1.0 / lo)


@njit(cache=True)
def inner_moments(x, Y, dt, r0, K, gx, gw, mode, out, circ):
    """Accumulate potential (mode 0) or gradient (mode 1) moments into ``out``.

    ``out`` has shape (K, 3, 3): ``[k, a, i]`` for mode 0, ``[k, i, c]`` for mode 1.
    In mode 1 the circle terms are added to ``circ[k, i, c]`` (shape (K + 1, 3, 3)).
    ``gx, gw`` is a Gauss-Legendre rule on [0, 1] for the angular integrals.
    """
    n = np.empty(3)
    g = np.empty((3, 3))
    _bary_grads(Y, n, g)
    return _inner(x, Y, n, g, dt, r0, K, gx, gw, mode, out, circ)


@njit(cache=True)
def _inner(x, Y, n, g, dt, r0, K, gx, gw, mode, out, circ):
    # signed distance to the plane, foot point
    L0 = 0.0
    for c in range(3):
        dx = Y[(c + 1) % 3, 0] - Y[c, 0]
        dy = Y[(c + 1) % 3, 1] - Y[c, 1]
        dz = Y[(c + 1) % 3, 2] - Y[c, 2]
        L0 = max(L0, math.sqrt(dx * dx + dy * dy + dz * dz))
    d = (x[0] - Y[0, 0]) * n[0] + (x[1] - Y[0, 1]) * n[1] + (x[2] - Y[0, 2]) * n[2]
    if abs(d) < 1e-14 * L0:
        d = 0.0
    ad = abs(d)
    p = np.empty(3)
    for c in range(3):
        p[c] = x[c] - d * n[c]
    c0 = np.empty(3)
    for i in range(3):
        c0[i] = 1.0 + g[i, 0] * (p[0] - Y[i, 0]) + g[i, 1] * (p[1] - Y[i, 1]) + g[i, 2] * (p[2] - Y[i, 2])
    # Radii below dist(x, Y) cancel between the entry and exit sectors of
    # every ray when p lies outside Y, so integration starts there.
    rho_min = 0.0
    if c0[0] < 0.0 or c0[1] < 0.0 or c0[2] < 0.0:
        rho_min = 1e300
        for e in range(3):
            a0 = Y[e]
            b0 = Y[(e + 1) % 3]
            ex = b0[0] - a0[0]
            ey = b0[1] - a0[1]
            ez = b0[2] - a0[2]
            ll = ex * ex + ey * ey + ez * ez
            s = ((p[0] - a0[0]) * ex + (p[1] - a0[1]) * ey + (p[2] - a0[2]) * ez) / ll
            s = min(1.0, max(0.0, s))
            fx = a0[0] + s * ex - p[0]
            fy = a0[1] + s * ey - p[1]
            fz = a0[2] + s * ez - p[2]
            rho_min = min(rho_min, math.sqrt(fx * fx + fy * fy + fz * fz))
    rmin = math.sqrt(rho_min * rho_min + d * d)
    rmax_piece = r0 + K * dt
    if rmin >= rmax_piece:
        return 0
    d0_lower_drop = d == 0.0

    splits = np.empty(2 * K + 2)
    pw = np.empty(6)
    jv = np.empty(3)
    c1 = np.empty(3)
    eth = np.empty(3)
    tau = np.empty(3)
    nu = np.empty(3)
    q = np.empty(3)
    ng = gx.shape[0]

    for e in range(3):
        a = Y[e]
        b = Y[(e + 1) % 3]
        L = math.sqrt((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + (b[2] - a[2]) ** 2)
        for c in range(3):
            tau[c] = (b[c] - a[c]) / L
        sp = (p[0] - a[0]) * tau[0] + (p[1] - a[1]) * tau[1] + (p[2] - a[2]) * tau[2]
        for c in range(3):
            q[c] = a[c] + sp * tau[c]
        h = math.sqrt((q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 + (q[2] - p[2]) ** 2)
        if h <= 1e-13 * L:
            continue
        for c in range(3):
            nu[c] = (q[c] - p[c]) / h
        # orientation of sector (p, a, b) relative to the normal
        ax = a[0] - p[0]
        ay = a[1] - p[1]
        az = a[2] - p[2]
        bx = b[0] - p[0]
        by = b[1] - p[1]
        bz = b[2] - p[2]
        orient = (ay * bz - az * by) * n[0] + (az * bx - ax * bz) * n[1] + (ax * by - ay * bx) * n[2]
        sign = 1.0 if orient > 0 else -1.0
        ta = -sp
        tb = L - sp
        ua = math.asinh(ta / h)
        ub = math.asinh(tb / h)
        # angles where the outer radius crosses a breakpoint
        ns = 0
        splits[ns] = ua
        ns += 1
        rho_max = h * math.cosh(max(abs(ua), abs(ub)))
        for k in range(1, K + 1):
            B = r0 + k * dt
            if B <= ad:
                continue
            rhoB = math.sqrt(B * B - ad * ad)
            if rhoB >= rho_max:
                break
            if rhoB > h:
                uc = math.acosh(rhoB / h)
                if ua < -uc < ub:
                    splits[ns] = -uc
                    ns += 1
                if ua < uc < ub:
                    splits[ns] = uc
                    ns += 1
        splits[ns] = ub
        ns += 1
        srt = np.sort(splits[:ns])
        for s in range(ns - 1):
            u1 = srt[s]
            u2 = srt[s + 1]
            span = u2 - u1
            if span <= 0.0:
                continue
            nsub = int(math.ceil(span))
            sub = span / nsub
            for m in range(nsub):
                base = u1 + m * sub
                for qi in range(ng):
                    u = base + sub * gx[qi]
                    ch = math.cosh(u)
                    t = h * math.sinh(u)
                    rho = h * ch
                    wgt = sign * gw[qi] * sub / ch
                    for c in range(3):
                        eth[c] = (h * nu[c] + t * tau[c]) / rho
                    for i in range(3):
                        c1[i] = g[i, 0] * eth[0] + g[i, 1] * eth[1] + g[i, 2] * eth[2]
                    re = math.sqrt(rho * rho + d * d)
                    klo = int(math.floor((rmin - r0) / dt))
                    if klo < 0:
                        klo = 0
                    khi = int(math.floor((re - r0) / dt))
                    if khi > K - 1:
                        khi = K - 1
                    for k in range(klo, khi + 1):
                        Bk = r0 + k * dt
                        lo = max(rmin, Bk)
                        hi = min(re, Bk + dt)
                        if hi <= lo:
                            continue
                        far = (lo - ad) > (hi - lo)
                        if mode == 0:
                            _radial_pot(lo, hi, Bk, dt, d, far, pw)
                            for i in range(3):
                                for aa in range(3):
                                    out[k, aa, i] += wgt * (c0[i] * pw[aa] + c1[i] * pw[3 + aa])
                        else:
                            drop = d0_lower_drop and lo == 0.0
                            _radial_grad(lo, hi, d, far, drop, jv)
                            for i in range(3):
                                sn = d * (c0[i] * jv[0] + c1[i] * jv[1])
                                st = c0[i] * jv[1] + c1[i] * jv[2]
                                for c in range(3):
                                    out[k, i, c] += wgt * (sn * n[c] - st * eth[c])
                    if mode == 1:
                        kc = max(1, int(math.ceil((max(rmin, ad) - r0) / dt)))
                        while kc <= K:
                            B = r0 + kc * dt
                            if B >= re:
                                break
                            if B > ad and B >= rmin:
                                rhoB = math.sqrt(B * B - d * d)
                                for i in range(3):
                                    xi = wgt * (c0[i] + c1[i] * rhoB) / B
                                    for c in range(3):
                                        circ[kc, i, c] += xi * (d * n[c] - rhoB * eth[c])
                            kc += 1
    return 0


# ----------------------------------------------------------------------
# Galerkin pair integration
# ----------------------------------------------------------------------
@njit(cache=True)
def _cell_polar(X, cell, Y, nY, gY, dt, kmin, kmax, obary, ow, gx, gw, shapes, mom, acc):
    """Outer rule on the sub-triangle ``cell`` (barycentric corners in X), polar inner.

    Adds to ``acc[jj, l, i]`` (lag j = kmin + jj) the cell contribution of
    int_cell xi_l(x) sum_m sum_a q_m[a] M[j - m, a, i](x) dx (without dt/4pi).
    """
    K = kmax + 1
    nq = ow.shape[0]
    # physical corners of the cell and its area
    cp = np.empty((3, 3))
    for v in range(3):
        for c in range(3):
            cp[v, c] = cell[v, 0] * X[0, c] + cell[v, 1] * X[1, c] + cell[v, 2] * X[2, c]
    e1x = cp[1, 0] - cp[0, 0]
    e1y = cp[1, 1] - cp[0, 1]
    e1z = cp[1, 2] - cp[0, 2]
    e2x = cp[2, 0] - cp[0, 0]
    e2y = cp[2, 1] - cp[0, 1]
    e2z = cp[2, 2] - cp[0, 2]
    cx = e1y * e2z - e1z * e2y
    cy = e1z * e2x - e1x * e2z
    cz = e1x * e2y - e1y * e2x
    area = 0.5 * math.sqrt(cx * cx + cy * cy + cz * cz)
    x = np.empty(3)
    lam = np.empty(3)
    nl = acc.shape[0]
    for q in range(nq):
        for l in range(3):
            lam[l] = obary[q, 0] * cell[0, l] + obary[q, 1] * cell[1, l] + obary[q, 2] * cell[2, l]
        for c in range(3):
            x[c] = lam[0] * X[0, c] + lam[1] * X[1, c] + lam[2] * X[2, c]
        for k in range(kmin, K):
            for a in range(3):
                for i in range(3):
                    mom[k, a, i] = 0.0
        _inner(x, Y, nY, gY, dt, 0.0, K, gx, gw, 0, mom, mom)
        wq = ow[q] * area
        for jj in range(nl):
            j = kmin + jj
            for m in range(3):
                k = j - m
                if k < kmin or k > kmax:
                    continue
                for i in range(3):
                    s = 0.0
                    for a in range(3):
                        s += shapes[m, a] * mom[k, a, i]
                    if s != 0.0:
                        for l in range(3):
                            acc[jj, l, i] += wq * lam[l] * s
    return area


@njit(cache=True)
def _pair_polar(X, Y, nY, gY, dt, kmin, kmax, obary, ow, gx, gw, shapes, tol, maxdepth, res):
    """Adaptive red subdivision of the outer triangle; returns False on non-convergence."""
    nl = res.shape[0]
    K = kmax + 1
    mom = np.zeros((K, 3, 3))
    cap = 4 * maxdepth + 8
    stack_cells = np.empty((cap, 3, 3))
    stack_vals = np.empty((cap, nl, 3, 3))
    stack_depth = np.empty(cap, dtype=np.int64)
    root = np.zeros((3, 3))
    root[0, 0] = 1.0
    root[1, 1] = 1.0
    root[2, 2] = 1.0
    v0 = np.zeros((nl, 3, 3))
    _cell_polar(X, root, Y, nY, gY, dt, kmin, kmax, obary, ow, gx, gw, shapes, mom, v0)
    top = 0
    stack_cells[0] = root
    stack_vals[0] = v0
    stack_depth[0] = 0
    top = 1
    scale = 0.0
    for jj in range(nl):
        for l in range(3):
            for i in range(3):
                scale = max(scale, abs(v0[jj, l, i]))
    children = np.empty((4, 3, 3))
    cvals = np.zeros((4, nl, 3, 3))
    mid = np.empty((3, 3))
    ok = True
    first = True
    while top > 0:
        top -= 1
        cell = stack_cells[top].copy()
        parent = stack_vals[top].copy()
        depth = stack_depth[top]
        for c in range(3):
            mid[0, c] = 0.5 * (cell[0, c] + cell[1, c])
            mid[1, c] = 0.5 * (cell[1, c] + cell[2, c])
            mid[2, c] = 0.5 * (cell[2, c] + cell[0, c])
            children[0, 0, c] = cell[0, c]
            children[0, 1, c] = mid[0, c]
            children[0, 2, c] = mid[2, c]
            children[1, 0, c] = mid[0, c]
            children[1, 1, c] = cell[1, c]
            children[1, 2, c] = mid[1, c]
            children[2, 0, c] = mid[2, c]
            children[2, 1, c] = mid[1, c]
            children[2, 2, c] = cell[2, c]
            children[3, 0, c] = mid[0, c]
            children[3, 1, c] = mid[1, c]
            children[3, 2, c] = mid[2, c]
        cvals[:] = 0.0
        for ch in range(4):
            _cell_polar(X, children[ch], Y, nY, gY, dt, kmin, kmax, obary, ow, gx, gw, shapes, mom, cvals[ch])
        err = 0.0
        for jj in range(nl):
            for l in range(3):
                for i in range(3):
                    s = cvals[0, jj, l, i] + cvals[1, jj, l, i] + cvals[2, jj, l, i] + cvals[3, jj, l, i]
                    err = max(err, abs(s - parent[jj, l, i]))
                    if first:
                        scale = max(scale, abs(s))
        first = False
        if err <= tol * scale or scale == 0.0:
            for ch in range(4):
                res += cvals[ch]
            continue
        if depth + 1 >= maxdepth:
            ok = False
            for ch in range(4):
                res += cvals[ch]
            continue
        for ch in range(4):
            stack_cells[top] = children[ch]
            stack_vals[top] = cvals[ch]
            stack_depth[top] = depth + 1
            top += 1
    return ok


@njit(cache=True)
def _pair_tensor(X, Y, dt, k, xb, xw, shapes, res):
    """Tensor Gauss for a separated pair whose distances stay inside radial piece ``k``."""
    nq = xw.shape[0]
    ax = 0.5 * _tri_area(X)
    ay = 0.5 * _tri_area(Y)
    px = np.empty((nq, 3))
    py = np.empty((nq, 3))
    for q in range(nq):
        for c in range(3):
            px[q, c] = xb[q, 0] * X[0, c] + xb[q, 1] * X[1, c] + xb[q, 2] * X[2, c]
            py[q, c] = xb[q, 0] * Y[0, c] + xb[q, 1] * Y[1, c] + xb[q, 2] * Y[2, c]
    # piece k contributes to lags k + m with shape row m
    mom = np.zeros((3, 3, 3))  # [a, l, i]
    for qx in range(nq):
        for qy in range(nq):
            dx = px[qx, 0] - py[qy, 0]
            dy = px[qx, 1] - py[qy, 1]
            dz = px[qx, 2] - py[qy, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            u = r / dt - k
            w = xw[qx] * xw[qy] / r
            for l in range(3):
                wl = w * xb[qx, l]
                for i in range(3):
                    v = wl * xb[qy, i]
                    mom[0, l, i] += v
                    mom[1, l, i] += v * u
                    mom[2, l, i] += v * u * u
    scale = ax * ay
    for m in range(min(3, res.shape[0])):
        for l in range(3):
            for i in range(3):
                s = 0.0
                for a in range(3):
                    s += shapes[m, a] * mom[a, l, i]
                res[m, l, i] += scale * s


@njit(cache=True)
def _tri_area(T):
    e1x = T[1, 0] - T[0, 0]
    e1y = T[1, 1] - T[0, 1]
    e1z = T[1, 2] - T[0, 2]
    e2x = T[2, 0] - T[0, 0]
    e2y = T[2, 1] - T[0, 1]
    e2z = T[2, 2] - T[0, 2]
    cx = e1y * e2z - e1z * e2y
    cy = e1z * e2x - e1x * e2z
    cz = e1x * e2y - e1y * e2x
    return math.sqrt(cx * cx + cy * cy + cz * cz)


@njit(parallel=True, cache=True)
def assemble_pairs(Xs, Ys, kmin, kmax, use_tensor, dt, obary, ow, tbary, tw, gx, gw, shapes, tol,
                   maxdepth, out, status):
    """Integrate pair p = (Xs[p], Ys[p]) into ``out[p, jj, l, i]`` (lag kmin[p] + jj).

    ``status[p]`` is set to 0 on success and 1 when the adaptive outer
    quadrature hit ``maxdepth`` without meeting ``tol``.
    """
    npairs = Xs.shape[0]
    for p in prange(npairs):
        res = out[p]
        res[:] = 0.0
        if use_tensor[p]:
            _pair_tensor(Xs[p], Ys[p], dt, kmin[p], tbary, tw, shapes, res)
            status[p] = 0
        else:
            nY = np.empty(3)
            gY = np.empty((3, 3))
            _bary_grads(Ys[p], nY, gY)
            nl = kmax[p] - kmin[p] + 3
            ok = _pair_polar(Xs[p], Ys[p], nY, gY, dt, kmin[p], kmax[p],
                             obary, ow, gx, gw, shapes, tol, maxdepth, res[:nl])
            status[p] = 0 if ok else 1


@njit(cache=True)
def _frame_key(P, ox, oy, quantum, key):
    """Coordinates of the six pair vertices in a frame attached to the outer triangle.

    The outer triangle is taken with cyclic offset ``ox`` and the inner one
    with ``oy``.  Origin at the first outer vertex, first axis along the
    first outer edge, second axis towards the third outer vertex; the sign of
    the third axis is fixed so that the inner triangle lies on the
    nonnegative side (reflection invariance).
    """
    o = P[ox]
    a = P[(ox + 1) % 3]
    b = P[(ox + 2) % 3]
    e1 = a - o
    e1 = e1 / math.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2)
    v = b - o
    pr = v[0] * e1[0] + v[1] * e1[1] + v[2] * e1[2]
    e2 = v - pr * e1
    e2 = e2 / math.sqrt(e2[0] ** 2 + e2[1] ** 2 + e2[2] ** 2)
    e3 = np.empty(3)
    e3[0] = e1[1] * e2[2] - e1[2] * e2[1]
    e3[1] = e1[2] * e2[0] - e1[0] * e2[2]
    e3[2] = e1[0] * e2[1] - e1[1] * e2[0]
    coords = np.empty((6, 3))
    for v_ in range(6):
        if v_ < 3:
            src = P[(ox + v_) % 3]
        else:
            src = P[3 + (oy + v_ - 3) % 3]
        dx = src[0] - o[0]
        dy = src[1] - o[1]
        dz = src[2] - o[2]
        coords[v_, 0] = dx * e1[0] + dy * e1[1] + dz * e1[2]
        coords[v_, 1] = dx * e2[0] + dy * e2[1] + dz * e2[2]
        coords[v_, 2] = dx * e3[0] + dy * e3[1] + dz * e3[2]
    zs = coords[3, 2] + coords[4, 2] + coords[5, 2]
    flip = zs < 0.0
    for v_ in range(6):
        for c in range(3):
            val = coords[v_, c]
            if c == 2 and flip:
                val = -val
            key[3 * v_ + c] = np.int64(round(val / quantum))


@njit(parallel=True, cache=True)
def congruence_keys(corners, pairs, quantum, keys, rot):
    """Canonical quantized key per pair (minimum over cyclic vertex offsets).

    ``rot[p] = (ox, oy)`` records the offsets that produced the key.
    """
    for p in prange(pairs.shape[0]):
        P = np.empty((6, 3))
        for v in range(3):
            for c in range(3):
                P[v, c] = corners[pairs[p, 0], v, c]
                P[3 + v, c] = corners[pairs[p, 1], v, c]
        best = np.empty(18, dtype=np.int64)
        cand = np.empty(18, dtype=np.int64)
        have = False
        for ox in range(3):
            for oy in range(3):
                _frame_key(P, ox, oy, quantum, cand)
                better = not have
                if have:
                    for c in range(18):
                        if cand[c] != best[c]:
                            better = cand[c] < best[c]
                            break
                if better:
                    best[:] = cand
                    rot[p, 0] = ox
                    rot[p, 1] = oy
                    have = True
        keys[p] = best


# ----------------------------------------------------------------------
# point evaluation of the retarded potential and its gradient
# ----------------------------------------------------------------------
@njit(cache=True)
def _point_range(x, Y):
    """Lower/upper bounds of |x - y| for y in Y (vertex max, sphere min)."""
    cx = (Y[0, 0] + Y[1, 0] + Y[2, 0]) / 3.0
    cy = (Y[0, 1] + Y[1, 1] + Y[2, 1]) / 3.0
    cz = (Y[0, 2] + Y[1, 2] + Y[2, 2]) / 3.0
    rad = 0.0
    dmax = 0.0
    for v in range(3):
        rad = max(rad, math.sqrt((Y[v, 0] - cx) ** 2 + (Y[v, 1] - cy) ** 2 + (Y[v, 2] - cz) ** 2))
        dmax = max(dmax, math.sqrt((Y[v, 0] - x[0]) ** 2 + (Y[v, 1] - x[1]) ** 2 + (Y[v, 2] - x[2]) ** 2))
    dc = math.sqrt((x[0] - cx) ** 2 + (x[1] - cy) ** 2 + (x[2] - cz) ** 2)
    return max(0.0, dc - rad), dmax


@njit(parallel=True, cache=True)
def potential_at_times(points, steps, r0, corners, normals, grads, tri_nodes, dt, psi, gx, gw, mode, out):
    """Potential (mode 0) or gradient (mode 1) of psi at t = steps[s] * dt + r0, r0 in (-dt, 0].

    ``psi`` has shape (M + 2, N_nodes) with row m holding the pulse value on
    I_m (rows 0 and M + 1 are zero padding, M = N_t).  Radial piece k sees
    t - r in I_{n-k}.  ``out`` is (P, S, 3); the potential is stored in
    component 0, the gradient is the plain (unprojected) vector.  The factor
    1/(4 pi) is applied by the caller.
    """
    npts = points.shape[0]
    ntri = corners.shape[0]
    M = psi.shape[0] - 2
    nmax = 0
    for s in range(steps.shape[0]):
        nmax = max(nmax, steps[s])
    K = max(nmax, 1)
    for p in prange(npts):
        x = points[p]
        mom = np.zeros((K, 3, 3))
        circ = np.zeros((K + 1, 3, 3))
        for t in range(ntri):
            Y = corners[t]
            dmin, dmax = _point_range(x, Y)
            if dmin >= r0 + K * dt:
                continue
            klo = max(0, int(math.floor((dmin - r0) / dt)))
            khi = min(K - 1, int(math.floor((dmax - r0) / dt)))
            for k in range(klo, khi + 1):
                for a in range(3):
                    for c in range(3):
                        mom[k, a, c] = 0.0
            if mode == 1:
                for k in range(klo, min(K, khi + 1) + 1):
                    for a in range(3):
                        for c in range(3):
                            circ[k, a, c] = 0.0
            _inner(x, Y, normals[t], grads[t], dt, r0, K, gx, gw, mode, mom, circ)
            for s in range(steps.shape[0]):
                n = steps[s]
                for i in range(3):
                    node = tri_nodes[t, i]
                    for k in range(klo, min(khi, n - 1) + 1):
                        m = n - k
                        f = psi[m, node] if m <= M else 0.0
                        if f == 0.0:
                            continue
                        if mode == 0:
                            out[p, s, 0] += f * mom[k, 0, i]
                        else:
                            for c in range(3):
                                out[p, s, c] -= f * mom[k, i, c]
                    if mode == 1:
                        # jumps of psi(t - r) across r = B_k
                        for k in range(max(1, klo), min(khi + 1, n) + 1):
                            m = n - k
                            f_in = psi[m + 1, node] if m + 1 <= M else 0.0
                            f_out = psi[m, node] if (m >= 1 and m <= M) else 0.0
                            jump = f_in - f_out
                            if jump == 0.0:
                                continue
                            for c in range(3):
                                out[p, s, c] -= jump * circ[k, i, c]


@njit(parallel=True, cache=True)
def potential_interval_integral(points, n, corners, normals, grads, tri_nodes, dt, psi, gx, gw, out):
    """int_{I_n} of the potential (without 1/(4 pi)) at each point, exact in time."""
    npts = points.shape[0]
    ntri = corners.shape[0]
    M = psi.shape[0] - 2
    K = max(n, 1)
    for p in prange(npts):
        x = points[p]
        mom = np.zeros((K, 3, 3))
        acc = 0.0
        for t in range(ntri):
            mom[:] = 0.0
            _inner(x, corners[t], normals[t], grads[t], dt, 0.0, K, gx, gw, 0, mom, mom)
            # int_{I_n} chi_m(t - r) dt = S_{n-m}(r); on piece k, lag j = n - m = k + q
            for k in range(K):
                for q in range(3):
                    m = n - k - q
                    if m < 1 or m > M:
                        continue
                    for i in range(3):
                        f = psi[m, tri_nodes[t, i]]
                        if f == 0.0:
                            continue
                        s = 0.0
                        for a in range(3):
                            s += LAG_SHAPES[q, a] * mom[k, a, i]
                        acc += dt * s * f
        out[p] = acc
