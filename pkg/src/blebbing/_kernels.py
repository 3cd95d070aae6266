"""Compiled double sums for the linker coupling energy."""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def coupling_sums(xs, ns, ec, ca, ys, em, k, omega_hat, s, sign, vol):
    """Accumulate the inner integrals of the coupling energy over tube cells.

    ``xs, ns, ec, ca`` describe cortex cells, ``ys, em`` membrane cells
    (2D or 3D).  Returns per cortex cell ``Q = sum_y em c``,
    ``Qc = sum_y em dc/dca``, ``Qn = sum_y em grad_n c`` and per membrane
    cell ``P = sum_x ec c``; all sums are multiplied by the cell volume
    ``vol``.  Coincident points contribute nothing (the spring factor
    ``|x-y|^2`` vanishes there).
    """
    nc, dim = xs.shape
    nm = ys.shape[0]
    Q = np.zeros(nc)
    Qc = np.zeros(nc)
    Qn = np.zeros((nc, dim))
    P = np.zeros(nm)
    pref = 0.5 * k * omega_hat
    c2 = sign / (s * s)
    wm = em * vol
    y0 = ys[:, 0].copy()
    y1 = ys[:, 1].copy()
    y2 = ys[:, 2].copy() if dim == 3 else np.zeros(nm)
    for i in range(nc):
        wi = ec[i] * vol * ca[i]
        x0 = xs[i, 0]
        x1 = xs[i, 1]
        x2 = xs[i, 2] if dim == 3 else 0.0
        n0 = ns[i, 0]
        n1 = ns[i, 1]
        n2 = ns[i, 2] if dim == 3 else 0.0
        aq = 0.0
        an0 = 0.0
        an1 = 0.0
        an2 = 0.0
        for j in range(nm):
            d0 = x0 - y0[j]
            d1 = x1 - y1[j]
            d2 = x2 - y2[j]
            rho2 = d0 * d0 + d1 * d1 + d2 * d2
            if rho2 == 0.0:
                continue
            rho = np.sqrt(rho2)
            rm1 = (d0 * n0 + d1 * n1 + d2 * n2) / rho - 1.0
            om = np.exp(c2 * rm1 * rm1)
            base = rho2 * om
            aq += wm[j] * base
            P[j] += wi * base
            # d omega/dr = 2 c2 (r-1) omega; grad_n c carries rho^2 * e
            g = wm[j] * rho * om * rm1
            an0 += g * d0
            an1 += g * d1
            an2 += g * d2
        Qc[i] = pref * aq
        Q[i] = pref * aq * ca[i]
        gn = pref * ca[i] * 2.0 * c2
        Qn[i, 0] = gn * an0
        Qn[i, 1] = gn * an1
        if dim == 3:
            Qn[i, 2] = gn * an2
    for j in range(nm):
        P[j] *= pref
    return Q, Qc, Qn, P


@njit(cache=True)
def ellipsoid_closest(p, a2, tol, maxit):
    """Nearest points on the centred ellipsoid ``sum x^2/a2 = 1``.

    Solves ``sum a2 p^2/(a2+t)^2 = 1`` for the largest root ``t`` by Newton
    iteration safeguarded with bisection.  Points on the medial set, where
    the root sits at ``-min(a2)``, are resolved directly.  Returns the
    nearest points and the unsigned distances.
    """
    n, dim = p.shape
    q = np.empty_like(p)
    dist = np.empty(n)
    amin = a2.min()
    amax = a2.max()
    imin = 0
    nmin = 0
    for a in range(dim):
        if a2[a] == amin:
            nmin += 1
            if nmin == 1:
                imin = a
    for i in range(n):
        pn2 = 0.0
        for a in range(dim):
            pn2 += p[i, a] * p[i, a]
        # iterate on u = t + amin so the smallest denominator carries no cancellation
        lo = 0.0
        hi = amin + np.sqrt(amax * pn2) + 1e-300
        u = amin
        for _ in range(maxit):
            f = -1.0
            df = 0.0
            for a in range(dim):
                den = (a2[a] - amin) + u
                w = a2[a] * p[i, a] * p[i, a]
                f += w / (den * den)
                df -= 2.0 * w / (den * den * den)
            if f > 0:
                lo = u
            else:
                hi = u
            un = u - f / df if df != 0.0 else 0.5 * (lo + hi)
            if not (un > lo and un < hi):
                un = 0.5 * (lo + hi)
            done = abs(un - u) <= tol * u
            u = un
            if done:
                break
        for a in range(dim):
            q[i, a] = a2[a] * p[i, a] / ((a2[a] - amin) + u)
        if u <= 1e-9 * amin and (nmin < dim or pn2 == 0.0):
            # medial set: coordinates along the shortest axes are free
            rem = 1.0
            nrm2 = 0.0
            for a in range(dim):
                if a2[a] == amin:
                    q[i, a] = 0.0
                    nrm2 += p[i, a] * p[i, a]
                else:
                    q[i, a] = a2[a] * p[i, a] / (a2[a] - amin)
                    rem -= q[i, a] * q[i, a] / a2[a]
            scale = np.sqrt(amin * max(rem, 0.0))
            nrm = np.sqrt(nrm2)
            for a in range(dim):
                if a2[a] == amin:
                    if nrm > 0:
                        q[i, a] = scale * p[i, a] / nrm
                    elif a == imin:
                        q[i, a] = scale
        d2 = 0.0
        for a in range(dim):
            d2 += (p[i, a] - q[i, a]) ** 2
        dist[i] = np.sqrt(d2)
    return q, dist
