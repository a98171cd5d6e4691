"""Compiled blob kernels shared by the direct sum, the treecode and the
vorticity reconstruction.

Mollifier codes: 0 = gaussian, 1 = compact bump supported in the unit ball.
"""
import math

import numba
import numpy as np

GAUSSIAN = 0
COMPACT_BUMP = 1

TWO_PI = 2.0 * math.pi
# exp(-GAUSS_CUTOFF**2 / 2) < 1e-12: beyond this many blob scales a gaussian
# blob is indistinguishable from a point vortex.
GAUSS_CUTOFF = 7.5


@numba.njit(cache=True)
def _expint(n, x):
    # Exponential integral E_n(x), x > 0 (series for x <= 1, Lentz continued
    # fraction otherwise).
    euler = 0.5772156649015329
    nm1 = n - 1
    if x > 1.0:
        b = x + n
        c = 1.0e300
        d = 1.0 / b
        h = d
        for i in range(1, 200):
            an = -i * (nm1 + i)
            b += 2.0
            d = 1.0 / (an * d + b)
            c = b + an / c
            de = c * d
            h *= de
            if abs(de - 1.0) < 1e-15:
                break
        return h * math.exp(-x)
    if nm1 != 0:
        ans = 1.0 / nm1
    else:
        ans = -math.log(x) - euler
    fact = 1.0
    for i in range(1, 200):
        fact *= -x / i
        if i != nm1:
            de = -fact / (i - nm1)
        else:
            psi = -euler
            for ii in range(1, nm1 + 1):
                psi += 1.0 / ii
            de = fact * (-math.log(x) + psi)
        ans += de
        if abs(de) < abs(ans) * 1e-16:
            break
    return ans


E2_ONE = 0.14849550677592205  # E_2(1)
BUMP_NORM = 1.0 / (math.pi * E2_ONE)  # rho(0) * e for the unit bump


@numba.njit(cache=True)
def bump_mass_fraction(s):
    """Fraction of the unit bump's mass inside radius ``s``."""
    if s >= 1.0:
        return 1.0
    if s <= 0.0:
        return 0.0
    w = 1.0 / (1.0 - s * s)
    if w > 700.0:
        return 1.0
    return 1.0 - _expint(2, w) / (w * E2_ONE)


@numba.njit(cache=True)
def swirl_factor(r2, eps, mollifier):
    """Ratio K_eps / K at squared distance r2 (circulation inside radius r)."""
    if mollifier == GAUSSIAN:
        x = 0.5 * r2 / (eps * eps)
        # exp is cheaper than expm1; the series covers the cancellation range
        if x > 1e-3:
            return 1.0 - math.exp(-x)
        return x * (1.0 - x * (0.5 - x / 6.0))
    return bump_mass_fraction(math.sqrt(r2) / eps)


@numba.njit(cache=True)
def blob_density(r2, eps, mollifier):
    """Mollifier rho_eps evaluated at squared distance r2."""
    if mollifier == GAUSSIAN:
        return math.exp(-0.5 * r2 / (eps * eps)) / (TWO_PI * eps * eps)
    s2 = r2 / (eps * eps)
    if s2 >= 1.0:
        return 0.0
    return BUMP_NORM * math.exp(-1.0 / (1.0 - s2)) / (eps * eps)


@numba.njit(cache=True)
def exact_radius(eps, mollifier):
    """Distance beyond which K_eps equals K to double precision."""
    if mollifier == GAUSSIAN:
        return GAUSS_CUTOFF * eps
    return eps


@numba.njit(cache=True)
def blob_velocity_at(tx, ty, px, py, gam, start, stop, eps, mollifier):
    # Sequential accumulation in index order keeps each target reproducible.
    u = 0.0
    v = 0.0
    rx = exact_radius(eps, mollifier)
    rx2 = rx * rx
    for j in range(start, stop):
        dx = tx - px[j]
        dy = ty - py[j]
        r2 = dx * dx + dy * dy
        if r2 == 0.0:
            continue
        if r2 >= rx2:
            f = gam[j] / (TWO_PI * r2)
        else:
            f = gam[j] * swirl_factor(r2, eps, mollifier) / (TWO_PI * r2)
        u -= dy * f
        v += dx * f
    return u, v


@numba.njit(parallel=True, cache=True)
def direct_velocity(tx, ty, px, py, gam, eps, mollifier):
    m = tx.shape[0]
    out = np.empty((m, 2))
    n = px.shape[0]
    for i in numba.prange(m):
        u, v = blob_velocity_at(tx[i], ty[i], px, py, gam, 0, n, eps, mollifier)
        out[i, 0] = u
        out[i, 1] = v
    return out


@numba.njit(parallel=True, cache=True)
def point_kernel_velocity(tx, ty, px, py, gam):
    # Singular Biot-Savart sum, coincident pairs skipped.
    m = tx.shape[0]
    out = np.empty((m, 2))
    n = px.shape[0]
    for i in numba.prange(m):
        u = 0.0
        v = 0.0
        for j in range(n):
            dx = tx[i] - px[j]
            dy = ty[i] - py[j]
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                continue
            f = gam[j] / (TWO_PI * r2)
            u -= dy * f
            v += dx * f
        out[i, 0] = u
        out[i, 1] = v
    return out


@numba.njit(cache=True)
def _bin_sources(px, py, x0, y0, cell, nx, ny):
    n = px.shape[0]
    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    idx = np.empty(n, dtype=np.int64)
    for j in range(n):
        ix = min(max(int((px[j] - x0) / cell), 0), nx - 1)
        iy = min(max(int((py[j] - y0) / cell), 0), ny - 1)
        idx[j] = ix * ny + iy
        counts[idx[j] + 1] += 1
    for k in range(nx * ny):
        counts[k + 1] += counts[k]
    order = np.empty(n, dtype=np.int64)
    fill = counts[:-1].copy()
    for j in range(n):
        order[fill[idx[j]]] = j
        fill[idx[j]] += 1
    return counts, order


@numba.njit(parallel=True, cache=True)
def blob_vorticity(tx, ty, px, py, gam, eps, mollifier):
    """Sum_j gam_j rho_eps(t - p_j) using a cell list of cutoff-sized bins."""
    m = tx.shape[0]
    out = np.zeros(m)
    n = px.shape[0]
    if n == 0:
        return out
    cut = exact_radius(eps, mollifier)
    x0 = px.min() - cut
    y0 = py.min() - cut
    nx = int((px.max() + cut - x0) / cut) + 1
    ny = int((py.max() + cut - y0) / cut) + 1
    counts, order = _bin_sources(px, py, x0, y0, cut, nx, ny)
    cut2 = cut * cut
    for i in numba.prange(m):
        ix = int(math.floor((tx[i] - x0) / cut))
        iy = int(math.floor((ty[i] - y0) / cut))
        acc = 0.0
        for a in range(ix - 1, ix + 2):
            if a < 0 or a >= nx:
                continue
            for b in range(iy - 1, iy + 2):
                if b < 0 or b >= ny:
                    continue
                c = a * ny + b
                for k in range(counts[c], counts[c + 1]):
                    j = order[k]
                    dx = tx[i] - px[j]
                    dy = ty[i] - py[j]
                    r2 = dx * dx + dy * dy
                    if r2 < cut2:
                        acc += gam[j] * blob_density(r2, eps, mollifier)
        out[i] = acc
    return out
