"""Barnes-Hut quadtree with complex multipole expansions for the blob
Biot-Savart sum.

The complex velocity of a point vortex cloud is

    u - i v = 1/(2 pi i) * sum_j G_j / (z - z_j),

and a cell centred at c with moments a_k = sum_j G_j (z_j - c)^k contributes
sum_k a_k / (z - c)^(k+1). A cell whose particle bounding box has side s,
radius r about c, seen from distance d, is accepted when s < theta * d and
the blob kernel equals the point kernel on all of it (d - r beyond the
mollifier's exact radius). Otherwise it is opened; leaves are summed
directly with the blob kernel.
"""
import math

import numba
import numpy as np

from ._kernels import TWO_PI, blob_velocity_at, exact_radius

MAX_DEPTH = 48


@numba.njit(cache=True)
def _build(px, py, gam, leaf_size, order):
    n = px.shape[0]
    perm = np.arange(n)
    cap = max(4 * (2 * n // max(leaf_size, 1) + 2), 16)
    start = np.empty(cap, dtype=np.int64)
    stop = np.empty(cap, dtype=np.int64)
    child = -np.ones((cap, 4), dtype=np.int64)
    cx = np.empty(cap)
    cy = np.empty(cap)
    half = np.empty(cap)
    depth = np.empty(cap, dtype=np.int64)

    xmin, xmax = px.min(), px.max()
    ymin, ymax = py.min(), py.max()
    start[0] = 0
    stop[0] = n
    cx[0] = 0.5 * (xmin + xmax)
    cy[0] = 0.5 * (ymin + ymax)
    half[0] = 0.5 * max(xmax - xmin, ymax - ymin) * (1.0 + 1e-12) + 1e-300
    depth[0] = 0
    nnodes = 1

    stack = np.empty(MAX_DEPTH * 4 + 8, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    buf = np.empty(n, dtype=np.int64)
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s, e = start[node], stop[node]
        if e - s <= leaf_size or depth[node] >= MAX_DEPTH:
            continue
        # bail out when every particle in the cell coincides
        same = True
        for k in range(s + 1, e):
            if px[perm[k]] != px[perm[s]] or py[perm[k]] != py[perm[s]]:
                same = False
                break
        if same:
            continue
        counts = np.zeros(4, dtype=np.int64)
        for k in range(s, e):
            j = perm[k]
            q = (2 if px[j] >= cx[node] else 0) + (1 if py[j] >= cy[node] else 0)
            counts[q] += 1
        offs = np.zeros(5, dtype=np.int64)
        for q in range(4):
            offs[q + 1] = offs[q] + counts[q]
        fill = offs[:4].copy()
        for k in range(s, e):
            j = perm[k]
            q = (2 if px[j] >= cx[node] else 0) + (1 if py[j] >= cy[node] else 0)
            buf[s + fill[q]] = j
            fill[q] += 1
        for k in range(s, e):
            perm[k] = buf[k]
        h = 0.5 * half[node]
        for q in range(4):
            if counts[q] == 0:
                continue
            if nnodes >= cap:
                newcap = 2 * cap
                start = _grow_i(start, newcap)
                stop = _grow_i(stop, newcap)
                child2 = -np.ones((newcap, 4), dtype=np.int64)
                child2[:cap] = child
                child = child2
                cx = _grow_f(cx, newcap)
                cy = _grow_f(cy, newcap)
                half = _grow_f(half, newcap)
                depth = _grow_i(depth, newcap)
                cap = newcap
            c = nnodes
            nnodes += 1
            start[c] = s + offs[q]
            stop[c] = s + offs[q + 1]
            cx[c] = cx[node] + (h if q >= 2 else -h)
            cy[c] = cy[node] + (h if q % 2 == 1 else -h)
            half[c] = h
            depth[c] = depth[node] + 1
            child[node, q] = c
            stack[sp] = c
            sp += 1

    start = start[:nnodes].copy()
    stop = stop[:nnodes].copy()
    child = child[:nnodes].copy()
    # expansion about the geometric centre of each cell's particles
    ex = np.empty(nnodes)
    ey = np.empty(nnodes)
    rad = np.empty(nnodes)
    side = np.empty(nnodes)
    absg = np.empty(nnodes)
    moments = np.zeros((nnodes, order + 1), dtype=np.complex128)
    sx = px[perm]
    sy = py[perm]
    sg = gam[perm]
    for c in range(nnodes):
        s, e = start[c], stop[c]
        x0, x1 = sx[s], sx[s]
        y0, y1 = sy[s], sy[s]
        for k in range(s, e):
            x0 = min(x0, sx[k])
            x1 = max(x1, sx[k])
            y0 = min(y0, sy[k])
            y1 = max(y1, sy[k])
        side[c] = max(x1 - x0, y1 - y0)
        ex[c] = 0.5 * (x0 + x1)
        ey[c] = 0.5 * (y0 + y1)
        r2max = 0.0
        ag = 0.0
        for k in range(s, e):
            dx = sx[k] - ex[c]
            dy = sy[k] - ey[c]
            r2max = max(r2max, dx * dx + dy * dy)
            ag += abs(sg[k])
            w = complex(dx, dy)
            p = complex(sg[k], 0.0)
            for m in range(order + 1):
                moments[c, m] += p
                p *= w
        rad[c] = math.sqrt(r2max)
        absg[c] = ag
    return sx, sy, sg, perm, start, stop, child, ex, ey, rad, side, absg, moments


@numba.njit(cache=True)
def _grow_i(a, n):
    b = np.empty(n, dtype=np.int64)
    b[: a.shape[0]] = a
    return b


@numba.njit(cache=True)
def _grow_f(a, n):
    b = np.empty(n)
    b[: a.shape[0]] = a
    return b


@numba.njit(parallel=True, cache=True)
def _evaluate(tx, ty, sx, sy, sg, start, stop, child, ex, ey, rad, side, absg,
              moments, theta, eps, mollifier):
    m = tx.shape[0]
    order = moments.shape[1] - 1
    out = np.empty((m, 2))
    bound = np.zeros(m)
    rexact = exact_radius(eps, mollifier)
    for i in numba.prange(m):
        stack = np.empty(4 * MAX_DEPTH + 8, dtype=np.int64)
        sp = 0
        stack[0] = 0
        sp = 1
        u = 0.0
        v = 0.0
        err = 0.0
        z = complex(tx[i], ty[i])
        while sp > 0:
            sp -= 1
            c = stack[sp]
            dx = tx[i] - ex[c]
            dy = ty[i] - ey[c]
            d = math.sqrt(dx * dx + dy * dy)
            if side[c] < theta * d and d - rad[c] > rexact:
                zeta = 1.0 / (z - complex(ex[c], ey[c]))
                acc = moments[c, order]
                for k in range(order - 1, -1, -1):
                    acc = acc * zeta + moments[c, k]
                acc *= zeta
                # w = acc / (2 pi i); u = Re w, v = -Im w
                u += acc.imag / TWO_PI
                v += acc.real / TWO_PI
                q = rad[c] / d
                err += absg[c] * q ** (order + 1) / ((d - rad[c]) * TWO_PI)
            elif child[c, 0] < 0 and child[c, 1] < 0 and child[c, 2] < 0 and child[c, 3] < 0:
                du, dv = blob_velocity_at(tx[i], ty[i], sx, sy, sg, start[c],
                                          stop[c], eps, mollifier)
                u += du
                v += dv
            else:
                for q in range(3, -1, -1):
                    if child[c, q] >= 0:
                        stack[sp] = child[c, q]
                        sp += 1
        out[i, 0] = u
        out[i, 1] = v
        bound[i] = err
    return out, bound


class QuadTree:
    """Quadtree over blob sources, built once and shared read-only."""

    def __init__(self, positions, weights, eps, mollifier_code, order=8,
                 leaf_size=32):
        positions = np.ascontiguousarray(positions, dtype=float)
        weights = np.ascontiguousarray(weights, dtype=float)
        self.eps = float(eps)
        self.mollifier_code = int(mollifier_code)
        self.order = int(order)
        (self.sx, self.sy, self.sg, self.perm, self.start, self.stop,
         self.child, self.ex, self.ey, self.rad, self.side, self.absg,
         self.moments) = _build(positions[:, 0].copy(), positions[:, 1].copy(),
                                weights, int(leaf_size), self.order)

    @property
    def n_nodes(self):
        return self.start.shape[0]

    def evaluate(self, targets, theta):
        """Velocities at ``targets`` and a per-target truncation bound."""
        targets = np.ascontiguousarray(targets, dtype=float)
        return _evaluate(targets[:, 0].copy(), targets[:, 1].copy(), self.sx,
                         self.sy, self.sg, self.start, self.stop, self.child,
                         self.ex, self.ey, self.rad, self.side, self.absg,
                         self.moments,
                         float(theta), self.eps, self.mollifier_code)
