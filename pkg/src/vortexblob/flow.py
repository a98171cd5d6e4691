"""Lagrangian flows of blob velocity fields.

A self-consistent run advects the blob carriers with their own induced
velocity (the vortex-blob discretization of 2D Euler) and records the
carrier history; passive labels ride along. Two-time queries X(s, t, x)
re-integrate labels through the recorded history, forwards or backwards,
with carrier positions between stored steps given by cubic Hermite
interpolation of positions and velocities.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (BlowUpError, ExtrapolationWarning, GridMismatchError,
                         ParameterError, ResolutionWarning)
from .field import InitialVorticitySpec, VortexBlobField, eval_vorticity
from .grid import UniformGrid
from .velocity import VelocityEvaluator

INTEGRATORS = ("rk4", "rk2")
COUPLINGS = ("self_consistent", "frozen_field")


@dataclass(frozen=True)
class FlowConfig:
    dt: float
    integrator: str = "rk4"
    coupling: str = "self_consistent"
    method: str = "auto"
    theta: float = 0.4
    order: int = 8
    # abort once any trajectory leaves blowup_factor * initial support radius
    blowup_factor: float = 1e3

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.integrator not in INTEGRATORS:
            raise ParameterError(f"unknown integrator {self.integrator!r}")
        if self.coupling not in COUPLINGS:
            raise ParameterError(f"unknown coupling {self.coupling!r}")
        if not self.blowup_factor > 0:
            raise ParameterError("blowup_factor must be positive")

    def evaluator(self):
        return VelocityEvaluator(method=self.method, theta=self.theta, order=self.order)


def _steps(duration, dt):
    return max(1, int(math.ceil(abs(duration) / dt - 1e-9)))


class FieldHistory:
    """Carrier positions and velocities at the step times of a run.

    A frozen history holds a single snapshot valid at every time.
    """

    def __init__(self, times, positions, velocities, weights, blob_scale,
                 mollifier, frozen=False, config=None):
        self.times = np.asarray(times, dtype=float)
        self.positions = positions
        self.velocities = velocities
        self.weights = np.asarray(weights, dtype=float)
        self.blob_scale = blob_scale
        self.mollifier = mollifier
        self.frozen = frozen
        self.config = config
        self._cache = {}

    @property
    def n_steps(self):
        return self.times.size - 1

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def T(self):
        return float(self.times[-1])

    def field(self, k):
        pos = self.positions[0 if self.frozen else k]
        return VortexBlobField(pos, self.weights, self.blob_scale, self.mollifier)

    def fields(self, stride=1):
        idx = snapshot_indices(self.n_steps, stride)
        return [(float(self.times[k]), self.field(k)) for k in idx]

    def carriers_at(self, t):
        if self.frozen:
            return self.positions[0]
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ParameterError(f"time {t} outside the recorded range")
        dt = self.dt
        n = min(int(np.floor((t - self.times[0]) / dt + 1e-9)), self.n_steps)
        th = (t - self.times[n]) / dt
        if abs(th) < 1e-9 or n == self.n_steps:
            return self.positions[n]
        if abs(th - 1.0) < 1e-9:
            return self.positions[n + 1]
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = th**3 - 2 * th**2 + th
        h01 = -2 * th**3 + 3 * th**2
        h11 = th**3 - th**2
        return (h00 * self.positions[n] + h10 * dt * self.velocities[n]
                + h01 * self.positions[n + 1] + h11 * dt * self.velocities[n + 1])

    def evaluator_at(self, t):
        key = round(float(t), 12)
        ev = self._cache.get(key)
        if ev is None:
            if len(self._cache) > 4:
                self._cache.clear()
            ev = self.config.evaluator().fit(
                VortexBlobField(self.carriers_at(t), self.weights, self.blob_scale,
                                self.mollifier))
            self._cache[key] = ev
        return ev

    def velocity(self, points, t):
        return self.evaluator_at(t).predict(points)


def snapshot_indices(n_steps, stride):
    idx = list(range(0, n_steps + 1, max(int(stride), 1)))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return idx


class _FunctionVelocity:
    def __init__(self, fn):
        self.fn = fn

    def velocity(self, points, t):
        return np.asarray(self.fn(points, t), dtype=float)


def _check_bound(x, bound, t):
    if not np.all(np.isfinite(x)):
        raise BlowUpError(f"non-finite trajectory at t={t:.6g}", time=t, radius=math.inf)
    rmax = float(np.sqrt(np.max(np.einsum("ij,ij->i", x, x)))) if x.size else 0.0
    if rmax > bound:
        raise BlowUpError(f"trajectory left radius {bound:.3g} (reached {rmax:.3g}) "
                          f"at t={t:.6g}", time=t, radius=rmax)


def _step(vel, x, t, dt, scheme, bound):
    k1 = vel(x, t)
    if scheme == "rk2":
        y = x + 0.5 * dt * k1
        _check_bound(y, bound, t)
        k2 = vel(y, t + 0.5 * dt)
        return x + dt * k2
    y = x + 0.5 * dt * k1
    _check_bound(y, bound, t)
    k2 = vel(y, t + 0.5 * dt)
    y = x + 0.5 * dt * k2
    _check_bound(y, bound, t)
    k3 = vel(y, t + 0.5 * dt)
    y = x + dt * k3
    _check_bound(y, bound, t)
    k4 = vel(y, t + dt)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def transport(provider, points, t_from, t_to, dt, scheme="rk4", bound=math.inf):
    """Integrate dX/ds = v(s, X) from t_from to t_to (either direction)."""
    x = np.array(points, dtype=float).reshape(-1, 2)
    if t_to == t_from or x.shape[0] == 0:
        return x
    n = _steps(t_to - t_from, dt)
    h = (t_to - t_from) / n
    for k in range(n):
        t = t_from + k * h
        x = _step(provider.velocity, x, t, h, scheme, bound)
        _check_bound(x, bound, t + h)
    return x


def transport_to(provider, sets, t_to, dt, scheme="rk4", bound=math.inf):
    """Carry several label sets, each starting at its own time, to ``t_to``.

    ``sets`` is a list of (t_start, points). One sweep from the farthest start
    time picks up each set as it is passed, so the cost is one pass over
    the history instead of one per set. Returns arrays in input order.
    """
    if not sets:
        return []
    starts = [float(ts) for ts, _ in sets]
    if max(starts) > t_to and min(starts) < t_to:
        raise ParameterError("all start times must lie on one side of t_to")
    order = sorted(range(len(sets)), key=lambda i: -abs(t_to - starts[i]))
    results = [None] * len(sets)
    ids, parts = [], []
    t = starts[order[0]]
    k = 0
    while True:
        while k < len(order) and abs(starts[order[k]] - t) <= 1e-12 * max(1.0, abs(t)):
            ids.append(order[k])
            parts.append(np.array(sets[order[k]][1], dtype=float).reshape(-1, 2))
            k += 1
        nxt = starts[order[k]] if k < len(order) else t_to
        if nxt == t and k >= len(order):
            break
        sizes = [p.shape[0] for p in parts]
        x = transport(provider, np.concatenate(parts), t, nxt, dt, scheme, bound)
        parts = np.split(x, np.cumsum(sizes)[:-1])
        t = nxt
        if k >= len(order):
            break
    for i, p in zip(ids, parts):
        results[i] = p
    return results


class FlowMap:
    """Sampled two-time flow on a fixed set of labels.

    ``states[k]`` holds X(times[k], 0, x) for every label x. ``query(s, t)``
    returns X(s, t, x) with labels read as positions at time t; X(t, t, x)
    is x exactly.
    """

    def __init__(self, labels, times, states, provider, dt, scheme="rk4",
                 label_grid=None, bound=math.inf, history=None):
        self.labels = np.asarray(labels, dtype=float)
        self.labels.setflags(write=False)
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("checkpoint times must increase strictly")
        self.states = np.asarray(states, dtype=float)
        self.states.setflags(write=False)
        self.provider = provider
        self.dt = float(dt)
        self.scheme = scheme
        self.label_grid = label_grid
        self.bound = bound
        self.history = history
        self._queries = {}

    @property
    def T(self):
        return float(self.times[-1])

    def _check_time(self, t):
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ParameterError(f"time {t} outside the flow's range")

    def query(self, s, t, stride=1):
        self._check_time(s)
        self._check_time(t)
        if s == t:
            return self.labels.copy()
        if t == 0.0:
            hit = np.flatnonzero(np.abs(self.times - s) < 1e-12)
            if hit.size:
                return self.states[hit[0]].copy()
        key = (round(float(s), 12), round(float(t), 12), int(stride))
        if key not in self._queries:
            self._queries[key] = transport(self.provider, self.labels, t, s,
                                           self.dt * stride, self.scheme, self.bound)
        return self._queries[key].copy()

    def query_lattice(self, times, stride=1):
        """X(s, t, labels) for every pair of lattice times, as a dict keyed by
        (s, t). Each anchor t costs one forward and one backward sweep."""
        times = sorted({float(t) for t in times})
        for t in times:
            self._check_time(t)
        out = {}
        for t in times:
            out[(t, t)] = self.labels.copy()
            for direction in (1, -1):
                targets = [s for s in times if (s - t) * direction > 0]
                targets.sort(key=lambda s: abs(s - t))
                x = self.labels
                cur = t
                for s in targets:
                    key = (round(s, 12), round(t, 12), int(stride))
                    if key in self._queries:
                        x = self._queries[key]
                    elif t == 0.0 and np.any(np.abs(self.times - s) < 1e-12):
                        x = self.states[np.flatnonzero(np.abs(self.times - s) < 1e-12)[0]]
                    else:
                        x = transport(self.provider, x, cur, s, self.dt * stride,
                                      self.scheme, self.bound)
                        self._queries[key] = x
                    cur = s
                    out[(s, t)] = x.copy()
        return out

    def transport(self, points, t_from, t_to, stride=1):
        self._check_time(t_from)
        self._check_time(t_to)
        return transport(self.provider, points, t_from, t_to, self.dt * stride,
                         self.scheme, self.bound)

    def same_labels(self, other):
        if self.label_grid is not None and other.label_grid is not None:
            self.label_grid.check_same(other.label_grid)
        elif self.labels.shape != other.labels.shape or not np.array_equal(
                self.labels, other.labels):
            raise GridMismatchError("flows carry different label sets")


def _support_radius(*clouds):
    r = 0.0
    for c in clouds:
        if c.size:
            r = max(r, float(np.sqrt(np.max(np.einsum("ij,ij->i", c, c)))))
    return r


def _labels_from(labels):
    if isinstance(labels, UniformGrid):
        return labels.points, labels
    if labels is None:
        return np.zeros((0, 2)), None
    return np.asarray(labels, dtype=float).reshape(-1, 2), None


def _checkpoint_steps(checkpoints, n, T):
    if checkpoints is None:
        return list(range(n + 1))
    if isinstance(checkpoints, (int, np.integer)):
        steps = np.unique(np.round(np.linspace(0, n, int(checkpoints))).astype(int))
        return [int(k) for k in steps]
    steps = sorted({int(round(float(c) / T * n)) for c in checkpoints} | {0})
    return steps


def integrate_flow(field0, T, cfg, labels=None, checkpoints=None):
    """Run the blob dynamics (or a frozen field) to time T and trace labels.

    labels: UniformGrid or an (M, 2) array; checkpoints: None (every step),
    a count of evenly spaced checkpoints, or a list of times (rounded to the
    step grid). Raises BlowUpError when a carrier or label leaves
    cfg.blowup_factor times the initial support radius.
    """
    if not T > 0:
        raise ParameterError("T must be positive")
    if cfg.dt > T:
        raise ParameterError("dt must not exceed T")
    lab, grid = _labels_from(labels)
    n = _steps(T, cfg.dt)
    dt = T / n
    times = np.linspace(0.0, T, n + 1)
    ck = _checkpoint_steps(checkpoints, n, T)
    ckset = {k: i for i, k in enumerate(ck)}
    carriers = np.array(field0.positions, dtype=float)
    bound = cfg.blowup_factor * max(_support_radius(carriers, lab) + field0.blob_scale,
                                    field0.blob_scale)
    states = np.empty((len(ck), lab.shape[0], 2))

    if cfg.coupling == "frozen_field":
        history = FieldHistory(times, carriers[None], None, field0.weights,
                               field0.blob_scale, field0.mollifier, frozen=True,
                               config=cfg)
        x = lab.copy()
        for k in range(n + 1):
            if k in ckset:
                states[ckset[k]] = x
            if k == n:
                break
            x = _step(history.velocity, x, times[k], dt, cfg.integrator, bound)
            _check_bound(x, bound, times[k + 1])
        return FlowMap(lab, times[ck], states, history, dt, cfg.integrator, grid,
                       bound, history)

    nc = carriers.shape[0]
    pos_hist = np.empty((n + 1, nc, 2))
    vel_hist = np.empty((n + 1, nc, 2))
    ev = cfg.evaluator()

    def coupled(y, t):
        # carriers are the sources; carriers and labels are both targets
        src = VortexBlobField(y[:nc], field0.weights, field0.blob_scale, field0.mollifier)
        return ev.fit(src).predict(y)

    y = np.concatenate([carriers, lab])
    for k in range(n + 1):
        pos_hist[k] = y[:nc]
        if k in ckset:
            states[ckset[k]] = y[nc:]
        if k == n:
            vel_hist[k] = coupled(y, times[k])[:nc] if nc else 0.0
            break
        k1 = coupled(y, times[k])
        vel_hist[k] = k1[:nc]
        y = _step_with_first(coupled, y, times[k], dt, cfg.integrator, bound, k1)
        _check_bound(y, bound, times[k + 1])
    history = FieldHistory(times, pos_hist, vel_hist, field0.weights,
                           field0.blob_scale, field0.mollifier, frozen=False, config=cfg)
    return FlowMap(lab, times[ck], states, history, dt, cfg.integrator, grid, bound,
                   history)


def _step_with_first(vel, x, t, dt, scheme, bound, k1):
    cache = {"used": False}

    def v(y, s):
        if not cache["used"]:
            cache["used"] = True
            return k1
        return vel(y, s)

    return _step(v, x, t, dt, scheme, bound)


def flow_from_velocity(fn, labels, T, dt, integrator="rk4", checkpoints=None,
                       bound=math.inf):
    """FlowMap of a prescribed velocity fn(points, t) -> (M, 2)."""
    lab, grid = _labels_from(labels)
    n = _steps(T, dt)
    h = T / n
    times = np.linspace(0.0, T, n + 1)
    ck = _checkpoint_steps(checkpoints, n, T)
    provider = _FunctionVelocity(fn)
    states = np.empty((len(ck), lab.shape[0], 2))
    x = lab.copy()
    j = 0
    for k in range(n + 1):
        if j < len(ck) and ck[j] == k:
            states[j] = x
            j += 1
        if k == n:
            break
        x = _step(provider.velocity, x, times[k], h, integrator, bound)
    return FlowMap(lab, times[ck], states, provider, h, integrator, grid, bound)


class LagrangianFlow(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` runs the dynamics of a VortexBlobField,
    ``transform`` maps points given at time ``t`` to time ``s``."""

    def __init__(self, T=1.0, dt=1e-2, integrator="rk4", coupling="self_consistent",
                 method="auto", theta=0.4, order=8, checkpoints=None, s=None, t=0.0):
        self.T = T
        self.dt = dt
        self.integrator = integrator
        self.coupling = coupling
        self.method = method
        self.theta = theta
        self.order = order
        self.checkpoints = checkpoints
        self.s = s
        self.t = t

    def config(self):
        return FlowConfig(dt=self.dt, integrator=self.integrator, coupling=self.coupling,
                          method=self.method, theta=self.theta, order=self.order)

    def fit(self, X, y=None, labels=None):
        if not isinstance(X, VortexBlobField):
            raise ParameterError("LagrangianFlow.fit expects a VortexBlobField")
        self.flow_ = integrate_flow(X, self.T, self.config(), labels, self.checkpoints)
        return self

    def transform(self, X):
        check_is_fitted(self, "flow_")
        s = self.T if self.s is None else self.s
        return self.flow_.transport(X, self.t, s)


def backward_flow(flow, t, stride=1):
    """X(0, t, x) for the flow's labels read at time t, by reverse integration."""
    return flow.query(0.0, t, stride=stride)


def _initial_values(omega0, pts):
    if isinstance(omega0, InitialVorticitySpec):
        return omega0.evaluate(pts)
    if isinstance(omega0, VortexBlobField):
        return eval_vorticity(omega0, pts)
    return np.asarray(omega0(pts), dtype=float)


def pushforward_vorticity(omega0, flow, t, query_points=None, stride=1):
    """omega(t, x) = omega0(X(0, t, x)).

    Without query points the labels are used. Otherwise the backward map is
    interpolated bilinearly from the label grid; query points outside the
    grid get NaN and an ExtrapolationWarning.
    """
    back = backward_flow(flow, t, stride)
    if query_points is None:
        return _initial_values(omega0, back)
    q = np.asarray(query_points, dtype=float).reshape(-1, 2)
    if t == 0.0:
        return _initial_values(omega0, q)
    if flow.label_grid is None:
        raise ParameterError("interpolating the backward map needs a label grid")
    from scipy.interpolate import RegularGridInterpolator

    g = flow.label_grid
    xs, ys = g.axes()
    ny, nx = g.shape
    interp = RegularGridInterpolator((ys, xs), back.reshape(ny, nx, 2),
                                     bounds_error=False, fill_value=np.nan)
    mapped = interp(q[:, ::-1])
    outside = ~np.all(np.isfinite(mapped), axis=1)
    out = np.full(q.shape[0], np.nan)
    if np.any(~outside):
        out[~outside] = _initial_values(omega0, mapped[~outside])
    if outside.any():
        warnings.warn(f"{int(outside.sum())} query point(s) outside the label grid",
                      ExtrapolationWarning, stacklevel=2)
    return out


def compressibility_estimate(flow, t_from, t_to, cell_labels=32, stride=1):
    """Largest image density of the labels, relative to their initial density.

    Labels on the uniform grid at t_from are moved to t_to and counted in
    square cells of cell_labels x cell_labels grid spacings aligned with the
    label lattice. For the identity flow each full cell holds exactly
    cell_labels^2 labels, so the estimate is 1 exactly.
    """
    g = flow.label_grid
    if g is None:
        raise ParameterError("compressibility needs labels on a uniform grid")
    if cell_labels * cell_labels < 64:
        warnings.warn("fewer than 64 labels per counting cell; expect large variance",
                      ResolutionWarning, stacklevel=2)
    x = flow.query(t_to, t_from, stride=stride)
    side = cell_labels * g.spacing
    idx = np.floor((x - np.array(g.origin)) / side).astype(np.int64)
    idx -= idx.min(axis=0)
    ncol = int(idx[:, 0].max()) + 1
    counts = np.bincount(idx[:, 1] * ncol + idx[:, 0])
    return float(counts.max()) / (cell_labels * cell_labels)


def flow_measure_distance(flow_a, flow_b, gamma, r, s, t, stride=1):
    """Area of {x in B_r : |X_a(s, t, x) - X_b(s, t, x)| > gamma} by label counting."""
    flow_a.same_labels(flow_b)
    if flow_a.label_grid is None:
        raise ParameterError("flow_measure_distance needs labels on a uniform grid")
    xa = flow_a.query(s, t, stride=stride)
    xb = flow_b.query(s, t, stride=stride)
    inside = flow_a.label_grid.ball_mask(r)
    far = np.sum((xa - xb) ** 2, axis=1) > gamma * gamma
    return float(np.count_nonzero(inside & far)) * flow_a.label_grid.cell_area
