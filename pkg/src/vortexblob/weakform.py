"""Test functions and residuals of the weak formulations of 2D Euler.

Vorticity integrals use the particles as quadrature (omega dx ~ sum_i G_i
delta_{x_i}); double integrals become pair sums over i < j with the run's
blob kernel (diagonal 0); velocity integrals use a uniform grid over the
test function's support. Time integrals use the trapezoid rule on stored
steps, every ``time_stride``-th step.

Sign conventions: for a scalar test function phi and a vector one phi_bar,

    R_sym_vort = int int d_t phi omega - int int int H_phi omega omega
                 + int phi(0) omega0 - int phi(T) omega(T)
    R_sym_vel  = int int d_t phi_bar . v - int int int Hbar omega omega
                 + int phi_bar(0) . v0 - int phi_bar(T) . v(T)

The final-time terms vanish for test functions whose time profile ends at
T; they let time-independent test functions be used on finite runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numba
import numpy as np
from scipy.optimize import minimize_scalar

from ._kernels import TWO_PI, swirl_factor
from .exceptions import CoverageError, EnergyGuardError, ParameterError
from .field import VortexBlobField, eval_vorticity
from .flow import FieldHistory, FlowMap, snapshot_indices, transport_to
from .grid import UniformGrid
from .velocity import VelocityEvaluator

# --------------------------------------------------------------------------
# time profiles


@dataclass(frozen=True)
class TimeProfile:
    """q(t) with q(t_end) = 0: "cosine" is (1 + cos(pi t / t_end)) / 2 on
    [0, t_end] and 0 afterwards; "constant" is 1 and does not vanish."""

    kind: str = "cosine"
    t_end: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cosine", "constant"):
            raise ParameterError(f"unknown time profile {self.kind!r}")
        if not self.t_end > 0:
            raise ParameterError("t_end must be positive")

    def value(self, t):
        if self.kind == "constant":
            return 1.0
        if t >= self.t_end:
            return 0.0
        return 0.5 * (1.0 + math.cos(math.pi * t / self.t_end))

    def derivative(self, t):
        if self.kind == "constant" or t >= self.t_end:
            return 0.0
        return -0.5 * math.pi / self.t_end * math.sin(math.pi * t / self.t_end)


# --------------------------------------------------------------------------
# radial bump profile g(s) = exp(1 - 1/(1 - s)), s = |x - c|^2 / R^2


def _g_derivs(s):
    s = np.asarray(s, dtype=float)
    inside = s < 1.0
    a = np.where(inside, 1.0 / np.where(inside, 1.0 - s, 1.0), 0.0)
    g = np.where(inside, np.exp(np.where(inside, 1.0 - a, 0.0)), 0.0)
    g1 = -g * a**2
    g2 = g * (a**4 - 2.0 * a**3)
    g3 = g * (-(a**6) + 6.0 * a**5 - 6.0 * a**4)
    return g, g1, g2, g3


def _sup_on_unit(fn):
    s = np.linspace(0.0, 1.0, 20001)[:-1]
    vals = fn(s)
    k = int(np.argmax(vals))
    lo, hi = s[max(k - 1, 0)], s[min(k + 1, s.size - 1)]
    best = float(vals[k])
    if hi > lo:
        res = minimize_scalar(lambda x: -float(fn(np.array([x]))[0]), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


def _bump_constants():
    def lip0(s):
        _, g1, _, _ = _g_derivs(s)
        return 2.0 * np.abs(g1) * np.sqrt(s)

    def lip1(s):
        _, g1, g2, _ = _g_derivs(s)
        return np.maximum(2.0 * np.abs(g1), 2.0 * np.abs(g1 + 2.0 * s * g2))

    def lip2(s):
        _, _, g2, g3 = _g_derivs(s)
        return 12.0 * np.abs(g2) * np.sqrt(s) + 8.0 * np.abs(g3) * s**1.5

    return _sup_on_unit(lip0), _sup_on_unit(lip1), _sup_on_unit(lip2)


_LIP0, _LIP1, _LIP2 = _bump_constants()
# margin over the optimizer's tolerance
_SAFETY = 1.0 + 1e-9


def _as_points(x):
    return np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, 2)


class TestFunction:
    """Common interface: ``kind`` is "scalar_c2" or "vector_c1_divfree";
    ``value``, ``gradient``, ``dt_value`` take (t, points); ``balls`` lists
    (center, radius) pairs covering the support."""

    __test__ = False  # keep pytest from collecting the class

    kind = "scalar_c2"
    profile: TimeProfile

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def __rmul__(self, c):
        return LinearCombination([(float(c), self)])

    def __mul__(self, c):
        return LinearCombination([(float(c), self)])

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)])

    def support_mask(self, x):
        x = _as_points(x)
        mask = np.zeros(x.shape[0], dtype=bool)
        for c, r in self.balls:
            mask |= np.sum((x - c) ** 2, axis=1) < r * r
        return mask

    def support_box(self, pad=0.0):
        lo = np.min([np.asarray(c) - r for c, r in self.balls], axis=0) - pad
        hi = np.max([np.asarray(c) + r for c, r in self.balls], axis=0) + pad
        return lo, hi

    def vanishes_at(self, t):
        return self.profile.value(t) == 0.0


class ScalarBump(TestFunction):
    """phi(t, x) = q(t) exp(1 - 1/(1 - |x - c|^2 / R^2)) inside B_R(c), 0 outside."""

    kind = "scalar_c2"

    def __init__(self, center, radius, profile=None):
        if not radius > 0:
            raise ParameterError("radius must be positive")
        self.center = np.asarray(center, dtype=float).reshape(2)
        self.radius = float(radius)
        self.profile = profile or TimeProfile()
        r = self.radius
        self.lip_constant = _SAFETY * _LIP0 / r
        self.lip_gradient_constant = _SAFETY * _LIP1 / r**2
        self.lip_hessian_constant = _SAFETY * _LIP2 / r**3

    @property
    def balls(self):
        return [(self.center, self.radius)]

    def _parts(self, x):
        d = _as_points(x) - self.center
        s = np.sum(d * d, axis=1) / self.radius**2
        return d, s, _g_derivs(s)

    def spatial_value(self, x):
        _, _, (g, _, _, _) = self._parts(x)
        return g

    def spatial_gradient(self, x):
        d, _, (_, g1, _, _) = self._parts(x)
        return (2.0 * g1 / self.radius**2)[:, None] * d

    def spatial_hessian(self, x):
        d, _, (_, g1, g2, _) = self._parts(x)
        r2 = self.radius**2
        a = 2.0 * g1 / r2
        b = 4.0 * g2 / r2**2
        h = b[:, None, None] * d[:, :, None] * d[:, None, :]
        h[:, 0, 0] += a
        h[:, 1, 1] += a
        return h

    def value(self, t, x):
        return self.profile.value(t) * self.spatial_value(x)

    def gradient(self, t, x):
        return self.profile.value(t) * self.spatial_gradient(x)

    def hessian(self, t, x):
        return self.profile.value(t) * self.spatial_hessian(x)

    def dt_value(self, t, x):
        return self.profile.derivative(t) * self.spatial_value(x)

    def dt_gradient(self, t, x):
        return self.profile.derivative(t) * self.spatial_gradient(x)


def make_bump(center, radius, t_end, profile="cosine"):
    """Scalar C^2 bump with value q(t) at its centre and q(t_end) = 0."""
    return ScalarBump(center, radius, TimeProfile(profile, t_end))


class DivFreeField(TestFunction):
    """phi_bar = -grad^perp psi = (d2 psi, -d1 psi); divergence-free by construction."""

    kind = "vector_c1_divfree"

    def __init__(self, psi):
        if psi.kind != "scalar_c2":
            raise ParameterError("stream function must be a scalar test function")
        self.psi = psi
        self.profile = psi.profile
        self.lip_constant = psi.lip_gradient_constant
        self.lip_gradient_constant = psi.lip_hessian_constant

    @property
    def balls(self):
        return self.psi.balls

    def value(self, t, x):
        g = self.psi.gradient(t, x)
        return np.stack([g[:, 1], -g[:, 0]], axis=1)

    def gradient(self, t, x):
        """Jacobian J[:, i, j] = d_j phi_i."""
        h = self.psi.hessian(t, x)
        j = np.empty_like(h)
        j[:, 0, :] = h[:, 1, :]
        j[:, 1, :] = -h[:, 0, :]
        return j

    def divergence(self, t, x):
        j = self.gradient(t, x)
        return j[:, 0, 0] + j[:, 1, 1]

    def dt_value(self, t, x):
        g = self.psi.dt_gradient(t, x)
        return np.stack([g[:, 1], -g[:, 0]], axis=1)


def divfree_from_stream(psi):
    return DivFreeField(psi)


class LinearCombination(TestFunction):
    """sum_k c_k phi_k over test functions of one kind sharing a time profile."""

    def __init__(self, terms):
        flat = []
        for c, f in terms:
            if isinstance(f, LinearCombination):
                flat.extend((c * c2, f2) for c2, f2 in f.terms)
            else:
                flat.append((float(c), f))
        kinds = {f.kind for _, f in flat}
        if len(kinds) != 1:
            raise ParameterError("cannot combine scalar and vector test functions")
        profiles = {f.profile for _, f in flat}
        if len(profiles) != 1:
            raise ParameterError("combined test functions must share a time profile")
        self.terms = flat
        self.kind = kinds.pop()
        self.profile = profiles.pop()
        self.lip_constant = sum(abs(c) * f.lip_constant for c, f in flat)
        self.lip_gradient_constant = sum(abs(c) * f.lip_gradient_constant for c, f in flat)

    @property
    def balls(self):
        return [b for _, f in self.terms for b in f.balls]

    def _combine(self, name, t, x):
        out = None
        for c, f in self.terms:
            v = c * getattr(f, name)(t, x)
            out = v if out is None else out + v
        return out

    def value(self, t, x):
        return self._combine("value", t, x)

    def gradient(self, t, x):
        return self._combine("gradient", t, x)

    def dt_value(self, t, x):
        return self._combine("dt_value", t, x)

    def hessian(self, t, x):
        return self._combine("hessian", t, x)

    def dt_gradient(self, t, x):
        return self._combine("dt_gradient", t, x)


# --------------------------------------------------------------------------
# nonlinearities


@dataclass(frozen=True)
class Nonlinearity:
    """Bounded C^1 beta with its derivative; ``sup_abs`` is sup |beta|."""

    name: str
    beta: object
    beta_prime: object
    sup_abs: float

    def __call__(self, z):
        return self.beta(np.asarray(z, dtype=float))


def arctan_nonlinearity():
    return Nonlinearity("arctan", np.arctan, lambda z: 1.0 / (1.0 + z * z), math.pi / 2)


def constant_nonlinearity(c=1.0):
    return Nonlinearity("constant", lambda z: np.full_like(z, c, dtype=float),
                        lambda z: np.zeros_like(z, dtype=float), abs(c))


def clipped_identity(level):
    """z for |z| <= level / 2, smoothly saturating at +-level beyond."""
    if not level > 0:
        raise ParameterError("level must be positive")
    a = 0.5 * level

    def beta(z):
        z = np.asarray(z, dtype=float)
        over = np.abs(z) > a
        # C^1 tail: a + (level - a) tanh((|z| - a) / (level - a))
        tail = np.sign(z) * (a + (level - a) * np.tanh((np.abs(z) - a) / (level - a)))
        return np.where(over, tail, z)

    def beta_prime(z):
        z = np.asarray(z, dtype=float)
        over = np.abs(z) > a
        return np.where(over, 1.0 / np.cosh((np.abs(z) - a) / (level - a)) ** 2, 1.0)

    return Nonlinearity("clipped_identity", beta, beta_prime, float(level))


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ResidualReport:
    formulation: str
    residual: float
    quadrature_error_estimate: float
    term_breakdown: dict = dc_field(default_factory=dict)

    @property
    def scale(self):
        """Sum of the magnitudes of the terms: the size the residual cancels from."""
        return float(sum(abs(v) for v in self.term_breakdown.values()))

    @property
    def relative(self):
        s = self.scale
        return abs(self.residual) / s if s > 0 else 0.0

    def __float__(self):
        return self.residual


@dataclass(frozen=True)
class IdentityGap:
    gap: float
    pair_term: float
    energy_term: float
    # integral of |grad phi : (v x v)| over the support
    scale: float

    @property
    def relative(self):
        return self.gap / self.scale if self.scale > 0 else 0.0

    def __float__(self):
        return self.gap


# --------------------------------------------------------------------------
# pair sums


@numba.njit(parallel=True, cache=True)
def _pair_sum(px, py, gam, fx, fy, active, is_active, eps, mollifier, use_blob, perp_mode):
    # sum over unordered pairs {i, j} with i active, counted once. perp_mode 0:
    # -K(d) . (F_i - F_j) (twice H_phi with F = grad phi); perp_mode 1:
    # K(d)^perp . (F_i - F_j) (twice Hbar_phi with F = phi).
    n = px.shape[0]
    na = active.shape[0]
    part = np.zeros(na)
    for a in numba.prange(na):
        i = active[a]
        acc = 0.0
        for j in range(n):
            if j == i or (is_active[j] and j < i):
                continue
            dx = px[i] - px[j]
            dy = py[i] - py[j]
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                continue
            f = 1.0 / (TWO_PI * r2)
            if use_blob:
                f *= swirl_factor(r2, eps, mollifier)
            gx = fx[i] - fx[j]
            gy = fy[i] - fy[j]
            if perp_mode == 0:
                # K = (-dy, dx) f
                acc -= (-dy * gx + dx * gy) * f * gam[j]
            else:
                # K^perp = -(dx, dy) f
                acc -= (dx * gx + dy * gy) * f * gam[j]
        part[a] = acc * gam[i]
    return part


def _active_set(phi, positions):
    mask = phi.support_mask(positions)
    return np.flatnonzero(mask).astype(np.int64), mask


def pair_sum(field, phi, t, kernel="blob"):
    """sum_i sum_j G_i G_j H(t, x_i, x_j): H_phi for scalar phi, Hbar_phi for
    vector phi. Computed over i < j and doubled; only pairs touching the
    support contribute."""
    if kernel not in ("blob", "point"):
        raise ParameterError(f"unknown kernel {kernel!r}")
    pos = field.positions
    if len(field) == 0 or phi.profile.value(t) == 0.0:
        return 0.0
    active, mask = _active_set(phi, pos)
    if active.size == 0:
        return 0.0
    if phi.kind == "scalar_c2":
        f = phi.gradient(t, pos)
        mode = 0
    else:
        f = phi.value(t, pos)
        mode = 1
    part = _pair_sum(np.ascontiguousarray(pos[:, 0]), np.ascontiguousarray(pos[:, 1]),
                     np.ascontiguousarray(field.weights), np.ascontiguousarray(f[:, 0]),
                     np.ascontiguousarray(f[:, 1]), active, mask, field.blob_scale,
                     field.mollifier.code, kernel == "blob", mode)
    # an unordered pair carries 2 H, which is its share of the ordered double sum
    return math.fsum(part)


# --------------------------------------------------------------------------
# runs


@dataclass
class _Run:
    times: np.ndarray
    fields: list
    indices: list
    history: FieldHistory | None
    T: float


def _as_run(run, time_stride):
    if isinstance(run, FlowMap):
        run = run.history
    if isinstance(run, FieldHistory):
        idx = snapshot_indices(run.n_steps, time_stride)
        times = run.times[idx]
        fields = [run.field(k) for k in idx]
        return _Run(np.asarray(times), fields, idx, run, float(run.times[-1]))
    seq = list(run)
    if not seq:
        raise ParameterError("empty run")
    seq = seq[::max(int(time_stride), 1)] if time_stride > 1 and len(seq) > 2 else seq
    times = np.array([float(t) for t, _ in seq])
    if np.any(np.diff(times) <= 0):
        raise ParameterError("run times must increase strictly")
    return _Run(times, [f for _, f in seq], list(range(len(seq))), None, float(times[-1]))


def _trapezoid_weights(times):
    w = np.zeros_like(times)
    if times.size > 1:
        dt = np.diff(times)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    return w


def _time_integral(times, values):
    """Time integral of sampled values and an error estimate.

    On uniform nodes with an even number of intervals this is composite
    Simpson, i.e. the trapezoid rule with one Richardson step against the
    rule on every other node; the estimate is the trapezoid gap |T_h - T_2h|,
    which bounds the error of the finer trapezoid sum. Otherwise the
    trapezoid rule is used with the same estimate.
    """
    values = np.asarray(values, dtype=float)
    fine = float(np.dot(_trapezoid_weights(times), values))
    if times.size < 5:
        return fine, abs(fine)
    sub = list(range(0, times.size, 2))
    if sub[-1] != times.size - 1:
        sub.append(times.size - 1)
    coarse = float(np.dot(_trapezoid_weights(times[sub]), values[sub]))
    gap = abs(fine - coarse)
    dt = np.diff(times)
    if (times.size - 1) % 2 == 0 and np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        return fine + (fine - coarse) / 3.0, gap
    return fine, gap


def _check_final(phi, run):
    return not phi.vanishes_at(run.T)


def _check_profile(phi, run):
    if phi.profile.kind == "cosine" and phi.profile.t_end > run.T + 1e-12:
        raise ParameterError("test function t_end exceeds the run's final time")


# --------------------------------------------------------------------------
# grids over the support


def _support_grid(phi, spacing):
    lo, hi = phi.support_box()
    grid = UniformGrid.covering_box(lo, hi, spacing)
    pts = grid.points
    mask = phi.support_mask(pts)
    return grid, pts[mask]


def _default_spacing(phi, blob_scale):
    # two nodes per blob scale resolve the velocity kink at patch edges
    r = min(r for _, r in phi.balls)
    return min(r / 24.0, 0.5 * blob_scale)


def _grid_integral(phi, spacing, integrand):
    """Grid quadrature of integrand(points) over supp phi, with the gap to
    the sub-lattice of every other node as error estimate."""
    grid, _ = _support_grid(phi, spacing)
    pts = grid.points
    mask = phi.support_mask(pts)
    vals = np.zeros(pts.shape[0])
    if mask.any():
        vals[mask] = integrand(pts[mask])
    fine = math.fsum(vals) * grid.cell_area
    ny, nx = grid.shape
    sub = vals.reshape(ny, nx)[::2, ::2]
    coarse = math.fsum(sub.ravel()) * grid.cell_area * 4.0
    return fine, abs(fine - coarse)


def _domain_check(phi, run):
    # the test function must sit inside the region the run resolves
    lo, hi = phi.support_box()
    for f in (run.fields[0], run.fields[-1]):
        if len(f) == 0:
            continue
        flo, fhi = f.bounding_box(pad=0.0)
        extent = max(float(np.max(fhi - flo)), 1.0)
        if np.any(lo < flo - 100.0 * extent) or np.any(hi > fhi + 100.0 * extent):
            raise CoverageError("test function support lies outside the simulated domain")


def _evaluator(field, method):
    return VelocityEvaluator(method=method).fit(field)


# --------------------------------------------------------------------------
# residuals


def symmetrized_vorticity_residual(run, phi, omega0=None, *, time_stride=1,
                                   kernel="blob"):
    """Residual of the symmetrized vorticity formulation along a run.

    run: FieldHistory, FlowMap, or a sequence of (t, VortexBlobField).
    omega0 defaults to the run's initial field.
    """
    if phi.kind != "scalar_c2":
        raise ParameterError("symmetrized vorticity residual needs a scalar test function")
    r = _as_run(run, time_stride)
    _check_profile(phi, r)
    _domain_check(phi, r)
    omega0 = omega0 if omega0 is not None else r.fields[0]

    dt_vals = []
    pair_vals = []
    for t, f in zip(r.times, r.fields):
        if len(f) == 0:
            dt_vals.append(0.0)
            pair_vals.append(0.0)
            continue
        dt_vals.append(math.fsum(f.weights * phi.dt_value(t, f.positions)))
        pair_vals.append(pair_sum(f, phi, t, kernel))
    time_term, e1 = _time_integral(r.times, dt_vals)
    pair_term, e2 = _time_integral(r.times, pair_vals)
    initial = math.fsum(omega0.weights * phi.value(0.0, omega0.positions)) if len(omega0) else 0.0
    terms = {"time": time_term, "kernel": -pair_term, "initial": initial}
    if _check_final(phi, r):
        fT = r.fields[-1]
        terms["final"] = -(math.fsum(fT.weights * phi.value(r.T, fT.positions))
                           if len(fT) else 0.0)
    return ResidualReport("symmetrized_vorticity", math.fsum(terms.values()), e1 + e2, terms)


def _velocity_on(f, pts, method):
    if len(f) == 0 or pts.shape[0] == 0:
        return np.zeros((pts.shape[0], 2))
    return _evaluator(f, method).predict(pts)


def _velocity_pairing(phi, f, t, spacing, method, which="value"):
    get = phi.value if which == "value" else phi.dt_value

    def integrand(p):
        return np.sum(get(t, p) * _velocity_on(f, p, method), axis=1)

    return _grid_integral(phi, spacing, integrand)


def symmetrized_velocity_residual(run, phi, v0_term=None, *, time_stride=1,
                                  grid_spacing=None, method="auto", kernel="blob"):
    """Residual of the symmetrized velocity formulation along a run.

    ``v0_term`` is int phi(0) . v0; by default it is computed on the grid
    from the run's initial field.
    """
    if phi.kind != "vector_c1_divfree":
        raise ParameterError("symmetrized velocity residual needs a divergence-free test function")
    r = _as_run(run, time_stride)
    _check_profile(phi, r)
    _domain_check(phi, r)
    h = grid_spacing or _default_spacing(phi, r.fields[0].blob_scale)
    qerr = 0.0
    dt_vals, pair_vals = [], []
    for t, f in zip(r.times, r.fields):
        if phi.profile.derivative(t) != 0.0:
            val, e = _velocity_pairing(phi, f, t, h, method, "dt")
            qerr = max(qerr, e)
        else:
            val = 0.0
        dt_vals.append(val)
        pair_vals.append(pair_sum(f, phi, t, kernel) if len(f) else 0.0)
    time_term, e1 = _time_integral(r.times, dt_vals)
    pair_term, e2 = _time_integral(r.times, pair_vals)
    if v0_term is None:
        v0_term, e0 = _velocity_pairing(phi, r.fields[0], 0.0, h, method)
        qerr += e0
    terms = {"time": time_term, "kernel": -pair_term, "initial": float(v0_term)}
    if _check_final(phi, r):
        vT, eT = _velocity_pairing(phi, r.fields[-1], r.T, h, method)
        terms["final"] = -vT
        qerr += eT
    return ResidualReport("symmetrized_velocity", math.fsum(terms.values()),
                          e1 + e2 + qerr * max(r.T, 1.0), terms)


def _energy_guard(phi, f, t, spacing, method, tol=0.05):
    def e(h):
        val, _ = _grid_integral(phi, h, lambda p: np.sum(_velocity_on(f, p, method) ** 2, axis=1))
        return val

    coarse = e(spacing)
    fine = e(0.5 * spacing)
    if not (math.isfinite(coarse) and math.isfinite(fine)):
        raise EnergyGuardError(f"|v|^2 not finite on the test support at t={t:.4g}")
    if fine > 0 and abs(fine - coarse) > tol * fine:
        raise EnergyGuardError(
            f"int |v|^2 over the test support changed by {abs(fine - coarse) / fine:.1%} "
            f"under grid refinement at t={t:.4g}: velocity not resolved as L^2_loc")
    return fine


def _flux_integrand(phi, f, t, method):
    def integrand(p):
        v = _velocity_on(f, p, method)
        j = phi.gradient(t, p)
        return np.einsum("ni,nij,nj->n", v, j, v)

    return integrand


def weak_velocity_residual(run, phi, *, time_stride=1, grid_spacing=None, method="auto",
                           guard_tol=0.05):
    """Residual of the classical weak velocity formulation; refuses runs whose
    velocity is not resolved as square-integrable on supp phi."""
    if phi.kind != "vector_c1_divfree":
        raise ParameterError("weak velocity residual needs a divergence-free test function")
    r = _as_run(run, time_stride)
    _check_profile(phi, r)
    _domain_check(phi, r)
    h = grid_spacing or _default_spacing(phi, r.fields[0].blob_scale)
    for k in sorted({0, len(r.fields) // 2, len(r.fields) - 1}):
        if len(r.fields[k]):
            _energy_guard(phi, r.fields[k], r.times[k], h, method, guard_tol)
    qerr = 0.0
    dt_vals, flux_vals = [], []
    for t, f in zip(r.times, r.fields):
        if len(f) == 0:
            dt_vals.append(0.0)
            flux_vals.append(0.0)
            continue
        if phi.profile.derivative(t) != 0.0:
            val, e = _velocity_pairing(phi, f, t, h, method, "dt")
            qerr = max(qerr, e)
        else:
            val = 0.0
        dt_vals.append(val)
        if phi.profile.value(t) != 0.0:
            fl, e = _grid_integral(phi, h, _flux_integrand(phi, f, t, method))
            qerr = max(qerr, e)
        else:
            fl = 0.0
        flux_vals.append(fl)
    time_term, e1 = _time_integral(r.times, dt_vals)
    flux_term, e2 = _time_integral(r.times, flux_vals)
    v0, e0 = _velocity_pairing(phi, r.fields[0], 0.0, h, method)
    terms = {"time": time_term, "flux": flux_term, "initial": v0}
    if _check_final(phi, r):
        vT, eT = _velocity_pairing(phi, r.fields[-1], r.T, h, method)
        terms["final"] = -vT
        e0 += eT
    return ResidualReport("weak_velocity", math.fsum(terms.values()),
                          e1 + e2 + (qerr + e0) * max(r.T, 1.0), terms)


def renormalized_residual(run, beta, phi, omega0, *, time_stride=1, grid_spacing=None,
                          method="auto", sweep_stride=None):
    """Weak residual of d_t beta(omega) + div(beta(omega) v) = 0.

    beta(omega(t, x)) = beta(omega0(X(0, t, x))) with the backward flow
    computed by one reverse sweep through the run's history that picks up
    the grid nodes of every quadrature time. ``omega0`` is anything
    ``pushforward_vorticity`` accepts (InitialVorticitySpec, blob field,
    callable). The spatial grid defaults to min(r/12, eps) for the smallest
    support radius r and the run's blob scale eps.
    """
    from .flow import _initial_values

    if phi.kind != "scalar_c2":
        raise ParameterError("renormalized residual needs a scalar test function")
    if isinstance(run, FlowMap):
        history = run.history
    elif isinstance(run, FieldHistory):
        history = run
    else:
        raise ParameterError("renormalized residual needs a FieldHistory or FlowMap")
    r = _as_run(history, time_stride)
    _check_profile(phi, r)
    _domain_check(phi, r)
    # beta(omega) jumps across patch edges, so the grid follows the blob scale
    h = grid_spacing or min(min(r_ for _, r_ in phi.balls) / 12.0, history.blob_scale)
    grid, pts = _support_grid(phi, h)
    cfg = history.config
    step = history.dt * (sweep_stride or time_stride) if history.n_steps else 1.0
    # carry every quadrature time's grid back to t = 0 in one sweep
    sets = [(float(t), pts) for t in r.times]
    back = transport_to(history, sets, 0.0, step, cfg.integrator)
    cell = grid.cell_area

    def vals_for(k):
        return beta(_initial_values(omega0, back[k]))

    dt_vals, flux_vals = [], []
    for k, (t, f) in enumerate(zip(r.times, r.fields)):
        b = vals_for(k)
        dt_vals.append(math.fsum(phi.dt_value(t, pts) * b) * cell)
        if phi.profile.value(t) != 0.0 and len(f):
            v = _velocity_on(f, pts, method)
            flux_vals.append(math.fsum(np.sum(phi.gradient(t, pts) * v, axis=1) * b) * cell)
        else:
            flux_vals.append(0.0)
    time_term, e1 = _time_integral(r.times, dt_vals)
    flux_term, e2 = _time_integral(r.times, flux_vals)
    b0 = beta(_initial_values(omega0, pts))
    initial = math.fsum(phi.value(0.0, pts) * b0) * cell
    terms = {"time": time_term, "flux": flux_term, "initial": initial}
    if _check_final(phi, r):
        terms["final"] = -math.fsum(phi.value(r.T, pts) * vals_for(len(r.times) - 1)) * cell
    # spatial estimate from the sub-lattice at t = 0
    ny, nx = grid.shape
    full = np.zeros(grid.size)
    mask = phi.support_mask(grid.points)
    full[mask] = phi.value(0.0, pts) * b0
    sub = math.fsum(full.reshape(ny, nx)[::2, ::2].ravel()) * cell * 4.0
    e_space = abs(sub - initial)
    return ResidualReport("renormalized", math.fsum(terms.values()), e1 + e2 + 2.0 * e_space,
                          terms)


def _resampled(omega, spacing):
    """omega_eps sampled on a lattice as point carriers of cell mass, with a
    blob scale of one cell."""
    pad = (1.0 if omega.mollifier.compact else 6.0) * omega.blob_scale
    lo, hi = omega.bounding_box(pad=pad)
    grid = UniformGrid.covering_box(lo, hi, spacing)
    pts = grid.points
    w = eval_vorticity(omega, pts) * grid.cell_area
    keep = np.abs(w) > 1e-15 * np.max(np.abs(w))
    return VortexBlobField(pts[keep], w[keep], spacing, omega.mollifier)


def sym_weak_identity_gap(omega, phi, *, t=0.0, grid_spacing=None, method="auto",
                          guard_tol=0.05, pair_quadrature="resampled", pair_spacing=None):
    """|int int Hbar_phi omega omega + int grad phi : (v x v) dx| for one field.

    Both sides are equal for square-integrable v = K * omega; the gap
    measures quadrature error. omega is the blob reconstruction omega_eps, so
    by default the double integral is taken over omega_eps resampled at
    spacing eps/4 ("resampled"). "particles" pairs the carriers directly
    with the blob kernel, which is the pairing the blob dynamics satisfy but
    differs from the one for omega_eps by a regularization error.
    """
    if phi.kind != "vector_c1_divfree":
        raise ParameterError("identity gap needs a divergence-free test function")
    if pair_quadrature not in ("resampled", "particles"):
        raise ParameterError(f"unknown pair quadrature {pair_quadrature!r}")
    if len(omega) == 0:
        return IdentityGap(0.0, 0.0, 0.0, 0.0)
    eps = omega.blob_scale
    h = grid_spacing or min(min(r for _, r in phi.balls) / 24.0, 0.25 * eps)
    _energy_guard(phi, omega, t, h, method, guard_tol)
    if pair_quadrature == "resampled":
        pair = pair_sum(_resampled(omega, pair_spacing or 0.25 * eps), phi, t)
    else:
        pair = pair_sum(omega, phi, t)
    energy, _ = _grid_integral(phi, h, _flux_integrand(phi, omega, t, method))
    scale, _ = _grid_integral(phi, h, lambda p: np.abs(_flux_integrand(phi, omega, t, method)(p)))
    return IdentityGap(abs(pair + energy), pair, energy, scale)
