"""Vortex-blob vorticity fields: mollifiers, initial data, discretization and
the L1-type functionals of a field."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _kernels
from .exceptions import CoverageError, ParameterError, ResolutionWarning
from .grid import UniformGrid

PROFILES = ("gaussian", "compact_bump")


@dataclass(frozen=True)
class MollifierSpec:
    """Radial probability kernel rho; rho_eps(x) = eps^-2 rho(x / eps).

    gaussian: rho(x) = exp(-|x|^2 / 2) / (2 pi), not compactly supported.
    compact_bump: rho(x) = C exp(-1 / (1 - |x|^2)) on the unit ball.
    """

    profile: str = "gaussian"

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ParameterError(f"unknown mollifier profile {self.profile!r}")

    @property
    def code(self):
        return _kernels.GAUSSIAN if self.profile == "gaussian" else _kernels.COMPACT_BUMP

    @property
    def normalization(self):
        """Constant in front of the unnormalized profile."""
        if self.profile == "gaussian":
            return 1.0 / (2.0 * math.pi)
        return _kernels.BUMP_NORM

    @property
    def compact(self):
        return self.profile == "compact_bump"

    def density(self, r, eps=1.0):
        r = np.asarray(r, dtype=float)
        s2 = (r / eps) ** 2
        if self.profile == "gaussian":
            return self.normalization * np.exp(-0.5 * s2) / eps**2
        out = np.zeros_like(s2)
        inside = s2 < 1.0
        out[inside] = self.normalization * np.exp(-1.0 / (1.0 - s2[inside]))
        return out / eps**2

    def mass_fraction(self, r, eps=1.0):
        """Integral of rho_eps over the disc of radius r."""
        s = np.atleast_1d(np.asarray(r, dtype=float)) / eps
        if self.profile == "gaussian":
            return -np.expm1(-0.5 * s * s)
        return np.array([_kernels.bump_mass_fraction(v) for v in s])


@dataclass(frozen=True, eq=False)
class VortexBlobField:
    """Signed circulations carried by blobs of common scale.

    The reconstructed vorticity is sum_i w_i rho_eps(x - x_i). Arrays are
    copied and frozen at construction.
    """

    positions: np.ndarray
    weights: np.ndarray
    blob_scale: float
    mollifier: MollifierSpec = dc_field(default_factory=MollifierSpec)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if pos.shape[0] != w.shape[0]:
            raise ParameterError(
                f"{pos.shape[0]} positions but {w.shape[0]} weights")
        if not (np.isfinite(pos).all() and np.isfinite(w).all()):
            raise ParameterError("positions and weights must be finite")
        if not self.blob_scale > 0:
            raise ParameterError("blob_scale must be positive")
        if isinstance(self.mollifier, str):
            object.__setattr__(self, "mollifier", MollifierSpec(self.mollifier))
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "blob_scale", float(self.blob_scale))

    def __len__(self):
        return self.weights.shape[0]

    @property
    def total_circulation(self):
        return math.fsum(self.weights)

    def scaled(self, c):
        return VortexBlobField(self.positions, c * self.weights, self.blob_scale,
                               self.mollifier)

    def moved(self, positions):
        return VortexBlobField(positions, self.weights, self.blob_scale,
                               self.mollifier)

    def with_weights(self, weights):
        return VortexBlobField(self.positions, weights, self.blob_scale,
                               self.mollifier)

    def bounding_box(self, pad=0.0):
        if len(self) == 0:
            return np.array([-pad, -pad]), np.array([pad, pad])
        return self.positions.min(axis=0) - pad, self.positions.max(axis=0) + pad

    def __repr__(self):
        return (f"VortexBlobField(n={len(self)}, blob_scale={self.blob_scale}, "
                f"mollifier={self.mollifier.profile!r})")


# --------------------------------------------------------------------------
# initial data

KINDS = ("rankine", "lamb_oseen", "patch_union", "sign_changing_pair",
         "point_vortex_array", "file_samples", "checkerboard")

_DEFAULTS = {
    "rankine": {"omega0": 1.0, "radius": 1.0, "center": (0.0, 0.0)},
    "lamb_oseen": {"circulation": 1.0, "core": 0.25, "center": (0.0, 0.0)},
    "patch_union": {"patches": ()},
    "sign_changing_pair": {"strength": 1.0, "radius": 0.5,
                           "centers": ((-1.0, 0.0), (1.0, 0.0))},
    "point_vortex_array": {"vortices": ()},
    "file_samples": {"path": None},
    "checkerboard": {"base": None, "scale": 0.125},
}

# Lamb-Oseen data is truncated where exp(-r^2/a^2) < 1e-16.
LAMB_OSEEN_EXTENT = 6.0


@dataclass(frozen=True, eq=False)
class InitialVorticitySpec:
    """Analytic (or sampled) initial vorticity.

    rankine:            omega0 * 1{|x - c| <= R}
    lamb_oseen:         G / (pi a^2) * exp(-|x - c|^2 / a^2), cut at 6a
    patch_union:        sum_k s_k 1{|x - c_k| <= r_k}; patches = [{center, radius, strength}]
    sign_changing_pair: +s on B_r(c_1), -s on B_r(c_2)
    point_vortex_array: atoms; vortices = [{position, circulation}]
    file_samples:       piecewise-linear interpolant of CSV rows (x1, x2, omega)
    checkerboard:       |base| profile times the sign (-1)^(floor(x/h) + floor(y/h))
    """

    kind: str
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown initial vorticity kind {self.kind!r}")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ParameterError(
                f"unknown parameter(s) for {self.kind}: {sorted(unknown)}")
        merged = dict(_DEFAULTS[self.kind])
        merged.update(self.params)
        if self.kind == "checkerboard":
            base = merged["base"]
            if base is None:
                raise ParameterError("checkerboard needs a base profile")
            if isinstance(base, dict):
                base = InitialVorticitySpec(base["kind"], base.get("params", {}))
            if base.kind in ("point_vortex_array", "checkerboard"):
                raise ParameterError("checkerboard base must be a density")
            merged["base"] = base
            if not merged["scale"] > 0:
                raise ParameterError("checkerboard scale must be positive")
        if self.kind == "file_samples":
            if merged["path"] is None:
                raise ParameterError("file_samples needs a path")
            data = np.loadtxt(Path(merged["path"]), delimiter=",", comments="#",
                              ndmin=2, skiprows=_header_rows(merged["path"]))
            if data.shape[1] != 3:
                raise ParameterError("file_samples rows must be x1, x2, omega")
            object.__setattr__(self, "_samples", data)
        for key in ("radius", "core"):
            if key in merged and not merged[key] > 0:
                raise ParameterError(f"{key} must be positive")
        object.__setattr__(self, "params", merged)

    # -- geometry ---------------------------------------------------------
    def support_box(self):
        p = self.params
        k = self.kind
        if k == "rankine":
            c = np.asarray(p["center"], float)
            return c - p["radius"], c + p["radius"]
        if k == "lamb_oseen":
            c = np.asarray(p["center"], float)
            ext = LAMB_OSEEN_EXTENT * p["core"]
            return c - ext, c + ext
        if k in ("patch_union", "sign_changing_pair"):
            discs = self._discs()
            lo = np.min([c - r for c, r, _ in discs], axis=0)
            hi = np.max([c + r for c, r, _ in discs], axis=0)
            return lo, hi
        if k == "point_vortex_array":
            pos = np.array([v["position"] for v in p["vortices"]], float).reshape(-1, 2)
            return pos.min(axis=0), pos.max(axis=0)
        if k == "file_samples":
            xy = self._samples[:, :2]
            return xy.min(axis=0), xy.max(axis=0)
        return p["base"].support_box()

    def _discs(self):
        p = self.params
        if self.kind == "sign_changing_pair":
            s, r = p["strength"], p["radius"]
            (c1, c2) = p["centers"]
            return [(np.asarray(c1, float), r, s), (np.asarray(c2, float), r, -s)]
        return [(np.asarray(q["center"], float), float(q["radius"]), float(q["strength"]))
                for q in p["patches"]]

    def total_mass(self):
        """Analytic L1 norm where one is available, else None."""
        p = self.params
        k = self.kind
        if k == "rankine":
            return abs(p["omega0"]) * math.pi * p["radius"] ** 2
        if k == "lamb_oseen":
            return abs(p["circulation"])
        if k == "sign_changing_pair":
            return 2.0 * abs(p["strength"]) * math.pi * p["radius"] ** 2
        if k == "point_vortex_array":
            return math.fsum(abs(v["circulation"]) for v in p["vortices"])
        return None

    # -- evaluation -------------------------------------------------------
    def evaluate(self, x):
        """omega^0 at points of shape (M, 2)."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        p = self.params
        k = self.kind
        if k == "rankine":
            d2 = np.sum((x - np.asarray(p["center"], float)) ** 2, axis=1)
            return np.where(d2 <= p["radius"] ** 2, float(p["omega0"]), 0.0)
        if k == "lamb_oseen":
            a = p["core"]
            d2 = np.sum((x - np.asarray(p["center"], float)) ** 2, axis=1)
            val = p["circulation"] / (math.pi * a * a) * np.exp(-d2 / (a * a))
            return np.where(d2 <= (LAMB_OSEEN_EXTENT * a) ** 2, val, 0.0)
        if k in ("patch_union", "sign_changing_pair"):
            out = np.zeros(x.shape[0])
            for c, r, s in self._discs():
                out += np.where(np.sum((x - c) ** 2, axis=1) <= r * r, s, 0.0)
            return out
        if k == "point_vortex_array":
            raise ParameterError("point vortices have no pointwise density")
        if k == "file_samples":
            return self._interpolator()(x)
        base = p["base"].evaluate(x)
        h = p["scale"]
        parity = (np.floor(x[:, 0] / h) + np.floor(x[:, 1] / h)) % 2
        return np.abs(base) * np.where(parity == 0, 1.0, -1.0)

    def _interpolator(self):
        interp = getattr(self, "_interp", None)
        if interp is None:
            from scipy.interpolate import LinearNDInterpolator

            s = self._samples
            interp = LinearNDInterpolator(s[:, :2], s[:, 2], fill_value=0.0)
            object.__setattr__(self, "_interp", interp)
        return interp


def _header_rows(path):
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        return 0
    except ValueError:
        return 1


def discretize(spec, eps, n_per_axis, mollifier="gaussian", box=None,
               keep_zeros=False):
    """Vortex-blob field for ``spec`` on a cell-centred lattice.

    Weights are omega^0(x_i) times the cell area, with n_per_axis cells per
    axis over ``box`` (default: the support box of ``spec``). Point vortex
    arrays become one blob per vortex. Raises CoverageError when ``box``
    misses part of the support, with the missing mass attached.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    if n_per_axis < 4:
        raise ParameterError("n_per_axis must be at least 4")
    mol = mollifier if isinstance(mollifier, MollifierSpec) else MollifierSpec(mollifier)
    if spec.kind == "point_vortex_array":
        vort = spec.params["vortices"]
        pos = np.array([v["position"] for v in vort], float).reshape(-1, 2)
        w = np.array([v["circulation"] for v in vort], float)
        return VortexBlobField(pos, w, eps, mol)

    slo, shi = spec.support_box()
    lo, hi = (slo, shi) if box is None else (np.asarray(box[0], float), np.asarray(box[1], float))
    n = int(n_per_axis)
    dx = (hi - lo) / n
    xs = lo[0] + (np.arange(n) + 0.5) * dx[0]
    ys = lo[1] + (np.arange(n) + 0.5) * dx[1]
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    w = spec.evaluate(pts) * dx[0] * dx[1]

    if box is not None and (np.any(lo > slo + 1e-12) or np.any(hi < shi - 1e-12)):
        # mass of |omega| on the support box that the lattice did not see
        m = max(n, int(np.ceil(np.max((shi - slo) / dx))))
        cell = (shi - slo) / m
        sx = slo[0] + (np.arange(m) + 0.5) * cell[0]
        sy = slo[1] + (np.arange(m) + 0.5) * cell[1]
        hx, hy = np.meshgrid(sx, sy)
        probe = np.column_stack([hx.ravel(), hy.ravel()])
        outside = np.any((probe < lo) | (probe > hi), axis=1)
        deficit = float(np.sum(np.abs(spec.evaluate(probe[outside]))) * cell[0] * cell[1])
        if deficit > 0.0:
            raise CoverageError(
                f"assignment grid misses support; mass deficit {deficit:.3e}",
                deficit=deficit)

    if not keep_zeros:
        nz = w != 0.0
        pts, w = pts[nz], w[nz]
    return VortexBlobField(pts, w, eps, mol)


def eval_vorticity(field, x):
    """Blob reconstruction sum_i w_i rho_eps(x - x_i) at points (M, 2)."""
    x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 2))
    if len(field) == 0:
        return np.zeros(x.shape[0])
    p = field.positions
    return _kernels.blob_vorticity(x[:, 0].copy(), x[:, 1].copy(), p[:, 0].copy(),
                                   p[:, 1].copy(), np.ascontiguousarray(field.weights),
                                   field.blob_scale, field.mollifier.code)


def l1_norm(field):
    """Sum of |w_i|.

    Equals the L1 norm of the reconstruction when blobs of opposite sign do
    not overlap; overlapping signed blobs make it an upper bound off by
    O(eps) per cancelling interface.
    """
    return math.fsum(np.abs(field.weights))


def equi_integrability_modulus(field, delta, cell=None):
    """sup over sets A with |A| <= delta of the integral of |omega_eps| over A.

    Layer-cake evaluation: cell values of |omega_eps| on a grid of side
    eps/2 (or ``cell``) over the field's bounding box inflated by 4 eps are
    sorted in decreasing order and accumulated until the covered area
    reaches delta; the last cell counts fractionally.
    """
    if not delta > 0:
        raise ParameterError("delta must be positive")
    eps = field.blob_scale
    h = 0.5 * eps if cell is None else float(cell)
    if h > eps:
        warnings.warn(f"evaluation cell {h:g} is coarser than the blob scale {eps:g}",
                      ResolutionWarning, stacklevel=2)
    if len(field) == 0:
        return 0.0
    lo, hi = field.bounding_box(pad=4.0 * eps)
    grid = UniformGrid.covering_box(lo, hi, h)
    vals = np.abs(eval_vorticity(field, grid.points))
    return _layer_cake(vals, grid.cell_area, delta)


def _layer_cake(values, cell_area, delta):
    vals = np.sort(np.asarray(values, float))[::-1]
    full = int(delta // cell_area)
    if full >= vals.size:
        return float(math.fsum(vals) * cell_area)
    head = math.fsum(vals[:full]) * cell_area
    frac = delta - full * cell_area
    return float(head + vals[full] * frac)
