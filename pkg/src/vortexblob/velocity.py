"""Biot-Savart velocity v = K_eps * sum_i w_i delta_{x_i} of a blob field.

K_eps = K * rho_eps has the closed form K(x) m(|x| / eps), where m(s) is the
mollifier mass inside radius s (1 - exp(-s^2/2) for the gaussian). Since
K * (rho_eps * omega) = (K * rho_eps) * omega this is exactly the velocity of
the reconstructed vorticity.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import _kernels
from .exceptions import ParameterError
from .field import MollifierSpec, VortexBlobField
from .treecode import QuadTree

# below this many pair interactions the direct sum wins
AUTO_DIRECT_PAIRS = 4_000_000


@dataclass(frozen=True)
class TreecodeReport:
    n_nodes: int
    theta: float
    order: int
    # sum over accepted cells of |G| (r/d)^(p+1) / (2 pi (d - r)), relative L2
    relative_error_bound: float
    fell_back_to_direct: bool = False


def _as_points(x, name="targets"):
    return check_array(np.asarray(x, dtype=float).reshape(-1, 2),
                       ensure_min_samples=0, input_name=name)


class VelocityEvaluator(BaseEstimator):
    """Read-only evaluator of the induced velocity at arbitrary points.

    ``fit`` takes a VortexBlobField, or positions X (N, 2) with circulations
    y and the blob scale / mollifier as keyword arguments; ``predict``
    returns velocities of shape (M, 2).

    method: "direct" (exact O(NM) sum), "tree" (Barnes-Hut with multipoles of
    the given order and opening angle theta) or "auto".
    """

    def __init__(self, method="auto", theta=0.3, order=8, leaf_size=32):
        self.method = method
        self.theta = theta
        self.order = order
        self.leaf_size = leaf_size

    def fit(self, X, y=None, *, blob_scale=None, mollifier="gaussian"):
        if isinstance(X, VortexBlobField):
            field = X
        else:
            if y is None or blob_scale is None:
                raise ParameterError("fit(X, y) needs weights and blob_scale")
            X = check_array(X, ensure_min_samples=0)
            field = VortexBlobField(X, y, blob_scale, MollifierSpec(mollifier)
                                    if isinstance(mollifier, str) else mollifier)
        if self.method not in ("auto", "direct", "tree"):
            raise ParameterError(f"unknown method {self.method!r}")
        if not 0.0 < self.theta < 1.0:
            raise ParameterError("theta must lie in (0, 1)")
        if self.order < 0:
            raise ParameterError("order must be non-negative")
        self.field_ = field
        p = field.positions
        self._px = np.ascontiguousarray(p[:, 0])
        self._py = np.ascontiguousarray(p[:, 1])
        self._w = np.ascontiguousarray(field.weights)
        self.degenerate_ = len(field) > 0 and bool(np.all(p == p[0]))
        self.tree_ = None
        if self.method != "direct" and len(field) > 0 and not self.degenerate_:
            self.tree_ = QuadTree(p, field.weights, field.blob_scale,
                                  field.mollifier.code, order=self.order,
                                  leaf_size=self.leaf_size)
        return self

    def _use_tree(self, m):
        if self.tree_ is None:
            return False
        if self.method == "tree":
            return True
        return len(self.field_) * m > AUTO_DIRECT_PAIRS

    def predict(self, X):
        check_is_fitted(self, "field_")
        t = _as_points(X)
        m = t.shape[0]
        if m == 0 or len(self.field_) == 0:
            self.report_ = None
            return np.zeros((m, 2))
        if self._use_tree(m):
            vel, bound = self.tree_.evaluate(t, self.theta)
            norm = np.linalg.norm(vel)
            rel = float(np.linalg.norm(bound) / norm) if norm > 0 else 0.0
            self.report_ = TreecodeReport(self.tree_.n_nodes, self.theta,
                                          self.order, rel)
            return vel
        self.report_ = TreecodeReport(0, self.theta, self.order, 0.0,
                                      fell_back_to_direct=True)
        return _kernels.direct_velocity(t[:, 0].copy(), t[:, 1].copy(), self._px,
                                        self._py, self._w, self.field_.blob_scale,
                                        self.field_.mollifier.code)


def velocity_direct(field, targets):
    """Exact blob-kernel summation; each target sums sources in index order."""
    return VelocityEvaluator(method="direct").fit(field).predict(targets)


def velocity_treecode(field, targets, theta=0.3, order=8, leaf_size=32,
                      return_report=False):
    """Barnes-Hut approximation of :func:`velocity_direct`.

    An all-coincident cloud falls back to the direct sum.
    """
    ev = VelocityEvaluator(method="tree", theta=theta, order=order,
                           leaf_size=leaf_size).fit(field)
    vel = ev.predict(targets)
    return (vel, ev.report_) if return_report else vel
