"""Configuration spaces and cotangent-bundle primitives.

Three configuration spaces are supported:

* the circle ``S^1`` with the flat unit metric, phase points ``(q, p)`` with
  ``q`` an angle in ``[0, 2*pi)`` and ``p`` a real momentum;
* the unit two-sphere ``S^2 \\subset R^3`` with the round metric, phase
  points ``(q, p)`` stored as ambient vectors with ``|q| = 1`` and
  ``q . p = 0`` (covectors are identified with tangent vectors through the
  round metric, so no chart atlas is needed);
* the rotation group ``SO(3)`` in body (left) trivialization: a phase point
  is a rotation matrix ``Q`` together with the body angular momentum
  ``l in R^3``, where ``l_i = I_i w_i`` for the inertia triple
  ``(I_1, I_2, I_3)`` and the body angular velocity ``w``.

Throughout, the vertical direction seen from the body frame is
``gamma = Q^T e_3``; the columns ``q_1, q_2, q_3`` of ``Q`` are the body
axes expressed in the space frame and ``gamma_i = q_i . e_3``.

The module provides the metric identification between velocities and
momenta (``legendre`` / ``inverse_legendre``), the fiberwise graph shift
``(q, p) -> (q, p + t df_q)`` used by displacement constructions, and dual
gradient norms of scalar functions on the base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ConstraintViolation, ParameterError

CONSTRAINT_TOL = 1e-10


class SpaceKind(Enum):
    CIRCLE = "circle"
    SPHERE2 = "sphere2"
    ROTATION_GROUP = "rotation_group"


# ---------------------------------------------------------------------------
# SO(3) helpers
# ---------------------------------------------------------------------------

_EYE3 = np.eye(3)


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (avoids np.cross axis overhead)."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def norm3(a) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


def hat(w: np.ndarray) -> np.ndarray:
    """Skew matrix of w, so that hat(w) @ x == cross(w, x)."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(W: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat` on skew matrices."""
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula for exp(hat(w)), stable near w = 0."""
    theta = norm3(w)
    W = hat(w)
    if theta < 1e-8:
        # series: I + W + W^2/2 keeps orthogonality error at O(theta^3)
        return _EYE3 + W + 0.5 * (W @ W)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return _EYE3 + a * W + b * (W @ W)


def polar_orthonormalize(Q: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix to Q (polar factor, det forced positive)."""
    U, _, Vt = np.linalg.svd(Q)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U = U.copy()
        U[:, -1] *= -1.0
        R = U @ Vt
    return R


def rotation_aligning(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation carrying unit vector a to unit vector b."""
    c = float(np.dot(a, b))
    v = cross3(a, b)
    s = norm3(v)
    if s < 1e-14:
        if c > 0:
            return _EYE3.copy()
        # antipodal: rotate by pi about any axis orthogonal to a
        axis = _EYE3[int(np.argmin(np.abs(a)))]
        axis = axis - np.dot(axis, a) * a
        axis /= norm3(axis)
        return rotation_exp(math.pi * axis)
    V = hat(v)
    # (1 - c)/s^2 written as 1/(1 + c) to stay accurate for tiny angles
    k = 1.0 / (1.0 + c) if c > -0.9999999 else (1.0 - c) / (s * s)
    return _EYE3 + V + (V @ V) * k


def _quat_to_matrix(w, x, y, z):
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# Configuration spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfigurationSpace:
    """One of the three supported configuration spaces.

    ``inertia`` is the principal inertia triple for the rotation group and
    ``None`` for the circle and the sphere (their round metrics have unit
    scale).
    """

    kind: SpaceKind
    inertia: Optional[tuple] = None

    def __post_init__(self):
        if self.kind is SpaceKind.ROTATION_GROUP:
            if self.inertia is None or len(self.inertia) != 3:
                raise ParameterError("rotation group needs an inertia triple")
            if any(I <= 0 for I in self.inertia):
                raise ParameterError(
                    f"inertia components must be positive, got {self.inertia}")
        elif self.inertia is not None:
            raise ParameterError(f"{self.kind.value} takes no inertia")

    @property
    def intrinsic_dim(self) -> int:
        return {SpaceKind.CIRCLE: 1, SpaceKind.SPHERE2: 2,
                SpaceKind.ROTATION_GROUP: 3}[self.kind]

    @property
    def ambient_dim(self) -> int:
        return {SpaceKind.CIRCLE: 2, SpaceKind.SPHERE2: 3,
                SpaceKind.ROTATION_GROUP: 9}[self.kind]

    @property
    def inertia_array(self) -> np.ndarray:
        return np.asarray(self.inertia, dtype=float)

    # -- constraint maintenance ------------------------------------------

    def repair_config(self, q):
        if self.kind is SpaceKind.CIRCLE:
            return float(q) % (2.0 * math.pi)
        if self.kind is SpaceKind.SPHERE2:
            q = np.asarray(q, dtype=float)
            return q / np.linalg.norm(q)
        return polar_orthonormalize(np.asarray(q, dtype=float))

    def project_momentum(self, q, p):
        """Project p onto the cotangent space at q (no-op on the circle and
        on SO(3), where any l in R^3 is a valid body momentum)."""
        if self.kind is SpaceKind.SPHERE2:
            p = np.asarray(p, dtype=float)
            return p - np.dot(q, p) * q
        if self.kind is SpaceKind.CIRCLE:
            return float(p)
        return np.asarray(p, dtype=float)

    def constraint_residual(self, q, p) -> float:
        """Max violation of the defining constraints at (q, p)."""
        if self.kind is SpaceKind.CIRCLE:
            return 0.0
        if self.kind is SpaceKind.SPHERE2:
            return max(abs(float(np.dot(q, q)) - 1.0),
                       abs(float(np.dot(q, p))))
        Q = np.asarray(q, dtype=float)
        res = float(np.max(np.abs(Q.T @ Q - np.eye(3))))
        if np.linalg.det(Q) <= 0:
            return math.inf
        return res

    # -- tangent structure ------------------------------------------------

    def momentum_basis(self, q) -> np.ndarray:
        """Rows form a deterministic orthonormal basis of the (co)tangent
        space at q, in ambient coordinates."""
        if self.kind is SpaceKind.CIRCLE:
            return np.array([[1.0]])
        if self.kind is SpaceKind.SPHERE2:
            u = np.eye(3)[int(np.argmin(np.abs(q)))]
            b1 = u - np.dot(u, q) * q
            b1 /= np.linalg.norm(b1)
            b2 = np.cross(q, b1)
            return np.array([b1, b2])
        return np.eye(3)

    def retract(self, q, xi):
        """Move q in tangent direction xi (chart of first order):
        circle: q + xi; sphere: normalize(q + xi); SO(3): Q exp(hat(xi))."""
        if self.kind is SpaceKind.CIRCLE:
            return (float(q) + float(xi)) % (2.0 * math.pi)
        if self.kind is SpaceKind.SPHERE2:
            return self.repair_config(np.asarray(q) + np.asarray(xi))
        return np.asarray(q) @ rotation_exp(np.asarray(xi))

    def config_distance(self, q1, q2) -> float:
        if self.kind is SpaceKind.CIRCLE:
            d = abs(float(q1) - float(q2)) % (2.0 * math.pi)
            return min(d, 2.0 * math.pi - d)
        if self.kind is SpaceKind.SPHERE2:
            return float(np.linalg.norm(np.asarray(q1) - np.asarray(q2)))
        return float(np.linalg.norm(np.asarray(q1) - np.asarray(q2)))

    def dual_norm(self, q, p) -> float:
        """Norm of the covector p in the metric dual at q."""
        if self.kind is SpaceKind.CIRCLE:
            return abs(float(p))
        if self.kind is SpaceKind.SPHERE2:
            return float(np.linalg.norm(p))
        I = self.inertia_array
        return math.sqrt(float(np.sum(np.asarray(p) ** 2 / I)))

    def gamma(self, Q) -> np.ndarray:
        """Body-frame vertical direction Q^T e_3 (rotation group only)."""
        return np.asarray(Q)[2, :].copy()

    # -- deterministic point sets -----------------------------------------

    def low_discrepancy_configurations(self, n: int) -> list:
        """n well-spread configurations (grid / Fibonacci / super-Fibonacci)."""
        if self.kind is SpaceKind.CIRCLE:
            return [2.0 * math.pi * i / n for i in range(n)]
        if self.kind is SpaceKind.SPHERE2:
            return list(fibonacci_sphere(n))
        out = []
        phi = math.sqrt(2.0)
        psi = 1.533751168755204288118041
        for i in range(n):
            s = i + 0.5
            t = s / n
            r = math.sqrt(t)
            R = math.sqrt(1.0 - t)
            alpha = 2.0 * math.pi * s / phi
            beta = 2.0 * math.pi * s / psi
            out.append(_quat_to_matrix(r * math.sin(alpha), r * math.cos(alpha),
                                       R * math.sin(beta), R * math.cos(beta)))
        return out

    def random_configuration(self, rng: np.random.Generator):
        if self.kind is SpaceKind.CIRCLE:
            return float(rng.uniform(0.0, 2.0 * math.pi))
        if self.kind is SpaceKind.SPHERE2:
            v = rng.standard_normal(3)
            return v / np.linalg.norm(v)
        quat = rng.standard_normal(4)
        quat /= np.linalg.norm(quat)
        return _quat_to_matrix(*quat)


def circle() -> ConfigurationSpace:
    return ConfigurationSpace(SpaceKind.CIRCLE)


def sphere2() -> ConfigurationSpace:
    return ConfigurationSpace(SpaceKind.SPHERE2)


def rotation_group(I1: float, I2: float, I3: float) -> ConfigurationSpace:
    return ConfigurationSpace(SpaceKind.ROTATION_GROUP, (float(I1), float(I2), float(I3)))


def fibonacci_sphere(n: int) -> np.ndarray:
    """n points on S^2 along the Fibonacci spiral, as an (n, 3) array."""
    i = np.arange(n, dtype=float) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    th = golden * i
    return np.column_stack([r * np.cos(th), r * np.sin(th), z])


# ---------------------------------------------------------------------------
# Phase points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    """A point of T*N.  ``q`` is the configuration (angle, unit vector, or
    rotation matrix) and ``p`` the momentum (real, ambient covector in the
    tangent plane, or body angular momentum).  Treat instances as immutable:
    array fields are write-protected copies."""

    q: object
    p: object

    def __post_init__(self):
        if isinstance(self.q, np.ndarray):
            q = np.array(self.q, dtype=float)
            q.flags.writeable = False
            object.__setattr__(self, "q", q)
        if isinstance(self.p, np.ndarray):
            p = np.array(self.p, dtype=float)
            p.flags.writeable = False
            object.__setattr__(self, "p", p)


def make_point(space: ConfigurationSpace, q, p, repair: bool = True) -> PhasePoint:
    """Build a constraint-clean phase point.

    With ``repair=True`` (the default) the configuration is renormalized and
    the momentum re-projected before validation, which keeps residuals at
    round-off after ordinary arithmetic.  With ``repair=False`` the inputs
    are only validated.
    """
    if space.kind is SpaceKind.CIRCLE:
        q2, p2 = (float(q) % (2 * math.pi), float(p)) if repair else (float(q), float(p))
    else:
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if repair:
            q2 = space.repair_config(q)
            p2 = space.project_momentum(q2, p)
        else:
            q2, p2 = q, p
    res = space.constraint_residual(q2, p2)
    if res > CONSTRAINT_TOL:
        raise ConstraintViolation(
            f"phase point violates constraints on {space.kind.value}: "
            f"residual {res:.3e} > {CONSTRAINT_TOL:.0e}")
    return PhasePoint(q2, p2)


def phase_distance(space: ConfigurationSpace, x: PhasePoint, y: PhasePoint) -> float:
    dq = space.config_distance(x.q, y.q)
    dp = float(np.linalg.norm(np.atleast_1d(np.asarray(x.p) - np.asarray(y.p))))
    return math.hypot(dq, dp)


# ---------------------------------------------------------------------------
# Scalar fields on the base
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarField:
    """A smooth function on a configuration space.

    ``eval`` maps a configuration to a real.  ``differential`` returns the
    gradient in the convention of the space: the plain derivative on the
    circle, the ambient gradient projected to the tangent plane on the
    sphere, and the left-trivialized body differential in R^3 on the
    rotation group (the vector ``d`` with
    ``d/dt f(Q exp(t hat(xi)))|_0 = d . xi``).
    """

    space: ConfigurationSpace
    eval: Callable
    differential: Callable
    name: str = ""

    def __call__(self, q):
        return float(self.eval(q))


def constant_field(space: ConfigurationSpace, value: float = 0.0) -> ScalarField:
    if space.kind is SpaceKind.CIRCLE:
        return ScalarField(space, lambda q: value, lambda q: 0.0, name="const")
    zero = np.zeros(3)
    return ScalarField(space, lambda q: value, lambda q: zero.copy(), name="const")


def height_field(space: ConfigurationSpace, direction=None) -> ScalarField:
    """Reference height function: cos(q - q0) on the circle, q . n on the
    sphere, gamma . n on the rotation group."""
    if space.kind is SpaceKind.CIRCLE:
        q0 = float(direction) if direction is not None else 0.0
        return ScalarField(space,
                           lambda q: math.cos(q - q0),
                           lambda q: -math.sin(q - q0),
                           name="height")
    n = np.asarray(direction if direction is not None else [0.0, 0.0, 1.0], dtype=float)
    n = n / np.linalg.norm(n)
    if space.kind is SpaceKind.SPHERE2:
        return ScalarField(space,
                           lambda q: float(np.dot(q, n)),
                           lambda q: n - np.dot(q, n) * np.asarray(q),
                           name="height")

    def _eval(Q):
        return float(np.dot(space.gamma(Q), n))

    def _diff(Q):
        g = space.gamma(Q)
        return cross3(n, g)

    return ScalarField(space, _eval, _diff, name="gamma_height")


def check_differential(f: ScalarField, q, step: float = 1e-6) -> float:
    """Relative error between f.differential and a central finite difference
    taken along the tangent basis directions."""
    space = f.space
    basis = space.momentum_basis(q) if space.kind is not SpaceKind.ROTATION_GROUP \
        else np.eye(3)
    d = f.differential(q)
    if space.kind is SpaceKind.CIRCLE:
        fd = (f.eval(q + step) - f.eval(q - step)) / (2 * step)
        return abs(fd - float(d)) / max(1.0, abs(fd))
    comps = []
    fds = []
    for b in basis:
        qp = space.retract(q, step * b)
        qm = space.retract(q, -step * b)
        fds.append((f.eval(qp) - f.eval(qm)) / (2 * step))
        comps.append(float(np.dot(np.asarray(d), b)))
    fds = np.array(fds)
    comps = np.array(comps)
    return float(np.max(np.abs(fds - comps)) / max(1.0, float(np.max(np.abs(fds)))))


# ---------------------------------------------------------------------------
# Metric identification and graph shifts
# ---------------------------------------------------------------------------

def _check_tangent(space: ConfigurationSpace, q, v):
    if space.kind is SpaceKind.SPHERE2:
        res = abs(float(np.dot(q, v)))
        if res > CONSTRAINT_TOL:
            raise ConstraintViolation(
                f"vector is not tangent at q: |q.v| = {res:.3e}")


def legendre(space: ConfigurationSpace, q, v):
    """Metric identification T N -> T*N: p = g(v, .).

    On the circle and the round sphere the metric is the identity on
    tangent vectors; on the rotation group l_i = I_i w_i.
    """
    if space.kind is SpaceKind.CIRCLE:
        return float(v)
    v = np.asarray(v, dtype=float)
    _check_tangent(space, q, v)
    if space.kind is SpaceKind.SPHERE2:
        return v.copy()
    return space.inertia_array * v


def inverse_legendre(space: ConfigurationSpace, q, p):
    """Inverse metric identification T*N -> T N."""
    if space.kind is SpaceKind.CIRCLE:
        return float(p)
    p = np.asarray(p, dtype=float)
    _check_tangent(space, q, p)
    if space.kind is SpaceKind.SPHERE2:
        return p.copy()
    return p / space.inertia_array


def graph_shift(f: ScalarField, t: float, x: PhasePoint) -> PhasePoint:
    """Fiberwise translation (q, p) -> (q, p + t df_q).

    The configuration is untouched; the output is re-projected so phase
    point invariants hold to round-off.
    """
    space = f.space
    d = f.differential(x.q)
    if space.kind is SpaceKind.CIRCLE:
        return PhasePoint(x.q, x.p + t * float(d))
    p = np.asarray(x.p) + t * np.asarray(d)
    p = space.project_momentum(x.q, p)
    return PhasePoint(x.q, p)


def differential_norm(f: ScalarField, q) -> float:
    """Dual-metric norm of df at q.

    Circle and sphere use the unit round metric; on the rotation group the
    body differential d has norm sqrt(sum d_i^2 / I_i).
    """
    d = f.differential(q)
    if f.space.kind is SpaceKind.CIRCLE:
        return abs(float(d))
    if f.space.kind is SpaceKind.SPHERE2:
        q = np.asarray(q)
        d = np.asarray(d)
        d = d - np.dot(q, d) * q
        return float(np.linalg.norm(d))
    I = f.space.inertia_array
    return math.sqrt(float(np.sum(np.asarray(d) ** 2 / I)))
