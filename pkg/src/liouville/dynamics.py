"""Hamiltonian vector fields and constraint-preserving flows.

Two integration methods are provided.

``symmetric2`` is the fixed-step symmetric order-2 default: Strang
splitting (exact kinetic rotation + potential kick) on the circle and the
sphere for Hamiltonians declaring the structure rho(|p|_g^2) + U(q), and
implicit midpoint in the body variables (l, gamma) on the rotation group
(also the fallback for non-separable fields elsewhere).  Midpoint conserves
the quadratic Casimirs |gamma|^2 and l . gamma to the fixed-point solve
tolerance; the rotation matrix is reconstructed with Q' = Q exp(h hat(w))
at the midpoint angular velocity and then realigned so that Q^T e_3 equals
the integrated gamma exactly.

``adaptive5`` is an embedded Dormand-Prince 5(4) pair with constraint
projection after every accepted step; persistent step rejection raises
:class:`IntegrationFailure` carrying the last good state.

Vector-field conventions (paired with the brackets module so that
dG/dt = {G, H} along the flow of H):

* circle: (dq/dt, dp/dt) = (dH/dp, -dH/dq);
* sphere: dq/dt = P_q grad_p H and dp/dt = -grad_q H + q (q . grad_q H)
  - q (p . grad_p H) + p (q . grad_p H), the field induced by the Dirac
  bracket, tangent to the constraint set;
* rotation group: dl/dt = l x grad_l H + gamma x grad_gamma H,
  dgamma/dt = gamma x grad_l H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .brackets import PhaseField
from .errors import IntegrationFailure, ParameterError, UsageError
from .geometry import (ConfigurationSpace, PhasePoint, SpaceKind, cross3,
                       hat, make_point, norm3, rotation_aligning, rotation_exp)

_EYE3 = np.eye(3)
_E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class FlowSpec:
    """Total time, step size, and method ("symmetric2" or "adaptive5")."""

    T: float
    h: float = 1e-3
    method: str = "symmetric2"
    rtol: float = 1e-9
    atol: float = 1e-9

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterError("need T > 0 (use flow(..., reverse=True) to go back)")
        if not (0 < self.h <= self.T):
            raise ParameterError("need 0 < h <= T")
        if self.method not in ("symmetric2", "adaptive5"):
            raise ParameterError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class ConservationReport:
    component_drifts: tuple          # per component, relative to max(1, |initial|)
    casimir_drifts: Optional[dict]   # |gamma|^2 and l.gamma on the rotation group
    constraint_max: float
    steps: int
    initial_values: tuple
    method: str


class _Raw:
    """Mutable phase state used inside integrators (duck-typed PhasePoint)."""

    __slots__ = ("q", "p")

    def __init__(self, q, p):
        self.q = q
        self.p = p


# ---------------------------------------------------------------------------
# Vector fields
# ---------------------------------------------------------------------------

def lifted_field(f) -> PhaseField:
    """The pullback f o pi of a base function as a PhaseField.

    Its Hamiltonian flow is the fiberwise translation
    (q, p) -> (q, p - t df_q); equivalently, :func:`liouville.geometry.graph_shift`
    by f at radius t equals this flow run for time -t.  On the rotation
    group the base function must factor through gamma.
    """
    space = f.space
    if space.kind is SpaceKind.CIRCLE:
        return PhaseField(space,
                          eval=lambda x: float(f.eval(x.q)),
                          grad=lambda x: np.array([float(f.differential(x.q)), 0.0]),
                          name=f"lift({f.name})")
    if space.kind is SpaceKind.SPHERE2:
        return PhaseField(space,
                          eval=lambda x: float(f.eval(np.asarray(x.q) / np.linalg.norm(x.q))),
                          grad=lambda x: np.array([np.asarray(f.differential(x.q)),
                                                   np.zeros(3)]),
                          name=f"lift({f.name})")

    def _grad(x):
        gamma = space.gamma(x.q)
        delta = np.asarray(f.differential(x.q))
        # body differential delta = grad_gamma x gamma; the tangential
        # gamma-gradient representative is gamma x delta
        return np.array([np.zeros(3), cross3(gamma, delta)])

    return PhaseField(space, eval=lambda x: float(f.eval(x.q)), grad=_grad,
                      name=f"lift({f.name})")


def hamiltonian_vector_field(F: PhaseField, x) -> np.ndarray:
    """Phase velocity at x.

    Returns (dq/dt, dp/dt) on the circle, the stacked pair
    [dq/dt, dp/dt] on the sphere, and [dl/dt, dgamma/dt] on the rotation
    group (the configuration moves by Q' = Q hat(grad_l F)).
    """
    kind = F.space.kind
    g = np.asarray(F.grad(x))
    if kind is SpaceKind.CIRCLE:
        return np.array([g[1], -g[0]])
    if kind is SpaceKind.SPHERE2:
        q = np.asarray(x.q)
        p = np.asarray(x.p)
        gq, gp = g
        qdot = gp - np.dot(q, gp) * q
        pdot = (-gq + np.dot(q, gq) * q
                - np.dot(p, gp) * q + np.dot(q, gp) * p)
        return np.array([qdot, pdot])
    ell = np.asarray(x.p)
    gamma = F.space.gamma(x.q)
    gl, gg = g
    ldot = cross3(ell, gl) + cross3(gamma, gg)
    gdot = cross3(gamma, gl)
    return np.array([ldot, gdot])


# ---------------------------------------------------------------------------
# Fixed-step symmetric methods
# ---------------------------------------------------------------------------

def _has_splitting(F: PhaseField) -> bool:
    return (F.kinetic_profile is not None and F.potential is not None
            and F.space.kind in (SpaceKind.CIRCLE, SpaceKind.SPHERE2))


def _strang_step_circle(F: PhaseField, q, p, h):
    rho = F.kinetic_profile
    U = F.potential
    p = p - 0.5 * h * float(U.differential(q))
    q = q + h * 2.0 * float(rho.deriv(p * p)) * p
    p = p - 0.5 * h * float(U.differential(q))
    return q, p


def _kinetic_rotate_sphere(rho, q, p, h):
    n2 = float(np.dot(p, p))
    if n2 == 0.0:
        return q, p
    n = math.sqrt(n2)
    th = h * 2.0 * float(rho.deriv(n2)) * n
    c, s = math.cos(th), math.sin(th)
    u = p / n
    qn = c * q + s * u
    pn = n * (-s * q + c * u)
    return qn, pn


def _strang_step_sphere(F: PhaseField, q, p, h):
    U = F.potential
    d = np.asarray(U.differential(q))
    p = p - 0.5 * h * d
    p -= np.dot(q, p) * q
    q, p = _kinetic_rotate_sphere(F.kinetic_profile, q, p, h)
    q /= np.linalg.norm(q)
    p -= np.dot(q, p) * q
    d = np.asarray(U.differential(q))
    p = p - 0.5 * h * d
    p -= np.dot(q, p) * q
    return q, p


def _gamma_point(gamma, ell) -> _Raw:
    # internal evaluation point carrying only gamma (third row); fields on
    # the rotation group must factor through (l, gamma) - the same
    # restriction the reduced bracket imposes - so the other rows are
    # poisoned with NaN to make any violation loud
    M = np.full((3, 3), np.nan)
    M[2] = gamma
    return _Raw(M, ell)


def _lp_field(F: PhaseField, ell, gamma):
    g = np.asarray(F.grad(_gamma_point(gamma, ell)))
    gl, gg = g
    return (cross3(ell, gl) + cross3(gamma, gg),
            cross3(gamma, gl), gl)


def _midpoint_step_so3(F: PhaseField, Q, ell, gamma, h,
                       tol=1e-14, max_iter=25):
    l1, g1 = ell.copy(), gamma.copy()
    dl, dg, _ = _lp_field(F, ell, gamma)
    l1 = ell + h * dl
    g1 = gamma + h * dg
    w_mid = None
    for _ in range(max_iter):
        lm = 0.5 * (ell + l1)
        gm = 0.5 * (gamma + g1)
        dl, dg, w_mid = _lp_field(F, lm, gm)
        l_new = ell + h * dl
        g_new = gamma + h * dg
        err = max(float(np.max(np.abs(l_new - l1))),
                  float(np.max(np.abs(g_new - g1))))
        l1, g1 = l_new, g_new
        if err <= tol:
            break
    g1 = g1 / norm3(g1)
    Q1 = Q @ rotation_exp(h * w_mid)
    # one Newton-Schulz sweep kills the accumulated non-orthonormality
    # (quadratic convergence near rotations); without it the row alignment
    # below feeds its own error back and the error doubles every step
    Q1 = 0.5 * Q1 @ (3.0 * _EYE3 - Q1.T @ Q1)
    # realign so that Q1^T e3 equals the integrated gamma exactly
    Q1 = Q1 @ rotation_aligning(g1, Q1[2, :].copy())
    return Q1, l1, g1


def _midpoint_step_flat(F: PhaseField, space, q, p, h, tol=1e-14, max_iter=25):
    """Implicit midpoint for non-separable fields on the circle/sphere."""
    x = _Raw(q, p)
    v = hamiltonian_vector_field(F, x)
    if space.kind is SpaceKind.CIRCLE:
        q1, p1 = q + h * v[0], p + h * v[1]
        for _ in range(max_iter):
            xm = _Raw(0.5 * (q + q1), 0.5 * (p + p1))
            v = hamiltonian_vector_field(F, xm)
            qn, pn = q + h * v[0], p + h * v[1]
            err = max(abs(qn - q1), abs(pn - p1))
            q1, p1 = qn, pn
            if err <= tol:
                break
        return q1, p1
    q1, p1 = q + h * v[0], p + h * v[1]
    for _ in range(max_iter):
        xm = _Raw(0.5 * (q + q1), 0.5 * (p + p1))
        v = hamiltonian_vector_field(F, xm)
        qn, pn = q + h * v[0], p + h * v[1]
        err = max(float(np.max(np.abs(qn - q1))), float(np.max(np.abs(pn - p1))))
        q1, p1 = qn, pn
        if err <= tol:
            break
    q1 = q1 / np.linalg.norm(q1)
    p1 = p1 - np.dot(q1, p1) * q1
    return q1, p1


# ---------------------------------------------------------------------------
# Adaptive Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def _pack(space, x):
    if space.kind is SpaceKind.CIRCLE:
        return np.array([x.q, x.p])
    if space.kind is SpaceKind.SPHERE2:
        return np.concatenate([x.q, x.p])
    return np.concatenate([np.asarray(x.q).ravel(), x.p])


def _unpack(space, z) -> _Raw:
    if space.kind is SpaceKind.CIRCLE:
        return _Raw(float(z[0]), float(z[1]))
    if space.kind is SpaceKind.SPHERE2:
        return _Raw(z[:3].copy(), z[3:].copy())
    return _Raw(z[:9].reshape(3, 3).copy(), z[9:].copy())


def _ode_rhs(F: PhaseField, space, z):
    x = _unpack(space, z)
    if space.kind is SpaceKind.ROTATION_GROUP:
        g = np.asarray(F.grad(x))
        gl, gg = g
        ell = x.p
        gamma = np.asarray(x.q)[2, :]
        ldot = cross3(ell, gl) + cross3(gamma, gg)
        Qdot = np.asarray(x.q) @ hat(gl)
        return np.concatenate([Qdot.ravel(), ldot])
    v = hamiltonian_vector_field(F, x)
    if space.kind is SpaceKind.CIRCLE:
        return np.asarray(v)
    return np.concatenate([v[0], v[1]])


def _project(space, z):
    x = _unpack(space, z)
    if space.kind is SpaceKind.CIRCLE:
        return z
    if space.kind is SpaceKind.SPHERE2:
        q = x.q / np.linalg.norm(x.q)
        p = x.p - np.dot(q, x.p) * q
        return np.concatenate([q, p])
    from .geometry import polar_orthonormalize
    Q = polar_orthonormalize(np.asarray(x.q))
    return np.concatenate([Q.ravel(), x.p])


def _adaptive_flow(F, space, x0, spec: FlowSpec, t_sign: float):
    z = _pack(space, x0)
    t = 0.0
    h = min(spec.h, spec.T)
    out_t = [0.0]
    out_z = [z.copy()]
    hmin = spec.T * 1e-14
    rejections = 0
    while t < spec.T - 1e-15 * spec.T:
        h = min(h, spec.T - t)
        ks = []
        for i in range(7):
            zi = z.copy()
            for j, a in enumerate(_DP_A[i]):
                zi = zi + (t_sign * h) * a * ks[j]
            ks.append(_ode_rhs(F, space, zi))
        z5 = z.copy()
        z4 = z.copy()
        for i in range(7):
            z5 = z5 + (t_sign * h) * _DP_B5[i] * ks[i]
            z4 = z4 + (t_sign * h) * _DP_B4[i] * ks[i]
        sc = spec.atol + spec.rtol * np.maximum(np.abs(z), np.abs(z5))
        err = float(np.sqrt(np.mean(((z5 - z4) / sc) ** 2)))
        if err <= 1.0:
            t += h
            z = _project(space, z5)
            out_t.append(t)
            out_z.append(z.copy())
            rejections = 0
        else:
            rejections += 1
        fac = 0.9 * (max(err, 1e-10)) ** (-0.2)
        h = h * min(5.0, max(0.2, fac))
        if h < hmin or rejections > 60:
            raw = _unpack(space, z)
            raise IntegrationFailure(
                f"adaptive step size collapsed at t={t:.6g}",
                last_good=make_point(space, raw.q, raw.p), t_reached=t)
    return out_t, out_z


# ---------------------------------------------------------------------------
# Public flow
# ---------------------------------------------------------------------------

def flow(F: PhaseField, x0: PhasePoint, spec: FlowSpec,
         reverse: bool = False) -> list:
    """Trajectory of x0 under the Hamiltonian flow of F.

    Returns ceil(T/h)+1 phase points (for the adaptive method, the accepted
    steps).  Every returned point satisfies the phase-point invariants after
    projection.  ``reverse=True`` integrates backwards in time.
    """
    space = F.space
    t_sign = -1.0 if reverse else 1.0
    if spec.method == "adaptive5":
        _, zs = _adaptive_flow(F, space, x0, spec, t_sign)
        return [make_point(space, *(lambda r: (r.q, r.p))(_unpack(space, z)))
                for z in zs]

    n = int(math.ceil(spec.T / spec.h - 1e-9))
    h = t_sign * spec.T / n
    traj = [x0]
    if space.kind is SpaceKind.ROTATION_GROUP:
        Q = np.asarray(x0.q).copy()
        ell = np.asarray(x0.p).copy()
        gamma = Q[2, :].copy()
        for _ in range(n):
            Q, ell, gamma = _midpoint_step_so3(F, Q, ell, gamma, h)
            traj.append(PhasePoint(Q, ell))
        return traj
    if _has_splitting(F):
        if space.kind is SpaceKind.CIRCLE:
            q, p = float(x0.q), float(x0.p)
            for _ in range(n):
                q, p = _strang_step_circle(F, q, p, h)
                traj.append(PhasePoint(q, p))
            return traj
        q = np.asarray(x0.q).copy()
        p = np.asarray(x0.p).copy()
        for _ in range(n):
            q, p = _strang_step_sphere(F, q, p, h)
            traj.append(PhasePoint(q, p))
        return traj
    # generic symmetric fallback
    q, p = (float(x0.q), float(x0.p)) if space.kind is SpaceKind.CIRCLE \
        else (np.asarray(x0.q).copy(), np.asarray(x0.p).copy())
    for _ in range(n):
        q, p = _midpoint_step_flat(F, space, q, p, h)
        traj.append(PhasePoint(q, p))
    return traj


def conservation_report(system, x0: PhasePoint,
                        spec: Optional[FlowSpec] = None) -> ConservationReport:
    """Flow x0 under the first component and record the worst drift of every
    component (relative to max(1, |initial value|)), the Casimir drifts on
    the rotation group, and the worst constraint residual."""
    spec = spec or FlowSpec(T=50.0, h=1e-3)
    space = system.space
    traj = flow(system.components[0], x0, spec)
    initial = [float(c.eval(x0)) for c in system.components]
    drifts = [0.0] * len(initial)
    cons_max = 0.0
    stride = max(1, len(traj) // 20000)
    sampled = traj[::stride]
    if sampled[-1] is not traj[-1]:
        sampled.append(traj[-1])
    for x in sampled:
        cons_max = max(cons_max, space.constraint_residual(x.q, x.p))
        for i, c in enumerate(system.components):
            d = abs(float(c.eval(x)) - initial[i]) / max(1.0, abs(initial[i]))
            drifts[i] = max(drifts[i], d)
    casimirs = None
    if space.kind is SpaceKind.ROTATION_GROUP:
        g0 = space.gamma(x0.q)
        c0 = (float(np.dot(g0, g0)), float(np.dot(x0.p, g0)))
        d1 = d2 = 0.0
        for x in sampled:
            g = space.gamma(x.q)
            d1 = max(d1, abs(float(np.dot(g, g)) - c0[0]))
            d2 = max(d2, abs(float(np.dot(x.p, g)) - c0[1]) / max(1.0, abs(c0[1])))
        casimirs = {"|gamma|^2": d1, "l.gamma": d2}
    return ConservationReport(tuple(drifts), casimirs, cons_max,
                              len(traj) - 1, tuple(initial), spec.method)
