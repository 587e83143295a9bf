"""Sampling moment-map fibers and classifying their points by rank.

Fiber points solve Phi(x) = y on the phase space by damped Gauss-Newton in
retraction coordinates (tangent steps followed by renormalization /
re-orthonormalization), so manifold constraints hold exactly along the
iteration.  At every reported point the rank of the moment map restricted
to the phase tangent space is computed from the singular values of the
tangent Jacobian; values below 1e-7 * (sigma_max + 1) count as zero.  The
projection-coverage probe solves Phi(q, .) = y over the fiber alone for
each configuration in a grid and reports the covered fraction - equal to
one exactly when the fiber projects onto the whole base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .brackets import sample_phase_points
from .errors import ParameterError
from .geometry import (ConfigurationSpace, PhasePoint, SpaceKind, cross3,
                       make_point, phase_distance, rotation_exp)

RESIDUAL_TOL = 1e-9
DEDUP_DISTANCE = 1e-6
RANK_TOL = 1e-7


@dataclass(frozen=True)
class FiberSample:
    """Deduplicated fiber points with their tangent-Jacobian ranks."""

    y: tuple
    points: list
    ranks: tuple
    empty: bool
    n_attempts: int

    def rank_histogram(self) -> dict:
        out = {}
        for r in self.ranks:
            out[r] = out.get(r, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "y": [float(v) for v in self.y],
            "n_points": len(self.points),
            "ranks": list(self.ranks),
            "rank_histogram": {str(k): v for k, v in
                               sorted(self.rank_histogram().items())},
            "empty": self.empty,
            "n_attempts": self.n_attempts,
        }


def _evaluate(system, q, p) -> np.ndarray:
    class _X:
        __slots__ = ("q", "p")

        def __init__(s):
            s.q = q
            s.p = p
    x = _X()
    return np.array([float(c.eval(x)) for c in system.components])


def tangent_jacobian(system, x) -> np.ndarray:
    """d Phi restricted to the phase tangent space, as a (k, 2n) matrix in
    the orthonormal retraction coordinates used by the solver."""
    space = system.space
    k = len(system.components)
    if space.kind is SpaceKind.CIRCLE:
        J = np.empty((k, 2))
        for i, c in enumerate(system.components):
            g = np.asarray(c.grad(x))
            J[i] = (g[0], g[1])
        return J
    if space.kind is SpaceKind.SPHERE2:
        q = np.asarray(x.q)
        p = np.asarray(x.p)
        basis = space.momentum_basis(q)
        J = np.empty((k, 4))
        for i, c in enumerate(system.components):
            gq, gp = np.asarray(c.grad(x))
            for a in range(2):
                e = basis[a]
                # q moves along e; p is transported by the tangent projection
                J[i, a] = float(np.dot(gq, e) - np.dot(e, p) * np.dot(gp, q))
            for b in range(2):
                J[i, 2 + b] = float(np.dot(gp, basis[b]))
        return J
    gamma = space.gamma(x.q)
    J = np.empty((k, 6))
    for i, c in enumerate(system.components):
        gl, gg = np.asarray(c.grad(x))
        J[i, :3] = cross3(gg, gamma)      # body rotation directions
        J[i, 3:] = gl                     # momentum directions
    return J


def phase_rank(system, x, tol: float = RANK_TOL) -> int:
    J = tangent_jacobian(system, x)
    s = np.linalg.svd(J, compute_uv=False)
    return int(np.sum(s > tol * (s[0] + 1.0))) if len(s) else 0


def _retract(space, x, step):
    if space.kind is SpaceKind.CIRCLE:
        return PhasePoint((x.q + step[0]) % (2 * math.pi), x.p + step[1])
    if space.kind is SpaceKind.SPHERE2:
        q = np.asarray(x.q)
        basis = space.momentum_basis(q)
        qn = q + step[0] * basis[0] + step[1] * basis[1]
        qn = qn / np.linalg.norm(qn)
        pn = np.asarray(x.p) + step[2] * basis[0] + step[3] * basis[1]
        pn = pn - np.dot(qn, pn) * qn
        return PhasePoint(qn, pn)
    Q = np.asarray(x.q) @ rotation_exp(step[:3])
    return PhasePoint(Q, np.asarray(x.p) + step[3:])


def solve_fiber_point(system, y, seed_point: PhasePoint,
                      max_iter: int = 100,
                      tol: float = RESIDUAL_TOL) -> Optional[PhasePoint]:
    """Damped Gauss-Newton solve of Phi(x) = y from a seed.

    Returns the converged phase point, or None after the iteration cap
    (a verdict: the fiber may be empty or out of the seed's reach).
    """
    y = np.asarray(y, dtype=float)
    space = system.space
    x = seed_point
    r = system.evaluate(x) - y
    lam = 1e-12
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol:
            return x
        J = tangent_jacobian(system, x)
        JJt = J @ J.T
        scale = np.trace(JJt) / max(1, JJt.shape[0])
        try:
            step = -J.T @ np.linalg.solve(
                JJt + (lam * (scale + 1e-12)) * np.eye(JJt.shape[0]), r)
        except np.linalg.LinAlgError:
            lam = max(lam * 10, 1e-8)
            continue
        xn = _retract(space, x, step)
        rn = system.evaluate(xn) - y
        if np.linalg.norm(rn) < np.linalg.norm(r):
            x, r = xn, rn
            lam = max(lam / 10, 1e-12)
        else:
            lam = lam * 10
            if lam > 1e8:
                return None
    return x if np.linalg.norm(r) <= tol else None


def sample_fiber(system, y, n: int = 200, seed: int = 0,
                 targeted: Optional[Sequence[PhasePoint]] = None,
                 momentum_radius: float = 5.0) -> FiberSample:
    """Multistart fiber sampling.

    Seeds are drawn from the canonical momentum-ball measure, plus any
    targeted seeds (e.g. critical-set representatives, which aim the solver
    at measure-zero singular points).  Results are deduplicated at phase
    distance 1e-6 and annotated with tangent ranks.
    """
    if n < 1:
        raise ParameterError("need n >= 1")
    rng = np.random.default_rng(seed)
    seeds = list(targeted or [])
    seeds += sample_phase_points(system.space, n, rng, momentum_radius)
    space = system.space
    points = []
    for s in seeds:
        x = solve_fiber_point(system, y, s)
        if x is None:
            continue
        if any(phase_distance(space, x, z) <= DEDUP_DISTANCE for z in points):
            continue
        points.append(x)
    ranks = tuple(phase_rank(system, x) for x in points)
    yt = tuple(float(v) for v in np.atleast_1d(y))
    return FiberSample(yt, points, ranks, len(points) == 0, len(seeds))


def _solve_momentum(system, q, y, p_seeds, max_iter=60) -> bool:
    """Solve Phi(q, p) = y over the fiber alone; True on convergence."""
    space = system.space
    y = np.asarray(y, dtype=float)
    if space.kind is SpaceKind.CIRCLE:
        dim = 1
    elif space.kind is SpaceKind.SPHERE2:
        dim = 2
        basis = space.momentum_basis(q)
    else:
        dim = 3
    for p0 in p_seeds:
        p = p0
        lam = 1e-12
        r = _evaluate(system, q, p) - y
        ok = False
        for _ in range(max_iter):
            if np.linalg.norm(r) <= RESIDUAL_TOL:
                ok = True
                break
            class _X:
                pass
            x = _X()
            x.q = q
            x.p = p
            k = len(system.components)
            J = np.empty((k, dim))
            for i, c in enumerate(system.components):
                g = np.asarray(c.grad(x))
                if space.kind is SpaceKind.CIRCLE:
                    J[i, 0] = g[1]
                elif space.kind is SpaceKind.SPHERE2:
                    J[i] = basis @ g[1]
                else:
                    J[i] = g[1]
            JJt = J @ J.T
            scale = np.trace(JJt) / max(1, k)
            try:
                step = -J.T @ np.linalg.solve(
                    JJt + lam * (scale + 1e-12) * np.eye(k), r)
            except np.linalg.LinAlgError:
                lam = max(lam * 10, 1e-8)
                continue
            if space.kind is SpaceKind.CIRCLE:
                pn = p + step[0]
            elif space.kind is SpaceKind.SPHERE2:
                pn = p + step[0] * basis[0] + step[1] * basis[1]
                pn = pn - np.dot(q, pn) * q
            else:
                pn = p + step
            rn = _evaluate(system, q, pn) - y
            if np.linalg.norm(rn) < np.linalg.norm(r):
                p, r = pn, rn
                lam = max(lam / 10, 1e-12)
            else:
                lam *= 10
                if lam > 1e8:
                    break
        if ok:
            return True
    return False


def projection_coverage(system, y, q_grid: int = 500, seed: int = 0) -> float:
    """Fraction of a configuration grid over which the fiber Phi^{-1}(y)
    has a point (solving over the momentum alone)."""
    space = system.space
    rng = np.random.default_rng(seed)
    qs = space.low_discrepancy_configurations(q_grid)
    covered = 0
    for q in qs:
        if space.kind is SpaceKind.CIRCLE:
            seeds = [0.0, 1.0, -1.0, float(rng.uniform(-3, 3))]
        elif space.kind is SpaceKind.SPHERE2:
            basis = space.momentum_basis(q)
            seeds = [np.zeros(3), basis[0], basis[1],
                     rng.standard_normal(2) @ basis]
        else:
            seeds = [np.zeros(3), np.array([1.0, 0.0, 0.0]),
                     np.array([0.0, 1.0, 0.0]), rng.standard_normal(3)]
        if _solve_momentum(system, q, y, seeds):
            covered += 1
    return covered / len(qs)
