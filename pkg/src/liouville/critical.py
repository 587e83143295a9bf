"""Minimax critical values and critical sets of fiberwise-minimal Hamiltonians.

A Hamiltonian H on T*N is *admissible relative to a compact set Sigma*
(zero section or a sphere subbundle) when its sublevel sets are compact and,
over every configuration q, the fiberwise minimum of H(q, .) is attained on
Sigma with H constant on Sigma's fiber slice.  For such H the quantities of
interest are

    m_H = max over q of the fiberwise minimum of H,
    S_H = the subset of Sigma where H attains m_H.

``verify_star`` probes admissibility numerically (coercivity along rays on
a finite momentum window, fiberwise minimization against the Sigma slice),
``compute_m_H`` maximizes the restricted Hamiltonian over the configuration
manifold with multistart ascent certified against a dense grid,
``locate_S`` clusters the maximizers, ``singleton_check`` evaluates a full
moment map on them and tests whether the image is a single point, and
``intersect_S_sets`` checks that the critical sets of several commuting
Hamiltonians share a common point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize as sciopt

from .brackets import PhaseField, bracket, sample_phase_points
from .errors import ParameterError, PreconditionError, UsageError
from .geometry import (ConfigurationSpace, PhasePoint, SpaceKind, cross3,
                       hat, make_point, rotation_exp)

VALUE_TOL = 1e-8
CLUSTER_RADIUS = 1e-4
SINGLETON_TOL = 1e-6
COERCIVITY_WINDOW = 50.0


# ---------------------------------------------------------------------------
# Sigma sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SigmaSet:
    """The zero section or a sphere subbundle of radius r in T*N."""

    space: ConfigurationSpace
    kind: str = "zero"          # "zero" | "sphere"
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "sphere"):
            raise ParameterError(f"unknown sigma kind {self.kind!r}")
        if self.kind == "sphere" and not self.radius > 0:
            raise ParameterError("sphere subbundle needs radius > 0")

    def momentum_at(self, q):
        """A representative point of Sigma in the fiber over q."""
        sp = self.space
        if self.kind == "zero":
            if sp.kind is SpaceKind.CIRCLE:
                return 0.0
            return np.zeros(3)
        if sp.kind is SpaceKind.CIRCLE:
            return self.radius
        if sp.kind is SpaceKind.SPHERE2:
            return self.radius * sp.momentum_basis(q)[0]
        # dual norm sqrt(sum l_i^2/I_i) = r at l = r sqrt(I) e1
        return self.radius * np.sqrt(sp.inertia_array) * np.eye(3)[0]

    def fiber_directions(self, q, m: int = 8) -> list:
        """m points of Sigma's slice over q (singleton for the zero section)."""
        sp = self.space
        if self.kind == "zero":
            return [self.momentum_at(q)]
        if sp.kind is SpaceKind.CIRCLE:
            return [self.radius, -self.radius]
        basis = sp.momentum_basis(q)
        out = []
        for i in range(m):
            th = 2 * math.pi * i / m
            u = math.cos(th) * basis[0] + math.sin(th) * basis[1]
            if sp.kind is SpaceKind.SPHERE2:
                out.append(self.radius * u)
            else:
                u3 = math.cos(th) * np.eye(3)[0] + math.sin(th) * np.eye(3)[1]
                # third direction folded in for a crude cover of the 2-sphere
                if i % 2:
                    u3 = math.cos(th) * np.eye(3)[0] + math.sin(th) * np.eye(3)[2]
                out.append(self.radius * np.sqrt(sp.inertia_array) * u3)
        return out


def zero_section(space: ConfigurationSpace) -> SigmaSet:
    return SigmaSet(space, "zero")


def sphere_bundle(space: ConfigurationSpace, radius: float) -> SigmaSet:
    return SigmaSet(space, "sphere", float(radius))


# ---------------------------------------------------------------------------
# Specs and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingSpec:
    """Density controls for verify_star."""
    q_density: Optional[int] = None
    p_radius: float = 5.0
    rays: int = 4
    seed: int = 0


@dataclass(frozen=True)
class StarVerdict:
    ok: bool
    witness: Optional[dict] = None
    message: str = ""

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class OptimizerSpec:
    starts: int = 64
    grid_density: Optional[int] = None
    seed: int = 0
    gtol: float = 1e-11
    rounds: int = 3
    value_tol: float = VALUE_TOL
    cluster_radius: float = CLUSTER_RADIUS
    continuum_threshold: int = 12


@dataclass(frozen=True)
class LocateResult:
    points: list            # PhasePoint cluster representatives on Sigma
    values: np.ndarray      # restricted H at the representatives
    m_H: float
    continuum: bool
    n_raw_maximizers: int


@dataclass(frozen=True)
class CriticalReport:
    """Everything the singleton check produces for one system."""
    m_H: float
    S_points: list
    y_values: np.ndarray            # (n_points, k)
    singleton_diameter: float
    y0: np.ndarray                  # mean of y_values
    is_singleton: bool
    continuum: bool
    predicted_y0: Optional[np.ndarray]
    matches_prediction: Optional[bool]
    tol_singleton: float = SINGLETON_TOL
    cluster_radius: float = CLUSTER_RADIUS

    def to_dict(self) -> dict:
        d = {
            "m_H": self.m_H,
            "y0": list(map(float, self.y0)),
            "singleton_diameter": float(self.singleton_diameter),
            "is_singleton": bool(self.is_singleton),
            "continuum": bool(self.continuum),
            "n_S_samples": len(self.S_points),
            "y_values": [list(map(float, row)) for row in np.atleast_2d(self.y_values)],
            "tol_singleton": self.tol_singleton,
            "cluster_radius": self.cluster_radius,
        }
        if self.predicted_y0 is not None:
            d["predicted_y0"] = list(map(float, self.predicted_y0))
            d["matches_prediction"] = bool(self.matches_prediction)
        return d


# ---------------------------------------------------------------------------
# Restricted Hamiltonian and its configuration gradient
# ---------------------------------------------------------------------------

def _default_q_density(space: ConfigurationSpace) -> int:
    return {SpaceKind.CIRCLE: 100_000, SpaceKind.SPHERE2: 20_000,
            SpaceKind.ROTATION_GROUP: 20_000}[space.kind]


def _star_q_density(space: ConfigurationSpace) -> int:
    return {SpaceKind.CIRCLE: 256, SpaceKind.SPHERE2: 240,
            SpaceKind.ROTATION_GROUP: 240}[space.kind]


def restricted_hamiltonian(H: PhaseField, sigma: SigmaSet) -> Callable:
    """q -> H(q, sigma slice over q).  Well defined once verify_star holds."""
    def h(q):
        return float(H.eval(PhasePoint(q, sigma.momentum_at(q))))
    return h


def restricted_gradient(H: PhaseField, sigma: SigmaSet) -> Callable:
    """Configuration gradient of the restricted Hamiltonian.

    Returns the tangential gradient in the ambient chart (scalar on the
    circle, tangent 3-vector on the sphere, body differential on the
    rotation group).  Constancy of H on Sigma's fiber slices kills the term
    from moving the slice representative, so only grad_q enters.
    """
    space = H.space

    def g(q):
        x = PhasePoint(q, sigma.momentum_at(q))
        gr = np.asarray(H.grad(x))
        if space.kind is SpaceKind.CIRCLE:
            return float(gr[0])
        if space.kind is SpaceKind.SPHERE2:
            gq = gr[0]
            return gq - np.dot(q, gq) * np.asarray(q)
        gamma = space.gamma(q)
        return cross3(gr[1], gamma)
    return g


# ---------------------------------------------------------------------------
# verify_star
# ---------------------------------------------------------------------------

def _fiber_minimum(H: PhaseField, space: ConfigurationSpace, q,
                   p_radius: float, rng: np.random.Generator):
    """Multistart minimum of H(q, .) over the fiber; returns (value, p)."""
    basis = space.momentum_basis(q)
    d = basis.shape[0]
    if space.kind is SpaceKind.ROTATION_GROUP:
        scale = np.sqrt(space.inertia_array)
    else:
        scale = None

    def to_p(c):
        if space.kind is SpaceKind.CIRCLE:
            return float(c[0])
        if space.kind is SpaceKind.SPHERE2:
            return c @ basis
        return scale * c

    def fun(c):
        return float(H.eval(PhasePoint(q, to_p(c))))

    def jac(c):
        gr = np.asarray(H.grad(PhasePoint(q, to_p(c))))
        if space.kind is SpaceKind.CIRCLE:
            return np.array([gr[1]])
        if space.kind is SpaceKind.SPHERE2:
            return basis @ gr[1]
        return scale * gr[1]

    starts = [np.zeros(d)]
    for i in range(d):
        e = np.zeros(d)
        e[i] = 0.5 * p_radius
        starts.append(e)
    starts.append(rng.uniform(-p_radius, p_radius, size=d) / math.sqrt(d))
    best_v, best_c = math.inf, np.zeros(d)
    for c0 in starts:
        res = sciopt.minimize(fun, c0, jac=jac, method="BFGS",
                              options={"gtol": 1e-9, "maxiter": 100})
        if res.fun < best_v:
            best_v, best_c = float(res.fun), res.x
    return best_v, to_p(best_c)


def verify_star(H: PhaseField, sigma: SigmaSet,
                sampling: Optional[SamplingSpec] = None) -> StarVerdict:
    """Probe the admissibility conditions for H relative to Sigma.

    (a) Coercivity: along rays p = s u in every sampled fiber, H increases
        on the tail of the window s in [0, 50].  This is a finite-window
        probe, decisive for kinetic-plus-bounded Hamiltonians but not a
        global proof.
    (b) Fiberwise minimum: at every sampled q the minimum of H(q, .) over a
        momentum ball is attained on Sigma's slice within 1e-8, and H is
        constant on the slice within 1e-8.

    Returns a verdict with a witness for the first failure found.
    """
    sampling = sampling or SamplingSpec()
    space = H.space
    nq = sampling.q_density or _star_q_density(space)
    rng = np.random.default_rng(sampling.seed)
    qs = space.low_discrepancy_configurations(nq)
    s_vals = [0.2, 0.4, 0.7, 1.0]
    window = [COERCIVITY_WINDOW * s for s in s_vals]

    for q in qs:
        basis = space.momentum_basis(q)
        scale = np.sqrt(space.inertia_array) if space.kind is SpaceKind.ROTATION_GROUP else None
        for k in range(sampling.rays):
            th = 2 * math.pi * k / sampling.rays
            if basis.shape[0] == 1:
                u = basis[0] if k % 2 == 0 else -basis[0]
            elif basis.shape[0] == 2:
                u = math.cos(th) * basis[0] + math.sin(th) * basis[1]
            else:
                u = np.array([math.cos(th), math.sin(th),
                              math.sin(2 * th) * 0.5])
                u /= np.linalg.norm(u)
            vals = []
            for s in window:
                p = s * u if scale is None else s * scale * u
                p = float(p) if space.kind is SpaceKind.CIRCLE else p
                vals.append(float(H.eval(PhasePoint(q, p))))
            if not all(vals[i] < vals[i + 1] for i in range(len(vals) - 1)):
                return StarVerdict(False, {"q": q, "ray": u, "values": vals},
                                   "not coercive along a sampled ray")

    for q in qs:
        slice_vals = [float(H.eval(PhasePoint(q, p)))
                      for p in sigma.fiber_directions(q)]
        smax, smin = max(slice_vals), min(slice_vals)
        if smax - smin > VALUE_TOL:
            return StarVerdict(False, {"q": q, "slice_spread": smax - smin},
                               "H not constant on Sigma's fiber slice")
        fmin, pmin = _fiber_minimum(H, space, q, sampling.p_radius, rng)
        if smin - fmin > VALUE_TOL:
            return StarVerdict(False,
                               {"q": q, "p": pmin, "fiber_min": fmin,
                                "sigma_value": smin},
                               "fiberwise minimum not attained on Sigma")
    return StarVerdict(True, None, "ok")


# ---------------------------------------------------------------------------
# Multistart maximization over a configuration manifold
# ---------------------------------------------------------------------------

def _right_jacobian(x: np.ndarray) -> np.ndarray:
    """d exp map so that exp(hat(x + d)) ~ exp(hat(x)) exp(hat(J_r(x) d))."""
    th = float(np.linalg.norm(x))
    X = hat(x)
    if th < 1e-6:
        return np.eye(3) - 0.5 * X + (X @ X) / 6.0
    return (np.eye(3)
            - (1 - math.cos(th)) / th**2 * X
            + (th - math.sin(th)) / th**3 * (X @ X))


def _chart_ascend(space: ConfigurationSpace, fn, grad, q0, opt: OptimizerSpec):
    """Gradient ascent of fn in a chart around q0, recentred a few times."""
    q = q0
    for _ in range(opt.rounds):
        if space.kind is SpaceKind.CIRCLE:
            def nf(x):
                return -fn(float(x[0]) + q)

            def nj(x):
                return np.array([-grad(float(x[0]) + q)])
            res = sciopt.minimize(nf, np.zeros(1), jac=nj, method="BFGS",
                                  options={"gtol": opt.gtol, "maxiter": 200})
            qn = (q + float(res.x[0])) % (2 * math.pi)
        elif space.kind is SpaceKind.SPHERE2:
            basis = space.momentum_basis(q)

            def chart(x):
                v = q + x @ basis
                return v / np.linalg.norm(v)

            def nf(x):
                return -fn(chart(x))

            def nj(x):
                v = q + x @ basis
                n = np.linalg.norm(v)
                qq = v / n
                g = np.asarray(grad(qq))
                g = (g - np.dot(qq, g) * qq) / n
                return -(basis @ g)
            res = sciopt.minimize(nf, np.zeros(2), jac=nj, method="BFGS",
                                  options={"gtol": opt.gtol, "maxiter": 200})
            qn = chart(res.x)
        else:
            Q = q

            def chart(x):
                return Q @ rotation_exp(x)

            def nf(x):
                return -fn(chart(x))

            def nj(x):
                d = np.asarray(grad(chart(x)))
                return -(_right_jacobian(x).T @ d)
            res = sciopt.minimize(nf, np.zeros(3), jac=nj, method="BFGS",
                                  options={"gtol": opt.gtol, "maxiter": 200})
            qn = chart(res.x)
        if abs(fn(qn) - fn(q)) < 1e-15 and space.config_distance(q, qn) < 1e-12:
            q = qn
            break
        q = qn
    return fn(q), q


def maximize_on_configuration(space: ConfigurationSpace, fn, grad,
                              opt: Optional[OptimizerSpec] = None):
    """Multistart ascent of a scalar function over the configuration space.

    Returns (best_value, list of (value, q) for every start, grid_max).
    Starts are a low-discrepancy set plus the best dense-grid points, so the
    returned maximum always dominates the grid lower bound.
    """
    opt = opt or OptimizerSpec()
    grid_n = opt.grid_density or _default_q_density(space)
    grid = space.low_discrepancy_configurations(grid_n)
    grid_vals = np.fromiter((fn(q) for q in grid), dtype=float, count=len(grid))
    order = np.argsort(grid_vals)[::-1]
    grid_max = float(grid_vals[order[0]])

    starts = list(space.low_discrepancy_configurations(opt.starts))
    n_top = max(8, opt.starts // 4)
    starts += [grid[i] for i in order[:n_top]]

    results = []
    for q0 in starts:
        results.append(_chart_ascend(space, fn, grad, q0, opt))
    best = max(r[0] for r in results)
    if best < grid_max - VALUE_TOL:   # pragma: no cover - grid starts prevent this
        raise PreconditionError("ascent failed to dominate the grid bound")
    return best, results, grid_max


# ---------------------------------------------------------------------------
# m_H, S_H, singleton check, intersections
# ---------------------------------------------------------------------------

def compute_m_H(H: PhaseField, sigma: SigmaSet,
                optimizer: Optional[OptimizerSpec] = None) -> float:
    """Minimax value: max over configurations of H restricted to Sigma.

    Call after :func:`verify_star`; the restriction is only meaningful for
    admissible Hamiltonians.  The value is certified against a dense-grid
    lower bound by construction of the multistart set.
    """
    h = restricted_hamiltonian(H, sigma)
    g = restricted_gradient(H, sigma)
    best, _, _ = maximize_on_configuration(H.space, h, g, optimizer)
    return best


def locate_S(H: PhaseField, sigma: SigmaSet,
             optimizer: Optional[OptimizerSpec] = None) -> LocateResult:
    """Cluster the configurations attaining m_H on Sigma.

    All multistart maximizers within ``value_tol`` of m_H are merged with
    the clustering radius; a cluster count above ``continuum_threshold``
    flags a continuum of maximizers (the representatives are then a sample
    cloud, not a finite critical set).
    """
    opt = optimizer or OptimizerSpec()
    h = restricted_hamiltonian(H, sigma)
    g = restricted_gradient(H, sigma)
    best, results, _ = maximize_on_configuration(H.space, h, g, opt)
    space = H.space
    reps = []
    for v, q in sorted(results, key=lambda r: -r[0]):
        if v < best - opt.value_tol:
            continue
        if any(space.config_distance(q, r) <= opt.cluster_radius for _, r in reps):
            continue
        reps.append((v, q))
    pts = [make_point(space, q, sigma.momentum_at(q)) for _, q in reps]
    vals = np.array([v for v, _ in reps])
    n_raw = sum(1 for v, _ in results if v >= best - opt.value_tol)
    return LocateResult(pts, vals, best, len(reps) > opt.continuum_threshold,
                        n_raw)


def singleton_check(system, sigma: Optional[SigmaSet] = None,
                    optimizer: Optional[OptimizerSpec] = None,
                    sampling: Optional[SamplingSpec] = None,
                    check_star: bool = True) -> CriticalReport:
    """Evaluate the moment map on the critical set and test for a singleton.

    The first component of the system is the distinguished Hamiltonian; it
    must pass :func:`verify_star` (checked here unless ``check_star`` is
    False).  The image diameter is compared against the singleton tolerance
    and, when the system carries a predicted critical fiber value, against
    that prediction.
    """
    sigma = sigma or getattr(system, "natural_sigma", None) or zero_section(system.space)
    H = system.components[0]
    if check_star:
        verdict = verify_star(H, sigma, sampling)
        if not verdict.ok:
            raise PreconditionError(
                f"distinguished Hamiltonian of {system.name!r} failed the "
                f"admissibility probe: {verdict.message}; witness {verdict.witness}")
    loc = locate_S(H, sigma, optimizer)
    y = np.array([[float(c.eval(x)) for c in system.components]
                  for x in loc.points])
    diam = 0.0
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            diam = max(diam, float(np.linalg.norm(y[i] - y[j])))
    y0 = y.mean(axis=0)
    predicted = getattr(system, "predicted_y0", None)
    matches = None
    if predicted is not None:
        predicted = np.asarray(predicted, dtype=float)
        matches = bool(np.max(np.abs(y0 - predicted)) <= SINGLETON_TOL)
    return CriticalReport(
        m_H=loc.m_H, S_points=loc.points, y_values=y,
        singleton_diameter=diam, y0=y0,
        is_singleton=diam <= SINGLETON_TOL, continuum=loc.continuum,
        predicted_y0=predicted, matches_prediction=matches)


@dataclass(frozen=True)
class IntersectionResult:
    nonempty: bool
    common_points: list
    per_set_sizes: tuple


def intersect_S_sets(H_list: Sequence[PhaseField],
                     optimizer: Optional[OptimizerSpec] = None,
                     commutation_samples: int = 200,
                     seed: int = 0) -> IntersectionResult:
    """Common points of the critical sets of commuting admissible Hamiltonians.

    Preconditions (verified): every H passes verify_star with the zero
    section, and all pairwise brackets vanish to 1e-8 on a sample.  An empty
    intersection is returned as a finding, not an error.
    """
    if not H_list:
        raise UsageError("need at least one Hamiltonian")
    space = H_list[0].space
    sigma = zero_section(space)
    for H in H_list:
        verdict = verify_star(H, sigma)
        if not verdict.ok:
            raise PreconditionError(
                f"{H.name or 'H'} failed the admissibility probe: {verdict.message}")
    rng = np.random.default_rng(seed)
    pts = sample_phase_points(space, commutation_samples, rng)
    for i in range(len(H_list)):
        for j in range(i + 1, len(H_list)):
            worst = max(abs(bracket(H_list[i], H_list[j], x)) for x in pts)
            if worst > 1e-8:
                raise PreconditionError(
                    f"components {i} and {j} do not commute "
                    f"(max |bracket| = {worst:.2e})")
    locs = [locate_S(H, sigma, optimizer) for H in H_list]
    common = []
    for x in locs[0].points:
        ok = all(
            any(space.config_distance(x.q, y.q) <= CLUSTER_RADIUS
                for y in loc.points)
            for loc in locs[1:])
        if ok:
            common.append(x)
    return IntersectionResult(bool(common), common,
                              tuple(len(l.points) for l in locs))
