"""Certified graph-shift displacement constructions.

Given an admissible Hamiltonian H and a level c below the minimax value
m_H, a graph shift by a suitable function f displaces Sigma off the whole
sublevel {H <= c}: over the region U where the fiberwise minimum exceeds
the midpoint (c + m_H)/2 any fiberwise translate of Sigma stays above c,
and outside U the translate is pushed beyond every momentum radius reached
by the sublevel set.  The construction produces the constants

    R1 = min over N\\U of |df|_g (positive iff all critical points of f
         lie in U),
    R2 = 1.05 * (smallest momentum radius enclosing Sigma restricted to
         N\\U together with the sampled sublevel),
    R3 = 2 R2 / R1,

and the certificate records the verified margin
min over a Sigma grid of H(graph_shift(f, R, x)) - c together with the
grid density and seed, so every claim is reproducible.  Verification is
sampling-based plus local refinement from the worst grid point; it is not
interval-certified, and a nonpositive margin is reported as a failed
search, never as impossibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize as sciopt

from .brackets import PhaseField
from .critical import (OptimizerSpec, SigmaSet, compute_m_H,
                       maximize_on_configuration, restricted_gradient,
                       restricted_hamiltonian, zero_section)
from .errors import ConstructionError, ParameterError, PreconditionError
from .geometry import (ConfigurationSpace, PhasePoint, ScalarField, SpaceKind,
                       cross3, norm3)
from .shifts import (ShiftFunction, fourier_shift, from_dict, harmonic_shift,
                     make_warp, trace_shift, warped_shift)

MOMENTUM_WINDOW = 50.0


# ---------------------------------------------------------------------------
# Verification grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Density and seed of a configuration verification grid."""
    density: Optional[int] = None
    seed: int = 0
    fiber_directions: int = 8

    def resolve(self, space: ConfigurationSpace) -> int:
        if self.density is not None:
            return self.density
        return {SpaceKind.CIRCLE: 10_000, SpaceKind.SPHERE2: 10_000,
                SpaceKind.ROTATION_GROUP: 100_000}[space.kind]


def configuration_grid(space: ConfigurationSpace, spec: GridSpec):
    """Low-discrepancy grid randomized by the seed (phase shift on the
    circle, a global random rotation elsewhere), as a batch array."""
    n = spec.resolve(space)
    rng = np.random.default_rng(spec.seed)
    if space.kind is SpaceKind.CIRCLE:
        shift = rng.uniform(0.0, 2.0 * math.pi / n)
        return (np.arange(n) * (2.0 * math.pi / n) + shift) % (2 * math.pi)
    R = space_rotation = None
    quat = rng.standard_normal(4)
    quat /= np.linalg.norm(quat)
    from .geometry import _quat_to_matrix
    R = _quat_to_matrix(*quat)
    if space.kind is SpaceKind.SPHERE2:
        from .geometry import fibonacci_sphere
        return fibonacci_sphere(n) @ R.T
    base = space.low_discrepancy_configurations(n)
    return np.einsum("ij,njk->nik", R, np.asarray(base))


class _Raw:
    __slots__ = ("q", "p")

    def __init__(self, q, p):
        self.q = q
        self.p = p


def _sigma_momenta(space, sigma: SigmaSet, q, n_dirs: int):
    if sigma.kind == "zero":
        return [0.0 if space.kind is SpaceKind.CIRCLE else np.zeros(3)]
    return sigma.fiber_directions(q, n_dirs)


def _dual_norms(space, d):
    """Dual norms of a batch of differentials."""
    if space.kind is SpaceKind.CIRCLE:
        return np.abs(d)
    if space.kind is SpaceKind.SPHERE2:
        return np.linalg.norm(d, axis=1)
    I = space.inertia_array
    return np.sqrt(np.sum(d * d / I[None, :], axis=1))


def _grid_angles(space, grid, center):
    """Angular distance of grid configurations from a center direction
    (gamma-angle on the rotation group)."""
    if space.kind is SpaceKind.CIRCLE:
        d = np.abs(grid - center) % (2 * math.pi)
        return np.minimum(d, 2 * math.pi - d)
    if space.kind is SpaceKind.SPHERE2:
        return np.arccos(np.clip(grid @ np.asarray(center), -1.0, 1.0))
    gam = grid[:, 2, :]
    return np.arccos(np.clip(gam @ np.asarray(center), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PaperConstants:
    R1: float
    R2: float
    R3: float
    n_radius_samples: int

    def to_dict(self):
        return {"R1": self.R1, "R2": self.R2, "R3": self.R3,
                "n_radius_samples": self.n_radius_samples}


@dataclass(frozen=True)
class DisplacementCertificate:
    """Witness that the graph shift by R*f carries Sigma off {H <= c}."""

    system: str
    level: float                       # the displaced sublevel value c
    fiber_value: Optional[tuple]       # set when issued for a fiber
    sigma_kind: str
    sigma_radius: float
    shift: ShiftFunction
    R: float
    margin: float
    grid_density: int
    grid_seed: int
    path: str                          # "paper" | "search"
    constants: Optional[PaperConstants] = None

    @property
    def valid(self) -> bool:
        return self.margin > 0.0

    def to_dict(self) -> dict:
        d = {
            "system": self.system,
            "level": self.level,
            "sigma": {"kind": self.sigma_kind, "radius": self.sigma_radius},
            "shift": self.shift.to_dict(),
            "R": self.R,
            "margin": self.margin,
            "grid": {"density": self.grid_density, "seed": self.grid_seed},
            "path": self.path,
            "valid": self.valid,
        }
        if self.fiber_value is not None:
            d["fiber_value"] = [float(v) for v in self.fiber_value]
        if self.constants is not None:
            d["constants"] = self.constants.to_dict()
        return d


# ---------------------------------------------------------------------------
# Margin verification
# ---------------------------------------------------------------------------

def _shifted_values(H: PhaseField, f: ShiftFunction, R: float,
                    sigma: SigmaSet, grid, n_dirs: int, d=None):
    """Min over fiber slices of H on the R-shifted Sigma grid, per grid
    configuration; returns (values, argmin momenta, differentials)."""
    space = H.space
    if d is None:
        d = f.differential_many(grid)
    vals = np.empty(len(grid))
    moms = []
    if space.kind is SpaceKind.CIRCLE:
        for i, (q, dq) in enumerate(zip(grid, d)):
            best, bp = math.inf, 0.0
            for p0 in _sigma_momenta(space, sigma, q, n_dirs):
                v = H.eval(_Raw(float(q), float(p0) + R * float(dq)))
                if v < best:
                    best, bp = v, float(p0)
            vals[i] = best
            moms.append(bp)
    else:
        for i in range(len(grid)):
            q = grid[i]
            dq = d[i]
            best, bp = math.inf, None
            for p0 in _sigma_momenta(space, sigma, q, n_dirs):
                p = np.asarray(p0) + R * dq
                if space.kind is SpaceKind.SPHERE2:
                    p = p - np.dot(q, p) * q
                v = H.eval(_Raw(q, p))
                if v < best:
                    best, bp = v, np.asarray(p0)
            vals[i] = best
            moms.append(bp)
    return vals, moms, d


def _shifted_min(H: PhaseField, f: ShiftFunction, R: float,
                 sigma: SigmaSet, grid, n_dirs: int):
    vals, moms, _ = _shifted_values(H, f, R, sigma, grid, n_dirs)
    i = int(np.argmin(vals))
    return float(vals[i]), (grid[i], moms[i])


def _refine_worst(H, f, R, sigma, space, worst, n_dirs):
    """Local minimization of the shifted value from the worst grid point."""
    q0, p0 = worst
    sf = f.as_scalar_field()

    if space.kind is SpaceKind.CIRCLE:
        def fun(x):
            q = float(q0) + float(x[0])
            return H.eval(_Raw(q, float(p0) + R * float(sf.differential(q))))
        res = sciopt.minimize(fun, [0.0], method="Nelder-Mead",
                              options={"xatol": 1e-10, "fatol": 1e-12,
                                       "maxfev": 200})
        return float(res.fun)

    if space.kind is SpaceKind.SPHERE2:
        basis = space.momentum_basis(q0)

        def fun(x):
            q = q0 + x[:2] @ basis
            q = q / np.linalg.norm(q)
            if sigma.kind == "zero":
                p0q = np.zeros(3)
            else:
                b = space.momentum_basis(q)
                th = x[2] if len(x) > 2 else 0.0
                p0q = sigma.radius * (math.cos(th) * b[0] + math.sin(th) * b[1])
            p = p0q + R * np.asarray(sf.differential(q))
            p = p - np.dot(q, p) * q
            return H.eval(_Raw(q, p))
        x0 = np.zeros(2 if sigma.kind == "zero" else 3)
        res = sciopt.minimize(fun, x0, method="Nelder-Mead",
                              options={"xatol": 1e-9, "fatol": 1e-12,
                                       "maxfev": 300})
        return float(res.fun)

    from .geometry import rotation_exp

    def fun(x):
        Q = q0 @ rotation_exp(x[:3])
        p = np.asarray(p0) + R * np.asarray(sf.differential(Q))
        return H.eval(_Raw(Q, p))
    res = sciopt.minimize(fun, np.zeros(3), method="Nelder-Mead",
                          options={"xatol": 1e-9, "fatol": 1e-12,
                                   "maxfev": 400})
    return float(res.fun)


def verify_graph_displacement(H: PhaseField, c: float, f: ShiftFunction,
                              R: float, sigma: SigmaSet,
                              grid: Optional[GridSpec] = None,
                              _pts=None, _d=None) -> float:
    """Margin of the shifted Sigma over the sublevel {H <= c}.

    margin = min over the Sigma grid of H(graph_shift(f, R, x)) - c,
    sharpened by local minimizations started from the worst grid points,
    from the smallest-|df| grid points, and from the exact critical points
    of the shift when these are known (the shifted value has narrow dips
    around them that coarse grids undersample).  A positive margin
    certifies empty intersection at the sampled scale.
    """
    grid = grid or GridSpec()
    space = H.space
    pts = configuration_grid(space, grid) if _pts is None else _pts
    vals, moms, d = _shifted_values(H, f, R, sigma, pts,
                                    grid.fiber_directions, d=_d)
    norms = _dual_norms(space, d)

    starts = []
    for i in np.argsort(vals)[:2]:
        starts.append((pts[i], moms[i]))
    for i in np.argsort(norms)[:2]:
        starts.append((pts[i], moms[i]))
    zero_mom = 0.0 if space.kind is SpaceKind.CIRCLE else np.zeros(3)
    for qc in f.critical_points():
        p0 = sigma.momentum_at(qc) if sigma.kind == "sphere" else zero_mom
        starts.append((qc, p0))

    best = float(vals.min())
    for worst in starts:
        best = min(best, _refine_worst(H, f, R, sigma, space, worst,
                                       grid.fiber_directions))
    return float(best - c)


def verify_certificate(H: PhaseField, cert: DisplacementCertificate,
                       sigma: SigmaSet,
                       grid: Optional[GridSpec] = None) -> float:
    """Recompute a certificate's margin on a fresh grid (new seed)."""
    grid = grid or GridSpec(density=cert.grid_density, seed=cert.grid_seed + 1)
    return verify_graph_displacement(H, cert.level, cert.shift, cert.R,
                                     sigma, grid)


# ---------------------------------------------------------------------------
# The construction constants
# ---------------------------------------------------------------------------

def _sublevel_radius(H: PhaseField, space, q, c: float, n_rays: int = 4) -> float:
    """Largest sampled dual momentum radius with H(q, p) <= c along rays."""
    basis = space.momentum_basis(q)
    scale = np.sqrt(space.inertia_array) if space.kind is SpaceKind.ROTATION_GROUP else None
    worst = 0.0
    for k in range(n_rays):
        th = 2 * math.pi * k / n_rays
        if basis.shape[0] == 1:
            u = basis[0] * (1.0 if k % 2 == 0 else -1.0)
        elif basis.shape[0] == 2:
            u = math.cos(th) * basis[0] + math.sin(th) * basis[1]
        else:
            u = np.array([math.cos(th), math.sin(th), math.sin(2 * th) * 0.5])
            u /= norm3(u)

        def val(s):
            p = s * u if scale is None else s * scale * u
            p = float(p) if space.kind is SpaceKind.CIRCLE else p
            return H.eval(_Raw(q, p))

        ss = np.linspace(0.0, MOMENTUM_WINDOW, 64)
        inside = [s for s in ss if val(s) <= c]
        if not inside:
            continue
        lo = max(inside)
        hi = min([s for s in ss if s > lo], default=MOMENTUM_WINDOW)
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if val(mid) <= c:
                lo = mid
            else:
                hi = mid
        worst = max(worst, lo)
    return worst


def paper_constants(H: PhaseField, c: float, f: ShiftFunction,
                    in_U: Callable, sigma: Optional[SigmaSet] = None,
                    grid: Optional[GridSpec] = None,
                    m_H: Optional[float] = None,
                    n_radius_samples: int = 400,
                    _pts=None, _d=None) -> PaperConstants:
    """Constants (R1, R2, R3) of the displacement construction.

    ``in_U`` is a boolean predicate on configurations describing the region
    where the fiberwise minimum of H stays above c.  Preconditions checked
    on the grid: c < m_H, U is contained in {restricted H > c}, and all
    critical points of f lie in U (else R1 collapses and a construction
    error names the offending point).
    """
    space = H.space
    sigma = sigma or zero_section(space)
    grid = grid or GridSpec()
    if m_H is None:
        m_H = compute_m_H(H, sigma)
    if not c < m_H:
        raise PreconditionError(f"need c < m_H, got c={c}, m_H={m_H}")

    pts = configuration_grid(space, grid) if _pts is None else _pts
    h = restricted_hamiltonian(H, sigma)
    mask_U = np.array([bool(in_U(q)) for q in pts])
    for q in pts[mask_U][:: max(1, mask_U.sum() // 500)]:
        if h(q) <= c:
            raise PreconditionError(
                "U contains a configuration with restricted value <= c")

    d = f.differential_many(pts) if _d is None else _d
    norms = _dual_norms(space, d)
    out = ~mask_U
    if not out.any():
        raise PreconditionError("the complement of U is empty on the grid; "
                                "use the trivial certificate instead")
    R1 = float(norms[out].min())
    scale = float(norms.max())
    if R1 <= 1e-6 * max(scale, 1e-12):
        bad = pts[out][int(np.argmin(norms[out]))]
        raise ConstructionError(
            f"shift function has a critical point outside U near {bad!r} "
            f"(|df| = {R1:.3e})")

    idx_out = np.nonzero(out)[0]
    stride = max(1, len(idx_out) // n_radius_samples)
    sub = idx_out[::stride]
    sigma_norm = sigma.radius if sigma.kind == "sphere" else 0.0
    R2 = sigma_norm
    for i in sub:
        R2 = max(R2, _sublevel_radius(H, space, pts[i], c))
    R2 *= 1.05
    if R2 == 0.0:
        R2 = 1e-6  # empty sampled sublevel; any positive radius works
    R3 = 2.0 * R2 / R1
    return PaperConstants(R1, R2, R3, len(sub))


# ---------------------------------------------------------------------------
# Search for a displacing shift
# ---------------------------------------------------------------------------

def _restricted_argmax(H: PhaseField, sigma: SigmaSet):
    h = restricted_hamiltonian(H, sigma)
    g = restricted_gradient(H, sigma)
    best, results, _ = maximize_on_configuration(
        H.space, h, g, OptimizerSpec(starts=24, grid_density=4000))
    for v, q in sorted(results, key=lambda r: -r[0]):
        return best, q
    raise ConstructionError("no maximizer found")  # pragma: no cover


def _cap_center(space, q):
    if space.kind is SpaceKind.ROTATION_GROUP:
        return space.gamma(q)
    return q


def _paper_path(H, c, sigma, grid, m_H, system_name):
    space = H.space
    pts = configuration_grid(space, grid)
    h = restricted_hamiltonian(H, sigma)
    hvals = np.fromiter((h(q) for q in pts), dtype=float, count=len(pts))

    if float(hvals.min()) > c:
        # the sublevel set misses Sigma entirely; the identity shift works
        zero = _zero_shift(space)
        margin = float(hvals.min() - c)
        return DisplacementCertificate(
            system=system_name, level=c, fiber_value=None,
            sigma_kind=sigma.kind, sigma_radius=sigma.radius,
            shift=zero, R=0.0, margin=margin,
            grid_density=grid.resolve(space), grid_seed=grid.seed,
            path="paper", constants=None)

    mid = 0.5 * (c + m_H)
    _, qmax = _restricted_argmax(H, sigma)
    center = _cap_center(space, qmax)
    angles = _grid_angles(space, pts, center)
    low = hvals <= mid
    if not low.any():
        theta = math.pi * 0.9
    else:
        theta = 0.95 * float(angles[low].min())
    if theta < 0.03:
        raise ConstructionError("admissible cap around the maximizer is too "
                                "small for the warp construction")

    warp = make_warp(space, center, theta)
    f = warped_shift(space, warp)

    def in_U(q):
        if space.kind is SpaceKind.CIRCLE:
            d = abs(q - warp.center) % (2 * math.pi)
            ang = min(d, 2 * math.pi - d)
        elif space.kind is SpaceKind.SPHERE2:
            ang = math.acos(max(-1.0, min(1.0, float(np.dot(q, warp.center)))))
        else:
            g = space.gamma(q)
            ang = math.acos(max(-1.0, min(1.0, float(np.dot(g, warp.center)))))
        return ang < theta

    d = f.differential_many(pts)
    consts = paper_constants(H, c, f, in_U, sigma, grid, m_H=m_H,
                             _pts=pts, _d=d)
    margin = verify_graph_displacement(H, c, f, consts.R3, sigma, grid,
                                       _pts=pts, _d=d)
    return DisplacementCertificate(
        system=system_name, level=c, fiber_value=None,
        sigma_kind=sigma.kind, sigma_radius=sigma.radius,
        shift=f, R=consts.R3, margin=margin,
        grid_density=grid.resolve(space), grid_seed=grid.seed,
        path="paper", constants=consts)


def _zero_shift(space) -> ShiftFunction:
    if space.kind is SpaceKind.CIRCLE:
        return fourier_shift(space, [0.0])
    if space.kind is SpaceKind.SPHERE2:
        return harmonic_shift(space, [0.0] * 25)
    return trace_shift(space, np.zeros(9))


def _search_path(H, c, sigma, grid, budget, seed, system_name):
    """Derivative-free maximization of the margin over basis coefficients
    and the shift radius, on a coarse grid, then full verification."""
    space = H.space
    coarse = GridSpec(density=min(2000, grid.resolve(space)), seed=grid.seed)
    pts = configuration_grid(space, coarse)
    rng = np.random.default_rng(seed)
    nc = {SpaceKind.CIRCLE: 9, SpaceKind.SPHERE2: 25,
          SpaceKind.ROTATION_GROUP: 9}[space.kind]

    def build(params):
        coeffs = params[:-1]
        R = math.exp(params[-1])
        if space.kind is SpaceKind.CIRCLE:
            return fourier_shift(space, coeffs), R
        if space.kind is SpaceKind.SPHERE2:
            return harmonic_shift(space, coeffs), R
        return trace_shift(space, coeffs), R

    evals = [0]

    def neg_margin(params):
        evals[0] += 1
        f, R = build(params)
        v, _ = _shifted_min(H, f, R, sigma, pts, grid.fiber_directions)
        return -(v - c)

    best = None
    starts = []
    for _ in range(4):
        x = np.concatenate([rng.standard_normal(nc) * 0.5, [0.0]])
        starts.append(x)
    per_start = max(50, budget // len(starts))
    for x0 in starts:
        if evals[0] >= budget:
            break
        res = sciopt.minimize(neg_margin, x0, method="Nelder-Mead",
                              options={"maxfev": per_start, "xatol": 1e-4,
                                       "fatol": 1e-6})
        if best is None or res.fun < best.fun:
            best = res
    f, R = build(best.x)
    margin = verify_graph_displacement(H, c, f, R, sigma, grid)
    return DisplacementCertificate(
        system=system_name, level=c, fiber_value=None,
        sigma_kind=sigma.kind, sigma_radius=sigma.radius,
        shift=f, R=R, margin=margin,
        grid_density=grid.resolve(space), grid_seed=grid.seed,
        path="search", constants=None)


def search_displacing_function(H: PhaseField, c: float, sigma: SigmaSet,
                               budget: int = 2000,
                               grid: Optional[GridSpec] = None,
                               seed: int = 0,
                               m_H: Optional[float] = None,
                               system_name: str = "") -> DisplacementCertificate:
    """Certificate that the graph shift of some f displaces Sigma off
    {H <= c}.

    Strategy (a) builds the midpoint region U around the restricted
    maximizer, gathers the critical points of a reference height function
    into it with a localized-rotation warp, derives (R1, R2, R3), and
    verifies.  On failure, strategy (b) directly maximizes the margin over
    basis coefficients and radius within the evaluation budget.  The
    returned certificate records which path produced it; a nonpositive
    margin means the search failed, not that displacement is impossible.
    """
    grid = grid or GridSpec()
    if m_H is None:
        m_H = compute_m_H(H, sigma)
    if not c < m_H:
        raise PreconditionError(f"need c < m_H = {m_H}, got c = {c}")
    name = system_name or (H.name or "H")
    try:
        cert = _paper_path(H, c, sigma, grid, m_H, name)
        if cert.valid:
            return cert
    except (ConstructionError, ParameterError):
        pass
    return _search_path(H, c, sigma, grid, budget, seed, name)


# ---------------------------------------------------------------------------
# Displacement from the zero section for partial-cover clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroSectionCertificate:
    status: str                  # "ok" | "unverifiable"
    shift: Optional[ShiftFunction]
    R0: float
    min_separation: float
    uncovered_center: object
    uncovered_radius: float
    note: str = ""

    @property
    def valid(self):
        return self.status == "ok" and self.min_separation > 0.0

    def to_dict(self):
        c = self.uncovered_center
        return {"status": self.status,
                "shift": None if self.shift is None else self.shift.to_dict(),
                "R0": self.R0, "min_separation": self.min_separation,
                "uncovered_center": (float(c) if np.isscalar(c) else
                                     None if c is None else
                                     [float(v) for v in np.asarray(c).ravel()]),
                "uncovered_radius": self.uncovered_radius,
                "note": self.note}


def displace_from_zero_section(space: ConfigurationSpace,
                               X: Sequence[PhasePoint],
                               grid: Optional[GridSpec] = None) -> ZeroSectionCertificate:
    """Shift certificate carrying a compact phase cloud off the zero section.

    Requires a configuration ball missed by the projection of X (witnessed
    on the grid); the shift function's critical points are placed inside
    that ball, so its differential is bounded below on the projection, and
    R0 is grown until min over X of |R0 df + p|_g clears a margin.  If no
    uncovered ball is found at the grid density the precondition is
    reported as unverifiable.
    """
    if not X:
        raise PreconditionError("empty cloud")
    grid = grid or GridSpec(density=4000)
    pts = configuration_grid(space, grid)

    def dist_to_cloud(q):
        return min(space.config_distance(q, x.q) for x in X)

    dists = np.fromiter((dist_to_cloud(q) for q in pts), dtype=float,
                        count=len(pts))
    i = int(np.argmax(dists))
    radius = 0.9 * float(dists[i])
    if space.kind is SpaceKind.CIRCLE:
        resolution = 2 * math.pi / len(pts)
    else:
        resolution = (8.0 / len(pts)) ** (1.0 / space.intrinsic_dim)
    if radius < 3.0 * resolution:
        return ZeroSectionCertificate(
            "unverifiable", None, 0.0, 0.0, None, 0.0,
            note=f"no uncovered configuration ball at grid density "
                 f"{len(pts)} (max gap {dists[i]:.3e})")

    center = _cap_center(space, pts[i])
    cap = min(radius, math.pi * 0.45)
    warp = make_warp(space, center, cap)
    f = warped_shift(space, warp)
    sf = f.as_scalar_field()

    def dual(q, p):
        if space.kind is SpaceKind.CIRCLE:
            return abs(float(p))
        return space.dual_norm(q, p)

    dmin = min(dual(x.q, sf.differential(x.q)) for x in X)
    pmax = max(dual(x.q, x.p) for x in X)
    if dmin <= 0:
        raise ConstructionError("shift differential vanishes on the cloud")
    R0 = 2.0 * (1.0 + pmax) / dmin
    sep = 0.0
    for _ in range(8):
        sep = min(dual(x.q, np.asarray(x.p) + R0 * np.asarray(sf.differential(x.q)))
                  if space.kind is not SpaceKind.CIRCLE
                  else abs(float(x.p) + R0 * float(sf.differential(x.q)))
                  for x in X)
        if sep > 0.5 * R0 * dmin:
            break
        R0 *= 2.0
    return ZeroSectionCertificate("ok", f, R0, float(sep),
                                  center, radius)


# ---------------------------------------------------------------------------
# Fiber trichotomy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberClassification:
    y: tuple
    status: str                            # CRITICAL | DISJOINT | DISPLACED | INCONSISTENT
    certificate: Optional[DisplacementCertificate] = None
    note: str = ""

    def to_dict(self):
        return {"y": [float(v) for v in self.y], "status": self.status,
                "certificate": None if self.certificate is None
                else self.certificate.to_dict(),
                "note": self.note}


def _distance_to_image(system, sigma: SigmaSet, y, grid: GridSpec) -> float:
    """Min over a Sigma grid (locally refined) of the sup-norm distance
    between the moment map and y."""
    space = system.space
    pts = configuration_grid(space, grid)
    y = np.asarray(y, dtype=float)

    def dist(q):
        best = math.inf
        for p0 in _sigma_momenta(space, sigma, q, grid.fiber_directions):
            v = np.array([float(c.eval(_Raw(q, p0))) for c in system.components])
            best = min(best, float(np.max(np.abs(v - y))))
        return best

    vals = np.fromiter((dist(q) for q in pts), dtype=float, count=len(pts))
    i = int(np.argmin(vals))
    q0 = pts[i]

    if space.kind is SpaceKind.CIRCLE:
        res = sciopt.minimize(lambda x: dist(float(q0) + float(x[0])), [0.0],
                              method="Nelder-Mead",
                              options={"maxfev": 120, "xatol": 1e-9})
        return float(min(vals[i], res.fun))
    if space.kind is SpaceKind.SPHERE2:
        basis = space.momentum_basis(q0)

        def fun(x):
            q = q0 + x @ basis
            return dist(q / np.linalg.norm(q))
        res = sciopt.minimize(fun, np.zeros(2), method="Nelder-Mead",
                              options={"maxfev": 200, "xatol": 1e-9})
        return float(min(vals[i], res.fun))
    from .geometry import rotation_exp

    def fun(x):
        return dist(q0 @ rotation_exp(x))
    res = sciopt.minimize(fun, np.zeros(3), method="Nelder-Mead",
                          options={"maxfev": 250, "xatol": 1e-9})
    return float(min(vals[i], res.fun))


def classify_fibers(system, y_list, sigma: Optional[SigmaSet] = None,
                    report=None, grid: Optional[GridSpec] = None,
                    tol_singleton: float = 1e-6,
                    tol_image: float = 1e-4,
                    budget: int = 2000) -> list:
    """Trichotomy for a list of fiber values.

    CRITICAL: y equals the critical fiber value within tol_singleton.
    DISJOINT: y is farther than tol_image from the image of Sigma under the
    moment map (the fiber misses Sigma; the identity displaces).
    DISPLACED: the first component of y lies below m_H; a graph-shift
    certificate for the enclosing sublevel is attached.
    A value at the minimax level that is not the critical value is reported
    INCONSISTENT (it contradicts the singleton premise and usually signals a
    tolerance misconfiguration).
    """
    from .critical import singleton_check
    sigma = sigma or getattr(system, "natural_sigma", None) or zero_section(system.space)
    grid = grid or GridSpec()
    if report is None:
        report = singleton_check(system, sigma)
    m_H = report.m_H
    y0 = np.asarray(report.y0)
    H = system.components[0]
    out = []
    for y in y_list:
        yv = np.asarray(y, dtype=float)
        if yv.shape != y0.shape:
            raise ParameterError(f"fiber value {y} has wrong dimension")
        if float(np.max(np.abs(yv - y0))) <= tol_singleton:
            out.append(FiberClassification(tuple(yv), "CRITICAL",
                                           note="matches the critical fiber value"))
            continue
        dist = _distance_to_image(system, sigma, yv, grid)
        if dist > tol_image:
            out.append(FiberClassification(
                tuple(yv), "DISJOINT",
                note=f"distance {dist:.3e} from the Sigma image; "
                     f"the identity already displaces"))
            continue
        if yv[0] < m_H - 1e-9:
            cert = search_displacing_function(
                H, float(yv[0]), sigma, budget=budget, grid=grid,
                m_H=m_H, system_name=getattr(system, "name", "system"))
            cert = DisplacementCertificate(
                system=cert.system, level=cert.level, fiber_value=tuple(yv),
                sigma_kind=cert.sigma_kind, sigma_radius=cert.sigma_radius,
                shift=cert.shift, R=cert.R, margin=cert.margin,
                grid_density=cert.grid_density, grid_seed=cert.grid_seed,
                path=cert.path, constants=cert.constants)
            out.append(FiberClassification(tuple(yv), "DISPLACED", cert))
            continue
        out.append(FiberClassification(
            tuple(yv), "INCONSISTENT",
            note="first component sits at the minimax level but the value "
                 "differs from the critical fiber value; check tolerances"))
    return out
