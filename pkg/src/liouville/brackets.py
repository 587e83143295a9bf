"""Numerical Poisson brackets for the three phase spaces.

* Circle: the canonical bracket {F, G} = dF/dq dG/dp - dF/dp dG/dq.
* Sphere: the Dirac bracket of T*R^3 with the second-class constraints
  phi_1 = |q|^2 - 1 and phi_2 = q . p.  On the constraint set
  {phi_1, phi_2} = 2|q|^2 = 2, and the correction term uses the exact
  inverse 1/2 instead of a numerically inverted 2x2 matrix.
* Rotation group: the reduced bracket on the body variables (l, gamma)

      {F, G} = -l . (dF/dl x dG/dl)
               - gamma . (dF/dl x dG/dgamma + dF/dgamma x dG/dl),

  whose Casimirs are |gamma|^2 and l . gamma.  Every catalog invariant is a
  function of (l, gamma), so the full T*SO(3) bracket is never needed;
  fields that cannot supply an (l, gamma) gradient are rejected.

The sign convention pairs with the flows in :mod:`liouville.dynamics`
through dG/dt = {G, H}; flipping both signs changes no commutation or
conservation statement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UsageError
from .geometry import ConfigurationSpace, PhasePoint, SpaceKind, make_point

SAMPLING_MOMENTUM_RADIUS = 5.0


@dataclass(frozen=True)
class PhaseField:
    """A smooth function on phase space with an analytic gradient.

    ``eval`` maps a PhasePoint to a real.  ``grad`` returns the gradient in
    the chart's ambient coordinates:

    * circle: array (dF/dq, dF/dp);
    * sphere: array of shape (2, 3) holding (grad_q F, grad_p F) for any
      smooth ambient extension of F (the Dirac bracket does not depend on
      the extension);
    * rotation group: array of shape (2, 3) holding (grad_l F, grad_gamma F)
      for F written as a function of (l, gamma = Q^T e_3).

    ``kinetic_profile``/``potential`` optionally expose the structure
    F = rho(|p|_g^2) + U(q) that the splitting integrator exploits; they do
    not affect bracket evaluation.
    """

    space: ConfigurationSpace
    eval: Callable
    grad: Callable
    name: str = ""
    kinetic_profile: Optional[object] = None
    potential: Optional[object] = None

    def __call__(self, x: PhasePoint) -> float:
        return float(self.eval(x))


def bracket(F: PhaseField, G: PhaseField, x: PhasePoint) -> float:
    """Poisson bracket {F, G}(x); antisymmetric in (F, G) by construction."""
    if F.space is not G.space and F.space != G.space:
        raise UsageError("bracket of fields on different spaces")
    kind = F.space.kind
    gF = np.asarray(F.grad(x), dtype=float)
    gG = np.asarray(G.grad(x), dtype=float)
    if kind is SpaceKind.CIRCLE:
        return float(gF[0] * gG[1] - gF[1] * gG[0])
    if kind is SpaceKind.SPHERE2:
        q = np.asarray(x.q)
        p = np.asarray(x.p)
        Fq, Fp = gF
        Gq, Gp = gG
        can = float(np.dot(Fq, Gp) - np.dot(Fp, Gq))
        corr = (- np.dot(q, Fp) * (np.dot(p, Gp) - np.dot(q, Gq))
                - (np.dot(q, Fq) - np.dot(p, Fp)) * np.dot(q, Gp))
        return float(can + corr)
    ell = np.asarray(x.p)
    gamma = F.space.gamma(x.q)
    Fl, Fg = gF
    Gl, Gg = gG
    return float(- np.dot(ell, np.cross(Fl, Gl))
                 - np.dot(gamma, np.cross(Fl, Gg) + np.cross(Fg, Gl)))


def product_field(F: PhaseField, G: PhaseField, name: str = "") -> PhaseField:
    """Pointwise product F*G with the product-rule gradient."""
    if F.space != G.space:
        raise UsageError("product of fields on different spaces")

    def _eval(x):
        return F.eval(x) * G.eval(x)

    def _grad(x):
        return (np.asarray(F.grad(x)) * G.eval(x)
                + np.asarray(G.grad(x)) * F.eval(x))

    return PhaseField(F.space, _eval, _grad, name=name or f"{F.name}*{G.name}")


def bracket_field(F: PhaseField, G: PhaseField, fd_step: float = 1e-4) -> PhaseField:
    """{F, G} as a PhaseField with a finite-difference gradient.

    Used for Jacobi-identity checks; the gradient differentiates bracket
    values centrally in the ambient chart coordinates.
    """
    space = F.space

    def _eval(x):
        return bracket(F, G, x)

    def _grad(x):
        if space.kind is SpaceKind.CIRCLE:
            out = np.zeros(2)
            for i in range(2):
                dq = fd_step if i == 0 else 0.0
                dp = fd_step if i == 1 else 0.0
                fp = _eval(PhasePoint(x.q + dq, x.p + dp))
                fm = _eval(PhasePoint(x.q - dq, x.p - dp))
                out[i] = (fp - fm) / (2 * fd_step)
            return out
        if space.kind is SpaceKind.SPHERE2:
            out = np.zeros((2, 3))
            q = np.asarray(x.q)
            p = np.asarray(x.p)
            for blk in range(2):
                for i in range(3):
                    e = np.zeros(3)
                    e[i] = fd_step
                    if blk == 0:
                        xp = make_point(space, q + e, p)
                        xm = make_point(space, q - e, p)
                    else:
                        xp = make_point(space, q, p + e)
                        xm = make_point(space, q, p - e)
                    out[blk, i] = (_eval(xp) - _eval(xm)) / (2 * fd_step)
            return out
        raise UsageError("finite-difference bracket gradients are only "
                         "provided on the circle and the sphere")

    return PhaseField(space, _eval, _grad, name=f"{{{F.name},{G.name}}}")


def check_gradient(F: PhaseField, x: PhasePoint, step: float = 1e-5) -> float:
    """Relative error between F.grad and central finite differences of
    F.eval in the ambient chart at x."""
    space = F.space
    g = np.atleast_1d(np.asarray(F.grad(x), dtype=float))
    if space.kind is SpaceKind.CIRCLE:
        fd = np.array([
            (F.eval(PhasePoint(x.q + step, x.p)) - F.eval(PhasePoint(x.q - step, x.p))),
            (F.eval(PhasePoint(x.q, x.p + step)) - F.eval(PhasePoint(x.q, x.p - step))),
        ]) / (2 * step)
        scale = max(1.0, float(np.max(np.abs(fd))))
        return float(np.max(np.abs(fd - g)) / scale)
    if space.kind is SpaceKind.SPHERE2:
        # ambient differences; the constraint is not enforced, matching the
        # ambient-extension convention of the gradient
        q = np.asarray(x.q)
        p = np.asarray(x.p)
        fd = np.zeros((2, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            fd[0, i] = F.eval(PhasePoint(q + e, p)) - F.eval(PhasePoint(q - e, p))
            fd[1, i] = F.eval(PhasePoint(q, p + e)) - F.eval(PhasePoint(q, p - e))
        fd /= (2 * step)
        scale = max(1.0, float(np.max(np.abs(fd))))
        return float(np.max(np.abs(fd - g)) / scale)
    # rotation group: vary (l, gamma) through rotations keeping gamma unit;
    # the gamma-block is compared along tangent directions of the sphere.
    ell = np.asarray(x.p)
    gamma = space.gamma(x.q)
    fd_l = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        fd_l[i] = (F.eval(PhasePoint(x.q, ell + e)) - F.eval(PhasePoint(x.q, ell - e))) / (2 * step)
    errs = [float(np.max(np.abs(fd_l - g[0]))) ]
    Q = np.asarray(x.q)
    from .geometry import rotation_exp, hat  # local import to avoid cycle at module load
    for i in range(3):
        xi = np.zeros(3)
        xi[i] = step
        Qp = Q @ rotation_exp(xi)
        Qm = Q @ rotation_exp(-xi)
        fd = (F.eval(PhasePoint(Qp, ell)) - F.eval(PhasePoint(Qm, ell))) / (2 * step)
        # d gamma / dt along Q exp(t hat(xi)) is gamma x xi
        an = float(np.dot(g[1], np.cross(gamma, xi / step)))
        errs.append(abs(fd - an))
    scale = max(1.0, float(np.max(np.abs(fd_l))), float(np.max(np.abs(g))))
    return max(errs) / scale


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_phase_points(space: ConfigurationSpace, n: int,
                        rng: np.random.Generator,
                        momentum_radius: float = SAMPLING_MOMENTUM_RADIUS) -> list:
    """n phase points with uniform configurations and momenta uniform in the
    dual-metric ball of the given radius.  Deterministic given the rng state;
    this is the canonical sampling measure used by commutation checks and by
    fiber-solve seeding."""
    pts = []
    d = space.intrinsic_dim
    for _ in range(n):
        q = space.random_configuration(rng)
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        r = momentum_radius * rng.uniform() ** (1.0 / d)
        if space.kind is SpaceKind.CIRCLE:
            p = float(r * u[0])
        elif space.kind is SpaceKind.SPHERE2:
            basis = space.momentum_basis(q)
            p = r * (u @ basis)
        else:
            # dual norm sqrt(sum l_i^2 / I_i) <= r  <=>  l_i = sqrt(I_i) xi_i,
            # |xi| <= r
            p = np.sqrt(space.inertia_array) * (r * u)
        pts.append(make_point(space, q, p))
    return pts


@dataclass(frozen=True)
class CommutationReport:
    max_abs: float
    worst_point: PhasePoint
    worst_pair: tuple
    n_samples: int


def verify_commutation(system, n: int = 1000, seed: int = 0,
                       momentum_radius: float = SAMPLING_MOMENTUM_RADIUS) -> CommutationReport:
    """Max |{Phi_i, Phi_j}| over n sampled points and all component pairs.

    ``system`` provides ``space`` and ``components`` (a sequence of
    PhaseField).  Fields on the rotation group must carry (l, gamma)
    gradients; anything else is a usage error raised by :func:`bracket`.
    """
    if n < 1:
        raise UsageError("need at least one sample")
    comps: Sequence[PhaseField] = system.components
    rng = np.random.default_rng(seed)
    pts = sample_phase_points(system.space, n, rng, momentum_radius)
    worst = 0.0
    worst_pt = pts[0]
    worst_pair = (0, 0)
    for x in pts:
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                v = abs(bracket(comps[i], comps[j], x))
                if v > worst:
                    worst, worst_pt, worst_pair = v, x, (i, j)
    return CommutationReport(worst, worst_pt, worst_pair, n)
