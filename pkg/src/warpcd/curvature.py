"""Pointwise curvature of warped products and checks on the warping function.

Tangent vectors are split as ``xi + v`` with ``xi`` in an orthonormal frame of
the base and ``v`` in an orthonormal frame of the fiber (fiber metric, not
scaled by ``f``).  The warped norm is ``|xi|^2 + f^2 |v|^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import sigma
from .spaces import Interval, MinkowskiTorus, ModelSpace, Sphere, sample_points
from .warp import ZERO_TOL, WarpedPoint, WarpedProduct, WarpingFunction


@dataclass(frozen=True)
class TangentVector:
    at: WarpedPoint
    base_part: tuple
    fiber_part: tuple

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.base_part, dtype=float)

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self.fiber_part, dtype=float)


def tangent(at: WarpedPoint, xi, v) -> TangentVector:
    return TangentVector(at, tuple(np.atleast_1d(np.asarray(xi, dtype=float))),
                         tuple(np.atleast_1d(np.asarray(v, dtype=float))))


@dataclass
class CurvatureReport:
    value: float
    terms: dict = field(default_factory=dict)
    bound_checked: tuple | None = None
    extra: dict = field(default_factory=dict)

    def check_bound(self, K_target: float, scale: float = 1.0, tol: float = 1e-8) -> "CurvatureReport":
        ok = self.value >= K_target * scale - tol
        self.bound_checked = (K_target, bool(ok))
        return self


def warped_norm2(W: WarpedProduct, u: TangentVector) -> float:
    f = W.f_at(u.at.base)
    if isinstance(W.fiber, MinkowskiTorus):
        fv = float(W.fiber.norm(u.v)) if np.any(u.v) else 0.0
        return float(u.xi @ u.xi) + f * f * fv * fv
    return float(u.xi @ u.xi) + f * f * float(u.v @ u.v)


# --------------------------------------------------------------------------
# Ricci


def n_ricci_weighted(S: ModelSpace, v, N: float, at=None) -> float:
    """``ric + Hess Psi - dPsi^2/(N - n)`` with the conventions at ``N <= n``."""
    if not S.riemannian:
        raise ValueError("weighted Ricci needs a Riemannian space")
    if N < 1:
        raise ValueError("N must be >= 1")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    n = S.dim
    nonzero = bool(np.any(v != 0))
    if N < n:
        return -math.inf if nonzero else 0.0
    ric = S.ricci(v, at)
    if not S.has_weight():
        return float(ric)
    if at is None:
        raise ValueError("a base point is needed to evaluate the weight")
    w = S.weight
    if w.grad is None or w.hess is None:
        raise ValueError("weight lacks derivative oracles")
    y = S.flat_coords(np.asarray(at, dtype=float))
    dpsi = float(np.asarray(w.grad(y), dtype=float) @ v)
    hpsi = float(v @ np.asarray(w.hess(y), dtype=float) @ v)
    if N == n:
        scale = max(1.0, float(np.linalg.norm(w.grad(y))) * float(np.linalg.norm(v)))
        return float(ric + hpsi) if abs(dpsi) <= 1e-14 * scale else -math.inf
    return float(ric + hpsi - dpsi * dpsi / (N - n))


def warped_ricci(W: WarpedProduct, u: TangentVector) -> CurvatureReport:
    """N-Ricci curvature of ``u`` in the N-warped product, with term breakdown."""
    p = np.asarray(u.at.base, dtype=float)
    f = W.f_at(p)
    if f <= ZERO_TOL or u.at.fiber is None:
        raise ValueError("curvature is evaluated off the singular set only")
    xi, v = u.xi, u.v
    N = W.N
    grad = W.f.grad(p)
    H = W.f.hessian(p)
    lap = float(np.trace(H))
    ric_B = float(W.base.ricci(xi, p))
    hess_term = -N * float(xi @ H @ xi) / f
    if isinstance(W.fiber, MinkowskiTorus):
        if not np.any(v):
            raise ValueError("non-smooth direction: a Minkowski fiber needs a nonzero fiber part")
        ric_F = 0.0
        Fv = float(W.fiber.norm(v))
        Vt2 = f * f * Fv * Fv
    else:
        ric_F = n_ricci_weighted(W.fiber, v, N, at=np.asarray(u.at.fiber))
        Vt2 = f * f * float(v @ v)
    grad_term = -(lap / f + (N - 1) * float(grad @ grad) / (f * f)) * Vt2
    terms = {"ric_B": ric_B, "hessian": hess_term, "fiber": ric_F, "gradient": grad_term}
    total = ric_B + hess_term + ric_F + grad_term
    return CurvatureReport(float(total), terms, extra={"norm2": warped_norm2(W, u)})


# --------------------------------------------------------------------------
# sectional


def _plane_sectional(S: ModelSpace, a, b, at=None) -> float:
    gram = float(a @ a * (b @ b) - (a @ b) ** 2)
    if S.dim < 2 or gram <= 1e-14 * max(float(a @ a * (b @ b)), 1e-300):
        return 0.0
    return S.curvature_form(a, b, at) / gram


def warped_sectional(W: WarpedProduct, u1: TangentVector, u2: TangentVector) -> CurvatureReport:
    """Sectional curvature of the plane spanned by ``u1`` and ``u2``.

    ``value`` is the curvature of the plane (numerator over the Gram
    determinant).  ``terms`` hold the pieces of the numerator, and
    ``extra["printed"]`` the numerator written for orthogonal pairs
    ``xi1 _|_ xi2`` and ``v1 _|_ v2``, which agrees with ``numerator`` then.
    """
    if not W.fiber.riemannian:
        raise ValueError("sectional curvature needs a Riemannian fiber")
    p = np.asarray(u1.at.base, dtype=float)
    if u2.at != u1.at:
        raise ValueError("tangent vectors must sit at the same point")
    f = W.f_at(p)
    if f <= ZERO_TOL:
        raise ValueError("curvature is evaluated off the singular set only")
    X, Y, V, Wv = u1.xi, u2.xi, u1.v, u2.v
    H = W.f.hessian(p)
    g2 = float(W.f.grad(p) @ W.f.grad(p))
    x_at = np.asarray(u1.at.fiber, dtype=float)
    rm_B = W.base.curvature_form(X, Y, p) if W.base.dim >= 2 else 0.0
    gram_F = float(V @ V * (Wv @ Wv) - (V @ Wv) ** 2)
    mixed = -f * (float(Wv @ Wv) * float(X @ H @ X) + float(V @ V) * float(Y @ H @ Y)
                  - 2.0 * float(V @ Wv) * float(X @ H @ Y))
    rm_F = W.fiber.curvature_form(V, Wv, x_at) if W.fiber.dim >= 2 else 0.0
    vertical = f * f * (rm_F - g2 * gram_F)
    numerator = rm_B + mixed + vertical
    ip = float(X @ Y) + f * f * float(V @ Wv)
    n1 = float(X @ X) + f * f * float(V @ V)
    n2 = float(Y @ Y) + f * f * float(Wv @ Wv)
    gram = n1 * n2 - ip * ip
    if gram <= 1e-14 * max(n1 * n2, 1e-300):
        raise ValueError("degenerate plane")
    K_B = _plane_sectional(W.base, X, Y, p)
    K_F = _plane_sectional(W.fiber, V, Wv, x_at)
    Vt2, Wt2 = f * f * float(V @ V), f * f * float(Wv @ Wv)
    printed = (K_B * float(X @ X) * float(Y @ Y)
               - f * (float(Wv @ Wv) * float(X @ H @ X) + float(V @ V) * float(Y @ H @ Y))
               + (K_F - g2) * Vt2 * Wt2 / (f * f))
    terms = {"base": rm_B, "mixed": mixed, "vertical": vertical}
    return CurvatureReport(numerator / gram, terms,
                           extra={"numerator": numerator, "gram": gram, "printed": printed})


# --------------------------------------------------------------------------
# checks on f


@dataclass
class FKReport:
    passed: bool
    barrier_margin: float
    hessian_margin: float | None
    worst: dict
    n_checked: int

    @property
    def margin(self) -> float:
        m = self.barrier_margin
        if self.hessian_margin is not None:
            m = min(m, self.hessian_margin)
        return m


def _sample_base_points(B: ModelSpace, rng, n):
    return sample_points(B, rng, n)


def random_tangents(W: WarpedProduct, n: int, seed: int = 0, min_f: float = 1e-3) -> list:
    """``n`` unit tangent vectors at random regular points of ``W``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        b = sample_points(W.base, rng, 1)[0]
        if W.f_at(b) < min_f:
            continue
        x = sample_points(W.fiber, rng, 1)[0]
        P = W.point(b, x)
        u = tangent(P, rng.standard_normal(W.base.dim), rng.standard_normal(W.fiber.dim))
        s = math.sqrt(warped_norm2(W, u))
        out.append(tangent(P, np.asarray(u.xi) / s, np.asarray(u.v) / s))
    return out


def _radial_grid(f: WarpingFunction, n=2001):
    lo, hi = f.radial_range()
    if not math.isfinite(hi):
        hi = lo + 10.0
    return np.linspace(lo, hi, n)


def fk_concavity_check(B: ModelSpace, f: WarpingFunction, K: float, n_geodesics: int = 200,
                       n_samples: int = 20, seed: int = 0, tol: float = 1e-9) -> FKReport:
    """Check ``f(g(s th)) >= sigma^{(1-s)} f(g(0)) + sigma^{(s)} f(g(th))`` along
    random unit-speed base geodesics, plus ``Hess f <= -K f`` on a grid."""
    if n_geodesics < 1 or n_samples < 1:
        raise ValueError("n_geodesics and n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    P = _sample_base_points(B, rng, 2 * n_geodesics)
    s_vals = (np.arange(1, n_samples + 1)) / (n_samples + 1)
    worst = {"margin": math.inf}
    count = 0
    limit = math.pi / math.sqrt(K) if K > 0 else math.inf
    for i in range(n_geodesics):
        geo = B.geodesics(P[2 * i], P[2 * i + 1])[0]
        th = geo.length
        if th <= 1e-12 or th >= limit:
            continue
        pts = geo.point(s_vals * th)
        fa = float(f.value(geo.start))
        fb = float(f.value(geo.end))
        fm = np.asarray(f.value(pts), dtype=float).reshape(-1)
        for s, val in zip(s_vals, fm):
            rhs = sigma(K, 1.0, 1.0 - s, th) * fa + sigma(K, 1.0, s, th) * fb
            m = val - rhs
            count += 1
            if m < worst["margin"]:
                worst = {"margin": float(m), "start": geo.start.tolist(), "end": geo.end.tolist(), "s": float(s)}
    barrier = worst["margin"] if count else 0.0
    hess_margin = None
    r = _radial_grid(f)
    prof = f.profile
    g, g2 = np.asarray(prof.g(r), dtype=float), np.asarray(prof.g2(r), dtype=float)
    # radial direction: g'' + K g <= 0
    hm = -(g2 + K * g)
    if isinstance(B, Sphere) and not f.is_constant:
        # tangential directions: g' cn/sn + K g <= 0
        kap = 1.0 / B.radius**2
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = np.asarray(prof.g1(r)) * np.cos(math.sqrt(kap) * r) * math.sqrt(kap) / np.sin(math.sqrt(kap) * r)
        ta = np.where(np.abs(np.sin(math.sqrt(kap) * r)) < 1e-12, g2, ta)
        hm = np.minimum(hm, -(ta + K * g))
    hess_margin = float(np.min(hm))
    passed = barrier >= -tol and hess_margin >= -tol * max(1.0, float(np.max(np.abs(g))))
    return FKReport(bool(passed), float(barrier), hess_margin, worst, count)


@dataclass
class ConditionsReport:
    passed: bool
    global_margin: float
    boundary_margin: float
    global_passed: bool
    boundary_passed: bool
    disagreement: float
    singular_set: tuple
    worst_point: float


def check_conditions(B: ModelSpace, f: WarpingFunction, K: float, K_F: float,
                     n_grid: int = 2001, tol: float = 1e-9) -> ConditionsReport:
    """Compatibility of ``f`` with the fiber bound ``K_F``.

    global form: ``|grad f|^2 <= K_F - K f^2`` on all of B;
    boundary form: ``K_F >= 0`` and ``|grad f| <= sqrt(K_F)`` on ``X = {f = 0}``,
    or ``K_F >= K f^2`` everywhere when X is empty.  Margins are in squared form.
    """
    r = _radial_grid(f, n_grid)
    prof = f.profile
    g = np.asarray(prof.g(r), dtype=float)
    g1 = np.asarray(prof.g1(r), dtype=float)
    Mg = K_F - K * g * g - g1 * g1
    i = int(np.argmin(Mg))
    global_margin = float(Mg[i])
    X = f.singular_levels()
    if X:
        vals = [K_F - float(prof.g1(float(s))) ** 2 for s in X]
        boundary_margin = min(vals + ([K_F] if K_F < 0 else []))
    else:
        boundary_margin = float(np.min(K_F - K * g * g))
    gp = global_margin >= -tol
    bp = boundary_margin >= -tol
    return ConditionsReport(bool(gp and bp), global_margin, float(boundary_margin), bool(gp), bool(bp),
                            float(abs(global_margin - boundary_margin)), tuple(X), float(r[i]))
