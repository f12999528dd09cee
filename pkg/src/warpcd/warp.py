"""Warped products ``B x_f F`` with the measure ``f^N dm_B dm_F``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .kernels import _cn_scalar, _sn_scalar, cn, sn
from .spaces import (Circle, FlatTorus, Interval, MinkowskiTorus, ModelSpace, ProductSpace,
                     Sphere, _cell_integrals_1d, space_from_dict)

ZERO_TOL = 1e-14          # f below this is treated as 0 (collapsed fiber)
FD_STEP = 1e-5            # gradient step
FD_STEP_HESS = 1e-3       # second-derivative step, see the notes on roundoff
_GL5_X, _GL5_W = np.polynomial.legendre.leggauss(5)


# --------------------------------------------------------------------------
# profiles: one-variable functions g(r) with derivatives


@dataclass(frozen=True)
class Profile:
    """A function of one real variable with value and first two derivatives.

    ``g``, ``g1``, ``g2`` accept floats or arrays.  ``analytic`` is False when
    derivatives come from Richardson-extrapolated central differences.
    """

    name: str
    params: dict
    g: Callable = field(repr=False, compare=False)
    g1: Callable = field(repr=False, compare=False)
    g2: Callable = field(repr=False, compare=False)
    zero_fn: Callable | None = field(default=None, repr=False, compare=False)
    analytic: bool = True

    def zeros(self, lo: float, hi: float) -> tuple:
        if self.zero_fn is not None:
            zs = self.zero_fn(lo, hi)
        else:
            zs = _scan_zeros(self.g, lo, hi)
        span = max(1.0, abs(lo), abs(hi) if math.isfinite(hi) else 0.0)
        return tuple(sorted(z for z in zs if lo - 1e-12 * span <= z <= hi + 1e-12 * span))

    def with_finite_differences(self) -> "Profile":
        return callback_profile(self.g, name=self.name, params=self.params, zero_fn=self.zero_fn)

    def to_dict(self) -> dict:
        if self.name == "callback":
            raise ValueError("callback warping functions are not serializable")
        return {"name": self.name, **self.params}


def _scan_zeros(g, lo, hi, n=4000):
    hi_eff = hi if math.isfinite(hi) else lo + 100.0
    r = np.linspace(lo, hi_eff, n + 1)
    v = np.array([g(float(x)) for x in r])
    out = [float(x) for x, y in zip(r, v) if abs(y) <= ZERO_TOL]
    for i in range(n):
        if v[i] * v[i + 1] < 0:
            out.append(brentq(g, r[i], r[i + 1], xtol=1e-15))
    return out


def _mk(fn_np, fn_m):
    """Dispatch to the math version for Python floats (fast scalar path)."""
    def f(r):
        if isinstance(r, float):
            return fn_m(r)
        return fn_np(np.asarray(r, dtype=float))
    return f


def _period_zeros(phase, period, lo, hi):
    """Zeros ``phase + k*period`` inside ``[lo, hi]``."""
    if not math.isfinite(hi):
        hi = lo + 1e3 * period
    k0 = math.ceil((lo - phase) / period - 1e-12)
    out, k = [], k0
    while phase + k * period <= hi + 1e-12:
        out.append(phase + k * period)
        k += 1
    return out


def const_profile(c: float) -> Profile:
    c = float(c)
    if c < 0:
        raise ValueError("warping functions are nonnegative")
    return Profile("const", {"c": c},
                   _mk(lambda r: np.full_like(r, c), lambda r: c),
                   _mk(np.zeros_like, lambda r: 0.0),
                   _mk(np.zeros_like, lambda r: 0.0),
                   (lambda lo, hi: []) if c > 0 else None)


def affine_profile(a: float = 1.0, b: float = 0.0) -> Profile:
    a, b = float(a), float(b)
    zf = (lambda lo, hi: [-b / a]) if a != 0 else (lambda lo, hi: [] if b else [lo])
    return Profile("affine", {"a": a, "b": b},
                   _mk(lambda r: a * r + b, lambda r: a * r + b),
                   _mk(lambda r: np.full_like(r, a), lambda r: a),
                   _mk(np.zeros_like, lambda r: 0.0), zf)


def sin_profile(a: float = 1.0, w: float = 1.0) -> Profile:
    a, w = float(a), float(w)
    return Profile("sin", {"a": a, "w": w},
                   _mk(lambda r: a * np.sin(w * r), lambda r: a * math.sin(w * r)),
                   _mk(lambda r: a * w * np.cos(w * r), lambda r: a * w * math.cos(w * r)),
                   _mk(lambda r: -a * w * w * np.sin(w * r), lambda r: -a * w * w * math.sin(w * r)),
                   lambda lo, hi: _period_zeros(0.0, math.pi / w, lo, hi))


def cos_profile(a: float = 1.0, w: float = 1.0) -> Profile:
    a, w = float(a), float(w)
    return Profile("cos", {"a": a, "w": w},
                   _mk(lambda r: a * np.cos(w * r), lambda r: a * math.cos(w * r)),
                   _mk(lambda r: -a * w * np.sin(w * r), lambda r: -a * w * math.sin(w * r)),
                   _mk(lambda r: -a * w * w * np.cos(w * r), lambda r: -a * w * w * math.cos(w * r)),
                   lambda lo, hi: _period_zeros(0.5 * math.pi / w, math.pi / w, lo, hi))


def snK_profile(K: float, a: float = 1.0) -> Profile:
    K, a = float(K), float(a)

    def zf(lo, hi):
        if K > 0:
            return _period_zeros(0.0, math.pi / math.sqrt(K), lo, hi)
        return [0.0]

    return Profile("snK", {"K": K, "a": a},
                   _mk(lambda r: a * sn(K, r), lambda r: a * _sn_scalar(K, r)),
                   _mk(lambda r: a * cn(K, r), lambda r: a * _cn_scalar(K, r)),
                   _mk(lambda r: -K * a * sn(K, r), lambda r: -K * a * _sn_scalar(K, r)), zf)


def power_profile(p: float, a: float = 1.0) -> Profile:
    p, a = float(p), float(a)

    def g(r):
        return a * np.power(np.maximum(r, 0.0), p) if not isinstance(r, float) else a * max(r, 0.0) ** p

    def g1(r):
        if isinstance(r, float):
            return a * p * max(r, 0.0) ** (p - 1) if p != 1 else a
        return a * p * np.power(np.maximum(r, 0.0), p - 1)

    def g2(r):
        if isinstance(r, float):
            return a * p * (p - 1) * max(r, 0.0) ** (p - 2) if p not in (1.0, 2.0) else a * p * (p - 1)
        return a * p * (p - 1) * np.power(np.maximum(r, 0.0), p - 2) if p not in (1.0, 2.0) \
            else np.full_like(np.asarray(r, dtype=float), a * p * (p - 1))

    return Profile("power", {"p": p, "a": a}, g, g1, g2, lambda lo, hi: [0.0])


def callback_profile(fn: Callable, name: str = "callback", params: dict | None = None,
                     zero_fn=None, h1: float = FD_STEP, h2: float = FD_STEP_HESS) -> Profile:
    """Profile from a plain callable; derivatives by central differences with
    one Richardson step."""

    def g(r):
        if isinstance(r, float):
            return float(fn(r))
        return np.vectorize(lambda x: float(fn(float(x))))(r)

    def d1(x, h):
        return (g(x + h) - g(x - h)) / (2 * h)

    def d2(x, h):
        return (g(x + h) - 2 * g(x) + g(x - h)) / (h * h)

    def g1(r):
        if not isinstance(r, float):
            r = np.asarray(r, dtype=float)
        return (4 * d1(r, h1 / 2) - d1(r, h1)) / 3

    def g2(r):
        if not isinstance(r, float):
            r = np.asarray(r, dtype=float)
        return (4 * d2(r, h2 / 2) - d2(r, h2)) / 3

    return Profile("callback", dict(params or {}), g, g1, g2, zero_fn, analytic=False)


PROFILES = {
    "const": const_profile,
    "affine": affine_profile,
    "sin": sin_profile,
    "cos": cos_profile,
    "snK": snK_profile,
    "power": power_profile,
}


def profile_from_dict(d: dict) -> Profile:
    d = dict(d)
    name = d.pop("name")
    fd = d.pop("finite_differences", False)
    if name not in PROFILES:
        raise ValueError(f"unknown warping function {name!r}")
    p = PROFILES[name](**d)
    return p.with_finite_differences() if fd else p


# --------------------------------------------------------------------------
# warping functions on a base


@dataclass(frozen=True)
class WarpingFunction:
    """``f = g(r)`` where ``r`` is the radial coordinate of the base.

    On an ``Interval`` the radial coordinate is the point itself; on a
    ``Sphere`` it is the distance to the pole ``e_0``.  Other bases admit only
    constant profiles.  Gradients and Hessians are returned in the orthonormal
    frame whose first vector is ``d/dr``.
    """

    base: ModelSpace
    profile: Profile

    def __post_init__(self):
        if not isinstance(self.base, (Interval, Sphere)) and self.profile.name != "const":
            raise ValueError(f"only constant warping functions are supported on {self.base.kind}")

    @property
    def analytic(self) -> bool:
        return self.profile.analytic

    @property
    def is_constant(self) -> bool:
        return self.profile.name == "const"

    def radial(self, p) -> float:
        p = np.asarray(p, dtype=float)
        if isinstance(self.base, Interval):
            return float(p[..., 0]) if p.ndim <= 1 else p[..., 0]
        if isinstance(self.base, Sphere):
            return self.base.radius * (float(p[..., 0]) if p.ndim <= 1 else p[..., 0])
        return 0.0

    def radial_range(self) -> tuple:
        B = self.base
        if isinstance(B, Interval):
            return B.a, B.b
        if isinstance(B, Sphere):
            return 0.0, B.radius * (B.cap if B.cap is not None else math.pi)
        return 0.0, 0.0

    def value(self, p):
        return self.profile.g(self.radial(p))

    def _sphere_kappa(self):
        return 1.0 / self.base.radius**2

    def grad(self, p) -> np.ndarray:
        v = np.zeros(self.base.dim)
        if not self.is_constant:
            v[0] = self.profile.g1(self.radial(p))
        return v

    def grad_norm(self, p) -> float:
        return float(np.linalg.norm(self.grad(p)))

    def hessian(self, p) -> np.ndarray:
        n = self.base.dim
        H = np.zeros((n, n))
        if self.is_constant:
            return H
        r = self.radial(p)
        H[0, 0] = self.profile.g2(r)
        if isinstance(self.base, Sphere) and n > 1:
            k = self._sphere_kappa()
            s = sn(k, r)
            if abs(s) < 1e-12:
                tang = self.profile.g2(r)
            else:
                tang = self.profile.g1(r) * cn(k, r) / s
            for i in range(1, n):
                H[i, i] = tang
        return H

    def laplacian(self, p) -> float:
        return float(np.trace(self.hessian(p)))

    def singular_levels(self) -> tuple:
        """Radial values where ``f`` vanishes."""
        lo, hi = self.radial_range()
        if self.is_constant:
            return () if self.profile.params["c"] > 0 else (lo,)
        return self.profile.zeros(lo, hi)

    def to_dict(self) -> dict:
        return self.profile.to_dict()


def warping(base: ModelSpace, name: str, finite_differences: bool = False, **params) -> WarpingFunction:
    """Catalog constructor, e.g. ``warping(Interval(0, pi), "sin")``."""
    p = PROFILES[name](**params)
    return WarpingFunction(base, p.with_finite_differences() if finite_differences else p)


# --------------------------------------------------------------------------
# points and the product


@dataclass(frozen=True)
class WarpedPoint:
    """Point of the warped product; ``fiber`` is None exactly on the singular set."""

    base: tuple
    fiber: tuple | None = None

    @property
    def singular(self) -> bool:
        return self.fiber is None

    def base_array(self) -> np.ndarray:
        return np.asarray(self.base, dtype=float)

    def fiber_array(self) -> np.ndarray | None:
        return None if self.fiber is None else np.asarray(self.fiber, dtype=float)


@dataclass(frozen=True)
class ApexSet:
    """Singular set ``f = 0``: radial levels and explicit points when finite."""

    levels: tuple
    points: tuple

    @property
    def empty(self) -> bool:
        return len(self.levels) == 0

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class WarpedProduct:
    base: ModelSpace
    fiber: ModelSpace
    f: WarpingFunction
    N: float = 1.0

    def __post_init__(self):
        if self.f.base != self.base:
            raise ValueError("warping function is defined on a different base")
        if not self.N >= 1:
            raise ValueError("exponent N must be >= 1")

    # evaluation -------------------------------------------------------------
    def f_at(self, p) -> float:
        return float(self.f.value(np.asarray(p, dtype=float)))

    def point(self, base, fiber=None) -> WarpedPoint:
        b = self.base.canonical(base)
        if self.f_at(b) <= ZERO_TOL:
            return WarpedPoint(tuple(float(x) for x in b), None)
        if fiber is None:
            raise ValueError("a fiber coordinate is required where f > 0")
        x = self.fiber.canonical(fiber)
        return WarpedPoint(tuple(float(v) for v in b), tuple(float(v) for v in x))

    def canonicalize(self, P: WarpedPoint) -> WarpedPoint:
        return self.point(P.base, P.fiber)

    def apex_set(self) -> ApexSet:
        levels = self.f.singular_levels()
        pts = []
        if isinstance(self.base, Interval):
            pts = [WarpedPoint((float(r),), None) for r in levels]
        elif isinstance(self.base, Sphere):
            for r in levels:
                th = r / self.base.radius
                if th <= 1e-15:
                    pts.append(WarpedPoint(tuple([0.0] * self.base.n), None))
                elif abs(th - math.pi) <= 1e-15:
                    pts.append(WarpedPoint(tuple([math.pi] + [0.0] * (self.base.n - 1)), None))
        return ApexSet(tuple(levels), tuple(pts))

    def required_fiber_bound(self) -> float:
        """Lower curvature bound the fiber needs for the singular-set hypothesis."""
        levels = self.f.singular_levels()
        if not levels:
            return -math.inf
        return max(self.f.profile.g1(float(r)) ** 2 for r in levels)

    def hypothesis_met(self) -> bool:
        """Whether the fiber is curved enough (diam F <= pi/sqrt(K_F)) for the
        apex-avoidance statement; always True when X is empty."""
        need = self.required_fiber_bound()
        if need == -math.inf:
            return True
        return self.fiber.curvature_bound >= need - 1e-12

    def critical_separation(self) -> float:
        """Fiber separation beyond which a route through X beats smooth paths."""
        need = self.required_fiber_bound()
        if need <= 0:
            return math.inf
        return math.pi / math.sqrt(need)

    def cone_curvature(self) -> float | None:
        """``K`` when this is a K-cone ``[0, pi/sqrt K] x_{sn_K} F``, else None."""
        B, p = self.base, self.f.profile
        if not isinstance(B, Interval) or B.a != 0.0:
            return None
        K = None
        if p.name == "snK" and p.params["a"] == 1.0:
            K = p.params["K"]
        elif p.name == "sin" and p.params == {"a": 1.0, "w": 1.0}:
            K = 1.0
        elif p.name == "affine" and p.params == {"a": 1.0, "b": 0.0}:
            K = 0.0
        if K is None or not p.analytic:
            return None
        if K > 0:
            return K if abs(B.b - math.pi / math.sqrt(K)) <= 1e-12 else None
        return K if not B.bounded else None

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "fiber": self.fiber.to_dict(),
                "warping": self.f.to_dict(), "N": self.N}

    @staticmethod
    def from_dict(d: dict) -> "WarpedProduct":
        B = space_from_dict(d["base"])
        F = space_from_dict(d["fiber"])
        f = WarpingFunction(B, profile_from_dict(d["warping"]))
        return WarpedProduct(B, F, f, float(d.get("N", 1.0)))


def apex_set(W: WarpedProduct) -> ApexSet:
    return W.apex_set()


# --------------------------------------------------------------------------
# length functional


def _segment_sum(W, P, Q, m):
    """Partition sum over ``m`` equal geodesic pieces between two points."""
    gB = W.base.geodesics(P.base, Q.base)[0]
    u = np.arange(1, m + 1) / m
    fv = np.asarray(W.f.value(gB.at_fraction(u)), dtype=float)
    if P.fiber is None or Q.fiber is None:
        LF = 0.0
    else:
        LF = W.fiber.geodesics(P.fiber, Q.fiber)[0].length
    dB = gB.length / m
    dF = LF / m
    return float(np.sum(np.sqrt(dB * dB + (fv * dF) ** 2)))


def warped_length(W: WarpedProduct, path, rel_tol: float = 1e-9, max_level: int = 16,
                  return_levels: bool = False):
    """Length of a polyline of warped points from dyadic partition sums.

    Each polyline segment is followed along minimizing geodesics of both
    factors; the partition sums use ``f`` at the right end of each piece.
    The result is the Richardson-extrapolated limit of the dyadic sums.
    """
    path = list(path)
    if len(path) < 2:
        raise ValueError("a path needs at least two points")
    for P in path:
        fb = W.f_at(P.base)
        if P.fiber is None and fb > ZERO_TOL:
            raise ValueError("a point off the singular set lost its fiber coordinate")
    sums = []
    prev_extrap = None
    for level in range(max_level + 1):
        m = 2**level
        s = sum(_segment_sum(W, P, Q, m) for P, Q in zip(path[:-1], path[1:]))
        sums.append(s)
        if level >= 1:
            extrap = 2 * sums[-1] - sums[-2]
            if prev_extrap is not None and abs(extrap - prev_extrap) <= rel_tol * max(abs(extrap), 1e-300):
                return (extrap, sums) if return_levels else extrap
            if abs(sums[-1] - sums[-2]) <= 0.1 * rel_tol * max(abs(s), 1e-300):
                return (s, sums) if return_levels else s
            prev_extrap = extrap
    out = 2 * sums[-1] - sums[-2]
    return (out, sums) if return_levels else out


# --------------------------------------------------------------------------
# measure


@dataclass
class WarpedGrid:
    """Cell decomposition of ``m_C``: base cells times fiber cells.

    ``weights[i, j]`` is the ``m_C`` mass of base cell ``i`` times fiber cell ``j``.
    """

    W: WarpedProduct
    base_grid: object
    fiber_grid: object
    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def shape(self) -> tuple:
        return self.weights.shape

    def points(self) -> list:
        out = []
        for i, b in enumerate(self.base_grid.points):
            for x in self.fiber_grid.points:
                out.append(self.W.point(b, x) if self.W.f_at(b) > ZERO_TOL else self.W.point(b))
        return out

    def locate(self, pts) -> tuple:
        """Base row and fiber column per point; column ``-1`` for singular points."""
        pts = list(pts)
        B = np.array([p.base for p in pts], dtype=float)
        rows = self.base_grid.locate(B)
        cols = np.full(len(pts), -1, dtype=np.int64)
        reg = [k for k, p in enumerate(pts) if p.fiber is not None]
        if reg:
            F = np.array([pts[k].fiber for k in reg], dtype=float)
            cols[reg] = self.fiber_grid.locate(F)
        return rows, cols


def _base_masses(W: WarpedProduct, res: int, bounds=None):
    B, prof, N = W.base, W.f.profile, W.N
    if isinstance(B, Interval):
        g = B.grid(res, bounds)
        dens = B._density()

        def integrand(r):
            v = np.power(np.maximum(prof.g(r), 0.0), N)
            return v * dens(r) if dens is not None else v

        return g, _cell_integrals_1d(g.edges[0], integrand)
    if isinstance(B, Sphere):
        g = B.grid(res)
        lam = B.radius
        first = _cell_integrals_1d(
            g.edges[0], lambda t: np.power(np.maximum(prof.g(lam * t), 0.0), N) * np.sin(t) ** (B.n - 1))
        rest = np.ones(1)
        for k, e in enumerate(g.edges[1:-1], start=1):
            p = B.n - 1 - k
            rest = np.multiply.outer(rest, _cell_integrals_1d(e, lambda t, p=p: np.sin(t) ** p))
        rest = np.multiply.outer(rest, np.diff(g.edges[-1]))
        w = lam**B.n * np.multiply.outer(first, rest.ravel()).ravel()
        return g, w
    g = B.grid(res)
    c = prof.params["c"]
    return g, g.weights * c**N


def warped_measure(W: WarpedProduct, base_resolution: int, fiber_resolution: int,
                   base_bounds=None) -> WarpedGrid:
    """Product grid of ``f^N dm_B x dm_F``; cells over ``f = 0`` weigh exactly 0.

    ``base_bounds`` truncates an unbounded interval base.
    """
    if base_resolution < 2 or fiber_resolution < 2:
        raise ValueError("resolutions must be >= 2")
    gB, wB = _base_masses(W, base_resolution, base_bounds)
    gF = W.fiber.grid(fiber_resolution)
    w = np.multiply.outer(wB, gF.weights)
    zero_rows = np.array([W.f_at(b) <= ZERO_TOL for b in gB.points])
    w[zero_rows, :] = 0.0
    return WarpedGrid(W, gB, gF, w)


# --------------------------------------------------------------------------
# cones


def cone_distance_radial(K: float, s, t, theta):
    """K-cone distance from radii and fiber separation (separation capped at pi)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    th = np.minimum(np.asarray(theta, dtype=float), math.pi)
    hs = np.sin(0.5 * th) ** 2
    if K == 0:
        out = np.sqrt(np.maximum((s - t) ** 2 + 4.0 * s * t * hs, 0.0))
    elif K > 0:
        rk = math.sqrt(K)
        a, b = rk * s, rk * t
        h = np.sin(0.5 * (a - b)) ** 2 + np.sin(a) * np.sin(b) * hs
        c = np.cos(0.5 * (a - b)) ** 2 - np.sin(a) * np.sin(b) * hs
        out = 2.0 * np.arctan2(np.sqrt(np.maximum(h, 0.0)), np.sqrt(np.maximum(c, 0.0))) / rk
    else:
        rk = math.sqrt(-K)
        a, b = rk * s, rk * t
        h = np.sinh(0.5 * (a - b)) ** 2 + np.sinh(a) * np.sinh(b) * hs
        out = 2.0 * np.arcsinh(np.sqrt(np.maximum(h, 0.0))) / rk
    return float(out) if out.ndim == 0 else out


def cone_radial_max(K: float) -> float:
    return math.pi / math.sqrt(K) if K > 0 else math.inf


def cone_distance(K: float, M: ModelSpace, a, b) -> float:
    """Distance in the K-cone over ``M`` between ``a = (x, s)`` and ``b = (x', t)``."""
    (x, s), (y, t) = a, b
    top = cone_radial_max(K)
    tol = 1e-12 * max(1.0, top if math.isfinite(top) else 1.0)
    for r in (s, t):
        if r < -tol or r > top + tol:
            raise ValueError(f"radial coordinate {r} outside [0, {top}]")
    s = min(max(float(s), 0.0), top)
    t = min(max(float(t), 0.0), top)
    d = float(M.distance(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))
    return cone_distance_radial(K, s, t, d)


def k_cone(K: float, fiber: ModelSpace, N: float = 1.0, *, extent=None) -> WarpedProduct:
    """``[0, pi/sqrt K] x_{sn_K} fiber`` (half-line base when ``K <= 0``)."""
    B = Interval(0.0, cone_radial_max(K))
    prof = sin_profile() if K == 1.0 else (affine_profile() if K == 0.0 else snK_profile(K))
    return WarpedProduct(B, fiber, WarpingFunction(B, prof), N)
