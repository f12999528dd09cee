"""Model metric measure spaces used as bases and fibers.

Points are numpy arrays of chart coordinates:

* ``Interval(a, b)``: ``(x,)``
* ``Circle(radius)``: ``(phi,)`` with ``phi`` in ``[0, 2 pi)``
* ``Sphere(n, radius)``: ``(theta_1, ..., theta_{n-1}, phi)``, colatitudes in
  ``[0, pi]`` measured from the pole ``e_0``
* ``FlatTorus`` / ``MinkowskiTorus``: ``(x_1, ..., x_n)`` with ``x_i`` in ``[0, L_i)``
* ``ProductSpace``: concatenated factor charts

Tangent vectors are always expressed in an orthonormal frame, so their
Euclidean norm is the Riemannian norm.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

TWO_PI = 2.0 * math.pi
MAX_GRID_CELLS = 20_000_000
_GL5_X, _GL5_W = np.polynomial.legendre.leggauss(5)


# --------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class Weight:
    """Log-density ``Psi`` on a flat chart, so that ``dm = exp(-Psi) dvol``.

    Build with :meth:`zero`, :meth:`linear`, :meth:`quadratic` or
    :meth:`callback`; the first three carry exact derivatives.
    """

    kind: str
    params: dict = field(default_factory=dict, compare=False)
    value: Callable = field(default=None, compare=False, repr=False)
    grad: Callable = field(default=None, compare=False, repr=False)
    hess: Callable = field(default=None, compare=False, repr=False)

    @staticmethod
    def zero(dim: int = 1) -> "Weight":
        return Weight.quadratic(np.zeros((dim, dim)), np.zeros(dim), 0.0, kind="zero")

    @staticmethod
    def linear(b: Sequence[float], c: float = 0.0) -> "Weight":
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return Weight.quadratic(np.zeros((b.size, b.size)), b, c, kind="linear")

    @staticmethod
    def quadratic(A, b=None, c: float = 0.0, kind: str = "quadratic") -> "Weight":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        A = 0.5 * (A + A.T)

        def value(y):
            y = np.asarray(y, dtype=float)
            return 0.5 * np.einsum("...i,ij,...j->...", y, A, y) + y @ b + c

        def grad(y):
            return np.asarray(y, dtype=float) @ A + b

        def hess(y):
            return A.copy()

        params = {"A": A.tolist(), "b": b.tolist(), "c": float(c)}
        return Weight(kind, params, value, grad, hess)

    @staticmethod
    def callback(value, grad, hess, name: str = "callback") -> "Weight":
        if grad is None or hess is None:
            raise ValueError("weight callbacks need gradient and Hessian oracles")
        return Weight("callback", {"name": name}, value, grad, hess)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def to_dict(self) -> dict:
        if self.kind == "callback":
            raise ValueError("callback weights are not serializable")
        return {"kind": self.kind, **self.params}

    @staticmethod
    def from_dict(d: dict) -> "Weight":
        kind = d["kind"]
        if kind == "zero":
            return Weight.zero(int(d.get("dim", len(d.get("b", [0])))))
        if kind == "linear":
            return Weight.linear(d["b"], d.get("c", 0.0))
        if kind == "quadratic":
            return Weight.quadratic(d["A"], d.get("b"), d.get("c", 0.0))
        raise ValueError(f"unknown weight kind {kind!r}")


# --------------------------------------------------------------------------
# geodesics and grids


@dataclass
class FactorGeodesic:
    """Unit-speed minimizing geodesic ``s -> point`` for ``s`` in ``[0, length]``."""

    length: float
    start: np.ndarray
    end: np.ndarray
    fn: Callable = field(repr=False)
    nonunique: bool = False

    def point(self, s) -> np.ndarray:
        """Chart point(s) at arclength ``s`` (scalar or array)."""
        s = np.asarray(s, dtype=float)
        return self.fn(np.clip(s, 0.0, self.length))

    def at_fraction(self, t) -> np.ndarray:
        return self.point(np.asarray(t, dtype=float) * self.length)


@dataclass
class GridMeasure:
    """Tensor-product cell discretization of a space's measure.

    ``points`` are cell centres in C order over ``shape`` and ``weights`` the
    measure of each cell.
    """

    space: "ModelSpace"
    edges: list
    points: np.ndarray
    weights: np.ndarray
    periodic: tuple

    @property
    def shape(self) -> tuple:
        return tuple(len(e) - 1 for e in self.edges)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "GridMeasure":
        return GridMeasure(self.space, self.edges, self.points, self.weights / self.total, self.periodic)

    def locate(self, X) -> np.ndarray:
        """Flat cell index of each chart point, ``-1`` when outside the grid."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = np.zeros(len(X), dtype=np.int64)
        ok = np.ones(len(X), dtype=bool)
        for k, e in enumerate(self.edges):
            x = X[:, k]
            n = len(e) - 1
            i = np.searchsorted(e, x, side="right") - 1
            # points sitting exactly on the last edge belong to the last cell
            i = np.where(np.isclose(x, e[-1], rtol=0, atol=1e-12), n - 1, i)
            i = np.where(np.isclose(x, e[0], rtol=0, atol=1e-12), 0, i)
            ok &= (i >= 0) & (i < n)
            idx = idx * n + np.clip(i, 0, n - 1)
        return np.where(ok, idx, -1)


def _cell_integrals_1d(edges: np.ndarray, density: Callable | None) -> np.ndarray:
    """Gauss-Legendre integral of ``density`` over each cell of ``edges``."""
    a, b = edges[:-1], edges[1:]
    if density is None:
        return b - a
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = mid[:, None] + half[:, None] * _GL5_X[None, :]
    return half * (density(nodes) @ _GL5_W)


def _check_cells(count: int):
    if count > MAX_GRID_CELLS:
        raise ValueError(f"grid with {count} cells exceeds the limit of {MAX_GRID_CELLS}")


def _centres(edges):
    return [0.5 * (e[1:] + e[:-1]) for e in edges]


def _mesh(edges):
    c = _centres(edges)
    return np.stack([g.ravel() for g in np.meshgrid(*c, indexing="ij")], axis=-1)


def _wrap(x, period):
    return np.mod(x, period)


def _wrap_delta(d, period):
    """Representative of ``d`` modulo ``period`` in ``[-period/2, period/2]``."""
    return d - period * np.round(d / period)


# --------------------------------------------------------------------------
# spaces


class ModelSpace:
    """Common interface; subclasses are frozen dataclasses."""

    kind: str = ""
    riemannian: bool = True

    # chart handling -----------------------------------------------------
    @property
    def chart_dim(self) -> int:
        return self.dim

    def canonical(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(self.chart_dim)

    def flat_coords(self, x) -> np.ndarray:
        """Coordinates in which the metric is Euclidean (flat kinds only)."""
        raise ValueError(f"{self.kind} has no flat chart")

    # geometry -----------------------------------------------------------
    def ricci(self, v, at=None) -> float:
        raise NotImplementedError

    def curvature_form(self, v, w, at=None) -> float:
        """``Rm(v, w, w, v)`` for tangent vectors in an orthonormal frame."""
        raise NotImplementedError

    def sectional(self, v, w, at=None) -> float:
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        gram = v @ v * (w @ w) - (v @ w) ** 2
        if gram <= 1e-14 * max(v @ v * (w @ w), 1e-300):
            raise ValueError("degenerate plane")
        return self.curvature_form(v, w, at) / gram

    def has_weight(self) -> bool:
        w = getattr(self, "weight", None)
        return w is not None and not w.is_zero

    def _density(self, axis_nodes):
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Interval(ModelSpace):
    """Segment ``[a, b]``; ``b`` may be ``inf`` for a half-line."""

    a: float = 0.0
    b: float = 1.0
    weight: Weight | None = None
    kind = "interval"

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("Interval needs b > a")
        if not math.isfinite(self.a):
            raise ValueError("Interval needs a finite left end")

    dim = 1

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.b)

    @property
    def diameter(self) -> float:
        return self.b - self.a

    @property
    def boundary(self) -> tuple:
        return (self.a,) if not self.bounded else (self.a, self.b)

    @property
    def curvature_bound(self) -> float:
        # a segment of length L is CBB(K) for every K <= (pi/L)^2
        return (math.pi / self.diameter) ** 2 if self.bounded else 0.0

    def canonical(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1)
        span = max(1.0, abs(self.a), abs(self.b) if self.bounded else 0.0)
        if x[0] < self.a - 1e-9 * span or x[0] > self.b + 1e-9 * span:
            raise ValueError(f"{x[0]} lies outside [{self.a}, {self.b}]")
        return np.clip(x, self.a, self.b)

    def flat_coords(self, x):
        return np.asarray(x, dtype=float)

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.abs(x[..., 0] - y[..., 0])

    def geodesics(self, x, y) -> list:
        x = self.canonical(x)
        y = self.canonical(y)
        d = float(abs(y[0] - x[0]))
        sgn = 1.0 if y[0] >= x[0] else -1.0
        x0 = float(x[0])

        def fn(s):
            return (x0 + sgn * s)[..., None]

        return [FactorGeodesic(d, x, y, fn)]

    def ricci(self, v, at=None) -> float:
        return 0.0

    def curvature_form(self, v, w, at=None) -> float:
        return 0.0

    def _density(self):
        if self.has_weight():
            return lambda y: np.exp(-self.weight.value(y[..., None]))
        return None

    def total_measure(self, bounds=None) -> float:
        lo, hi = self._bounds(bounds)
        if not self.has_weight():
            return hi - lo
        return float(self.grid(400, bounds).total)

    def _bounds(self, bounds):
        lo, hi = (self.a, self.b) if bounds is None else bounds
        if not math.isfinite(hi):
            raise ValueError("unbounded interval: pass finite bounds for the grid")
        return float(lo), float(hi)

    def grid(self, resolution: int, bounds=None) -> GridMeasure:
        _check_cells(resolution)
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        lo, hi = self._bounds(bounds)
        e = np.linspace(lo, hi, resolution + 1)
        w = _cell_integrals_1d(e, self._density())
        return GridMeasure(self, [e], _mesh([e]), w, (False,))

    def to_dict(self) -> dict:
        d = {"kind": "interval", "a": self.a, "b": None if not self.bounded else self.b}
        if self.weight is not None:
            d["weight"] = self.weight.to_dict()
        return d


@dataclass(frozen=True)
class Circle(ModelSpace):
    """Round circle of the given radius, chart angle in ``[0, 2 pi)``."""

    radius: float = 1.0
    weight: Weight | None = None
    kind = "circle"
    dim = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def diameter(self) -> float:
        return math.pi * self.radius

    @property
    def curvature_bound(self) -> float:
        return 1.0 / self.radius**2

    boundary = ()

    def canonical(self, x):
        return _wrap(np.asarray(x, dtype=float).reshape(1), TWO_PI)

    def flat_coords(self, x):
        return self.radius * np.asarray(x, dtype=float)

    def distance(self, x, y):
        d = np.abs(_wrap_delta(np.asarray(y, dtype=float)[..., 0] - np.asarray(x, dtype=float)[..., 0], TWO_PI))
        return self.radius * d

    def geodesics(self, x, y) -> list:
        x = self.canonical(x)
        y = self.canonical(y)
        d = float(_wrap_delta(y[0] - x[0], TWO_PI))
        R = self.radius
        x0 = float(x[0])

        def make(sgn):
            return lambda s: _wrap(x0 + sgn * s / R, TWO_PI)[..., None]

        if abs(abs(d) - math.pi) <= 1e-12:
            # antipodal: both arcs are minimizing
            return [FactorGeodesic(math.pi * R, x, y, make(1.0), True),
                    FactorGeodesic(math.pi * R, x, y, make(-1.0), True)]
        sgn = 1.0 if d >= 0 else -1.0
        return [FactorGeodesic(abs(d) * R, x, y, make(sgn))]

    def ricci(self, v, at=None) -> float:
        return 0.0

    def curvature_form(self, v, w, at=None) -> float:
        return 0.0

    def _density(self):
        if self.has_weight():
            return lambda phi: np.exp(-self.weight.value((self.radius * phi)[..., None]))
        return None

    def total_measure(self, bounds=None) -> float:
        if not self.has_weight():
            return TWO_PI * self.radius
        return self.grid(400).total

    def grid(self, resolution: int, bounds=None) -> GridMeasure:
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        _check_cells(resolution)
        e = np.linspace(0.0, TWO_PI, resolution + 1)
        w = self.radius * _cell_integrals_1d(e, self._density())
        return GridMeasure(self, [e], _mesh([e]), w, (True,))

    def to_dict(self) -> dict:
        d = {"kind": "circle", "radius": self.radius}
        if self.weight is not None:
            d["weight"] = self.weight.to_dict()
        return d


@dataclass(frozen=True)
class Sphere(ModelSpace):
    """Round ``n``-sphere of radius ``radius``; optional polar cap ``theta_1 <= cap``."""

    n: int = 2
    radius: float = 1.0
    cap: float | None = None
    kind = "sphere"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("use Circle for one-dimensional spheres")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.cap is not None and not 0 < self.cap <= math.pi / 2:
            raise ValueError("cap must lie in (0, pi/2] to keep the cap convex")

    weight = None

    @property
    def dim(self) -> int:
        return self.n

    @property
    def diameter(self) -> float:
        if self.cap is None:
            return math.pi * self.radius
        return 2.0 * self.cap * self.radius

    @property
    def curvature_bound(self) -> float:
        return 1.0 / self.radius**2

    @property
    def boundary(self) -> tuple:
        return () if self.cap is None else (("colatitude", self.cap),)

    # embedding helpers -------------------------------------------------
    def embed(self, x) -> np.ndarray:
        """Unit vector in ``R^{n+1}`` for chart point(s) ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (self.n + 1,))
        s = np.ones(x.shape[:-1])
        for k in range(self.n - 1):
            out[..., k] = s * np.cos(x[..., k])
            s = s * np.sin(x[..., k])
        out[..., self.n - 1] = s * np.cos(x[..., -1])
        out[..., self.n] = s * np.sin(x[..., -1])
        return out

    def from_embedding(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[:-1] + (self.n,))
        for k in range(self.n - 1):
            rest = np.linalg.norm(X[..., k + 1:], axis=-1)
            out[..., k] = np.arctan2(rest, X[..., k])
        out[..., -1] = _wrap(np.arctan2(X[..., self.n], X[..., self.n - 1]), TWO_PI)
        return out

    def canonical(self, x):
        x = np.asarray(x, dtype=float).reshape(self.n)
        y = self.from_embedding(self.embed(x))
        if self.cap is not None and y[0] > self.cap + 1e-9:
            raise ValueError("point outside the polar cap")
        return y

    def angle(self, X, Y):
        """Angle between unit vectors, accurate near 0 and near pi."""
        a = np.linalg.norm(X - Y, axis=-1)
        b = np.linalg.norm(X + Y, axis=-1)
        return 2.0 * np.arctan2(a, b)

    def distance(self, x, y):
        return self.radius * self.angle(self.embed(x), self.embed(y))

    def geodesics(self, x, y) -> list:
        x = self.canonical(x)
        y = self.canonical(y)
        X, Y = self.embed(x), self.embed(y)
        ang = float(self.angle(X, Y))
        U = Y - (X @ Y) * X
        nu = np.linalg.norm(U)
        nonunique = False
        if ang > math.pi - 1e-9 or nu < 1e-12:
            if ang > 1.0:
                nonunique = True
                # canonical great circle through the least aligned axis
                e = np.zeros(self.n + 1)
                e[int(np.argmin(np.abs(X)))] = 1.0
                U = e - (X @ e) * X
                nu = np.linalg.norm(U)
            else:
                U = np.zeros_like(X)
                nu = 1.0
        U = U / nu
        R = self.radius

        def fn(s):
            s = np.asarray(s, dtype=float)[..., None] / R
            return self.from_embedding(np.cos(s) * X + np.sin(s) * U)

        return [FactorGeodesic(ang * R, x, y, fn, nonunique)]

    def ricci(self, v, at=None) -> float:
        v = np.asarray(v, dtype=float)
        return (self.n - 1) / self.radius**2 * float(v @ v)

    def curvature_form(self, v, w, at=None) -> float:
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        return (v @ v * (w @ w) - (v @ w) ** 2) / self.radius**2

    def total_measure(self, bounds=None) -> float:
        return self.grid(64).total

    def grid(self, resolution: int, bounds=None) -> GridMeasure:
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        _check_cells(resolution ** (self.n - 1) * 2 * resolution)
        edges, factors = [], []
        for k in range(self.n - 1):
            top = self.cap if (k == 0 and self.cap is not None) else math.pi
            e = np.linspace(0.0, top, resolution + 1)
            p = self.n - 1 - k
            edges.append(e)
            factors.append(_cell_integrals_1d(e, lambda t, p=p: np.sin(t) ** p))
        e = np.linspace(0.0, TWO_PI, 2 * resolution + 1)
        edges.append(e)
        factors.append(np.diff(e))
        w = factors[0]
        for fct in factors[1:]:
            w = np.multiply.outer(w, fct)
        w = self.radius**self.n * w.ravel()
        return GridMeasure(self, edges, _mesh(edges), w, (False,) * (self.n - 1) + (True,))

    def to_dict(self) -> dict:
        return {"kind": "sphere", "n": self.n, "radius": self.radius, "cap": self.cap}


@dataclass(frozen=True)
class FlatTorus(ModelSpace):
    """Flat torus ``R^n / prod(L_i Z)``."""

    sides: tuple = (1.0, 1.0)
    weight: Weight | None = None
    kind = "flat_torus"

    def __post_init__(self):
        object.__setattr__(self, "sides", tuple(float(s) for s in self.sides))
        if any(s <= 0 for s in self.sides):
            raise ValueError("side lengths must be positive")

    @property
    def dim(self) -> int:
        return len(self.sides)

    @property
    def L(self) -> np.ndarray:
        return np.asarray(self.sides)

    @property
    def diameter(self) -> float:
        return 0.5 * float(np.linalg.norm(self.L))

    curvature_bound = 0.0
    boundary = ()

    def canonical(self, x):
        return _wrap(np.asarray(x, dtype=float).reshape(self.dim), self.L)

    def flat_coords(self, x):
        return np.asarray(x, dtype=float)

    def delta(self, x, y):
        return _wrap_delta(np.asarray(y, dtype=float) - np.asarray(x, dtype=float), self.L)

    def distance(self, x, y):
        return np.linalg.norm(self.delta(x, y), axis=-1)

    def geodesics(self, x, y) -> list:
        x = self.canonical(x)
        y = self.canonical(y)
        d = self.delta(x, y)
        choices = []
        for di, Li in zip(d, self.L):
            if abs(abs(di) - 0.5 * Li) <= 1e-12 * Li:
                choices.append((abs(di), -abs(di)))
            else:
                choices.append((di,))
        out = []
        combos = list(itertools.product(*choices))
        for combo in combos:
            v = np.asarray(combo)
            n = float(np.linalg.norm(v))
            u = v / n if n > 0 else v

            def fn(s, u=u):
                s = np.asarray(s, dtype=float)[..., None]
                return _wrap(x + s * u, self.L)

            out.append(FactorGeodesic(n, x, y, fn, len(combos) > 1))
        return out

    def ricci(self, v, at=None) -> float:
        return 0.0

    def curvature_form(self, v, w, at=None) -> float:
        return 0.0

    def total_measure(self, bounds=None) -> float:
        if self.has_weight():
            return self.grid(64).total
        return float(np.prod(self.L))

    def grid(self, resolution: int, bounds=None) -> GridMeasure:
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        _check_cells(resolution**self.dim)
        edges = [np.linspace(0.0, Li, resolution + 1) for Li in self.L]
        pts = _mesh(edges)
        if not self.has_weight():
            w = np.ones(len(pts))
            for e in edges:
                w = w * (e[1] - e[0])
        else:
            # tensor Gauss-Legendre per cell
            h = np.array([e[1] - e[0] for e in edges])
            nodes = list(itertools.product(range(len(_GL5_X)), repeat=self.dim))
            w = np.zeros(len(pts))
            for nd in nodes:
                off = np.array([_GL5_X[i] for i in nd]) * 0.5 * h
                wt = np.prod([_GL5_W[i] for i in nd]) * np.prod(0.5 * h)
                w += wt * np.exp(-self.weight.value(pts + off))
        return GridMeasure(self, edges, pts, w, (True,) * self.dim)

    def to_dict(self) -> dict:
        d = {"kind": "flat_torus", "sides": list(self.sides)}
        if self.weight is not None:
            d["weight"] = self.weight.to_dict()
        return d


@dataclass(frozen=True)
class MinkowskiTorus(ModelSpace):
    """Two-dimensional torus with a translation-invariant (Minkowski) norm.

    The unit ball is described by its support function ``h`` sampled at
    equally spaced angles on ``[0, pi)`` and extended by symmetry.  The norm is
    the gauge ``F(v) = max_phi <v, u(phi)> / h(phi)``, which is convex and
    positively homogeneous for any positive table.
    """

    sides: tuple = (1.0, 1.0)
    support: tuple = (1.0,)
    kind = "minkowski_torus"
    riemannian = False
    weight = None
    dim = 2
    _SAMPLES = 1024

    def __post_init__(self):
        object.__setattr__(self, "sides", tuple(float(s) for s in self.sides))
        object.__setattr__(self, "support", tuple(float(s) for s in self.support))
        if len(self.sides) != 2:
            raise ValueError("MinkowskiTorus is two-dimensional")
        if any(h <= 0 for h in self.support):
            raise ValueError("support values must be positive")

    @property
    def L(self):
        return np.asarray(self.sides)

    def _spline(self):
        cache = self.__dict__.get("_cache")
        if cache is None:
            m = len(self.support)
            h = np.asarray(self.support + self.support + self.support[:1])
            ang = np.linspace(0.0, TWO_PI, 2 * m + 1)
            sp = CubicSpline(ang, h, bc_type="periodic")
            grid = np.linspace(0.0, TWO_PI, self._SAMPLES, endpoint=False)
            cache = (sp, grid, sp(grid))
            object.__setattr__(self, "_cache", cache)
        return cache

    def support_function(self, phi):
        sp, _, _ = self._spline()
        return sp(np.mod(phi, TWO_PI))

    def norm(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        shp = v.shape[:-1]
        V = v.reshape(-1, 2)
        sp, grid, hg = self._spline()
        u = np.stack([np.cos(grid), np.sin(grid)])
        g = (V @ u) / hg
        k = np.argmax(g, axis=1)
        best = g[np.arange(len(V)), k]
        phi = grid[k]
        step = TWO_PI / self._SAMPLES
        # Newton refinement of the maximizing angle
        for _ in range(6):
            h, h1, h2 = sp(phi, 0), sp(phi, 1), sp(phi, 2)
            a = V[:, 0] * np.cos(phi) + V[:, 1] * np.sin(phi)
            a1 = -V[:, 0] * np.sin(phi) + V[:, 1] * np.cos(phi)
            g1 = (a1 * h - a * h1) / h**2
            g2 = (-a * h - a * h2) / h**2 - 2.0 * h1 * g1 / h
            dphi = np.where(g2 < 0, -g1 / np.where(g2 < 0, g2, -1.0), 0.0)
            phi = np.clip(phi + np.clip(dphi, -step, step), grid[k] - step, grid[k] + step)
        a = V[:, 0] * np.cos(phi) + V[:, 1] * np.sin(phi)
        best = np.maximum(best, a / sp(np.mod(phi, TWO_PI)))
        best = np.where(np.all(V == 0, axis=1), 0.0, best)
        return best.reshape(shp)

    def unit_ball_convex(self, n_dirs: int = 720) -> bool:
        """Check convexity of the sampled unit sphere ``{F = 1}``."""
        ang = np.linspace(0.0, TWO_PI, n_dirs, endpoint=False)
        u = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        P = u / self.norm(u)[:, None]
        d1 = np.roll(P, -1, axis=0) - P
        d2 = np.roll(P, -2, axis=0) - np.roll(P, -1, axis=0)
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        return bool(np.all(cross >= -1e-12))

    @property
    def diameter(self) -> float:
        corners = np.array([[0.5, 0.5], [0.5, -0.5], [0.5, 0.0], [0.0, 0.5]]) * self.L
        return float(np.max(self.distance(np.zeros(2), corners)))

    curvature_bound = 0.0
    boundary = ()

    def canonical(self, x):
        return _wrap(np.asarray(x, dtype=float).reshape(2), self.L)

    def flat_coords(self, x):
        return np.asarray(x, dtype=float)

    def _candidates(self, x, y):
        d = _wrap_delta(np.asarray(y, dtype=float) - np.asarray(x, dtype=float), self.L)
        shifts = np.array(list(itertools.product((-1, 0, 1), repeat=2)), dtype=float) * self.L
        return d[..., None, :] + shifts

    def distance(self, x, y):
        return np.min(self.norm(self._candidates(x, y)), axis=-1)

    def geodesics(self, x, y) -> list:
        x = self.canonical(x)
        y = self.canonical(y)
        cand = self._candidates(x, y)
        nrm = self.norm(cand)
        m = nrm.min()
        picks = [c for c, n in zip(cand, nrm) if n <= m + 1e-12 * max(m, 1.0)]
        out = []
        for v in picks:
            u = v / m if m > 0 else v

            def fn(s, u=u):
                s = np.asarray(s, dtype=float)[..., None]
                return _wrap(x + s * u, self.L)

            out.append(FactorGeodesic(float(m), x, y, fn, len(picks) > 1))
        return out

    def ricci(self, v, at=None) -> float:
        raise ValueError("no pointwise Ricci in non-smooth directions for a Minkowski norm")

    def curvature_form(self, v, w, at=None) -> float:
        raise ValueError("no sectional curvature for a Minkowski norm")

    def total_measure(self, bounds=None) -> float:
        return float(np.prod(self.L))

    def grid(self, resolution: int, bounds=None) -> GridMeasure:
        return FlatTorus(self.sides).grid(resolution)._replace_space(self)

    def to_dict(self) -> dict:
        return {"kind": "minkowski_torus", "sides": list(self.sides), "support": list(self.support)}


def _replace_space(self, space):
    return GridMeasure(space, self.edges, self.points, self.weights, self.periodic)


GridMeasure._replace_space = _replace_space


@dataclass(frozen=True)
class ProductSpace(ModelSpace):
    """Riemannian product of model spaces."""

    factors: tuple = ()
    kind = "product"
    weight = None

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if len(self.factors) < 2:
            raise ValueError("a product needs at least two factors")
        if not all(f.riemannian for f in self.factors):
            raise ValueError("product factors must be Riemannian")

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    @property
    def chart_dim(self) -> int:
        return sum(f.chart_dim for f in self.factors)

    def _split(self, x, attr="chart_dim"):
        x = np.asarray(x, dtype=float)
        out, k = [], 0
        for f in self.factors:
            n = getattr(f, attr)
            out.append(x[..., k:k + n])
            k += n
        return out

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(f.diameter**2 for f in self.factors))

    @property
    def curvature_bound(self) -> float:
        return min(0.0, *(f.curvature_bound for f in self.factors))

    boundary = ()

    def canonical(self, x):
        return np.concatenate([f.canonical(p) for f, p in zip(self.factors, self._split(x))])

    def distance(self, x, y):
        parts = [f.distance(a, b) ** 2 for f, a, b in zip(self.factors, self._split(x), self._split(y))]
        return np.sqrt(sum(parts))

    def geodesics(self, x, y) -> list:
        x = self.canonical(x)
        y = self.canonical(y)
        lists = [f.geodesics(a, b) for f, a, b in zip(self.factors, self._split(x), self._split(y))]
        out = []
        combos = list(itertools.product(*lists))
        for combo in combos:
            L = math.sqrt(sum(g.length**2 for g in combo))

            def fn(s, combo=combo, L=L):
                s = np.asarray(s, dtype=float)
                frac = s / L if L > 0 else np.zeros_like(s)
                return np.concatenate([g.point(frac * g.length) for g in combo], axis=-1)

            out.append(FactorGeodesic(L, x, y, fn, len(combos) > 1 or any(g.nonunique for g in combo)))
        return out

    def ricci(self, v, at=None) -> float:
        return sum(f.ricci(p) for f, p in zip(self.factors, self._split(v, "dim")))

    def curvature_form(self, v, w, at=None) -> float:
        return sum(f.curvature_form(a, b) for f, a, b in
                   zip(self.factors, self._split(v, "dim"), self._split(w, "dim")))

    def total_measure(self, bounds=None) -> float:
        return float(np.prod([f.total_measure() for f in self.factors]))

    def grid(self, resolution: int, bounds=None) -> GridMeasure:
        grids = [f.grid(resolution) for f in self.factors]
        _check_cells(int(np.prod([len(g.weights) for g in grids])))
        edges = [e for g in grids for e in g.edges]
        w = grids[0].weights
        for g in grids[1:]:
            w = np.multiply.outer(w, g.weights)
        periodic = tuple(p for g in grids for p in g.periodic)
        return GridMeasure(self, edges, _mesh(edges), w.ravel(), periodic)

    def to_dict(self) -> dict:
        return {"kind": "product", "factors": [f.to_dict() for f in self.factors]}


# --------------------------------------------------------------------------
# module-level API


def distance(S: ModelSpace, x, y):
    """Intrinsic distance; vectorized over leading axes of ``x`` and ``y``."""
    d = S.distance(x, y)
    return float(d) if np.ndim(d) == 0 else d


def minimizing_geodesics(S: ModelSpace, x, y) -> list:
    """All minimizing unit-speed geodesics from ``x`` to ``y`` (a canonical one plus
    a ``nonunique`` flag when the family is infinite)."""
    return S.geodesics(x, y)


def ricci(S: ModelSpace, v, at=None) -> float:
    return S.ricci(v, at)


def grid_measure(S: ModelSpace, resolution: int, bounds=None, normalized: bool = False) -> GridMeasure:
    g = S.grid(resolution, bounds)
    return g.normalized() if normalized else g


def sample_points(S: ModelSpace, rng, n: int, extent: float = 10.0) -> np.ndarray:
    """``n`` chart points drawn uniformly from ``S`` (volume measure).

    Half-lines are truncated to ``[a, a + extent]``.
    """
    if isinstance(S, Interval):
        hi = S.b if S.bounded else S.a + extent
        return rng.uniform(S.a, hi, size=(n, 1))
    if isinstance(S, Circle):
        return rng.uniform(0.0, TWO_PI, size=(n, 1))
    if isinstance(S, Sphere):
        # normalized Gaussians give the uniform law; caps by rejection
        out = np.empty((0, S.n))
        while len(out) < n:
            g = rng.standard_normal((n, S.n + 1))
            X = g / np.linalg.norm(g, axis=1, keepdims=True)
            x = S.from_embedding(X)
            if S.cap is not None:
                x = x[x[:, 0] <= S.cap]
            out = np.vstack([out, x])
        return out[:n]
    if isinstance(S, (FlatTorus, MinkowskiTorus)):
        return rng.uniform(0.0, 1.0, size=(n, len(S.sides))) * np.asarray(S.sides, dtype=float)
    if isinstance(S, ProductSpace):
        return np.hstack([sample_points(f, rng, n, extent) for f in S.factors])
    raise TypeError(f"cannot sample {type(S).__name__}")


def space_from_dict(d: dict) -> ModelSpace:
    kind = d["kind"]
    weight = Weight.from_dict(d["weight"]) if d.get("weight") else None
    if kind == "interval":
        b = d.get("b")
        return Interval(float(d.get("a", 0.0)), math.inf if b is None else float(b), weight)
    if kind == "circle":
        return Circle(float(d.get("radius", 1.0)), weight)
    if kind == "sphere":
        return Sphere(int(d.get("n", 2)), float(d.get("radius", 1.0)), d.get("cap"))
    if kind == "flat_torus":
        return FlatTorus(tuple(d["sides"]), weight)
    if kind == "minkowski_torus":
        return MinkowskiTorus(tuple(d["sides"]), tuple(d.get("support", (1.0,))))
    if kind == "product":
        return ProductSpace(tuple(space_from_dict(f) for f in d["factors"]))
    raise ValueError(f"unknown space kind {kind!r}")
