"""Exact discrete optimal transport on warped products and the CD inequality.

Plans are exact optima of the discrete quadratic-cost problem.  Equal-weight
square instances use the Hungarian method; general instances use the
transportation LP solved by HiGHS dual simplex with column generation: solve
on a sparse arc set, price every arc with the duals, add violators, repeat.
A spanning-forest support is then re-solved by leaf elimination so that the
plan marginals are exact to rounding.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix

from .geodesics import GeodesicPath, distance_matrix, evaluate, parallel_map, product_distance
from .kernels import tau
from .warp import WarpedGrid, WarpedPoint, WarpedProduct, warped_measure

DENSE_LP_LIMIT = 40_000
PRICE_TOL = 1e-9
ADD_PER_LINE = 4


@dataclass
class DiscreteMeasure:
    atoms: list
    weights: np.ndarray
    ac_proxy: bool = False

    def __post_init__(self):
        self.atoms = list(self.atoms)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.atoms) != len(self.weights):
            raise ValueError("atoms and weights differ in length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return len(self.atoms)

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms, self.weights / self.total, self.ac_proxy)

    def check_off_singular(self):
        if any(p.fiber is None for p in self.atoms):
            raise ValueError("measure charges the singular set")


@dataclass
class TransportPlan:
    mu0: DiscreteMeasure
    mu1: DiscreteMeasure
    W: WarpedProduct
    src: np.ndarray
    tgt: np.ndarray
    mass: np.ndarray
    dist: np.ndarray = field(repr=False)
    tol: float = 1e-8
    _geo: dict = field(default_factory=dict, repr=False)

    @property
    def pairs(self) -> list:
        return list(zip(self.src.tolist(), self.tgt.tolist(), self.mass.tolist()))

    @property
    def cost(self) -> float:
        return float(np.sum(self.mass * self.dist[self.src, self.tgt] ** 2))

    def pair_distance(self, k: int) -> float:
        return float(self.dist[self.src[k], self.tgt[k]])

    def geodesic(self, k: int) -> GeodesicPath:
        g = self._geo.get(k)
        if g is None:
            a = self.mu0.atoms[self.src[k]]
            b = self.mu1.atoms[self.tgt[k]]
            g = product_distance(self.W, a, b, self.tol)[1]
            self._geo[k] = g
        return g

    def geodesics(self, threads: int = 1) -> list:
        missing = [k for k in range(len(self.mass)) if k not in self._geo]
        res = parallel_map(lambda k: product_distance(self.W, self.mu0.atoms[self.src[k]],
                                                      self.mu1.atoms[self.tgt[k]], self.tol)[1],
                           missing, threads)
        self._geo.update(zip(missing, res))
        return [self._geo[k] for k in range(len(self.mass))]

    def marginals(self):
        a = np.bincount(self.src, self.mass, minlength=len(self.mu0))
        b = np.bincount(self.tgt, self.mass, minlength=len(self.mu1))
        return a, b


# --------------------------------------------------------------------------
# exact solvers


def _tree_polish(a, b, rows, cols):
    """Exact flows on a forest support by leaf elimination (None if not a forest)."""
    n, m = len(a), len(b)
    k = len(rows)
    if k > n + m - 1:
        return None
    adj = [[] for _ in range(n + m)]
    for e, (i, j) in enumerate(zip(rows, cols)):
        adj[i].append(e)
        adj[n + j].append(e)
    deg = np.array([len(x) for x in adj])
    supply = np.concatenate([np.asarray(a, dtype=float), np.asarray(b, dtype=float)])
    flow = np.zeros(k)
    done = np.zeros(k, dtype=bool)
    q = deque(v for v in range(n + m) if deg[v] == 1)
    while q:
        v = q.popleft()
        if deg[v] != 1:
            continue
        e = next(e for e in adj[v] if not done[e])
        u = n + cols[e] if v < n else rows[e]
        flow[e] = supply[v]
        supply[u] -= supply[v]
        supply[v] = 0.0
        done[e] = True
        deg[v] -= 1
        deg[u] -= 1
        if deg[u] == 1:
            q.append(u)
    if not done.all() or np.any(flow < -1e-12):
        return None
    return np.maximum(flow, 0.0)


def _lp(a, b, C, rows, cols):
    # the last column constraint is implied by the others; dropping it keeps
    # the system consistent when the totals differ by rounding
    n, m = len(a), len(b)
    k = len(rows)
    scale = (n + m) / (a.sum() + b.sum())
    keep = cols < m - 1
    r = np.concatenate([rows, n + cols[keep]])
    c = np.concatenate([np.arange(k), np.arange(k)[keep]])
    A = coo_matrix((np.ones(len(r)), (r, c)), shape=(n + m - 1, k)).tocsr()
    res = linprog(C[rows, cols], A_eq=A, b_eq=scale * np.concatenate([a, b[:-1]]), bounds=(0, None),
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    y = res.eqlin.marginals
    return res.x / scale, y[:n], np.append(y[n:], 0.0)


def _northwest(a, b):
    i = j = 0
    ra, rb = a.copy(), b.copy()
    rows, cols = [], []
    n, m = len(a), len(b)
    while i < n and j < m:
        rows.append(i)
        cols.append(j)
        t = min(ra[i], rb[j])
        ra[i] -= t
        rb[j] -= t
        if ra[i] <= rb[j] and i < n - 1:
            i += 1
        else:
            j += 1
    return rows, cols


def _certify(C, rows, cols, tol, max_iter=300):
    """Optimality certificate for a plan supported on ``(rows, cols)``.

    Bellman-Ford on the residual graph (every arc forward at cost ``C``,
    support arcs backward at ``-C``).  Convergence yields potentials with
    nonnegative reduced cost on every arc.  Returns None on a negative cycle
    or when relaxation has not settled within ``max_iter`` sweeps.
    """
    n, m = C.shape
    du = np.zeros(n)
    dv = np.zeros(m)
    back = C[rows, cols]
    for _ in range(min(n + m + 1, max_iter)):
        nv = np.minimum(dv, (du[:, None] + C).min(axis=0))
        nu = du.copy()
        np.minimum.at(nu, rows, nv[cols] - back)
        if np.all(nv >= dv - tol) and np.all(nu >= du - tol):
            return -du, dv
        du, dv = np.minimum(du, nu), nv
    return None


def transport_lp(a, b, C, k_init: int = 8, max_rounds: int = 200):
    """Exact solution of min <C, P> over couplings of ``a`` and ``b``.

    Returns (rows, cols, mass) of the support.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = C.shape
    if n * m <= DENSE_LP_LIMIT:
        rows, cols = np.divmod(np.arange(n * m), m)
    else:
        kk = min(k_init, m)
        r1 = np.repeat(np.arange(n), kk)
        c1 = np.argpartition(C, kk - 1, axis=1)[:, :kk].ravel()
        kr = min(k_init, n)
        c2 = np.repeat(np.arange(m), kr)
        r2 = np.argpartition(C, kr - 1, axis=0)[:kr, :].T.ravel()
        r3, c3 = _northwest(a, b)
        key = np.unique(np.concatenate([r1 * m + c1, r2 * m + c2, np.asarray(r3) * m + np.asarray(c3)]))
        rows, cols = np.divmod(key, m)
    scale = max(float(np.max(np.abs(C))), 1e-300)
    prev = math.inf
    for _ in range(max_rounds):
        x, u, v = _lp(a, b, C, rows, cols)
        if n * m <= DENSE_LP_LIMIT and len(rows) == n * m:
            break
        red = C - u[:, None] - v[None, :]
        bad = red < -PRICE_TOL * scale
        if not bad.any():
            break
        # degenerate bases give arbitrary duals; once the objective stalls,
        # try to certify the primal directly
        obj = float(C[rows, cols] @ x)
        if abs(obj - prev) <= 1e-12 * max(abs(obj), 1e-300):
            if _certify(C, rows[x > 0], cols[x > 0], 1e-13 * scale) is not None:
                break
        prev = obj
        # add the most negative reduced costs per row and per column
        red_bad = np.where(bad, red, np.inf)
        add_r = np.argsort(red_bad, axis=1)[:, :ADD_PER_LINE]
        rr = np.repeat(np.arange(n), add_r.shape[1])
        cc = add_r.ravel()
        ok = bad[rr, cc]
        add_c = np.argsort(red_bad, axis=0)[:ADD_PER_LINE, :]
        rr2 = add_c.T.ravel()
        cc2 = np.repeat(np.arange(m), add_c.shape[0])
        ok2 = bad[rr2, cc2]
        # the arc set only grows: degenerate duals make pruned arcs reappear
        new = np.concatenate([rr[ok] * m + cc[ok], rr2[ok2] * m + cc2[ok2]])
        key = np.unique(np.concatenate([rows * m + cols, new]))
        rows, cols = np.divmod(key, m)
    else:
        raise RuntimeError("column generation did not converge")
    sel = x > 1e-15
    r, c, mass = rows[sel], cols[sel], x[sel]
    exact = _tree_polish(a, b, r, c)
    if exact is not None:
        mass = exact
        sel = mass > 0
        r, c, mass = r[sel], c[sel], mass[sel]
    order = np.lexsort((c, r))
    return r[order], c[order], mass[order]


def w2(mu0: DiscreteMeasure, mu1: DiscreteMeasure, W: WarpedProduct, tol: float = 1e-8,
       threads: int = 1, dist: np.ndarray | None = None):
    """Quadratic Wasserstein distance and an optimal plan."""
    if len(mu0) == 0 or len(mu1) == 0:
        raise ValueError("empty measure")
    t0, t1 = mu0.total, mu1.total
    if abs(t0 - t1) > 1e-10 * max(t0, t1):
        raise ValueError(f"infeasible marginals: totals {t0} and {t1} differ")
    D = distance_matrix(W, mu0.atoms, mu1.atoms, tol, threads) if dist is None else np.asarray(dist)
    C = D * D
    a, b = mu0.weights, mu1.weights
    if len(a) == len(b) and np.ptp(a) == 0 and np.ptp(b) == 0 and a[0] == b[0]:
        r, c = linear_sum_assignment(C)
        mass = np.full(len(r), a[0])
    else:
        r, c, mass = transport_lp(a, b, C)
    plan = TransportPlan(mu0, mu1, W, np.asarray(r), np.asarray(c), np.asarray(mass), D, tol)
    return math.sqrt(max(plan.cost, 0.0)), plan


# --------------------------------------------------------------------------
# plan diagnostics


@dataclass
class MonotonicityReport:
    worst_violation: float
    violations: int
    trials: int


def cyclical_monotonicity_check(plan: TransportPlan, k: int = 4, trials: int = 1000,
                                seed: int = 0, tol: float = 1e-9) -> MonotonicityReport:
    """Sample ``k``-cycles of support pairs and test the cyclic inequality."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    C = plan.dist**2
    npairs = len(plan.mass)
    kk = min(k, npairs)
    worst, count = 0.0, 0
    if kk < 2:
        return MonotonicityReport(0.0, 0, trials)
    for _ in range(trials):
        idx = rng.choice(npairs, size=kk, replace=False)
        x = plan.src[idx]
        y = plan.tgt[idx]
        lhs = C[x, y].sum()
        rhs = C[x, np.roll(y, -1)].sum()
        v = lhs - rhs
        if v > tol:
            count += 1
        worst = max(worst, v)
    return MonotonicityReport(float(worst), count, trials)


def displacement(plan: TransportPlan, t: float, threads: int = 1) -> DiscreteMeasure:
    """Push each pair's mass to the point at fraction ``t`` of its geodesic."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0:
        a, _ = plan.marginals()
        return DiscreteMeasure(plan.mu0.atoms, a)
    if t == 1.0:
        _, b = plan.marginals()
        return DiscreteMeasure(plan.mu1.atoms, b)
    geos = plan.geodesics(threads)
    pts = [evaluate(g, t) for g in geos]
    return DiscreteMeasure(pts, plan.mass.copy())


# --------------------------------------------------------------------------
# entropy and the CD inequality


def _as_grid(W, grid) -> WarpedGrid:
    if isinstance(grid, WarpedGrid):
        return grid
    if len(grid) == 2:
        return warped_measure(W, grid[0], grid[1])
    return warped_measure(W, grid[0], grid[1], base_bounds=grid[2])


def cell_masses(mu: DiscreteMeasure, G: WarpedGrid) -> np.ndarray:
    """Histogram of ``mu`` on the cells of ``G``; singular atoms are spread
    over their base row in proportion to ``m_C``."""
    rows, cols = G.locate(mu.atoms)
    if np.any(rows < 0):
        raise ValueError("measure has atoms outside the entropy grid")
    nb, nf = G.shape
    M = np.zeros(nb * nf)
    reg = cols >= 0
    if np.any(reg & (cols < 0)):
        raise ValueError("atom outside the fiber grid")
    np.add.at(M, rows[reg] * nf + cols[reg], mu.weights[reg])
    M = M.reshape(nb, nf)
    for i, w in zip(rows[~reg], mu.weights[~reg]):
        rw = G.weights[i]
        if rw.sum() <= 0:
            raise ValueError("mass on cells of zero reference measure")
        M[i] += w * rw / rw.sum()
    return M


def renyi_entropy(mu: DiscreteMeasure, W: WarpedProduct, Nprime: float, grid) -> float:
    """``sum rho^(1 - 1/N') m_C`` with ``rho`` the cell histogram density."""
    if Nprime < 1:
        raise ValueError("N' must be >= 1")
    G = _as_grid(W, grid)
    M = cell_masses(mu, G)
    m = G.weights
    if np.any((M > 1e-15) & (m <= 0)):
        raise ValueError("mass on cells of zero reference measure")
    pos = M > 0
    e = 1.0 - 1.0 / Nprime
    return float(np.sum(M[pos] ** e * m[pos] ** (1.0 - e)))


def _densities_at(mu: DiscreteMeasure, G: WarpedGrid) -> np.ndarray:
    M = cell_masses(mu, G)
    rows, cols = G.locate(mu.atoms)
    out = np.empty(len(mu))
    for k, (i, j) in enumerate(zip(rows, cols)):
        if j >= 0:
            out[k] = M[i, j] / G.weights[i, j]
        else:
            out[k] = M[i].sum() / G.weights[i].sum()
    return out


@dataclass
class CDRow:
    t: float
    lhs: float
    rhs: float

    @property
    def deficit(self) -> float:
        return self.lhs - self.rhs


@dataclass
class CDReport:
    K: float
    N: float
    rows: list
    plan: TransportPlan = field(repr=False)

    @property
    def min_deficit(self) -> float:
        return min(r.deficit for r in self.rows)


def cd_check(W: WarpedProduct, mu0: DiscreteMeasure, mu1: DiscreteMeasure, K: float, N: float,
             times, grid, plan: TransportPlan | None = None, threads: int = 1) -> CDReport:
    """Entropy form of CD(K, N) along the displacement interpolation of an
    exact plan: deficit = LHS - RHS per time."""
    G = _as_grid(W, grid)
    mu0 = mu0.normalized()
    mu1 = mu1.normalized()
    if plan is None:
        _, plan = w2(mu0, mu1, W, threads=threads)
    rho0 = _densities_at(mu0, G)
    rho1 = _densities_at(mu1, G)
    d = plan.dist[plan.src, plan.tgt]
    a0 = rho0[plan.src] ** (-1.0 / N)
    a1 = rho1[plan.tgt] ** (-1.0 / N)
    rows = []
    for t in times:
        t = float(t)
        lhs = renyi_entropy(displacement(plan, t, threads), W, N, G)
        tau0 = np.array([tau(K, N, 1.0 - t, float(x)) for x in d])
        tau1 = np.array([tau(K, N, t, float(x)) for x in d])
        with np.errstate(invalid="ignore"):
            terms = plan.mass * (tau0 * a0 + tau1 * a1)
        terms = np.where(plan.mass > 0, terms, 0.0)
        rows.append(CDRow(t, lhs, float(np.sum(terms))))
    return CDReport(K, N, rows, plan)


# --------------------------------------------------------------------------
# singular set


def distance_to_apex(W: WarpedProduct, P: WarpedPoint) -> float:
    levels = W.f.singular_levels()
    if not levels:
        return math.inf
    r = W.f.radial(np.asarray(P.base, dtype=float))
    return float(min(abs(r - s) for s in levels))


def singular_mass_probe(plan: TransportPlan, W: WarpedProduct, delta: float, n_times: int = 200,
                        threads: int = 1) -> float:
    """Fraction of plan mass whose geodesic comes within ``delta`` of ``f = 0``
    at an interior time."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    levels = W.f.singular_levels()
    if not levels:
        return 0.0
    ts = np.linspace(0.0, 1.0, n_times + 2)[1:-1]
    hit = np.zeros(len(plan.mass), dtype=bool)
    for k, g in enumerate(plan.geodesics(threads)):
        if g.through_singular:
            hit[k] = True
            continue
        base, _ = g.locate(ts)
        r = np.asarray(W.f.radial(base), dtype=float).reshape(-1)
        dmin = min(float(np.min(np.abs(r - s))) for s in levels)
        hit[k] = dmin < delta
    return float(plan.mass[hit].sum() / plan.mass.sum())


# --------------------------------------------------------------------------
# absolutely continuous proxies


def _chart_delta(x, c, period):
    d = np.asarray(x, dtype=float) - c
    if period:
        d = (d + 0.5 * period) % period - 0.5 * period
    return d


def blob_measure(G: WarpedGrid, center, radius: float, k: int = 2, quad: int = 3) -> DiscreteMeasure:
    """Smooth bump ``cos^4`` in chart coordinates as a ``k x k`` sub-lattice of
    atoms in every cell of a 2-dimensional warped grid.

    Each atom sits at its sub-cell centre and carries the ``m_C``-integral of
    the bump over the sub-cell (Gauss-Legendre with ``quad`` nodes per axis),
    so the histogram on ``G`` is exact up to quadrature.
    """
    W = G.W
    if len(G.base_grid.edges) != 1 or len(G.fiber_grid.edges) != 1:
        raise ValueError("blob_measure needs a 1-dimensional base and fiber")
    eb, ef = G.base_grid.edges[0], G.fiber_grid.edges[0]
    pb = 2 * math.pi if G.base_grid.periodic[0] else 0.0
    pf = 2 * math.pi if G.fiber_grid.periodic[0] else 0.0
    scale_b = getattr(W.base, "radius", 1.0) if pb else 1.0
    scale_f = getattr(W.fiber, "radius", 1.0) if pf else 1.0
    xg, wg = np.polynomial.legendre.leggauss(quad)
    u = np.arange(k + 1) / k

    def sub(e):
        lo = (e[:-1, None] + np.diff(e)[:, None] * u[None, :-1]).ravel()
        h = np.repeat(np.diff(e) / k, k)
        nodes = lo[:, None] + 0.5 * h[:, None] * (xg[None, :] + 1.0)
        return lo + 0.5 * h, nodes, 0.5 * h[:, None] * wg[None, :]

    cb, nb_, wb = sub(eb)
    cf, nf_, wf = sub(ef)
    fN = np.broadcast_to(np.asarray(W.f.value(nb_.reshape(-1, 1)), dtype=float).reshape(-1),
                         (nb_.size,)).reshape(nb_.shape) ** W.N
    wb = wb * fN * scale_b
    dens_f = W.fiber._density()
    wf = wf * scale_f * (1.0 if dens_f is None else dens_f(nf_))
    xb = _chart_delta(nb_, center[0], pb) * scale_b
    xf = _chart_delta(nf_, center[1], pf) * scale_f
    rr = np.hypot(xb[:, :, None, None], xf[None, None, :, :]) / radius
    bump = np.where(rr < 1.0, np.cos(0.5 * math.pi * np.minimum(rr, 1.0)) ** 4, 0.0)
    w = np.einsum("ap,apcq,cq->ac", wb, bump, wf)
    i, j = np.nonzero(w > 1e-14 * w.max())
    if len(i) == 0:
        raise ValueError("blob misses the grid")
    atoms = [W.point([cb[a]], [cf[b]]) for a, b in zip(i, j)]
    return DiscreteMeasure(atoms, w[i, j] / w[i, j].sum(), ac_proxy=True)
