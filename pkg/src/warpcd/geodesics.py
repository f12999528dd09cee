"""Distances and minimizing geodesics in warped products.

The workhorse is the two-dimensional strip ``B x_f [0, theta]`` over an
interval base.  A product distance between ``(p, x)`` and ``(q, y)`` only
depends on the fiber through ``theta = d_F(x, y)``, so every product problem is
reduced to a strip problem and the answer is lifted back along a minimizing
fiber geodesic.

Strip solver stages:

1. grid: Dijkstra on a lattice over ``[lo, hi] x [0, theta]`` with 16-neighbor
   edges, followed by smoothing of the lattice path (minimization of the
   discrete action of a 200-vertex polyline).
2. refinement: shooting for the geodesic equation.  Time is rescaled by
   ``ds = f dtau``, which keeps the equations regular near ``f = 0``; the
   unknown is the launch angle ``psi`` which fixes the Clairaut constant
   ``k = f(p) sin(psi)``.  Near-apex failures fall back to polyline action
   minimization with Richardson extrapolation.

Routes through the singular set ``f = 0`` are always compared against the
smooth candidate.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .kernels import cn, sn
from .spaces import FactorGeodesic, Interval
from .warp import ZERO_TOL, WarpedPoint, WarpedProduct, WarpingFunction, cone_distance_radial

DEFAULT_GRID = (400, 400)
SMOOTH_VERTICES = 200
STALL_F = 1e-6      # shooting gives up where f drops below this
SCAN_EPS = 1e-4     # launch-angle scan stays this far from 0 and pi
_GL3_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL3_W = np.array([5.0, 8.0, 5.0]) / 9.0
_OFFSETS = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1),
            (1, 2), (1, -2), (-1, 2), (-1, -2), (2, 1), (2, -1), (-2, 1), (-2, -1)]


class NonConvergence(RuntimeError):
    """Raised only when a caller insists on a converged answer."""


# --------------------------------------------------------------------------
# data types


@dataclass
class StripProblem:
    """Endpoints ``(p, 0)`` and ``(q, theta)`` in ``B x_f [0, theta]``."""

    base: Interval
    f: WarpingFunction
    p: float
    q: float
    theta: float

    def __post_init__(self):
        if not isinstance(self.base, Interval):
            raise ValueError("strip problems need an interval base")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        self.p = float(self.base.canonical(self.p)[0])
        self.q = float(self.base.canonical(self.q)[0])
        self.theta = float(self.theta)

    def fval(self, r):
        return self.f.profile.g(r)

    def fder(self, r):
        return self.f.profile.g1(r)


@dataclass
class GeodesicPath:
    """Constant-speed path parameterized by ``t`` in ``[0, 1]``.

    ``locate(t)`` returns base chart coordinates and the fiber arclength
    ``phi`` travelled along ``fiber_geodesic``.  ``clairaut`` is
    ``|d beta/dt|^2 f^4`` and ``energy`` is ``E = L^2/2``.
    """

    length: float
    clairaut: float
    energy: float
    through_singular: bool
    locate: Callable = field(repr=False)
    method: str = ""
    W: WarpedProduct | None = field(default=None, repr=False)
    fiber_geodesic: FactorGeodesic | None = field(default=None, repr=False)
    converged: bool = True
    upper_bound_only: bool = False
    nonunique: bool = False
    grid_length: float | None = None
    grid_bound: float | None = None
    residuals: dict = field(default_factory=dict)
    theta: float = 0.0

    def point(self, t: float) -> WarpedPoint:
        return evaluate(self, t)

    def samples(self, m: int = 101) -> list:
        ts = np.linspace(0.0, 1.0, m)
        return [(float(t), evaluate(self, float(t))) for t in ts]


def evaluate(gamma: GeodesicPath, t: float) -> WarpedPoint:
    """Point at parameter ``t``; singular points lose their fiber coordinate."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    base, phi = gamma.locate(np.array([float(t)]))
    b = base[0]
    if gamma.W is None:
        return WarpedPoint(tuple(float(x) for x in b), (float(phi[0]),))
    W = gamma.W
    if W.f_at(b) <= ZERO_TOL:
        return W.point(b)
    x = gamma.fiber_geodesic.point(float(phi[0]))
    return W.point(b, x)


# --------------------------------------------------------------------------
# grid stage


def _seg_length(g, ra, pa, rb, pb):
    """Gauss-Legendre length of the chart-straight segment (upper-bound edge weight)."""
    dr = rb - ra
    dp = pb - pa
    out = 0.0
    for x, w in zip(_GL3_X, _GL3_W):
        rm = ra + 0.5 * (1.0 + x) * dr
        out = out + 0.5 * w * np.sqrt(dr * dr + (g(rm) * dp) ** 2)
    return out


def _strip_range(P: StripProblem) -> tuple:
    """Base interval that must contain every minimizer, from an explicit upper bound."""
    g = P.fval
    U = abs(P.p - P.q) + P.theta * min(g(P.p), g(P.q))
    for s in P.f.singular_levels():
        U = min(U, abs(P.p - s) + abs(s - P.q))
    lo = max(P.base.a, 0.5 * (P.p + P.q - U))
    hi = min(P.base.b, 0.5 * (P.p + P.q + U))
    pad = 1e-9 * max(1.0, U)
    lo = max(P.base.a, min(lo, P.p, P.q) - pad)
    hi = min(P.base.b, max(hi, P.p, P.q) + pad)
    return lo, hi, U


def grid_path(P: StripProblem, grid=DEFAULT_GRID):
    """Dijkstra lattice path; returns (bound, r_vertices, phi_vertices)."""
    nr, nphi_max = grid
    lo, hi, _ = _strip_range(P)
    if hi - lo <= 1e-14:
        hi = lo + 1e-9
    r = np.linspace(lo, hi, nr + 1)
    ip = int(np.argmin(np.abs(r - P.p)))
    r[ip] = P.p
    iq = int(np.argmin(np.abs(r - P.q)))
    if iq == ip and P.q != P.p:
        iq = ip + 1 if ip + 1 <= nr else ip - 1
    r[iq] = P.q
    order = np.argsort(r, kind="stable")
    r = r[order]
    ip = int(np.where(order == ip)[0][0])
    iq = int(np.where(order == iq)[0][0])
    g = lambda x: P.fval(np.asarray(x, dtype=float))
    dr = (hi - lo) / nr
    fmax = float(np.max(g(r)))
    nphi = int(min(nphi_max, max(4, math.ceil(P.theta * fmax / dr))))
    phi = np.linspace(0.0, P.theta, nphi + 1)
    dphi = phi[1] - phi[0]
    m = nphi + 1
    idx = np.arange((nr + 1) * m).reshape(nr + 1, m)
    node = idx.copy()
    sing = np.where(g(r) <= ZERO_TOL)[0]
    for i in sing:
        node[i, :] = idx[i, 0]
    rows, cols, ws = [], [], []
    for di, dj in _OFFSETS:
        i0, i1 = max(0, -di), nr + 1 - max(0, di)
        j0, j1 = max(0, -dj), m - max(0, dj)
        if i1 <= i0 or j1 <= j0:
            continue
        w = _seg_length(g, r[i0:i1], 0.0, r[i0 + di:i1 + di], dj * dphi)
        src = node[i0:i1, j0:j1].ravel()
        dst = node[i0 + di:i1 + di, j0 + dj:j1 + dj].ravel()
        wt = np.repeat(w, j1 - j0)
        keep = src != dst
        rows.append(src[keep])
        cols.append(dst[keep])
        ws.append(wt[keep])
    G = csr_matrix((np.concatenate(ws), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(idx.size, idx.size))
    s_node, t_node = node[ip, 0], node[iq, m - 1]
    dist, pred = dijkstra(G, indices=s_node, return_predecessors=True)
    bound = float(dist[t_node])
    seq = [t_node]
    while seq[-1] != s_node:
        seq.append(pred[seq[-1]])
    seq = seq[::-1]
    pr, pp = [], []
    sing_nodes = set(int(node[i, 0]) for i in sing)
    for k, nd in enumerate(seq):
        i, j = divmod(int(nd), m)
        if int(nd) in sing_nodes:
            # a collapsed row: enter at the incoming angle, leave at the outgoing one
            before = divmod(int(seq[k - 1]), m)[1] if k > 0 else 0
            after = divmod(int(seq[k + 1]), m)[1] if k + 1 < len(seq) else nphi
            pr += [r[i], r[i]]
            pp += [phi[before], phi[after]]
        else:
            pr.append(r[i])
            pp.append(phi[j])
    pr[0], pp[0], pr[-1], pp[-1] = P.p, 0.0, P.q, P.theta
    return bound, np.asarray(pr), np.asarray(pp), (lo, hi)


def smooth_polyline(P: StripProblem, pr, pp, M=SMOOTH_VERTICES, bounds=None):
    """Minimize the discrete action of an ``M``-segment polyline seeded by ``(pr, pp)``.

    Returns (length, r, phi).  Lengths use midpoint values of ``f``.
    """
    lo, hi = bounds if bounds is not None else _strip_range(P)[:2]
    g, g1 = P.fval, P.fder
    mids = 0.5 * (pr[1:] + pr[:-1])
    seg = np.hypot(np.diff(pr), np.diff(pp) * g(mids))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        s = np.linspace(0.0, 1.0, len(pr))
    u = np.linspace(0.0, s[-1], M + 1)
    r = np.interp(u, s, pr)
    ph = np.interp(u, s, pp)
    r0, p0, r1, p1 = P.p, 0.0, P.q, P.theta

    def unpack(x):
        rr = np.concatenate([[r0], x[:M - 1], [r1]])
        qq = np.concatenate([[p0], x[M - 1:], [p1]])
        return rr, qq

    def energy(x):
        rr, qq = unpack(x)
        dr, dp = np.diff(rr), np.diff(qq)
        mid = 0.5 * (rr[1:] + rr[:-1])
        fm, fpm = g(mid), g1(mid)
        e = np.sum(dr * dr + fm * fm * dp * dp)
        gr = np.zeros(M + 1)
        gp = np.zeros(M + 1)
        gr[1:] += 2 * dr
        gr[:-1] -= 2 * dr
        tt = fm * fpm * dp * dp
        gr[1:] += tt
        gr[:-1] += tt
        gp[1:] += 2 * fm * fm * dp
        gp[:-1] -= 2 * fm * fm * dp
        return e * M, np.concatenate([gr[1:-1], gp[1:-1]]) * M

    x0 = np.concatenate([r[1:-1], ph[1:-1]])
    bnds = [(lo, hi)] * (M - 1) + [(None, None)] * (M - 1)
    res = minimize(energy, x0, jac=True, method="L-BFGS-B", bounds=bnds,
                   options=dict(maxiter=3000, ftol=1e-13, gtol=1e-10))
    rr, qq = unpack(res.x)
    mid = 0.5 * (rr[1:] + rr[:-1])
    L = float(np.sum(np.hypot(np.diff(rr), g(mid) * np.diff(qq))))
    return L, rr, qq


# --------------------------------------------------------------------------
# shooting


class _Shooter:
    """Geodesic equation in rescaled time ``ds = f dtau``.

    With unit speed, ``dr/ds = v`` and ``dphi/ds = k/f^2``; in ``tau``:
    ``dr = v f``, ``dv = k^2 f'/f^2``, ``dphi = k/f``, ``ds = f``.
    """

    def __init__(self, P: StripProblem, lo: float, hi: float):
        self.g = P.f.profile.g
        self.g1 = P.f.profile.g1
        self.p, self.q, self.theta = P.p, P.q, P.theta
        self.lo, self.hi = lo, hi

    def _step(self, r, v, ph, s, k, h):
        g, g1 = self.g, self.g1

        def rhs(r, v):
            f = g(r)
            return v * f, k * k * g1(r) / (f * f), k / f, f

        a1 = rhs(r, v)
        a2 = rhs(r + 0.5 * h * a1[0], v + 0.5 * h * a1[1])
        a3 = rhs(r + 0.5 * h * a2[0], v + 0.5 * h * a2[1])
        a4 = rhs(r + h * a3[0], v + h * a3[1])
        c = h / 6.0
        return (r + c * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0]),
                v + c * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1]),
                ph + c * (a1[2] + 2 * a2[2] + 2 * a3[2] + a4[2]),
                s + c * (a1[3] + 2 * a2[3] + 2 * a3[3] + a4[3]))

    def launch(self, psi):
        return self.g(self.p) * math.sin(psi), math.cos(psi)

    def run(self, psi, dtau, nmax, record=False):
        """Integrate until ``phi`` reaches ``theta``.

        Returns (status, r_hit, s_hit, trajectory); status is ``hit``,
        ``high`` or ``low`` (left the admissible range above / below).
        """
        k, v = self.launch(psi)
        r, ph, s = self.p, 0.0, 0.0
        traj = [(0.0, r, v, ph, s)] if record else None
        lo, hi, theta, g = self.lo, self.hi, self.theta, self.g
        tau = 0.0
        for _ in range(nmax):
            try:
                nr, nv, nph, ns = self._step(r, v, ph, s, k, dtau)
            except OverflowError:
                return "high", math.inf, s, traj
            if nph >= theta:
                def resid(h):
                    return self._step(r, v, ph, s, k, h)[2] - theta
                h = brentq(resid, 0.0, dtau, xtol=1e-16, rtol=1e-15)
                nr, nv, nph, ns = self._step(r, v, ph, s, k, h)
                if record:
                    traj.append((tau + h, nr, nv, theta, ns))
                if nr < lo - 1e-9 or nr > hi + 1e-9:
                    return ("low" if nr < lo else "high"), nr, ns, traj
                return "hit", nr, ns, traj
            if not (lo <= nr <= hi) or not math.isfinite(nr):
                return ("low" if nr < 0.5 * (lo + hi) else "high"), nr, ns, traj
            if g(nr) < STALL_F:
                return "stall", nr, ns, traj
            r, v, ph, s = nr, nv, nph, ns
            tau += dtau
            if record:
                traj.append((tau, r, v, ph, s))
        return ("high" if r > self.p else "low"), r, s, traj

    def miss(self, psi, dtau, nmax):
        st, r, s, _ = self.run(psi, dtau, nmax)
        if st == "hit":
            return r - self.q
        if st == "stall":
            return math.nan
        return math.inf if st == "high" else -math.inf

    def roots(self, dtau, nmax, n_scan=12):
        """All launch angles on a scan grid where the miss distance changes sign."""
        eps = SCAN_EPS
        psis = np.linspace(eps, math.pi - eps, n_scan + 1)
        vals = [self.miss(float(x), dtau, nmax) for x in psis]
        finite = [v for v in vals if math.isfinite(v)]
        known = [v for v in vals if not math.isnan(v)]
        monotone = all(not (b > a) for a, b in zip(known, known[1:]))
        out = []
        for i in range(n_scan):
            a, b, ga, gb = float(psis[i]), float(psis[i + 1]), vals[i], vals[i + 1]
            if ga == 0.0:
                out.append(a)
                continue
            if not ((ga > 0 > gb) or (ga < 0 < gb)):
                continue
            for _ in range(80):
                if math.isfinite(ga) and math.isfinite(gb):
                    break
                mid = 0.5 * (a + b)
                gm = self.miss(mid, dtau, nmax)
                if math.isnan(gm):
                    break
                if (gm > 0) == (ga > 0):
                    a, ga = mid, gm
                else:
                    b, gb = mid, gm
            if not (math.isfinite(ga) and math.isfinite(gb)):
                continue
            out.append(brentq(lambda x: self.miss(x, dtau, nmax), a, b, xtol=1e-15, rtol=1e-15))
        if vals[-1] == 0.0:
            out.append(float(psis[-1]))
        return out, monotone, len(finite)


def _local_root(sh, psi, dtau, nmax):
    """Root of the miss function near a previous solution."""
    d = 1e-6
    while d < 0.5:
        a, b = max(psi - d, 1e-9), min(psi + d, math.pi - 1e-9)
        ga, gb = sh.miss(a, dtau, nmax), sh.miss(b, dtau, nmax)
        if math.isnan(ga) or math.isnan(gb):
            return None
        if math.isfinite(ga) and math.isfinite(gb) and ga * gb <= 0:
            return brentq(lambda x: sh.miss(x, dtau, nmax), a, b, xtol=1e-15, rtol=1e-15)
        d *= 8
    return None


def _shoot(P: StripProblem, lo, hi, tau_est, tol, n0=400, max_doublings=5):
    sh = _Shooter(P, lo, hi)
    n = n0
    dtau = tau_est / n
    nmax = 60 * n
    roots, monotone, _ = sh.roots(dtau, nmax)
    best = None
    for psi in roots:
        st, r, s, traj = sh.run(psi, dtau, nmax, record=True)
        if st == "hit" and (best is None or s < best[1]):
            best = (psi, s, traj)
    if best is None:
        return None
    for _ in range(max_doublings):
        n *= 2
        dtau = tau_est / n
        nmax = 60 * n
        psi = _local_root(sh, best[0], dtau, nmax)
        if psi is None:
            break
        st, r, s, traj = sh.run(psi, dtau, nmax, record=True)
        if st != "hit":
            break
        prev, best = best, (psi, s, traj)
        if abs(s - prev[1]) < 0.1 * tol * max(1.0, s):
            return dict(psi=psi, length=s, traj=traj, dtau=dtau, shooter=sh,
                        monotone=monotone, steps=n, n_roots=len(roots))
    return dict(psi=best[0], length=best[1], traj=best[2], dtau=dtau, shooter=sh,
                monotone=monotone, steps=n, n_roots=len(roots), unconverged=True)


def _ode_path(P: StripProblem, sol) -> GeodesicPath:
    sh = sol["shooter"]
    traj = np.array(sol["traj"])
    L = sol["length"]
    k, _ = sh.launch(sol["psi"])
    tau_, r_, v_, ph_, s_ = traj.T
    # energy check in the t-parameterization: 1/2 v_t^2 + c/(2 f^2) = E
    f_ = np.array([sh.g(float(x)) for x in r_])
    E = 0.5 * L * L
    c = (L * k) ** 2
    e_res = float(np.max(np.abs(0.5 * L * L * (v_ * v_ + (k / f_) ** 2) - E)))

    def locate(ts):
        ts = np.asarray(ts, dtype=float)
        rs = np.empty(len(ts))
        ps = np.empty(len(ts))
        for n_, t in enumerate(ts):
            target = t * L
            i = int(np.searchsorted(s_, target, side="right") - 1)
            i = min(max(i, 0), len(s_) - 1)
            if i == len(s_) - 1 or target <= s_[i]:
                rs[n_], ps[n_] = r_[i], ph_[i]
                continue
            r0, v0, p0, s0 = r_[i], v_[i], ph_[i], s_[i]
            hmax = tau_[i + 1] - tau_[i]
            h = min(max((target - s0) / max(sh.g(float(r0)), 1e-300), 0.0), hmax)
            for _ in range(30):
                rr, vv, pp, ss = sh._step(r0, v0, p0, s0, k, h)
                fz = sh.g(float(rr))
                dh = (ss - target) / max(fz, 1e-300)
                h = min(max(h - dh, 0.0), hmax)
                if abs(dh) <= 1e-15 * max(1.0, hmax):
                    break
            rr, vv, pp, ss = sh._step(r0, v0, p0, s0, k, h)
            rs[n_], ps[n_] = rr, min(pp, P.theta)
        return rs[:, None], ps

    return GeodesicPath(L, c, E, False, locate, method="shooting", theta=P.theta,
                        residuals={"energy": e_res, "clairaut": 0.0,
                                   "steps": sol["steps"], "monotone": sol["monotone"]},
                        converged=not sol.get("unconverged", False))


def _polyline_path(P, rr, qq, L, method, converged=True) -> GeodesicPath:
    mid = 0.5 * (rr[1:] + rr[:-1])
    seg = np.hypot(np.diff(rr), P.fval(mid) * np.diff(qq))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    tot = s[-1] if s[-1] > 0 else 1.0

    def locate(ts):
        u = np.asarray(ts, dtype=float) * tot
        return np.interp(u, s, rr)[:, None], np.interp(u, s, qq)

    # Clairaut constant from the polyline: f^2 dphi/ds averaged
    fm = P.fval(mid)
    with np.errstate(divide="ignore", invalid="ignore"):
        kk = np.where(seg > 0, fm * fm * np.diff(qq) / seg, 0.0)
    k = float(np.median(kk)) if len(kk) else 0.0
    return GeodesicPath(L, (L * k) ** 2, 0.5 * L * L, False, locate, method=method,
                        theta=P.theta, converged=converged)


def _linear_path(p, q, theta, L, through=False, method="closed-form", c=0.0):
    def locate(ts):
        ts = np.asarray(ts, dtype=float)
        return (p + ts * (q - p))[:, None], ts * theta
    return GeodesicPath(L, c, 0.5 * L * L, through, locate, method=method, theta=theta)


# --------------------------------------------------------------------------
# strip solver


def singular_route(P: StripProblem, force: bool = False):
    """Route through the singular set: two horizontal legs joined at ``f = 0``.

    Returns ``None`` when ``f`` has no zeros, or (unless ``force``) when the
    fiber separation is below the separation at which such a route can win.
    """
    levels = P.f.singular_levels()
    if not levels:
        return None
    best = None
    for s in levels:
        d = abs(P.p - s) + abs(s - P.q)
        slope = abs(P.f.profile.g1(float(s)))
        crit = math.pi / slope if slope > 0 else math.inf
        if not force and P.theta < crit - 1e-12:
            continue
        if best is None or d < best[0]:
            best = (d, s)
    if best is None:
        return None
    L, s = best
    p, q, theta = P.p, P.q, P.theta
    t_s = abs(p - s) / L if L > 0 else 0.5

    def locate(ts):
        ts = np.asarray(ts, dtype=float)
        if L == 0:
            return np.full((len(ts), 1), s), np.where(ts < 0.5, 0.0, theta)
        first = ts <= t_s
        r = np.where(first, p + (s - p) * np.divide(ts, t_s, where=t_s > 0, out=np.zeros_like(ts)),
                     s + (q - s) * np.divide(ts - t_s, 1 - t_s, where=t_s < 1, out=np.ones_like(ts)))
        return r[:, None], np.where(first, 0.0, theta)

    return L, GeodesicPath(L, 0.0, 0.5 * L * L, True, locate, method="singular-route", theta=theta)


def _tau_estimate(P, rr, qq):
    mid = 0.5 * (rr[1:] + rr[:-1])
    fm = P.fval(mid)
    seg = np.hypot(np.diff(rr), fm * np.diff(qq))
    L = float(seg.sum())
    fmax = float(np.max(P.fval(rr)))
    with np.errstate(divide="ignore"):
        tau = float(np.sum(seg / np.maximum(fm, 1e-300)))
    return min(tau, 50.0 * L / max(fmax, 1e-300)) if L > 0 else 1.0


def solve_strip(P: StripProblem, tol: float = 1e-8, grid=DEFAULT_GRID, refine: bool = True):
    """Distance and minimizing geodesic between ``(p, 0)`` and ``(q, theta)``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = P.fval
    fp, fq = float(g(P.p)), float(g(P.q))
    # trivial configurations
    if P.theta == 0.0 or fp <= ZERO_TOL or fq <= ZERO_TOL:
        L = abs(P.q - P.p)
        path = _linear_path(P.p, P.q, P.theta if fp > ZERO_TOL else P.theta, L, method="horizontal")
        if fp <= ZERO_TOL:
            base_locate = path.locate
            path.locate = lambda ts: (base_locate(ts)[0], np.full(len(np.asarray(ts)), P.theta))
        elif fq <= ZERO_TOL or P.theta == 0.0:
            base_locate = path.locate
            path.locate = lambda ts: (base_locate(ts)[0], np.zeros(len(np.asarray(ts))))
        path.through_singular = fp <= ZERO_TOL or fq <= ZERO_TOL
        path.grid_length = path.grid_bound = L
        return L, path
    if P.f.is_constant:
        c0 = P.f.profile.params["c"]
        L = math.hypot(P.q - P.p, c0 * P.theta)
        k = c0 * c0 * P.theta / L if L > 0 else 0.0
        path = _linear_path(P.p, P.q, P.theta, L, c=(L * k) ** 2)
        path.grid_length = path.grid_bound = L
        return L, path
    if P.p == P.q and P.theta * fp <= 1e-14:
        return 0.0, _linear_path(P.p, P.q, P.theta, 0.0)

    sing = singular_route(P, force=True)
    bound, pr, pp, (lo, hi) = grid_path(P, grid)
    L_grid, rr, qq = smooth_polyline(P, pr, pp, bounds=(lo, hi))
    grid_len = min(L_grid, bound)
    if sing is not None:
        grid_len = min(grid_len, sing[0])

    def finish(L, path):
        path.grid_length = grid_len
        path.grid_bound = bound
        return L, path

    if not refine:
        path = _polyline_path(P, rr, qq, L_grid, "grid")
        if sing is not None and sing[0] <= L_grid:
            return finish(sing[0], sing[1])
        return finish(grid_len, path)

    sol = _shoot(P, lo, hi, _tau_estimate(P, rr, qq), tol)
    if sol is not None and not sol.get("unconverged") and sol["length"] <= bound * (1 + 1e-6) + tol:
        L, path = sol["length"], _ode_path(P, sol)
        if sing is not None and sing[0] <= L:
            return finish(sing[0], sing[1])
        return finish(L, path)

    if sol is None and sing is not None and sing[0] <= L_grid * (1 + 1e-3):
        # no smooth geodesic reaches the target: the apex route is the minimizer
        return finish(sing[0], sing[1])
    # fallback: polyline action minimization at two resolutions
    L1, r1, q1 = smooth_polyline(P, rr, qq, M=2 * SMOOTH_VERTICES, bounds=(lo, hi))
    L2, r2, q2 = smooth_polyline(P, r1, q1, M=4 * SMOOTH_VERTICES, bounds=(lo, hi))
    L = (4 * L2 - L1) / 3.0
    converged = abs(L2 - L1) <= 10 * tol * max(1.0, L)
    if sing is not None and sing[0] <= L + tol * max(1.0, L):
        return finish(sing[0], sing[1])
    path = _polyline_path(P, r2, q2, L, "action-descent", converged=converged)
    path.upper_bound_only = not converged
    return finish(L, path)


# --------------------------------------------------------------------------
# closed forms


def _cone_locate(K, s, t, theta, D):
    """Exact geodesic in the two-dimensional model cone (theta < pi)."""
    if K == 0:
        P0 = np.array([s, 0.0])
        P1 = t * np.array([math.cos(theta), math.sin(theta)])

        def locate(ts):
            ts = np.asarray(ts, dtype=float)[:, None]
            X = (1 - ts) * P0 + ts * P1
            return np.hypot(X[:, 0], X[:, 1])[:, None], np.clip(np.arctan2(X[:, 1], X[:, 0]), 0, theta)
        return locate
    if K > 0:
        rk = math.sqrt(K)

        def emb(r, ph):
            a = rk * r
            return np.array([math.sin(a) * math.cos(ph), math.sin(a) * math.sin(ph), math.cos(a)])

        X0, X1 = emb(s, 0.0), emb(t, theta)
        ang = rk * D
        U = X1 - (X0 @ X1) * X0
        nu = np.linalg.norm(U)
        U = U / nu if nu > 0 else U

        def locate(ts):
            ts = np.asarray(ts, dtype=float)[:, None]
            X = np.cos(ts * ang) * X0 + np.sin(ts * ang) * U
            rho = np.hypot(X[:, 0], X[:, 1])
            return (np.arctan2(rho, X[:, 2]) / rk)[:, None], np.clip(np.arctan2(X[:, 1], X[:, 0]), 0, theta)
        return locate
    rk = math.sqrt(-K)

    def emb(r, ph):
        a = rk * r
        return np.array([math.cosh(a), math.sinh(a) * math.cos(ph), math.sinh(a) * math.sin(ph)])

    X0, X1 = emb(s, 0.0), emb(t, theta)
    dl = rk * D

    def locate(ts):
        ts = np.asarray(ts, dtype=float)[:, None]
        if dl == 0:
            X = np.repeat(X0[None, :], len(ts), axis=0)
        else:
            X = (np.sinh((1 - ts) * dl) * X0 + np.sinh(ts * dl) * X1) / math.sinh(dl)
        rho = np.hypot(X[:, 1], X[:, 2])
        return (np.arcsinh(rho) / rk)[:, None], np.clip(np.arctan2(X[:, 2], X[:, 1]), 0, theta)
    return locate


def _clairaut_numeric(locate, prof, L):
    """``c = (L k)^2`` with ``k = f^2 dphi/ds`` measured at the path midpoint."""
    if L == 0:
        return 0.0
    h = 1e-6
    (r,), ph = locate(np.array([0.5 - h, 0.5 + h]))[0].T, locate(np.array([0.5 - h, 0.5 + h]))[1]
    rm = float(locate(np.array([0.5]))[0][0, 0])
    dphi_dt = (ph[1] - ph[0]) / (2 * h)
    return float((prof.g(rm) ** 2 * dphi_dt) ** 2)


def cone_strip(K: float, P: StripProblem):
    """Closed-form strip geodesic on a K-cone."""
    s, t, theta = P.p, P.q, P.theta
    fs, ft = float(P.fval(s)), float(P.fval(t))
    if theta >= math.pi or fs <= ZERO_TOL or ft <= ZERO_TOL or theta == 0:
        if theta >= math.pi and fs > ZERO_TOL and ft > ZERO_TOL:
            L, path = singular_route(P, force=True)
            return L, path
        return solve_strip(P)
    D = cone_distance_radial(K, s, t, theta)
    loc = _cone_locate(K, s, t, theta, D)
    c = _clairaut_numeric(loc, P.f.profile, D)
    return D, GeodesicPath(D, c, 0.5 * D * D, False, loc, method="cone-closed-form", theta=theta)


# --------------------------------------------------------------------------
# products


def _const_fiber(x):
    x = np.asarray(x, dtype=float)
    return FactorGeodesic(0.0, x, x, lambda s: np.broadcast_to(x, np.shape(s) + x.shape).copy())


def _pick_fiber_geodesic(W, a, b):
    if a.fiber is None and b.fiber is None:
        return None, 0.0, False
    if a.fiber is None:
        return _const_fiber(b.fiber), 0.0, False
    if b.fiber is None:
        return _const_fiber(a.fiber), 0.0, False
    geos = W.fiber.geodesics(a.fiber, b.fiber)
    g = geos[0]
    return g, g.length, len(geos) > 1 or g.nonunique


def product_distance(W: WarpedProduct, a: WarpedPoint, b: WarpedPoint, tol: float = 1e-8,
                     method: str = "auto", grid=DEFAULT_GRID):
    """Distance and minimizing geodesic between two warped points.

    ``method``: ``auto`` uses exact closed forms for K-cones and constant
    warping functions; ``solver`` always runs the strip solver.
    """
    a = W.canonicalize(a)
    b = W.canonicalize(b)
    gF, theta, nonunique = _pick_fiber_geodesic(W, a, b)
    if W.f.is_constant or not isinstance(W.base, Interval):
        if not W.f.is_constant:
            raise ValueError("non-constant warping needs an interval base")
        c0 = W.f.profile.params["c"]
        gB = W.base.geodesics(a.base, b.base)[0]
        dB = gB.length
        L = math.hypot(dB, c0 * theta)

        def locate(ts):
            ts = np.asarray(ts, dtype=float)
            return np.atleast_2d(gB.point(ts * dB)).reshape(len(ts), -1), ts * theta

        k = c0 * c0 * theta / L if L > 0 else 0.0
        path = GeodesicPath(L, (L * k) ** 2, 0.5 * L * L, False, locate, method="product-closed-form",
                            W=W, fiber_geodesic=gF, nonunique=nonunique, theta=theta)
        path.grid_length = path.grid_bound = L
        return L, path
    P = StripProblem(W.base, W.f, a.base[0], b.base[0], theta)
    K = W.cone_curvature()
    if method == "auto" and K is not None:
        L, path = cone_strip(K, P)
    elif method in ("auto", "solver"):
        L, path = solve_strip(P, tol=tol, grid=grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    path.W = W
    path.fiber_geodesic = gF if gF is not None else _const_fiber(np.zeros(W.fiber.chart_dim))
    path.nonunique = path.nonunique or nonunique
    return L, path


def distance_matrix(W: WarpedProduct, A, B, tol: float = 1e-8, threads: int = 1) -> np.ndarray:
    """Pairwise product distances; vectorized for cones and constant warping."""
    A = [W.canonicalize(p) for p in A]
    B = [W.canonicalize(p) for p in B]
    K = W.cone_curvature()
    if K is not None or W.f.is_constant:
        fiber_dim = W.fiber.chart_dim
        FA = np.array([p.fiber if p.fiber is not None else (0.0,) * fiber_dim for p in A], dtype=float)
        FB = np.array([p.fiber if p.fiber is not None else (0.0,) * fiber_dim for p in B], dtype=float)
        dF = W.fiber.distance(FA[:, None, :], FB[None, :, :])
        singA = np.array([p.fiber is None for p in A])
        singB = np.array([p.fiber is None for p in B])
        dF = np.where(singA[:, None] | singB[None, :], 0.0, dF)
        if K is not None:
            ra = np.array([p.base[0] for p in A])
            rb = np.array([p.base[0] for p in B])
            return np.asarray(cone_distance_radial(K, ra[:, None], rb[None, :], dF))
        BA = np.array([p.base for p in A], dtype=float)
        BB = np.array([p.base for p in B], dtype=float)
        dB = W.base.distance(BA[:, None, :], BB[None, :, :])
        c0 = W.f.profile.params["c"]
        return np.hypot(dB, c0 * dF)
    pairs = [(i, j) for i in range(len(A)) for j in range(len(B))]
    vals = parallel_map(lambda ij: product_distance(W, A[ij[0]], B[ij[1]], tol)[0], pairs, threads)
    return np.array(vals, dtype=float).reshape(len(A), len(B))


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map, optionally over a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
