"""Reproducible CD and singular-set experiments shared by the CLI and tests.

Every routine is a pure function of its arguments and seed; results are
plain dataclasses whose ``rows()`` feed the CSV writers.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .spaces import Circle, Interval, Sphere
from .transport import (DiscreteMeasure, blob_measure, cd_check, singular_mass_probe, w2)
from .warp import (WarpedProduct, WarpingFunction, const_profile, k_cone, sin_profile,
                   warped_measure)
from .geodesics import distance_matrix

TIMES = (0.25, 0.5, 0.75)


def flat_torus() -> WarpedProduct:
    C = Circle(1.0)
    return WarpedProduct(C, Circle(1.0), WarpingFunction(C, const_profile(1.0)), 1.0)


def translate(W: WarpedProduct, mu: DiscreteMeasure, v) -> DiscreteMeasure:
    pts = [W.point([p.base[0] + v[0]], [p.fiber[0] + v[1]]) for p in mu.atoms]
    return DiscreteMeasure(pts, mu.weights.copy(), mu.ac_proxy)


# --------------------------------------------------------------------------
# halving study


@dataclass
class HalvingStudy:
    """Deficits per (pair, level, t) with the grid-halving error estimate.

    ``eps[i]`` is the largest change of any deficit between levels ``i`` and
    ``i + 1``.  If the changes shrink at least geometrically by 2 the error of
    level ``i`` is bounded by the tail sum ``2 eps[i]``, and the finest level's
    by ``eps[-1]``; these bounds are the per-level ``eps_disc``.
    """

    levels: list
    times: tuple
    deficits: np.ndarray  # (pairs, levels, times)
    params: list = field(default_factory=list)

    @property
    def eps(self) -> np.ndarray:
        return np.abs(np.diff(self.deficits, axis=1)).max(axis=(0, 2))

    @property
    def shrink(self) -> np.ndarray:
        e = self.eps
        with np.errstate(divide="ignore", invalid="ignore"):
            return e[:-1] / e[1:]

    def tolerance(self) -> np.ndarray:
        e = self.eps
        return np.append(2.0 * e, e[-1])

    def deficits_ok(self) -> bool:
        tol = self.tolerance()
        return bool(np.all(self.deficits.min(axis=(0, 2)) >= -tol))

    def shrink_ok(self, factor: float = 2.0) -> bool:
        return bool(np.all(self.shrink >= factor))

    def rows(self):
        tol = self.tolerance()
        for p, params in enumerate(self.params):
            for li, lev in enumerate(self.levels):
                for ti, t in enumerate(self.times):
                    yield {"pair": p, "level": lev, "t": t, "deficit": self.deficits[p, li, ti],
                           "eps_disc": tol[li], **params}


def positive_control(seed: int = 0, n_pairs: int = 3, levels=(12, 24, 48), k: int = 2,
                     times=TIMES, threads: int = 1) -> HalvingStudy:
    """CD(0, 2) on the flat torus for seeded blobs and their translates."""
    W = flat_torus()
    rng = np.random.default_rng(seed)
    params = []
    for _ in range(n_pairs):
        c = rng.uniform(0.0, 2 * math.pi, 2)
        v = rng.uniform(-1.2, 1.2, 2)
        R = rng.uniform(0.8, 1.2)
        params.append({"c_base": c[0], "c_fiber": c[1], "v_base": v[0], "v_fiber": v[1], "radius": R})
    D = np.zeros((n_pairs, len(levels), len(times)))
    for p, pr in enumerate(params):
        for li, n in enumerate(levels):
            G = warped_measure(W, n, n)
            m0 = blob_measure(G, (pr["c_base"], pr["c_fiber"]), pr["radius"], k)
            m1 = translate(W, m0, (pr["v_base"], pr["v_fiber"]))
            rep = cd_check(W, m0, m1, 0.0, 2.0, times, G, threads=threads)
            D[p, li] = [r.deficit for r in rep.rows]
    return HalvingStudy(list(levels), tuple(times), D, params)


def sphere_cone_control(levels=(12, 24, 48), rotation: float = 1.3, center=(1.2, 1.0),
                        radius: float = 0.5, k: int = 2, times=TIMES, threads: int = 1) -> HalvingStudy:
    """CD(1, 2) on ``[0, pi] x_sin Circle(1)`` (the round sphere) for a blob and
    its rotation about the poles."""
    W = k_cone(1.0, Circle(1.0), 1.0)
    D = np.zeros((1, len(levels), len(times)))
    for li, n in enumerate(levels):
        G = warped_measure(W, n, 2 * n)
        m0 = blob_measure(G, center, radius, k)
        m1 = translate(W, m0, (0.0, rotation))
        rep = cd_check(W, m0, m1, 1.0, 2.0, times, G, threads=threads)
        D[0, li] = [r.deficit for r in rep.rows]
    return HalvingStudy(list(levels), tuple(times), D,
                        [{"c_base": center[0], "c_fiber": center[1], "rotation": rotation, "radius": radius}])


# --------------------------------------------------------------------------
# negative control


NEG_EXTENT = 4.0
NEG_RMAX = 4.0


def euclidean_cone_over_line() -> WarpedProduct:
    return k_cone(0.0, Interval(-NEG_EXTENT, NEG_EXTENT), 1.0)


@dataclass(frozen=True)
class Witness:
    r0: float
    separation: float
    radius: float
    t: float
    level: tuple
    deficit: float
    eps_disc: float

    @property
    def margin(self) -> float:
        """A margin ``m`` with ``deficit < -m`` and ``m > 3 eps``, when one exists."""
        return 0.5 * (-self.deficit + 3.0 * self.eps_disc)

    @property
    def valid(self) -> bool:
        return -self.deficit > 3.0 * self.eps_disc

    def as_dict(self) -> dict:
        return {"r0": self.r0, "separation": self.separation, "radius": self.radius, "t": self.t,
                "base_res": self.level[0], "fiber_res": self.level[1], "deficit": self.deficit,
                "eps_disc": self.eps_disc, "margin": self.margin}


def _neg_deficits(r0, sep, R, level, times, k=2, threads=1):
    W = euclidean_cone_over_line()
    G = warped_measure(W, level[0], level[1], base_bounds=(0.0, NEG_RMAX))
    m0 = blob_measure(G, (r0, -0.5 * sep), R, k)
    m1 = blob_measure(G, (r0, 0.5 * sep), R, k)
    rep = cd_check(W, m0, m1, 0.0, 2.0, times, G, threads=threads)
    return [r.deficit for r in rep.rows]


NEG_FAMILY = {"r0": (1.5, 2.0), "separation": (math.pi + 0.5, math.pi + 1.0), "radius": (0.5, 0.6)}


def witness_search(family=None, level=(16, 32), times=TIMES, k: int = 2, threads: int = 1):
    """Scan antipodal-crossing blob pairs for the most robust CD(0, 2) violation.

    ``eps_disc`` of a candidate is twice its deficit change under one halving,
    the same tail bound used by :class:`HalvingStudy`.

    Returns the best witness and every candidate evaluated.
    """
    family = family or NEG_FAMILY
    fine = (2 * level[0], 2 * level[1])
    cands = []
    for r0, sep, R in itertools.product(family["r0"], family["separation"], family["radius"]):
        d0 = _neg_deficits(r0, sep, R, level, times, k, threads)
        d1 = _neg_deficits(r0, sep, R, fine, times, k, threads)
        for t, a, b in zip(times, d0, d1):
            cands.append(Witness(r0, sep, R, t, tuple(level), a, 2.0 * abs(a - b)))
    best = max(cands, key=lambda w: -w.deficit - 3.0 * w.eps_disc)
    return best, cands


def replay_witness(w: Witness, k: int = 2) -> float:
    """Recompute the witness deficit from its recorded parameters."""
    return _neg_deficits(w.r0, w.separation, w.radius, w.level, (w.t,), k)[0]


# --------------------------------------------------------------------------
# singular set


@dataclass
class ProbeStudy:
    levels: list
    fractions: list
    violated_fraction: float
    delta: float

    @property
    def decreasing(self) -> bool:
        """Non-increasing under refinement and strictly smaller at the end,
        unless nothing leaks at any level."""
        f = self.fractions
        if not any(f):
            return True
        return all(b <= a for a, b in zip(f, f[1:])) and f[-1] < f[0]

    def rows(self):
        for lev, f in zip(self.levels, self.fractions):
            yield {"configuration": "sphere", "level": lev, "fraction": f, "delta": self.delta}
        yield {"configuration": "cone-circle2", "level": self.levels[-1], "fraction": self.violated_fraction,
               "delta": self.delta}


PROBE_BLOB = {"center": (0.3, 0.3), "rotation": 0.8, "radius": 0.24}


def singular_probe_study(levels=(16, 32, 64), delta: float = 0.05, blob=None, k: int = 2,
                         threads: int = 1) -> ProbeStudy:
    """Plan mass passing within ``delta`` of the poles under refinement, and
    the same probe across the apex of the Euclidean cone over Circle(2)."""
    blob = blob or PROBE_BLOB
    W = k_cone(1.0, Circle(1.0), 1.0)
    c = blob["center"]
    fr = []
    for n in levels:
        G = warped_measure(W, n, 2 * n)
        m0 = blob_measure(G, c, blob["radius"], k)
        m1 = blob_measure(G, (c[0], c[1] + blob["rotation"]), blob["radius"], k)
        _, plan = w2(m0, m1, W, threads=threads)
        fr.append(singular_mass_probe(plan, W, delta, threads=threads))
    V = k_cone(0.0, Circle(2.0), 1.0)
    n = levels[0]
    G = warped_measure(V, n, 2 * n, base_bounds=(0.0, 3.0))
    m0 = blob_measure(G, (1.5, 0.0), 0.5, k)
    m1 = blob_measure(G, (1.5, math.pi), 0.5, k)
    _, plan = w2(m0, m1, V, threads=threads)
    return ProbeStudy(list(levels), fr, singular_mass_probe(plan, V, delta, threads=threads), delta)


# --------------------------------------------------------------------------
# Bonnet-Myers


def bonnet_myers_probe(n_pairs: int = 10_000, seed: int = 0) -> float:
    """Largest sampled distance on ``[0, pi] x_sin Sphere(2, 1)``."""
    F = Sphere(2, 1.0)
    B = Interval(0.0, math.pi)
    W = WarpedProduct(B, F, WarpingFunction(B, sin_profile()), 2.0)
    rng = np.random.default_rng(seed)
    m = int(math.ceil(math.sqrt(n_pairs)))
    # uniform on S^3: base density sin^2, rejection sampled
    def sample(n):
        out = []
        while len(out) < n:
            r = rng.uniform(0.0, math.pi)
            if rng.uniform() <= math.sin(r) ** 2:
                z = rng.uniform(-1.0, 1.0)
                out.append(W.point([r], [math.acos(z), rng.uniform(0.0, 2 * math.pi)]))
        return out
    A, Bp = sample(m), sample(m)
    D = distance_matrix(W, A, Bp)
    return float(D.ravel()[:n_pairs].max())
