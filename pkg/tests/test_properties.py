"""Property tests for the metric, transport and curvature invariants."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracles
from warpcd.curvature import random_tangents, warped_ricci
from warpcd.experiments import flat_torus
from warpcd.geodesics import product_distance
from warpcd.spaces import Circle, Interval, Sphere
from warpcd.transport import DiscreteMeasure, cyclical_monotonicity_check, w2
from warpcd.warp import WarpedProduct, cone_distance_radial, k_cone, warping

angle = st.floats(0.0, 2 * math.pi, allow_nan=False)
radius = st.floats(0.0, math.pi, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(K=st.sampled_from([-1.0, 0.0, 1.0]), s=radius, t=radius, u=radius,
       a=angle, b=angle, c=angle)
def test_cone_metric_axioms(K, s, t, u, a, b, c):
    W = k_cone(K, Circle(1.0))
    P, Q, R = W.point([s], [a]), W.point([t], [b]), W.point([u], [c])
    d = lambda x, y: product_distance(W, x, y)[0]
    assert d(P, Q) == pytest.approx(d(Q, P), abs=1e-12)
    assert d(P, R) <= d(P, Q) + d(Q, R) + 1e-10
    assert d(P, P) <= 1e-12
    assert d(P, Q) <= s + t + 1e-12  # the route through the apex


@settings(max_examples=60, deadline=None)
@given(K=st.sampled_from([-1.0, -0.25, 0.0, 0.5, 1.0]), s=radius, t=radius, th=st.floats(0, 6))
def test_cone_distance_closed_form_vs_oracle(K, s, t, th):
    if K > 0:
        top = math.pi / math.sqrt(K)
        s, t = min(s, top), min(t, top)
    want = float(oracles.cone_distance(K, s, t, th))
    assert cone_distance_radial(K, s, t, th) == pytest.approx(want, rel=1e-11, abs=1e-12)


@settings(max_examples=12, deadline=None)
@given(s=st.floats(0.2, 2.9), t=st.floats(0.2, 2.9), th=st.floats(0.05, 3.0))
def test_solver_agrees_with_closed_form(s, t, th):
    W = k_cone(1.0, Circle(1.0))
    P, Q = W.point([s], [0.0]), W.point([t], [th])
    Ls, g = product_distance(W, P, Q, method="solver")
    Lc, _ = product_distance(W, P, Q)
    assert Ls == pytest.approx(Lc, rel=1e-6, abs=1e-9)
    assert g.grid_length >= Ls - 1e-9


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.2, 3.0), s=st.floats(0, 5), t=st.floats(0, 5), a=angle, b=angle)
def test_constant_warping_scales_fiber(c, s, t, a, b):
    B = Interval(0.0, 5.0)
    W = WarpedProduct(B, Circle(1.0), warping(B, "const", c=c))
    dF = float(Circle(1.0).distance(np.array([a]), np.array([b])))
    L, _ = product_distance(W, W.point([s], [a]), W.point([t], [b]))
    assert L == pytest.approx(math.hypot(s - t, c * dF), rel=1e-12, abs=1e-12)


def measure(W, rng, n, equal):
    pts = [W.point([u], [v]) for u, v in rng.uniform(0, 2 * math.pi, (n, 2))]
    w = np.full(n, 1.0 / n) if equal else rng.dirichlet(np.ones(n))
    return DiscreteMeasure(pts, w)


@settings(max_examples=25, deadline=None)
@given(seed=seeds, n=st.integers(1, 12), m=st.integers(1, 12))
def test_plan_marginals_and_monotonicity(seed, n, m):
    W = flat_torus()
    rng = np.random.default_rng(seed)
    mu0, mu1 = measure(W, rng, n, False), measure(W, rng, m, False)
    d, plan = w2(mu0, mu1, W)
    a, b = plan.marginals()
    assert np.abs(a - mu0.weights).max() <= 1e-10 and np.abs(b - mu1.weights).max() <= 1e-10
    assert np.all(plan.mass >= 0) and len(plan.mass) <= n + m - 1
    assert cyclical_monotonicity_check(plan, 4, 200, seed=seed % 1000).violations == 0
    assert d >= 0


@settings(max_examples=20, deadline=None)
@given(seed=seeds, n=st.integers(2, 8))
def test_w2_triangle_inequality(seed, n):
    W = flat_torus()
    rng = np.random.default_rng(seed)
    mus = [measure(W, rng, n, False) for _ in range(3)]
    d01, d12, d02 = w2(mus[0], mus[1], W)[0], w2(mus[1], mus[2], W)[0], w2(mus[0], mus[2], W)[0]
    assert d02 <= d01 + d12 + 1e-9
    assert w2(mus[1], mus[0], W)[0] == pytest.approx(d01, abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(seed=seeds, N=st.sampled_from([2, 3]))
def test_round_sphere_ricci_constant(seed, N):
    B = Interval(0.0, math.pi)
    W = WarpedProduct(B, Sphere(N, 1.0), warping(B, "sin"), float(N))
    for u in random_tangents(W, 10, seed=seed):
        assert abs(warped_ricci(W, u).value - N) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.5, 2.0), s=st.floats(0.05, 3.0), t=st.floats(0.05, 3.0), th=st.floats(0.0, math.pi))
def test_scaled_sine_is_cone_over_longer_circle(a, s, t, th):
    # a sin r over Circle(1) equals the spherical cone over Circle(a)
    B = Interval(0.0, math.pi)
    W = WarpedProduct(B, Circle(1.0), warping(B, "sin", a=a, w=1.0))
    V = k_cone(1.0, Circle(a))
    assume(abs(a - 1.0) > 1e-3)
    L1, _ = product_distance(W, W.point([s], [0.0]), W.point([t], [th]), tol=1e-10)
    L2, _ = product_distance(V, V.point([s], [0.0]), V.point([t], [th]))
    assert L1 == pytest.approx(L2, rel=1e-6, abs=1e-9)
