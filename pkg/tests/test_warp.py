import math

import numpy as np
import pytest

import oracles
from warpcd.spaces import Circle, FlatTorus, Interval, Sphere
from warpcd.warp import (WarpedProduct, apex_set, cone_distance, cone_distance_radial, k_cone, profile_from_dict,
                         warped_length, warped_measure, warping)


def product(B, F, name, N=1.0, **kw):
    return WarpedProduct(B, F, warping(B, name, **kw), N)


def test_length_examples():
    B = Interval(0.0, 10.0)
    W = product(B, Circle(1.0), "const", c=1.0)
    assert warped_length(W, [W.point([0.0], [0.0]), W.point([3.0], [0.0])]) == pytest.approx(3.0, rel=1e-12)
    # base 3, fiber arc 4 traversed together
    Wc = product(B, Interval(0.0, 10.0), "const", c=1.0)
    assert warped_length(Wc, [Wc.point([0.0], [0.0]), Wc.point([3.0], [4.0])]) == pytest.approx(5.0, rel=1e-9)
    S = product(Interval(0.0, math.pi), Circle(1.0), "sin")
    L = 1.3
    P, Q = S.point([math.pi / 2], [0.0]), S.point([math.pi / 2], [L])
    assert warped_length(S, [P, Q]) == pytest.approx(L, rel=1e-12)


def test_length_rejects_dropped_fiber():
    from warpcd.warp import WarpedPoint
    S = product(Interval(0.0, math.pi), Circle(1.0), "sin")
    with pytest.raises(ValueError):
        warped_length(S, [S.point([1.0], [0.0]), WarpedPoint((1.5,), None)])


def test_length_through_apex():
    W = k_cone(0.0, Circle(1.0))
    path = [W.point([1.0], [0.0]), W.point([0.0]), W.point([2.0], [2.0])]
    assert warped_length(W, path) == pytest.approx(3.0, rel=1e-9)


def test_measure_examples():
    S = product(Interval(0.0, math.pi), Circle(1.0), "sin")
    G = warped_measure(S, 64, 16)
    assert G.total == pytest.approx(4 * math.pi, rel=1e-6)
    T = product(Circle(1.0), Circle(1.0), "const", N=3.0, c=1.0)
    G = warped_measure(T, 8, 8)
    np.testing.assert_allclose(G.weights, (2 * math.pi / 8) ** 2)


def test_measure_zero_on_singular_rows():
    W = k_cone(1.0, Circle(1.0), 2.0)
    G = warped_measure(W, 9, 4)
    assert np.all(G.weights >= 0) and G.total > 0
    assert G.total == pytest.approx(math.pi**2, rel=1e-3)  # 2 pi * int_0^pi sin^2


@pytest.mark.parametrize("K,s,t,d,want", [(0.0, 1.0, 1.0, 0.0, 0.0), (0.0, 3.0, 4.0, math.pi / 2, 5.0),
                                          (1.0, math.pi / 2, math.pi / 2, math.pi / 2, math.pi / 2)])
def test_cone_distance_examples(K, s, t, d, want):
    assert cone_distance_radial(K, s, t, d) == pytest.approx(want, abs=1e-14)


@pytest.mark.parametrize("K", [-1.0, -0.3, 0.0, 0.5, 1.0])
def test_cone_distance_matches_oracle(K):
    rng = np.random.default_rng(7)
    top = math.pi / math.sqrt(K) if K > 0 else 4.0
    for _ in range(100):
        s, t = rng.uniform(0, top, 2)
        th = rng.uniform(0, 4.0)
        want = float(oracles.cone_distance(K, s, t, th))
        assert cone_distance_radial(K, s, t, th) == pytest.approx(want, rel=1e-12, abs=1e-13)


def test_cone_distance_validates_radius():
    with pytest.raises(ValueError):
        cone_distance(1.0, Circle(1.0), (np.array([0.0]), 4.0), (np.array([0.0]), 1.0))
    assert cone_distance(0.0, Circle(1.0), (np.array([0.0]), 3.0), (np.array([math.pi / 2]), 4.0)) == pytest.approx(5.0)


def test_apex_set_examples():
    S = product(Interval(0.0, math.pi), Circle(1.0), "sin")
    assert apex_set(S).levels == pytest.approx((0.0, math.pi))
    T = product(Circle(1.0), Circle(1.0), "const", c=1.0)
    assert apex_set(T).empty
    C = product(Interval(0.0, math.inf), Circle(1.0), "affine")
    assert apex_set(C).levels == (0.0,)


def test_singular_points_drop_fiber():
    W = k_cone(1.0, Circle(1.0))
    assert W.point([0.0], [1.0]).fiber is None
    with pytest.raises(ValueError):
        W.point([1.0])


def test_cone_curvature_detection():
    assert k_cone(1.0, Circle(1.0)).cone_curvature() == 1.0
    assert k_cone(0.0, Circle(1.0)).cone_curvature() == 0.0
    assert k_cone(-1.0, Circle(1.0)).cone_curvature() == -1.0
    assert product(Interval(0.0, 2.0), Circle(1.0), "sin").cone_curvature() is None


def test_hypothesis_flags():
    assert k_cone(1.0, Circle(1.0)).hypothesis_met()
    assert not k_cone(0.0, Circle(2.0)).hypothesis_met()
    assert product(Circle(1.0), Circle(1.0), "const", c=2.0).hypothesis_met()


@pytest.mark.parametrize("d", [{"name": "sin", "a": 2.0, "w": 0.5}, {"name": "snK", "K": -1.0, "a": 1.0},
                               {"name": "power", "p": 2.0, "a": 1.0}, {"name": "cos", "a": 1.0, "w": 1.0},
                               {"name": "affine", "a": 1.0, "b": 0.5}, {"name": "const", "c": 3.0}])
def test_profile_derivatives(d):
    p = profile_from_dict(d)
    fd = profile_from_dict({**d, "finite_differences": True})
    for r in (0.3, 0.7, 1.1):
        h = 1e-5
        assert p.g1(r) == pytest.approx((p.g(r + h) - p.g(r - h)) / (2 * h), rel=1e-7, abs=1e-9)
        assert fd.g2(r) == pytest.approx(p.g2(r), rel=1e-4, abs=1e-5)


def test_warped_dict_round_trip():
    W = product(Interval(0.0, math.pi), Sphere(2, 1.0), "sin", N=2.0)
    assert WarpedProduct.from_dict(W.to_dict()).to_dict() == W.to_dict()


def test_bad_N():
    with pytest.raises(ValueError):
        product(Circle(1.0), FlatTorus((1.0, 1.0)), "const", N=0.5, c=1.0)


def test_partition_sums_monotone_for_constant_warping():
    B = Interval(0.0, 10.0)
    W = product(B, Sphere(2, 1.0), "const", c=1.5)
    path = [W.point([0.0], [0.3, 0.0]), W.point([2.0], [1.2, 2.0]), W.point([3.0], [2.0, 5.0])]
    L, sums = warped_length(W, path, return_levels=True)
    assert all(b >= a - 1e-12 for a, b in zip(sums, sums[1:]))
    assert L == pytest.approx(sums[-1], rel=1e-9)
