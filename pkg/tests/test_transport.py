import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from warpcd.experiments import flat_torus
from warpcd.spaces import Circle, Interval
from warpcd.transport import (DiscreteMeasure, TransportPlan, blob_measure, cd_check, cell_masses,
                              cyclical_monotonicity_check, displacement, renyi_entropy, singular_mass_probe,
                              transport_lp, w2)
from warpcd.warp import WarpedProduct, k_cone, warped_measure, warping


def random_measure(W, rng, n, equal=True):
    pts = [W.point([u], [v]) for u, v in rng.uniform(0.2, 2.9, (n, 2))]
    w = np.full(n, 1.0 / n) if equal else rng.uniform(0.1, 1.0, n)
    return DiscreteMeasure(pts, w / w.sum() if not equal else w)


def brute_force(C):
    n = len(C)
    return min(sum(C[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("space", ["torus", "sphere"])
def test_matches_brute_force(space):
    W = flat_torus() if space == "torus" else k_cone(1.0, Circle(1.0))
    rng = np.random.default_rng(11 if space == "torus" else 12)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        m0, m1 = random_measure(W, rng, n), random_measure(W, rng, n)
        d, plan = w2(m0, m1, W)
        assert abs(plan.cost - brute_force(plan.dist**2)) <= 1e-12
        assert d == pytest.approx(math.sqrt(plan.cost))
        rep = cyclical_monotonicity_check(plan, 4, 1000, seed=1)
        assert rep.violations == 0 and rep.worst_violation <= 1e-9


def test_general_weights_match_dense_lp():
    rng = np.random.default_rng(5)
    for n, m in [(3, 5), (8, 8), (20, 13), (40, 60)]:
        a = rng.uniform(0.01, 1, n)
        b = rng.uniform(0.01, 1, m)
        a /= a.sum()
        b /= b.sum()
        C = rng.uniform(0, 4, (n, m))
        r, c, x = transport_lp(a, b, C)
        A_eq = np.vstack([np.kron(np.eye(n), np.ones(m)), np.kron(np.ones(n), np.eye(m))])
        ref = linprog(C.ravel(), A_eq=A_eq, b_eq=np.r_[a, b], method="highs")
        assert np.sum(x * C[r, c]) == pytest.approx(ref.fun, abs=1e-12)
        np.testing.assert_allclose(np.bincount(r, x, n), a, atol=1e-12)
        np.testing.assert_allclose(np.bincount(c, x, m), b, atol=1e-12)
        assert np.all(x >= 0) and np.all(np.diff(r * m + c) > 0)


@pytest.mark.slow
def test_column_generation_matches_dense_lp():
    rng = np.random.default_rng(6)
    n = m = 230
    X, Y = rng.uniform(0, 1, (n, 2)), rng.uniform(0, 1, (m, 2))
    C = ((X[:, None] - Y[None]) ** 2).sum(-1)
    a, b = rng.uniform(0.5, 1, n), rng.uniform(0.5, 1, m)
    a /= a.sum()
    b /= b.sum()
    r, c, x = transport_lp(a, b, C)
    A_eq = np.vstack([np.kron(np.eye(n), np.ones(m)), np.kron(np.ones(n), np.eye(m))])
    from scipy.sparse import csr_matrix
    ref = linprog(C.ravel(), A_eq=csr_matrix(A_eq), b_eq=np.r_[a, b], method="highs")
    assert np.sum(x * C[r, c]) == pytest.approx(ref.fun, rel=1e-10)
    assert np.abs(np.bincount(r, x, n) - a).max() <= 1e-10


def test_identity_and_single_atom():
    W = flat_torus()
    rng = np.random.default_rng(0)
    mu = random_measure(W, rng, 5, equal=False)
    d, plan = w2(mu, mu, W)
    assert d == 0.0 and sorted(zip(plan.src, plan.tgt)) == [(i, i) for i in range(5)]
    rep = cyclical_monotonicity_check(plan)
    assert rep.worst_violation == pytest.approx(0.0, abs=1e-15) or rep.worst_violation <= 0
    a, b = W.point([0.5], [0.5]), W.point([1.5], [2.0])
    d, _ = w2(DiscreteMeasure([a], [1.0]), DiscreteMeasure([b], [1.0]), W)
    assert d == pytest.approx(math.hypot(1.0, 1.5))


def test_infeasible_totals_rejected():
    W = flat_torus()
    a, b = W.point([0.5], [0.5]), W.point([1.5], [2.0])
    with pytest.raises(ValueError, match="infeasible"):
        w2(DiscreteMeasure([a], [1.0]), DiscreteMeasure([b], [1.1]), W)
    with pytest.raises(ValueError):
        DiscreteMeasure([a], [-1.0])


def test_swapped_plan_detected():
    B = Interval(0.0, 10.0)
    W = WarpedProduct(B, Interval(0.0, 10.0), warping(B, "const", c=1.0))
    x = [W.point([0.0], [0.0]), W.point([1.0], [0.0])]
    y = [W.point([0.0], [1.0]), W.point([1.0], [1.0])]
    mu0, mu1 = DiscreteMeasure(x, [0.5, 0.5]), DiscreteMeasure(y, [0.5, 0.5])
    _, good = w2(mu0, mu1, W)
    bad = TransportPlan(mu0, mu1, W, np.array([0, 1]), np.array([1, 0]), np.array([0.5, 0.5]), good.dist)
    assert cyclical_monotonicity_check(good, k=2, trials=50).violations == 0
    rep = cyclical_monotonicity_check(bad, k=2, trials=50)
    assert rep.violations == 50 and rep.worst_violation == pytest.approx(2.0)


def test_restriction_of_optimal_plan_is_optimal():
    W = flat_torus()
    rng = np.random.default_rng(3)
    mu0, mu1 = random_measure(W, rng, 6), random_measure(W, rng, 6)
    _, plan = w2(mu0, mu1, W)
    keep = [0, 2, 3]
    sub0 = DiscreteMeasure([mu0.atoms[plan.src[k]] for k in keep], [1 / 3] * 3)
    sub1 = DiscreteMeasure([mu1.atoms[plan.tgt[k]] for k in keep], [1 / 3] * 3)
    d, _ = w2(sub0, sub1, W)
    restricted = sum(plan.dist[plan.src[k], plan.tgt[k]] ** 2 for k in keep) / 3
    assert d**2 == pytest.approx(restricted, abs=1e-12)


def test_displacement_endpoints_and_midpoint():
    B = Interval(0.0, 10.0)
    W = WarpedProduct(B, Interval(0.0, 10.0), warping(B, "const", c=1.0))
    mu0 = DiscreteMeasure([W.point([1.0], [1.0])], [1.0])
    mu1 = DiscreteMeasure([W.point([4.0], [5.0])], [1.0])
    _, plan = w2(mu0, mu1, W)
    assert displacement(plan, 0.0).atoms == mu0.atoms and displacement(plan, 1.0).atoms == mu1.atoms
    mid = displacement(plan, 0.5)
    assert mid.atoms[0].base == pytest.approx((2.5,)) and mid.atoms[0].fiber == pytest.approx((3.0,))
    assert w2(mu0, mid, W)[0] == pytest.approx(2.5) and w2(mid, mu1, W)[0] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        displacement(plan, -0.1)


def test_interpolation_triangle_identity():
    W = flat_torus()
    rng = np.random.default_rng(8)
    mu0, mu1 = random_measure(W, rng, 5), random_measure(W, rng, 5)
    d, plan = w2(mu0, mu1, W)
    for t in (0.25, 0.5):
        mt = displacement(plan, t)
        assert w2(mu0, mt, W)[0] == pytest.approx(t * d, rel=1e-9)
        assert w2(mt, mu1, W)[0] == pytest.approx((1 - t) * d, rel=1e-9)


def test_marginals_exact():
    W = flat_torus()
    G = warped_measure(W, 16, 16)
    m0 = blob_measure(G, (1.0, 1.0), 0.9).normalized()
    m1 = blob_measure(G, (3.0, 2.5), 1.1).normalized()
    _, plan = w2(m0, m1, W)
    a, b = plan.marginals()
    assert np.abs(a - m0.weights).max() <= 1e-10 and np.abs(b - m1.weights).max() <= 1e-10
    assert cyclical_monotonicity_check(plan).violations == 0


def uniform_measure(G):
    pts = G.points()
    w = G.weights.ravel()
    keep = w > 0
    return DiscreteMeasure([p for p, k in zip(pts, keep) if k], w[keep] / w.sum())


@pytest.mark.parametrize("Np", [1.0, 2.0, 3.5])
def test_entropy_of_uniform(Np):
    W = flat_torus()
    G = warped_measure(W, 8, 8)
    V = G.total
    assert renyi_entropy(uniform_measure(G), W, Np, G) == pytest.approx(V ** (1 / Np), rel=1e-12)


def test_entropy_on_round_sphere():
    W = k_cone(1.0, Circle(1.0))
    G = warped_measure(W, 40, 40)
    assert renyi_entropy(uniform_measure(G), W, 2.0, G) == pytest.approx(math.sqrt(4 * math.pi), rel=1e-6)


def test_entropy_single_cell():
    W = flat_torus()
    G = warped_measure(W, 8, 8)
    mu = DiscreteMeasure([W.point([0.1], [0.1])], [1.0])
    assert renyi_entropy(mu, W, 2.0, G) == pytest.approx(math.sqrt(G.weights[0, 0]))
    assert cell_masses(mu, G).sum() == pytest.approx(1.0)


def test_entropy_rejects_mass_on_null_cells():
    W = k_cone(1.0, Circle(1.0))
    G = warped_measure(W, 8, 8)
    G.weights[0, :] = 0.0
    mu = DiscreteMeasure([W.point([0.1], [0.3])], [1.0])
    with pytest.raises(ValueError, match="zero reference"):
        renyi_entropy(mu, W, 2.0, G)
    apex = DiscreteMeasure([W.point([0.0])], [1.0])
    with pytest.raises(ValueError, match="zero reference"):
        renyi_entropy(apex, W, 2.0, G)


def test_cd_flat_translation_has_zero_deficit_at_midpoint():
    W = flat_torus()
    G = warped_measure(W, 12, 12)
    m0 = blob_measure(G, (1.0, 1.0), 1.0)
    from warpcd.experiments import translate
    m1 = translate(W, m0, (0.5, 0.25))
    rep = cd_check(W, m0, m1, 0.0, 2.0, (0.25, 0.5, 0.75), G)
    assert min(r.deficit for r in rep.rows) >= -0.02 and rep.min_deficit == min(r.deficit for r in rep.rows)


def test_probe_zero_without_apex():
    W = flat_torus()
    rng = np.random.default_rng(0)
    _, plan = w2(random_measure(W, rng, 4), random_measure(W, rng, 4), W)
    assert singular_mass_probe(plan, W, 0.05) == 0.0
    with pytest.raises(ValueError):
        singular_mass_probe(plan, W, 0.0)


def test_blob_measure_support_and_mass():
    W = k_cone(1.0, Circle(1.0))
    G = warped_measure(W, 16, 32)
    mu = blob_measure(G, (1.2, 1.0), 0.5)
    assert mu.ac_proxy and mu.total > 0
    assert all(abs(p.base[0] - 1.2) < 0.5 + 2 * math.pi / 16 for p in mu.atoms)
    mu.check_off_singular()
