"""Acceptance suite: one test per criterion, each printing a pass/fail line.

CLI-backed criteria keep their CSV bodies so the determinism check can
re-execute the same configs in a fresh process and compare byte for byte.
"""
import csv
import io
import itertools
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from warpcd import cli
from warpcd.curvature import check_conditions, fk_concavity_check, random_tangents, warped_ricci
from warpcd.experiments import Witness, flat_torus, replay_witness
from warpcd.kernels import cn, sn, tau
from warpcd.spaces import Circle, Interval, Sphere
from warpcd.transport import DiscreteMeasure, cyclical_monotonicity_check, w2
from warpcd.warp import WarpedProduct, k_cone, warping

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BODIES: dict = {}


def run_config(name, tmp_path):
    out = tmp_path / f"{name}.csv"
    t0 = time.perf_counter()
    code = cli.main(["--config", str(CONFIGS / f"{name}.json"), "--out", str(out), "--reproducible"])
    elapsed = time.perf_counter() - t0
    text = out.read_text()
    BODIES[name] = cli.split_body(text)
    return code, list(csv.DictReader(io.StringIO(BODIES[name]))), elapsed


def test_01_sphere_oracle(tmp_path, record):
    code, rows, elapsed = run_config("sphere_distance", tmp_path)
    refined = max(float(r["rel_err"]) for r in rows)
    grid = max(float(r["grid_rel_err"]) for r in rows)
    ok = (code == 0 and len(rows) == 100 and refined <= 1e-6 and grid <= 1e-3 and elapsed <= 60.0
          and all(r["converged"] == "1" and r["method"] != "cone-closed-form" for r in rows))
    assert record("1 sphere oracle", ok,
                  f"pairs={len(rows)} refined={refined:.2e} grid={grid:.2e} time={elapsed:.1f}s")


@pytest.mark.parametrize("K,name", [(-1.0, "cone_distance_Kneg"), (0.0, "cone_distance_K0"),
                                    (1.0, "cone_distance_K1")])
def test_02_cone_oracle(K, name, tmp_path, record):
    code, rows, _ = run_config(name, tmp_path)
    refined = max(float(r["rel_err"]) for r in rows)
    grid = max(float(r["grid_rel_err"]) for r in rows)
    far = [r for r in rows
           if float(Circle(1.0).distance(np.array([float(r["a_fiber"])]), np.array([float(r["b_fiber"])])))
           >= math.pi - 1e-12]
    through = all(r["through_singular"] == "1" for r in far)
    ok = code == 0 and len(rows) == 100 and refined <= 1e-6 and grid <= 1e-3 and len(far) >= 10 and through
    assert record(f"2 cone oracle K={K:g}", ok,
                  f"pairs={len(rows)} refined={refined:.2e} grid={grid:.2e} apex-pairs={len(far)}")


def test_03_curvature_reconstruction(tmp_path, record):
    code, rows, _ = run_config("ricci_sphere3", tmp_path)
    errs = {"N=2 analytic": max(float(r["abs_err"]) for r in rows)}
    B = Interval(0.0, math.pi)
    W3 = WarpedProduct(B, Sphere(3, 1.0), warping(B, "sin"), 3.0)
    errs["N=3 analytic"] = max(abs(warped_ricci(W3, u).value - 3.0) for u in random_tangents(W3, 1000, 3))
    for n in (2, 3):
        Wfd = WarpedProduct(B, Sphere(n, 1.0), warping(B, "sin", finite_differences=True), float(n))
        errs[f"N={n} fd"] = max(abs(warped_ricci(Wfd, u).value - n) for u in random_tangents(Wfd, 1000, 10 + n))
    C = k_cone(0.0, Sphere(2, 1.0), 2.0)
    errs["cone"] = max(abs(warped_ricci(C, u).value) for u in random_tangents(C, 1000, 7))
    ok = (code == 0 and len(rows) == 1000 and errs["N=2 analytic"] <= 1e-8 and errs["N=3 analytic"] <= 1e-8
          and errs["N=2 fd"] <= 1e-4 and errs["N=3 fd"] <= 1e-4 and errs["cone"] <= 1e-8)
    assert record("3 curvature reconstruction", ok, " ".join(f"{k}={v:.1e}" for k, v in errs.items()))


def test_04_distortion_coefficients(record):
    ts = np.linspace(0.0, 1.0, 21)
    thetas = np.linspace(0.0, 10.0, 41)
    flat = all(tau(0.0, N, float(t), float(th)) == t for N in (1.0, 1.5, 2.0, 5.0) for t in ts for th in thetas)
    cont = max(abs(tau(K, N, float(t), float(th)) - tau(0.0, N, float(t), float(th)))
               for K in (1e-8, -1e-8, 5e-9) for N in (2.0, 3.0) for t in ts for th in np.linspace(0, 3, 13))
    inf_ok = True
    for K, N in ((1.0, 2.0), (2.0, 3.0), (0.5, 4.0)):
        L = math.pi * math.sqrt((N - 1) / K)
        inf_ok &= all(tau(K, N, float(t), L + d) == math.inf for t in ts[1:] for d in (0.0, 0.1, 5.0))
        inf_ok &= math.isfinite(tau(K, N, 0.5, math.nextafter(L, 0.0)))
    pyth = max(float(np.max(np.abs(cn(K, ts * math.pi) ** 2 + K * sn(K, ts * math.pi) ** 2 - 1.0)))
               for K in np.linspace(-1.0, 1.0, 41))
    ok = flat and cont <= 1e-8 and inf_ok and pyth <= 1e-12
    assert record("4 distortion coefficients", ok,
                  f"flat_exact={flat} |tau_K-tau_0|={cont:.1e} infinite={inf_ok} pythagoras={pyth:.1e}")


def test_05_exact_ot(record):
    rng = np.random.default_rng(2024)
    W = flat_torus()
    worst_gap, worst_cycle, count = 0.0, 0.0, 0
    for _ in range(120):
        n = int(rng.integers(2, 7))
        mus = []
        for _ in range(2):
            pts = [W.point([u], [v]) for u, v in rng.uniform(0, 2 * math.pi, (n, 2))]
            mus.append(DiscreteMeasure(pts, np.full(n, 1.0 / n)))
        _, plan = w2(*mus, W)
        C = plan.dist**2
        brute = min(sum(C[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))
        worst_gap = max(worst_gap, abs(plan.cost - brute))
        rep = cyclical_monotonicity_check(plan, 4, 1000, seed=count)
        worst_cycle = max(worst_cycle, rep.worst_violation)
        count += 1
    ok = count >= 100 and worst_gap <= 1e-12 and worst_cycle <= 1e-9
    assert record("5 exact OT", ok, f"instances={count} cost_gap={worst_gap:.1e} cycle_violation={worst_cycle:.1e}")


def levels_eps(rows):
    out = {}
    for r in rows:
        out[int(r["level"])] = float(r["eps_disc"])
    return [out[k] for k in sorted(out)]


def test_06_cd_positive_control(tmp_path, record):
    code, rows, _ = run_config("cd_positive", tmp_path)
    worst = min(float(r["deficit"]) + float(r["eps_disc"]) for r in rows)
    tol = levels_eps(rows)
    shrink = tol[0] / tol[1]  # tail bounds 2 eps_i, so their ratio is the eps ratio
    ok = code == 0 and worst >= 0 and shrink >= 2.0
    assert record("6 CD positive control", ok,
                  f"rows={len(rows)} min(deficit+eps)={worst:.2e} eps_disc={['%.1e' % e for e in tol]} "
                  f"shrink={shrink:.1f}")


def test_07_cd_negative_control(tmp_path, record):
    code, rows, _ = run_config("cd_negative", tmp_path)
    wit = [r for r in rows if r["witness"] == "1"]
    ok = code == 0 and len(wit) == 1
    detail = "no witness"
    if ok:
        r = wit[0]
        w = Witness(float(r["r0"]), float(r["separation"]), float(r["radius"]), float(r["t"]),
                    (int(r["base_res"]), int(r["fiber_res"])), float(r["deficit"]), float(r["eps_disc"]))
        m = float(r["margin"])
        replayed = replay_witness(w)
        ok = w.deficit < -m and m > 3 * w.eps_disc and replayed == w.deficit
        detail = (f"deficit={w.deficit:.4f} margin={m:.4f} eps_disc={w.eps_disc:.4f} "
                  f"replay_equal={replayed == w.deficit} params=r0:{w.r0},sep:{w.separation:.4f},R:{w.radius},"
                  f"t:{w.t}")
    assert record("7 CD negative control", ok, detail)


def test_08_singular_mass_probe(tmp_path, record):
    code, rows, _ = run_config("singular_probe", tmp_path)
    sphere = [float(r["fraction"]) for r in rows if r["configuration"] == "sphere"]
    violated = [float(r["fraction"]) for r in rows if r["configuration"] != "sphere"][0]
    decreasing = all(b <= a for a, b in zip(sphere, sphere[1:])) and sphere[-1] < sphere[0]
    ok = code == 0 and sphere[-1] <= 1e-3 and decreasing and violated >= 0.5
    assert record("8 singular-mass probe", ok,
                  f"fractions={['%.1e' % f for f in sphere]} violated={violated:.3f}")


def test_09_bonnet_myers(tmp_path, record):
    code, rows, _ = run_config("bonnet_myers", tmp_path)
    (r,) = rows
    dmax = float(r["max_distance"])
    ok = code == 0 and int(r["n_pairs"]) == 10_000 and dmax <= math.pi + 1e-3
    assert record("9 Bonnet-Myers probe", ok, f"pairs={r['n_pairs']} max={dmax:.6f} bound={math.pi + 1e-3:.6f}")


def test_10_fk_and_conditions(tmp_path, record):
    catalog = [
        ("sin K=1 K_F=1", Interval(0.0, math.pi), ("sin", {}), 1.0, 1.0, True),
        ("const K=0", Interval(0.0, 3.0), ("const", {"c": 1.5}), 0.0, 0.0, True),
        ("r^2 K=0", Interval(0.0, 1.0), ("power", {"p": 2.0}), 0.0, 0.0, False),
    ]
    ok, parts = True, []
    for label, B, (name, kw), K, K_F, expect in catalog:
        f = warping(B, name, **kw)
        fk = fk_concavity_check(B, f, K)
        cond = check_conditions(B, f, K, K_F)
        good = fk.passed is expect
        if expect:
            good &= cond.passed and cond.disagreement <= 1e-9
        ok &= good
        parts.append(f"{label}:fk={'PASS' if fk.passed else 'FAIL'},cond={'PASS' if cond.passed else 'FAIL'},"
                     f"disagree={cond.disagreement:.1e}")
    for name in ("fk_sin", "fk_r2", "conditions_sin"):
        code, _, _ = run_config(name, tmp_path)
        ok &= code == 0
    assert record("10 FK-concavity and conditions", ok, " ".join(parts))


def test_11_determinism(tmp_path, record):
    names = ["sphere_distance", "cone_distance_Kneg", "cone_distance_K0", "cone_distance_K1", "ricci_sphere3",
             "cd_positive", "cd_negative", "singular_probe", "bonnet_myers", "fk_sin", "fk_r2", "conditions_sin"]
    mismatched = []
    for name in names:
        if name not in BODIES:
            run_config(name, tmp_path)
        out = tmp_path / f"{name}.rerun.csv"
        subprocess.run([sys.executable, "-m", "warpcd.cli", "--config", str(CONFIGS / f"{name}.json"),
                        "--out", str(out), "--reproducible", "--threads", "2"], check=False)
        if cli.split_body(out.read_text()) != BODIES[name]:
            mismatched.append(name)
    ok = not mismatched
    assert record("11 determinism", ok, f"configs={len(names)} mismatched={mismatched}")
