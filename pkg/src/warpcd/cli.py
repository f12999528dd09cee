"""Command-line front end: one JSON config in, one CSV file out.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 invariant violation (the CSV is still written).
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
import time
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from . import experiments as ex
from .curvature import check_conditions, fk_concavity_check, random_tangents, tangent, warped_ricci, warped_sectional
from .geodesics import NonConvergence, distance_matrix, product_distance
from .spaces import Circle, Sphere, sample_points
from .transport import DiscreteMeasure, blob_measure, cyclical_monotonicity_check, w2
from .warp import WarpedProduct, cone_distance_radial, warped_measure

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "distance": {"mode": "pairs", "n_pairs": 20, "antipodal": 0, "method": "auto", "tol": 1e-8,
                 "oracle": None, "oracle_tol": 1e-6, "grid_tol": 1e-3, "points": None, "extent": 10.0,
                 "bound": None},
    "geodesic": {"a": None, "b": None, "samples": 101, "method": "auto", "tol": 1e-8},
    "curvature-scan": {"quantity": "ricci", "n_samples": 1000, "expected": None, "tol": 1e-8},
    "fk-check": {"K": 0.0, "n_geodesics": 200, "n_samples": 20, "tol": 1e-9, "expect": None},
    "conditions-check": {"K": 0.0, "K_F": 0.0, "n_grid": 2001, "tol": 1e-9, "expect": None},
    "cd-check": {"experiment": "custom", "n_pairs": 3, "levels": None, "k": 2, "times": [0.25, 0.5, 0.75],
                 "K": 0.0, "N": 2.0, "mu0": None, "mu1": None, "resolution": None, "base_bounds": None,
                 "expect": None, "eps_disc": 0.0},
    "transport": {"mu0": None, "mu1": None, "resolution": None, "base_bounds": None, "k": 2,
                  "tol": 1e-8, "cycle_k": 4, "cycle_trials": 1000},
    "singular-probe": {"levels": [16, 32, 64], "delta": 0.05, "k": 2, "max_fraction": 1e-3,
                       "min_violated": 0.5},
    "bench": {"n_pairs": 10, "n_atoms": 200},
}

CONTROL_LEVELS = {"positive-control": [12, 24, 48], "sphere-control": [12, 24, 48],
                  "negative-control": [16, 32]}

NEEDS_SPACE = {"distance", "geodesic", "curvature-scan", "fk-check", "conditions-check", "transport"}


def load_schema() -> dict:
    return json.loads(resources.files("warpcd").joinpath("config.schema.json").read_text())


def resolve(config: dict, seed: int | None = None) -> dict:
    """Validate and fill defaults; the result is what the header records."""
    try:
        jsonschema.validate(config, load_schema())
    except jsonschema.ValidationError as e:
        raise ConfigError(f"schema: {e.message}") from None
    cmd = config["command"]
    params = copy.deepcopy(DEFAULTS[cmd])
    unknown = set(config.get("parameters", {})) - set(params)
    if unknown:
        raise ConfigError(f"unknown parameters for {cmd}: {sorted(unknown)}")
    params.update(copy.deepcopy(config.get("parameters", {})))
    if cmd == "cd-check" and params["levels"] is None:
        params["levels"] = CONTROL_LEVELS.get(params["experiment"])
    if cmd in NEEDS_SPACE or (cmd == "cd-check" and params["experiment"] == "custom"):
        if "space" not in config:
            raise ConfigError(f"{cmd} needs a 'space'")
    out = {"command": cmd, "parameters": params,
           "seed": int(seed if seed is not None else config.get("seed", 0))}
    if "space" in config:
        out["space"] = config["space"]
    return out


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------------
# formatting


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    if isinstance(x, (tuple, list, np.ndarray)):
        return " ".join(_num(v) for v in x)
    return str(x)


class Table:
    def __init__(self, columns):
        self.columns = list(columns)
        self.rows = []
        self.notes = []

    def add(self, **row):
        self.rows.append(row)

    def render(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_num(r.get(c)) for c in self.columns])
        return buf.getvalue()


# --------------------------------------------------------------------------
# commands


def _space(cfg) -> WarpedProduct:
    try:
        return WarpedProduct.from_dict(cfg["space"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"space: {e}") from None


def _antipode(F, x):
    if isinstance(F, Circle):
        return F.canonical(np.asarray(x) + math.pi)
    if isinstance(F, Sphere) and F.cap is None:
        return F.from_embedding(-F.embed(np.asarray(x)))
    return None


def _pair_points(W, p, rng):
    pts = p["points"]
    if pts is not None:
        return [(W.point(a, fa), W.point(b, fb)) for a, fa, b, fb in pts]
    nb = p["n_pairs"]
    B = sample_points(W.base, rng, 2 * nb + p["antipodal"], p["extent"])
    F = sample_points(W.fiber, rng, 2 * nb + p["antipodal"], p["extent"])
    out = [(W.point(B[2 * i], F[2 * i]), W.point(B[2 * i + 1], F[2 * i + 1])) for i in range(nb)]
    for j in range(p["antipodal"]):
        k = 2 * nb + j
        y = _antipode(W.fiber, F[k])
        if y is None:
            raise ConfigError("antipodal pairs need a circle or sphere fiber")
        b2 = sample_points(W.base, rng, 1, p["extent"])[0]
        out.append((W.point(B[k], F[k]), W.point(b2, y)))
    return out


def _oracle(W, kind, a, b):
    if a.fiber is None or b.fiber is None:
        theta = 0.0
    else:
        theta = float(W.fiber.distance(np.asarray(a.fiber), np.asarray(b.fiber)))
    r, s = a.base[0], b.base[0]
    if kind == "sphere":
        c = math.cos(r) * math.cos(s) + math.sin(r) * math.sin(s) * math.cos(min(theta, math.pi))
        return math.acos(max(-1.0, min(1.0, c)))
    if kind == "cone":
        K = W.cone_curvature()
        if K is None:
            raise ConfigError("cone oracle needs a K-cone")
        return float(cone_distance_radial(K, r, s, theta))
    raise ConfigError(f"unknown oracle {kind!r}")


def cmd_distance(cfg, threads):
    W = _space(cfg)
    p = cfg["parameters"]
    rng = np.random.default_rng(cfg["seed"])
    if p["mode"] == "diameter":
        m = int(math.ceil(math.sqrt(p["n_pairs"])))
        A = [W.point(b, x) for b, x in zip(sample_points(W.base, rng, m, p["extent"]),
                                           sample_points(W.fiber, rng, m, p["extent"]))]
        Bq = [W.point(b, x) for b, x in zip(sample_points(W.base, rng, m, p["extent"]),
                                            sample_points(W.fiber, rng, m, p["extent"]))]
        D = distance_matrix(W, A, Bq, p["tol"], threads)
        dmax = float(D.ravel()[:p["n_pairs"]].max())
        ok = p["bound"] is None or dmax <= p["bound"]
        t = Table(["n_pairs", "max_distance", "bound", "within_bound"])
        t.add(n_pairs=p["n_pairs"], max_distance=dmax, bound=p["bound"], within_bound=ok)
        return t, (EXIT_OK if ok else EXIT_INVARIANT)

    cols = ["pair", "a_base", "a_fiber", "b_base", "b_fiber", "distance", "grid_distance", "method",
            "converged", "through_singular"]
    if p["oracle"]:
        cols += ["oracle", "abs_err", "rel_err", "grid_rel_err"]
    t = Table(cols)
    status = EXIT_OK
    for i, (a, b) in enumerate(_pair_points(W, p, rng)):
        L, g = product_distance(W, a, b, p["tol"], method=p["method"])
        row = dict(pair=i, a_base=a.base, a_fiber=a.fiber, b_base=b.base, b_fiber=b.fiber, distance=L,
                   grid_distance=g.grid_length, method=g.method, converged=g.converged,
                   through_singular=g.through_singular)
        if not g.converged:
            status = max(status, EXIT_SOLVER)
        if p["oracle"]:
            o = _oracle(W, p["oracle"], a, b)
            scale = max(abs(o), 1e-300)
            gl = L if g.grid_length is None else g.grid_length
            row.update(oracle=o, abs_err=abs(L - o), rel_err=abs(L - o) / scale,
                       grid_rel_err=abs(gl - o) / scale)
            if row["rel_err"] > p["oracle_tol"] or row["grid_rel_err"] > p["grid_tol"]:
                status = max(status, EXIT_INVARIANT)
        t.add(**row)
    return t, status


def cmd_geodesic(cfg, threads):
    W = _space(cfg)
    p = cfg["parameters"]
    if p["a"] is None or p["b"] is None:
        raise ConfigError("geodesic needs endpoints 'a' and 'b'")
    a = W.point(p["a"]["base"], p["a"].get("fiber"))
    b = W.point(p["b"]["base"], p["b"].get("fiber"))
    L, g = product_distance(W, a, b, p["tol"], method=p["method"])
    t = Table(["t", "base", "fiber", "singular", "length", "method", "converged", "through_singular"])
    for s in np.linspace(0.0, 1.0, p["samples"]):
        q = g.point(float(s))
        t.add(t=float(s), base=q.base, fiber=q.fiber, singular=q.fiber is None, length=L, method=g.method,
              converged=g.converged, through_singular=g.through_singular)
    return t, (EXIT_OK if g.converged else EXIT_SOLVER)


def cmd_curvature_scan(cfg, threads):
    W = _space(cfg)
    p = cfg["parameters"]
    q = p["quantity"]
    if q not in ("ricci", "sectional"):
        raise ConfigError(f"unknown quantity {q!r}")
    m = p["n_samples"]
    us = random_tangents(W, m, cfg["seed"])
    rng = np.random.default_rng([cfg["seed"], 1])
    t = Table(["sample", "base", "fiber", "value", "expected", "abs_err"])
    status = EXIT_OK
    for i in range(m):
        if q == "ricci":
            u = us[i]
            val = warped_ricci(W, u).value
        else:
            u = us[i]
            w = tangent(u.at, rng.standard_normal(W.base.dim), rng.standard_normal(W.fiber.dim))
            val = warped_sectional(W, u, w).value
        err = None if p["expected"] is None else abs(val - p["expected"])
        if err is not None and not err <= p["tol"]:
            status = EXIT_INVARIANT
        t.add(sample=i, base=u.at.base, fiber=u.at.fiber, value=val, expected=p["expected"], abs_err=err)
    return t, status


def _verdict(passed, expect):
    if expect is None:
        return EXIT_OK
    if expect not in ("pass", "fail"):
        raise ConfigError("expect must be 'pass' or 'fail'")
    return EXIT_OK if passed == (expect == "pass") else EXIT_INVARIANT


def cmd_fk_check(cfg, threads):
    W = _space(cfg)
    p = cfg["parameters"]
    r = fk_concavity_check(W.base, W.f, p["K"], p["n_geodesics"], p["n_samples"], cfg["seed"], p["tol"])
    t = Table(["verdict", "margin", "violation", "barrier_margin", "hessian_margin", "n_checked", "worst"])
    t.add(verdict="PASS" if r.passed else "FAIL", margin=r.margin, violation=max(0.0, -r.margin),
          barrier_margin=r.barrier_margin, hessian_margin=r.hessian_margin, n_checked=r.n_checked,
          worst=json.dumps(r.worst, sort_keys=True, default=float))
    return t, _verdict(r.passed, p["expect"])


def cmd_conditions_check(cfg, threads):
    W = _space(cfg)
    p = cfg["parameters"]
    r = check_conditions(W.base, W.f, p["K"], p["K_F"], p["n_grid"], p["tol"])
    t = Table(["verdict", "global_passed", "boundary_passed", "global_margin", "boundary_margin",
               "disagreement", "singular_set"])
    t.add(verdict="PASS" if r.passed else "FAIL", global_passed=r.global_passed,
          boundary_passed=r.boundary_passed, global_margin=r.global_margin, boundary_margin=r.boundary_margin,
          disagreement=r.disagreement, singular_set=list(r.singular_set))
    return t, _verdict(r.passed, p["expect"])


def _measure(W, G, spec, k, name):
    if spec is None:
        raise ConfigError(f"missing {name}")
    if "atoms" in spec:
        atoms = [W.point(a["base"], a.get("fiber")) for a in spec["atoms"]]
        w = spec.get("weights") or [1.0] * len(atoms)
        return DiscreteMeasure(atoms, np.asarray(w, dtype=float))
    if G is None:
        raise ConfigError("blob measures need 'resolution'")
    return blob_measure(G, tuple(spec["center"]), float(spec["radius"]), k)


def _grid(W, p):
    if p["resolution"] is None:
        return None
    nb, nf = p["resolution"]
    return warped_measure(W, nb, nf, base_bounds=p["base_bounds"])


def _study_table(study, extra_cols):
    t = Table(["pair", "level", "t", "deficit", "eps_disc"] + extra_cols)
    for row in study.rows():
        t.add(**row)
    return t


def cmd_cd_check(cfg, threads):
    p = cfg["parameters"]
    e = p["experiment"]
    times = tuple(p["times"])
    if e == "positive-control":
        s = ex.positive_control(cfg["seed"], p["n_pairs"], tuple(p["levels"]), p["k"], times, threads)
        t = _study_table(s, ["c_base", "c_fiber", "v_base", "v_fiber", "radius"])
        return t, (EXIT_OK if s.deficits_ok() and s.shrink_ok() else EXIT_INVARIANT)
    if e == "sphere-control":
        s = ex.sphere_cone_control(tuple(p["levels"]), k=p["k"], times=times, threads=threads)
        t = _study_table(s, ["c_base", "c_fiber", "rotation", "radius"])
        return t, (EXIT_OK if s.deficits_ok() else EXIT_INVARIANT)
    if e == "negative-control":
        lv = p["levels"]
        best, cands = ex.witness_search(level=(lv[0], lv[1]), times=times, k=p["k"], threads=threads)
        t = Table(["r0", "separation", "radius", "t", "base_res", "fiber_res", "deficit", "eps_disc",
                   "margin", "witness"])
        for c in cands:
            t.add(**c.as_dict(), witness=c == best and c.valid)
        return t, (EXIT_OK if best.valid else EXIT_INVARIANT)
    if e != "custom":
        raise ConfigError(f"unknown experiment {e!r}")
    W = _space(cfg)
    G = _grid(W, p)
    if G is None:
        raise ConfigError("custom cd-check needs 'resolution'")
    from .transport import cd_check
    m0 = _measure(W, G, p["mu0"], p["k"], "mu0")
    m1 = _measure(W, G, p["mu1"], p["k"], "mu1")
    rep = cd_check(W, m0, m1, p["K"], p["N"], times, G, threads=threads)
    t = Table(["t", "lhs", "rhs", "deficit"])
    for r in rep.rows:
        t.add(t=r.t, lhs=r.lhs, rhs=r.rhs, deficit=r.deficit)
    passed = rep.min_deficit >= -p["eps_disc"]
    return t, _verdict(passed, p["expect"])


def cmd_transport(cfg, threads):
    W = _space(cfg)
    p = cfg["parameters"]
    G = _grid(W, p)
    m0 = _measure(W, G, p["mu0"], p["k"], "mu0").normalized()
    m1 = _measure(W, G, p["mu1"], p["k"], "mu1").normalized()
    d, plan = w2(m0, m1, W, p["tol"], threads)
    a, b = plan.marginals()
    err = max(np.abs(a - m0.weights).max(), np.abs(b - m1.weights).max())
    mono = cyclical_monotonicity_check(plan, p["cycle_k"], p["cycle_trials"], cfg["seed"])
    t = Table(["source", "target", "mass", "distance", "w2", "marginal_err", "cycle_violation"])
    for i, j, m in plan.pairs:
        t.add(source=i, target=j, mass=m, distance=plan.dist[i, j], w2=d, marginal_err=err,
              cycle_violation=mono.worst_violation)
    ok = err <= 1e-10 and mono.worst_violation <= 1e-9
    return t, (EXIT_OK if ok else EXIT_INVARIANT)


def cmd_singular_probe(cfg, threads):
    p = cfg["parameters"]
    s = ex.singular_probe_study(tuple(p["levels"]), p["delta"], k=p["k"], threads=threads)
    t = Table(["configuration", "level", "fraction", "delta"])
    for row in s.rows():
        t.add(**row)
    ok = (s.fractions[-1] <= p["max_fraction"] and s.decreasing
          and s.violated_fraction >= p["min_violated"])
    return t, (EXIT_OK if ok else EXIT_INVARIANT)


def cmd_bench(cfg, threads):
    """Solver timings; the body holds results only, timings go to the header."""
    p = cfg["parameters"]
    from .warp import k_cone
    rng = np.random.default_rng(cfg["seed"])
    W = k_cone(1.0, Circle(1.0))
    t = Table(["task", "n", "checksum"])
    t0 = time.perf_counter()
    tot = 0.0
    for _ in range(p["n_pairs"]):
        r = rng.uniform(0, math.pi, 2)
        x = rng.uniform(0, 2 * math.pi, 2)
        tot += product_distance(W, W.point([r[0]], [x[0]]), W.point([r[1]], [x[1]]), method="solver")[0]
    t.notes.append(f"timing strip-solver: {time.perf_counter() - t0:.3f} s")
    t.add(task="strip-solver", n=p["n_pairs"], checksum=round(tot, 6))
    n = p["n_atoms"]
    F = ex.flat_torus()
    A = [F.point([u], [v]) for u, v in rng.uniform(0, 2 * math.pi, (n, 2))]
    B = [F.point([u], [v]) for u, v in rng.uniform(0, 2 * math.pi, (n, 2))]
    wa = rng.uniform(0.5, 1.5, n)
    wb = rng.uniform(0.5, 1.5, n)
    t0 = time.perf_counter()
    d, _ = w2(DiscreteMeasure(A, wa / wa.sum()), DiscreteMeasure(B, wb / wb.sum()), F, threads=threads)
    t.notes.append(f"timing transport-lp: {time.perf_counter() - t0:.3f} s")
    t.add(task="transport-lp", n=n, checksum=round(d, 9))
    return t, EXIT_OK


COMMANDS = {
    "distance": cmd_distance,
    "geodesic": cmd_geodesic,
    "curvature-scan": cmd_curvature_scan,
    "fk-check": cmd_fk_check,
    "conditions-check": cmd_conditions_check,
    "cd-check": cmd_cd_check,
    "transport": cmd_transport,
    "singular-probe": cmd_singular_probe,
    "bench": cmd_bench,
}


# --------------------------------------------------------------------------
# driver


def header(resolved: dict, threads: int, reproducible: bool, notes=()) -> str:
    lines = [f"warpcd {__version__}",
             f"command: {resolved['command']}",
             f"config_sha256: {config_hash(resolved)}",
             f"seed: {resolved['seed']}",
             f"threads: {threads}",
             "config: " + json.dumps(resolved, sort_keys=True, separators=(",", ":"))]
    if not reproducible:
        lines.append("created: " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
        lines += list(notes)
    return "".join(f"# {x}\n" for x in lines)


def run(config: dict, out: str | None = None, threads: int | None = None, seed: int | None = None,
        reproducible: bool = False) -> int:
    """Execute one experiment; returns the exit status."""
    resolved = resolve(config, seed)
    threads = threads or _env_threads()
    table, status = COMMANDS[resolved["command"]](resolved, threads)
    text = header(resolved, threads, reproducible, table.notes) + table.render()
    target = out or config.get("output") or "-"
    if target == "-":
        sys.stdout.write(text)
    else:
        with open(target, "w", newline="") as fh:
            fh.write(text)
    return status


def _env_threads() -> int:
    v = os.environ.get("WARPCD_THREADS")
    if v:
        try:
            return max(1, int(v))
        except ValueError:
            raise ConfigError(f"WARPCD_THREADS must be an integer, got {v!r}") from None
    return os.cpu_count() or 1


def split_body(text: str) -> str:
    """CSV body without the provenance header."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="warpcd", description="Warped-product geometry and CD experiments.")
    ap.add_argument("--config", required=True, help="JSON experiment configuration")
    ap.add_argument("--out", help="output CSV path ('-' for stdout)")
    ap.add_argument("--threads", type=int, help="worker threads (default: WARPCD_THREADS or core count)")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--reproducible", action="store_true", help="omit timestamps and timings from the header")
    args = ap.parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        return run(config, args.out, args.threads, args.seed, args.reproducible)
    except (ValueError, OSError) as e:
        print(f"warpcd: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as e:
        print(f"warpcd: solver did not converge: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
