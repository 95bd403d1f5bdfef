"""Command-line interface: one subcommand per operation plus the check suite.

Every subcommand writes its artifacts (CSV, JSON) into ``--out`` together
with ``manifest.json`` listing their SHA-256 hashes, and prints a summary
(JSON with ``--json``).  Exit codes: 0 pass, 1 numerical-check failure,
2 configuration error, 3 internal error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import CodimlabError, ConfigError, GeometryError

log = logging.getLogger("codimlab")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3

#: Every default lives here; ``--print-config`` shows the merged result.
DEFAULTS = {
    "geometry": "flat:d=1,n=3,extent=6,h=0.04",
    "operator": {"beta": 1.0, "gamma": 0.0, "alpha": None},
    "grid": {"box": 4.0, "cells": 48, "tube_radius": None},
    "family": {"n_centers": 16, "n_radii": 2, "stride": 8,
               "r_min": None, "r_max": None},
    "whitney": {"box": 2.0, "max_level": 6, "rule": "paper"},
    "cutoff": {"center": None, "radius": 1.0, "epsilon": 0.0625},
    "alpha": {"n_starts": 4, "maxiter": 100, "target_nodes": 40},
    "output": "codimlab-out",
    "seed": 0,
    "threads": None,
    "tolerances": {},
}


class Run:
    """Merged configuration plus the artifacts written so far."""

    def __init__(self, config, as_json):
        self.config = config
        self.as_json = as_json
        self.out = Path(config["output"])
        self.artifacts = []

    # --- artifacts ----------------------------------------------------
    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.artifacts.append(p)
        return p

    def write_csv(self, name, header, rows):
        with self.path(name).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])

    def write_json(self, name, obj):
        self.path(name).write_text(json.dumps(_plain(obj), indent=2,
                                              sort_keys=True) + "\n")

    def finish(self, command, summary, status=EXIT_OK, failed_stage=None):
        self.write_json("summary.json", summary)
        entries = []
        for p in dict.fromkeys(self.artifacts):
            if p.exists():
                entries.append({"file": p.name,
                                "sha256": hashlib.sha256(
                                    p.read_bytes()).hexdigest()})
        manifest = {"command": command, "version": __version__,
                    "config": self.config, "artifacts": entries,
                    "status": status}
        if failed_stage:
            manifest["failed_stage"] = failed_stage
            manifest["partial"] = True
        (self.out / "manifest.json").write_text(
            json.dumps(_plain(manifest), indent=2, sort_keys=True) + "\n")
        if self.as_json:
            print(json.dumps(_plain(summary), sort_keys=True))
        else:
            for k, v in _plain(summary).items():
                print(f"{k}: {v}")
        return status


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _vector(text, name):
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"{name} must be comma-separated numbers") from exc


def load_config(args):
    """Defaults, then the YAML file, then command-line overrides."""
    config = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        config = _merge(config, data)
    flat = {
        "geometry": getattr(args, "geometry", None),
        "output": args.out,
        "seed": args.seed,
        "threads": args.threads,
    }
    for k, v in flat.items():
        if v is not None:
            config[k] = v
    for key in ("beta", "gamma", "alpha"):
        v = getattr(args, key, None)
        if v is not None:
            config["operator"][key] = v
    for key in ("box", "cells"):
        v = getattr(args, key, None)
        if v is not None:
            config["grid"][key] = v
    _validate(config)
    return config


def _validate(config):
    from .smooth_distance import OperatorParams

    op = config["operator"]
    try:
        OperatorParams(float(op["beta"]), float(op["gamma"]),
                       None if op["alpha"] is None else float(op["alpha"]))
    except ValueError as exc:
        raise ConfigError(f"operator: {exc}") from exc
    if int(config["grid"]["cells"]) < 8:
        raise ConfigError("grid.cells must be at least 8")
    if config["whitney"]["rule"] not in ("paper", "compact"):
        raise ConfigError("whitney.rule must be 'paper' or 'compact'")


def _set_threads(config):
    threads = config.get("threads") or os.environ.get("CODIMLAB_THREADS")
    if threads:
        import numba

        k = int(threads)
        if k < 1:
            raise ConfigError("threads must be positive")
        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


def _geometry(config):
    from .geometry import parse_geometry

    return parse_geometry(config["geometry"])


def _params(config, bset):
    from .smooth_distance import OperatorParams

    op = config["operator"]
    try:
        return OperatorParams.for_set(bset, float(op["beta"]),
                                      float(op["gamma"]), op["alpha"])
    except ValueError as exc:
        raise ConfigError(f"operator: {exc}") from exc


def _grid(config, bset):
    from .solver import Grid

    g = config["grid"]
    return Grid.build(bset, float(g["box"]), int(g["cells"]),
                      g["tube_radius"])


def _read_points(path, n):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :n], data[:, n:]


# ----------------------------------------------------------------------
# subcommands


def cmd_geometry(run, args):
    from .geometry import check_ahlfors

    bset = _geometry(run.config)
    bset.to_csv(run.path("points.csv"))
    run.write_json("descriptor.json", bset.descriptor_json())
    summary = {"descriptor": bset.descriptor_json(),
               "total_mass": bset.total_mass}
    if args.ahlfors:
        rep = check_ahlfors(bset, seed=run.config["seed"])
        summary["ahlfors"] = {"c_low": rep.c_low, "c_high": rep.c_high,
                              "within": rep.within(bset.c_emp)}
    return summary, EXIT_OK


def cmd_dbeta(run, args):
    from .smooth_distance import d_beta_arrays

    bset = _geometry(run.config)
    beta = float(run.config["operator"]["beta"])
    if args.points:
        X, _ = _read_points(args.points, bset.dim_n)
    elif args.query:
        X = np.atleast_2d(_vector(args.query, "--query"))
    else:
        raise ConfigError("give --points or --query")
    D, G, err = d_beta_arrays(bset, beta, X, gradient=True)
    n = bset.dim_n
    run.write_csv("dbeta.csv",
                  [f"x{i + 1}" for i in range(n)] + ["D"]
                  + [f"g{i + 1}" for i in range(n)] + ["est_error"],
                  (list(x) + [d] + list(g) + [e] for x, d, g, e in
                   zip(X, D, G, err)))
    return {"points": len(X), "beta": beta,
            "D_over_dist": [float((D / bset.distance(X)).min()),
                            float((D / bset.distance(X)).max())]}, EXIT_OK


def _rule(name):
    from .whitney import COMPACT_RULE, PAPER_RULE

    return PAPER_RULE if name == "paper" else COMPACT_RULE


def cmd_whitney(run, args):
    from .whitney import whitney_decompose

    bset = _geometry(run.config)
    w = run.config["whitney"]
    dec = whitney_decompose(bset, float(w["box"]), int(w["max_level"]),
                            rule=_rule(w["rule"]))
    dec.to_csv(run.path("cubes.csv"))
    summary = {"cubes": len(dec), "tube_cubes": int(dec.tube.sum()),
               "overlaps": dec.count_overlaps(),
               "violations": dec.condition_violations(),
               "side_over_distance": list(dec.side_distance_ratio())}
    ok = summary["overlaps"] == 0 and sum(summary["violations"]) == 0
    return summary, EXIT_OK if ok else EXIT_CHECK


def _cutoff_spec(config, bset):
    from .whitney import CutoffSpec

    c = config["cutoff"]
    center = (bset.nearest_point(np.zeros(bset.dim_n)) if c["center"] is None
              else np.asarray(c["center"], dtype=float))
    return CutoffSpec(np.atleast_1d(center).ravel(), float(c["radius"]),
                      float(c["epsilon"]))


def cmd_cutoff(run, args):
    from .whitney import (COMPACT_RULE, associate_boundary_balls,
                          auto_max_level, cutoff_roi, whitney_decompose)

    bset = _geometry(run.config)
    spec = _cutoff_spec(run.config, bset)
    level = args.max_level or auto_max_level(COMPACT_RULE, bset.dim_n,
                                             spec.epsilon)
    dec = whitney_decompose(bset, float(run.config["whitney"]["box"]), level,
                            rule=COMPACT_RULE, roi=cutoff_roi(spec))
    Q = associate_boundary_balls(dec, bset, spec)
    n = bset.dim_n
    run.write_csv("balls.csv",
                  [f"c{i + 1}" for i in range(n)] + ["radius", "kind", "cube"],
                  (list(c) + [r, k, s] for c, r, k, s in
                   zip(Q.centers, Q.radii, Q.kind, Q.source)))
    c, r, mult = Q.distinct()
    sample = bset.points[np.linalg.norm(bset.points - spec.center, axis=1)
                         <= 3.5 * spec.radius]
    summary = {"max_level": level, "cubes": len(dec), "balls": len(Q),
               "kinds": Q.counts(), "distinct": len(r),
               "overlap": Q.overlap(sample),
               "min_containment_margin": float(Q.containment_margin().min())}
    ok = summary["min_containment_margin"] >= -1e-12
    return summary, EXIT_OK if ok else EXIT_CHECK


def cmd_alpha(run, args):
    from .alpha import alpha_number

    bset = _geometry(run.config)
    x = _vector(args.x, "--x") if args.x else bset.nearest_point(
        np.zeros(bset.dim_n))
    a = run.config["alpha"]
    res = alpha_number(bset, np.atleast_1d(x).ravel(), args.r,
                       n_starts=int(a["n_starts"]), maxiter=int(a["maxiter"]),
                       seed=run.config["seed"],
                       target_nodes=int(a["target_nodes"]))
    summary = {"center": res.center, "radius": res.radius,
               "alpha": res.value, "lp_status": res.lp_status,
               "duality_gap": res.duality_gap, "merge_error": res.merge_error,
               "nodes": res.nodes, "evaluations": res.evaluations,
               "flat_measure": res.minimizer.to_json()}
    run.write_json("alpha.json", summary)
    return summary, EXIT_OK


def cmd_ur_sum(run, args):
    from .alpha import ur_carleson_sum

    bset = _geometry(run.config)
    x = _vector(args.x, "--x") if args.x else bset.nearest_point(
        np.zeros(bset.dim_n))
    a = run.config["alpha"]
    res = ur_carleson_sum(bset, np.atleast_1d(x).ravel(), args.r,
                          args.n_scales, n_starts=int(a["n_starts"]),
                          maxiter=int(a["maxiter"]), seed=run.config["seed"],
                          target_nodes=int(a["target_nodes"]))
    run.write_csv("ur_scales.csv", ["k", "scale", "contribution", "partial"],
                  ([k, s, c, res.partial(k + 1)] for k, (s, c) in
                   enumerate(zip(res.scales, res.per_scale))))
    n = bset.dim_n
    run.write_csv("ur_cells.csv",
                  ["k", "scale"] + [f"y{i + 1}" for i in range(n)]
                  + ["mass", "alpha", "contribution"],
                  ([k, s] + list(y) + [m, al, c]
                   for k, s, y, m, al, c in res.cells))
    return {"normalized": res.normalized, "total": res.total,
            "cells": len(res.cells), "skipped": res.skipped,
            "sigma_ball": res.sigma_ball}, EXIT_OK


def _field_csv(run, name, grid, values, extra=None):
    n = grid.n
    centers = grid.centers()
    cols = [f"x{i + 1}" for i in range(n)] + ["value"]
    extra = extra or {}
    cols += list(extra)
    run.write_csv(name, cols + ["role"],
                  (list(c) + [v] + [e[k] for e in extra.values()]
                   + [int(r)] for k, (c, v, r) in
                   enumerate(zip(centers, values, grid.roles.ravel()))))


def cmd_solve(run, args):
    from .solver import green_infinity

    bset = _geometry(run.config)
    params = _params(run.config, bset)
    grid = _grid(run.config, bset)
    G = green_infinity(grid, params)
    _field_csv(run, "green.csv", grid, G.values, {"D": G.D})
    lo, hi = G.interior_extrema()
    return {"cells": grid.size, "iterations": G.report["iterations"],
            "residual": G.report["residual"], "interior_min": lo,
            "interior_max": hi}, EXIT_OK


def cmd_hm(run, args):
    from .solver import corkscrew_cell, harmonic_measure, patch_mask

    bset = _geometry(run.config)
    params = _params(run.config, bset)
    grid = _grid(run.config, bset)
    c = run.config["cutoff"]
    centre = (bset.nearest_point(np.zeros(bset.dim_n)) if c["center"] is None
              else np.asarray(c["center"], dtype=float))
    centre = np.atleast_1d(centre).ravel()
    if args.pole:
        pole = _vector(args.pole, "--pole")
    else:
        cell = corkscrew_cell(grid, centre, float(c["radius"]))
        pole = grid.centers(np.array([cell]))[0]
    patch = patch_mask(grid, centre, args.patch_radius)
    est = harmonic_measure(grid, params, pole, patch, direct=args.direct)
    summary = {"pole": pole, "patch_center": centre,
               "patch_radius": args.patch_radius, "raw": est.raw,
               "total": est.total, "value": est.value,
               "leakage": est.leakage}
    run.write_json("harmonic_measure.json", summary)
    return summary, EXIT_OK


def _family(config, bset, mesh):
    from .carleson import BallFamily

    f = config["family"]
    return BallFamily.build(bset, mesh, n_centers=int(f["n_centers"]),
                            n_radii=int(f["n_radii"]), stride=int(f["stride"]),
                            r_min=f["r_min"], r_max=f["r_max"])


def _report_out(run, rep, n):
    rep.to_csv(run.path("carleson.csv"), n)
    summary = rep.summary()
    run.write_json("carleson.json", summary)
    return summary


def cmd_green_check(run, args):
    from .carleson import IntegrationMesh, green_ratio_functional
    from .solver import green_infinity

    bset = _geometry(run.config)
    params = _params(run.config, bset)
    grid = _grid(run.config, bset)
    G = green_infinity(grid, params)
    mesh = IntegrationMesh.from_grid(grid)
    fam = _family(run.config, bset, mesh)
    D_alpha = G.D if params.alpha == params.beta else None
    rep = green_ratio_functional(G.values, bset, params, fam, mesh,
                                 D_alpha=D_alpha)
    summary = _report_out(run, rep, bset.dim_n)
    ok = np.isfinite(summary["sup"])
    return summary, EXIT_OK if ok else EXIT_CHECK


def cmd_carleson(run, args):
    from .carleson import IntegrationMesh, cm_norm

    bset = _geometry(run.config)
    n = bset.dim_n
    X, vals = _read_points(args.field, n)
    axes = [np.unique(X[:, k]) for k in range(n)]
    steps = [np.diff(a).min() for a in axes if len(a) > 1]
    if not steps:
        raise ConfigError("field CSV must sample a grid")
    spacing = float(min(steps))
    dist = bset.distance(X)
    tube_radius = args.tube_radius or max(2 * spacing,
                                          5 * bset.resolution_h)
    tube = dist <= tube_radius
    mesh = IntegrationMesh(X, spacing ** n, dist, tube, spacing, None, ~tube)
    fam = _family(run.config, bset, mesh)
    f = vals[:, 0] if vals.shape[1] == 1 else vals
    rep = cm_norm(f, bset, fam, mesh, descriptor=Path(args.field).name,
                  exponent=args.exponent)
    return _report_out(run, rep, n), EXIT_OK


def cmd_counterexample(run, args):
    from .carleson import counterexample_integral

    try:
        Rs = [float(v) for v in args.R_list.split(",")]
    except ValueError as exc:
        raise ConfigError("--R-list must be comma-separated numbers") from exc
    vals = [counterexample_integral(R, rule=args.rule) for R in Rs]
    run.write_csv("counterexample.csv", ["R", "I"], zip(Rs, vals))
    return {"R": Rs, "I": vals,
            "increments": list(np.diff(vals))}, EXIT_OK


def cmd_paper_checks(run, args):
    from .checks import PROFILES, run_suite

    if args.criteria:
        try:
            crit = [int(c) for c in args.criteria.split(",")]
        except ValueError as exc:
            raise ConfigError("--criteria must list integers") from exc
    else:
        if args.profile not in PROFILES:
            raise ConfigError(f"unknown profile {args.profile!r}; "
                              f"choose from {sorted(PROFILES)}")
        crit = PROFILES[args.profile]

    def report(res):
        print(res.line(), file=sys.stderr, flush=True)

    results = run_suite(crit, report=report)
    rows = [r.to_dict() for r in results]
    run.write_json("checks.json", rows)
    run.write_csv("checks.csv", ["criterion", "passed", "elapsed", "budget"],
                  ([r.number, r.passed, r.elapsed, r.budget] for r in results))
    passed = all(r.passed for r in results)
    summary = {"profile": args.profile, "criteria": list(crit),
               "passed": passed,
               "failed": [r.number for r in results if not r.passed]}
    return summary, EXIT_OK if passed else EXIT_CHECK


COMMANDS = {
    "geometry": cmd_geometry,
    "dbeta": cmd_dbeta,
    "whitney": cmd_whitney,
    "cutoff": cmd_cutoff,
    "alpha": cmd_alpha,
    "ur-sum": cmd_ur_sum,
    "solve": cmd_solve,
    "hm": cmd_hm,
    "green-check": cmd_green_check,
    "carleson": cmd_carleson,
    "counterexample": cmd_counterexample,
    "paper-checks": cmd_paper_checks,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int,
                        help="worker threads (fallback: CODIMLAB_THREADS)")
    common.add_argument("--json", action="store_true",
                        help="print the summary as JSON")
    common.add_argument("--print-config", action="store_true",
                        help="print the merged configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    geo = argparse.ArgumentParser(add_help=False)
    geo.add_argument("--geometry", help="e.g. flat:h=0.01, graph:lam=0.1, "
                     "cantor:level=6 or cloud.csv?d=1")
    op = argparse.ArgumentParser(add_help=False)
    op.add_argument("--beta", type=float)
    op.add_argument("--gamma", type=float)
    op.add_argument("--alpha", type=float)
    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--box", type=float, help="half-width of the grid box")
    grid.add_argument("--cells", type=int, help="cells per axis")

    parser = argparse.ArgumentParser(
        prog="codimlab", description="Numerical experiments on elliptic "
        "operators with boundaries of high codimension.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geometry", parents=[common, geo],
                       help="build a boundary set")
    p.add_argument("--ahlfors", action="store_true",
                   help="sample Ahlfors-regularity ratios")
    p = sub.add_parser("dbeta", parents=[common, geo, op],
                       help="smooth distance and its gradient")
    p.add_argument("--points", help="CSV of query points")
    p.add_argument("--query", help="one point, comma-separated")
    sub.add_parser("whitney", parents=[common, geo],
                   help="Whitney decomposition and its checks")
    p = sub.add_parser("cutoff", parents=[common, geo],
                       help="boundary balls of the cutoff construction")
    p.add_argument("--max-level", type=int)
    for name, hlp in (("alpha", "alpha number of one ball"),
                      ("ur-sum", "Carleson sum of squared alpha numbers")):
        p = sub.add_parser(name, parents=[common, geo], help=hlp)
        p.add_argument("--x", help="ball centre, comma-separated")
        p.add_argument("--r", type=float, required=True)
        if name == "ur-sum":
            p.add_argument("--n-scales", type=int, default=4)
    sub.add_parser("solve", parents=[common, geo, op, grid],
                   help="Green function with pole at infinity")
    p = sub.add_parser("hm", parents=[common, geo, op, grid],
                       help="harmonic measure of a boundary patch")
    p.add_argument("--pole", help="pole, comma-separated (default corkscrew)")
    p.add_argument("--patch-radius", type=float, default=0.5)
    p.add_argument("--direct", action="store_true",
                   help="solve the Dirichlet problem instead of the adjoint")
    sub.add_parser("green-check", parents=[common, geo, op, grid],
                   help="solver plus ratio functional, end to end")
    p = sub.add_parser("carleson", parents=[common, geo],
                       help="Carleson norm of a field sampled on a grid")
    p.add_argument("--field", required=True, help="CSV: coordinates, values")
    p.add_argument("--exponent", type=float,
                   help="power of dist in the weight (default d - n)")
    p.add_argument("--tube-radius", type=float)
    p = sub.add_parser("counterexample", parents=[common],
                       help="divergent integral of the cosine example")
    p.add_argument("--R-list", default="100,1000,10000")
    p.add_argument("--rule", choices=("adaptive", "gauss"),
                   default="adaptive")
    p = sub.add_parser("paper-checks", parents=[common],
                       help="run the acceptance suite")
    p.add_argument("--profile", default="full")
    p.add_argument("--criteria", help="comma-separated criterion numbers")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else
                        logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
        if args.print_config:
            print(yaml.safe_dump(config, sort_keys=True), end="")
            return EXIT_OK
        _set_threads(config)
        run = Run(config, args.json)
    except (ConfigError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary, status = COMMANDS[args.command](run, args)
    except (ConfigError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CodimlabError as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        run.finish(args.command, {"error": str(exc)}, EXIT_CHECK,
                   failed_stage=args.command)
        return EXIT_CHECK
    except Exception as exc:  # report, keep partial artifacts, exit 3
        log.exception("internal error")
        print(f"{args.command}: internal error: {exc}", file=sys.stderr)
        try:
            run.finish(args.command, {"error": str(exc)}, EXIT_INTERNAL,
                       failed_stage=args.command)
        except Exception:
            pass
        return EXIT_INTERNAL
    return run.finish(args.command, summary, status)


if __name__ == "__main__":
    sys.exit(main())
