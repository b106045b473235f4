"""Command-line entry point: ``rcapacity <subcommand> [flags]``.

Every subcommand writes ``<name>.csv`` and ``<name>.json`` into ``--out``;
``--plot`` adds ``<name>.png``.  A fixed ``--seed`` gives byte-identical CSV
and JSON whatever ``--threads`` is.  Exit codes: 0 ok, 2 validation,
3 non-convergence (or too few hits), 4 budget.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, capacity, fpp, ldp, pathflow, plotting
from .errors import RCapacityError, UnsupportedExponent, ValidationError
from .lattice import build_full_box
from .weights import ConstantWeights, WeightModel

log = logging.getLogger("rcapacity")

_MU_N_LIST = (8, 16, 32)
_MU_SAMPLES = 400


# ------------------------------------------------------------------ output

def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def _write_csv(path: Path, rows: list, fields: list | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row.get(k)) for k in fields])


class _Run:
    def __init__(self, args, name):
        self.args = args
        self.name = name
        self.dir = Path(args.out)
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, suffix, stem=None):
        return self.dir / f"{stem or self.name}.{suffix}"

    def config(self) -> dict:
        skip = {"func", "out", "threads", "plot", "config", "verbose"}
        return {k: v for k, v in sorted(vars(self.args).items()) if k not in skip}

    def finish(self, rows, summary, plot_fn=None, fields=None):
        _write_csv(self.path("csv"), rows, fields)
        _write_json(self.path("json"), {"command": self.name, "config": self.config(), **summary})
        if self.args.plot and plot_fn is not None:
            plot_fn(self.path("png"))


def _model(args):
    if getattr(args, "constant", None) is not None:
        return ConstantWeights(args.constant)
    return WeightModel(args.alpha, args.r)


def _mu_hat(args, model, d) -> tuple:
    """Supplied mu_hat, or a deterministic estimate from the run seed."""
    if args.mu_hat is not None:
        return args.mu_hat, args.mu_stderr
    est = fpp.estimate_mu(d, model, _MU_N_LIST, _MU_SAMPLES, args.box_margin,
                          seed=args.seed, threads=args.threads)
    return est.mu_hat, est.stderr


# ------------------------------------------------------------ subcommands

def cmd_capacity(args):
    run = _Run(args, "capacity")
    if args.r <= 1:
        raise UnsupportedExponent(
            f"r={args.r} <= 1 is outside the convex solver; use small_r_upper_bound (the bounds command)"
        )
    n_list = sorted(set(args.n))
    rows, partial = [], False
    for n in n_list:
        dom = build_full_box(args.d, n)
        pot, est = capacity.solve_potential(dom, args.r, args.tol, method=args.method,
                                            omega=args.omega, strict=not args.allow_partial)
        partial |= not est.converged
        rows.append({
            "d": args.d, "r": args.r, "n": n, "lambda": est.value, "lower": est.lower_bound,
            "upper": est.upper_bound, "gap": est.duality_gap,
            "kappa": capacity.kappa(args.d, args.r, n, est.value) if (args.r < args.d or n >= 2) else math.nan,
            "iterations": est.iterations, "residual": est.final_residual, "converged": est.converged,
        })
        if args.dump_potential:
            with open(run.path("csv", f"potential_n{n}"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([*[f"x{i}" for i in range(args.d)], "f"])
                for c, f in zip(dom.coords, pot.f):
                    w.writerow([*c.tolist(), repr(float(f))])
    lam = [row["lambda"] for row in rows]
    monotone = all(b <= a + 1e-9 for a, b in zip(lam, lam[1:]))
    summary = {"rows": rows, "monotone": monotone, "partial": partial}
    if len(rows) == 1:
        summary["lambda"] = rows[0]["lambda"]
    if args.r == args.d and len(rows) >= 2 and rows[0]["n"] >= 2:
        ln = np.log([row["n"] for row in rows])
        A = np.column_stack([np.ones_like(ln), 1.0 / ln])
        (c0, c1), *_ = np.linalg.lstsq(A, [row["kappa"] for row in rows], rcond=None)
        summary["fit"] = {"model": "c0 + c1/log(n)", "c0": c0, "c1": c1}
    run.finish(rows, summary, lambda p: plotting.capacity_plot(rows, args.d, args.r, p))
    for row in rows:
        print(f"n={row['n']}: lambda = {row['lambda']:.10g}")
    return 0


def cmd_bounds(args):
    run = _Run(args, "bounds")
    dom = build_full_box(args.d, args.n)
    rows = []
    if args.r <= 1:
        rows.append({"quantity": "small_r_upper_bound", "value": capacity.small_r_upper_bound(dom, args.r)})
    else:
        for kind in ("indicator", "logarithmic", "linear"):
            if kind == "logarithmic" and args.n < 2:
                continue
            rows.append({"quantity": f"testfn_{kind}", "value": capacity.testfn_upper_bound(dom, args.r, kind)})
        pm = pathflow.edge_marginals(dom)
        rows.append({"quantity": "flow_lower_bound", "value": capacity.flow_lower_bound(pm, args.r)})
        _, est = capacity.solve_potential(dom, args.r, args.tol, method=args.method, omega=args.omega)
        rows.append({"quantity": "solver", "value": est.value})
        rows.append({"quantity": "dual_certificate", "value": est.lower_bound})
        if args.r < args.d or args.n >= 2:
            rows.append({"quantity": "kappa", "value": capacity.kappa(args.d, args.r, args.n, est.value)})
    run.finish(rows, {"rows": rows}, lambda p: plotting.bounds_plot(rows, p))
    for row in rows:
        print(f"{row['quantity']}: {row['value']:.10g}")
    return 0


def cmd_paths(args):
    run = _Run(args, "paths")
    dom = build_full_box(args.d, args.n)
    pm = pathflow.edge_marginals(dom)
    shells = pm.shells()
    rows = [{"edge": k, "shell": int(s), "p_e": float(p)} for k, (s, p) in enumerate(zip(shells, pm.p))]
    origin = np.flatnonzero((dom.edges == dom.source).any(axis=1))
    exact = pm.exact()
    summary = {
        "boundary_count": pm.boundary_count,
        "origin_mass": str(sum(exact[i] for i in origin)),
        "total_mass": float(pm.p.sum()),
        "lagrangian_constant": pathflow.lagrangian_constant(pm, args.r) if args.r > 1 else None,
    }
    run.finish(rows, summary, lambda p: plotting.paths_plot(shells, pm.p, args.d, p))
    print(f"|boundary| = {pm.boundary_count}, origin mass = {summary['origin_mass']}, "
          f"C_n = {summary['lagrangian_constant']}")
    return 0


def cmd_fpp_mu(args):
    run = _Run(args, "fpp_mu")
    model = _model(args)
    est = fpp.estimate_mu(args.d, model, args.n_list, args.samples, args.box_margin,
                          seed=args.seed, threads=args.threads, n_boot=args.n_boot)
    est.write_records(run.path("csv", "fpp_samples"), args.seed)
    run.finish(est.table, est.to_dict(),
               lambda p: plotting.mu_plot(est.table, est.mu_hat, est.intercept, p))
    print(f"mu_hat = {est.mu_hat:.6g} +/- {est.stderr:.2g}")
    return 0


def cmd_ldp_tail(args):
    run = _Run(args, "ldp_tail")
    model = WeightModel(args.alpha, args.r)
    mu, mu_se = _mu_hat(args, model, args.d)
    methods = ["plain", "tilted"] if args.method == "both" else [args.method]
    results = {}
    for m in methods:
        s = {"plain": args.plain_samples, "tilted": args.tilted_samples}[m] or args.samples
        est = ldp.estimate_upper_tail(args.d, model, args.n, args.xi, mu, m, s, args.tilt_region,
                                      args.tilt, seed=args.seed, threads=args.threads,
                                      box_margin=args.box_margin, M=args.M, mu_stderr=mu_se)
        results[m] = est.to_dict()
    summary = {"mu_hat": mu, "mu_stderr": mu_se, "estimates": results}
    if len(results) == 2:
        a, b = results["plain"], results["tilted"]
        se = math.hypot(a["stderr"], b["stderr"])
        summary["z_score"] = (a["p_hat"] - b["p_hat"]) / se if se > 0 else 0.0
    rows = [{"method": k, **{f: v[f] for f in ("p_hat", "stderr", "log_p_hat", "n_samples", "n_hits",
                                               "low_confidence")}} for k, v in results.items()]
    run.finish(rows, summary, lambda p: plotting.estimates_plot(results, p))
    for row in rows:
        print(f"{row['method']}: p_hat = {row['p_hat']:.6g} +/- {row['stderr']:.2g} ({row['n_hits']} hits)")
    if "z_score" in summary:
        print(f"agreement z-score: {summary['z_score']:.3f}")
    return 0


def cmd_rate_curve(args):
    run = _Run(args, "rate_curve")
    model = WeightModel(args.alpha, args.r)
    mu, _ = _mu_hat(args, model, args.d)
    rows = ldp.rate_curve(args.d, model, args.xi, args.n_list, mu, args.samples,
                          method="tilted" if args.method == "both" else args.method,
                          tilt_region=args.tilt_region, tilt=args.tilt, M=args.M,
                          lambda_value=args.lambda_value, seed=args.seed, threads=args.threads,
                          box_margin=args.box_margin)
    run.finish(rows, {"mu_hat": mu, "rows": rows}, lambda p: plotting.rate_plot(rows, p))
    for row in rows:
        print(f"n={row['n']}: rate = {row['rate']:.4g} (theory {row['theory']:.4g})")
    return 0


def cmd_localize(args):
    run = _Run(args, "localize")
    model = WeightModel(args.alpha, args.r)
    mu, _ = _mu_hat(args, model, args.d)
    res = ldp.localization_stat(args.d, model, args.n, args.xi, args.R, args.eps0, args.samples, mu,
                                method="tilted" if args.method == "both" else args.method,
                                tilt_region=args.tilt_region, tilt=args.tilt, M=args.M,
                                seed=args.seed, threads=args.threads, box_margin=args.box_margin)
    out = res.to_dict()
    run.finish([out], {"mu_hat": mu, **out}, lambda p: plotting.localization_plot(out, p))
    print(f"freq_loc = {res.freq_loc:.4g} +/- {res.stderr:.2g}, signal = {res.signal:.4g}")
    return 0


def cmd_inclusion_check(args):
    run = _Run(args, "inclusion_check")
    model = WeightModel(args.alpha, args.r)
    mu, _ = _mu_hat(args, model, args.d)
    dom = fpp.passage_domain(args.d, args.n, args.box_margin)
    r_ell = args.r if 1 < args.r <= args.d else args.d
    ell = ldp.ell_M(args.d, r_ell, args.M, args.n)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(99,)))
    configs = [("adversarial", c) for c in ldp.adversarial_configs(dom, args.n, ell, args.xi, args.eps, mu, rng)]
    configs += [("random", fpp.sample_config(dom, model, rng)) for _ in range(args.trials)]
    rows = []
    for i, (kind, cfg) in enumerate(configs):
        ev = ldp.inclusion_events(args.d, args.n, args.xi, args.eps, args.M, cfg, mu_hat=mu, ell=ell)
        ok = (not (ev["F1"] and ev["F2"] and ev["G"])) or ev["tail"]
        rows.append({"trial": i, "kind": kind, **ev, "implication": ok})
    violations = sum(not row["implication"] for row in rows)
    run.finish(rows, {"mu_hat": mu, "ell": ell, "configs": len(rows), "violations": violations,
                      "premise_true": sum(row["F1"] and row["F2"] and row["G"] for row in rows)},
               lambda p: plotting.inclusion_plot(rows, p))
    print(f"violations: {violations} of {len(rows)} configurations")
    return 0 if violations == 0 else 1


def cmd_sum_tail(args):
    run = _Run(args, "sum_tail")
    model = WeightModel(args.alpha, args.r)
    rep = ldp.sum_tail_check(model, args.k, args.n_list, args.samples, args.c,
                             seed=args.seed, threads=args.threads)
    run.finish(rep.rows, {"n0": rep.n0, "c": rep.c, "rows": rep.rows},
               lambda p: plotting.sum_tail_plot(rep.rows, p))
    print(f"n0 = {rep.n0}")
    return 0


# ----------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes output")
    p.add_argument("--plot", action="store_true", help="also render <name>.png")
    p.add_argument("--config", help="JSON run config (see schema/run_config.schema.json)")


def _weights(p, r_default=1.0):
    p.add_argument("--alpha", type=float, default=1.0, help="Weibull tail rate")
    p.add_argument("-r", "--r", type=float, default=r_default, help="Weibull shape")


def _ldp_flags(p, n_list=False):
    p.add_argument("-d", "--d", type=int, default=2)
    _weights(p, 0.5)
    if n_list:
        p.add_argument("-n", "--n-list", dest="n_list", type=int, nargs="+", default=[8, 16, 24, 32])
    else:
        p.add_argument("-n", "--n", type=int, default=8)
    p.add_argument("--xi", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--method", choices=["plain", "tilted", "both"], default="tilted")
    p.add_argument("--tilt-region", choices=["origin", "target", "ends", "balls"], default=None)
    p.add_argument("--tilt", type=float, default=None, help="uniform tilt (default: mean-matching profile)")
    p.add_argument("-M", "--M", type=float, default=1.0, help="ball-radius constant in ell_M")
    p.add_argument("--mu-hat", type=float, default=None, help="time constant (estimated if omitted)")
    p.add_argument("--mu-stderr", type=float, default=None)
    p.add_argument("--box-margin", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcapacity", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", help="solve lambda_{d,r}(n) on FullBox domains")
    p.add_argument("-d", "--d", type=int, required=True)
    p.add_argument("-r", "--r", type=float, required=True)
    p.add_argument("-n", "--n", type=int, nargs="+", required=True)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--method", choices=["auto", "gauss-seidel", "direct"], default="auto")
    p.add_argument("--omega", type=float, default=1.5)
    p.add_argument("--dump-potential", action="store_true")
    p.add_argument("--allow-partial", action="store_true", help="keep unconverged solves (exit 0)")
    _common(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("bounds", help="test-function bounds, flow bound, solver value, kappa")
    p.add_argument("-d", "--d", type=int, required=True)
    p.add_argument("-r", "--r", type=float, required=True)
    p.add_argument("-n", "--n", type=int, required=True)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--method", choices=["auto", "gauss-seidel", "direct"], default="auto")
    p.add_argument("--omega", type=float, default=1.5)
    _common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("paths", help="edge marginals of the straight-path measure")
    p.add_argument("-d", "--d", type=int, required=True)
    p.add_argument("-n", "--n", type=int, required=True)
    p.add_argument("-r", "--r", type=float, default=2.0, help="exponent for C_n")
    _common(p)
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("fpp-mu", help="estimate the time constant")
    p.add_argument("-d", "--d", type=int, default=2)
    _weights(p)
    p.add_argument("--constant", type=float, default=None, help="deterministic weights tau = c")
    p.add_argument("-n", "--n-list", dest="n_list", type=int, nargs="+", default=[8, 16, 32, 64])
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--box-margin", type=float, default=1.0)
    p.add_argument("--n-boot", type=int, default=200)
    _common(p)
    p.set_defaults(func=cmd_fpp_mu)

    p = sub.add_parser("ldp-tail", help="estimate P(T_n > (mu + xi) n)")
    _ldp_flags(p)
    p.add_argument("--plain-samples", type=int, default=None)
    p.add_argument("--tilted-samples", type=int, default=None)
    _common(p)
    p.set_defaults(func=cmd_ldp_tail)

    p = sub.add_parser("rate-curve", help="normalized empirical rates against the theory")
    _ldp_flags(p, n_list=True)
    p.add_argument("--lambda", dest="lambda_value", type=float, default=None,
                   help="capacity value for the 1 < r < d constant")
    _common(p)
    p.set_defaults(func=cmd_rate_curve)

    p = sub.add_parser("localize", help="localization frequency on the tail event")
    _ldp_flags(p)
    p.add_argument("-R", "--R", type=int, default=1)
    p.add_argument("--eps0", type=float, default=0.25)
    _common(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("inclusion-check", help="test F1 & F2 & G => tail on many configurations")
    p.add_argument("-d", "--d", type=int, default=2)
    _weights(p, 2.0)
    p.add_argument("-n", "--n", type=int, default=32)
    p.add_argument("--xi", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("-M", "--M", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--mu-hat", type=float, default=None)
    p.add_argument("--mu-stderr", type=float, default=None)
    p.add_argument("--box-margin", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_inclusion_check)

    p = sub.add_parser("sum-tail", help="tail of a k-term Weibull sum against the envelope")
    _weights(p, 0.5)
    p.add_argument("-k", "--k", type=int, default=3)
    p.add_argument("-n", "--n-list", dest="n_list", type=float, nargs="+",
                   default=[5, 10, 15, 20, 25, 30, 40, 50, 60])
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("-c", "--c", type=float, default=0.2)
    _common(p)
    p.set_defaults(func=cmd_sum_tail)
    return ap


def load_schema() -> dict:
    return json.loads(resources.files("rcapacity").joinpath("schema/run_config.schema.json").read_text())


def _parse(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        try:
            jsonschema.validate(cfg, load_schema())
        except jsonschema.ValidationError as exc:
            raise ValidationError(f"config {args.config}: {exc.message}") from None
        # config values become defaults; flags given on the command line still win
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise ValidationError(f"config keys not used by {args.command}: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = ap.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = _parse(sys.argv[1:] if argv is None else argv)
    except RCapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RCapacityError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
