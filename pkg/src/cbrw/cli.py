"""Command line entry point: ``cbrw <subcommand> --model PATH [options]``.

Exit codes: 0 success, 2 configuration problem (including a model that is
not supercritical where growth is required), 3 numerical failure, 4 a
statistical check failed.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys

import numpy as np

from . import harness as hn
from . import model as mdl
from . import spectral as sp
from .errors import CbrwError, StatisticalError
from .pipeline import (Manifest, Params, Workspace, apply_model_overrides, floats,
                       write_json, write_text)

COMMANDS = ("classify", "malthus", "taboo", "simulate", "solve", "verify", "report")


def build_parser():
    parser = argparse.ArgumentParser(prog="cbrw", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--model", required=True, help="model JSON file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="cbrw-out", help="output and cache directory")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="stage parameter (e.g. sim.replicates=2000) or model field "
                             "(e.g. model.catalysts.0.alpha=0.5); repeatable")
    return parser


def make_workspace(args):
    params = Params.from_overrides(args.override)
    config = mdl.load_model(args.model)
    config = apply_model_overrides(config, params.model_overrides)
    overrides = dict(item.split("=", 1) for item in args.override)
    manifest = Manifest(model_path=os.path.abspath(args.model), command=args.command, seed=args.seed,
                        out=os.path.abspath(args.out), overrides=overrides,
                        model_hash=config.hash())
    ws = Workspace(config, params, args.seed, args.out, manifest)
    write_json(os.path.join(args.out, f"manifest-{args.command}.json"),
               dict(manifest.to_dict(), hash=manifest.hash,
                    params=params.values, model=config.to_dict()))
    return ws


def _fmt(v):
    return np.array2string(np.asarray(v, dtype=float), precision=6, separator=", ")


def cmd_classify(ws):
    c = sp.classify(ws.config, ws.taboo())
    print(f"rho(D(0)) = {c.rho0:.6f} +/- {c.sigma:.2g}")
    print(f"margin    = {c.margin:.3g}")
    print(f"verdict   = {c.verdict}")
    write_json(os.path.join(ws.out, "classify.json"),
               {"rho0": c.rho0, "sigma": c.sigma, "margin": c.margin, "verdict": c.verdict,
                "manifest": ws.manifest_hash})
    return 0


def cmd_malthus(ws):
    res = ws.spectral()
    print(f"nu    = {res.nu:.10f}")
    if res.K is not None:
        print(f"K     = {res.K:.6f}")
    print(f"theta = {_fmt(res.theta)}")
    for k, v in sorted(res.residuals.items()):
        print(f"  {k}: {v:.3g}")
    return 0


def cmd_taboo(ws):
    est = ws.taboo()
    print(f"{'pair':>8} {'mass':>10} {'bias':>10}")
    for key, f in sorted(est.items(), key=lambda kv: str(kv[0])):
        print(f"{str(key):>8} {f.mass:10.6f} {f.horizon_bias:10.2e}")
    print(f"cached under {os.path.join(ws.out, 'taboo', ws.taboo_key() + '.json')}")
    return 0


def cmd_simulate(ws):
    ens = ws.ensemble()
    s = ens.summary()
    for t, m in zip(s["checkpoints"], s["mean_total"]):
        print(f"t = {t:6.2f}   mean |N(t)| = {m:.4g}")
    print(f"truncated {s['fractions']['truncated']:.3%}  extinct {s['fractions']['extinct']:.3%}")
    return 0


def cmd_solve(ws):
    sol = ws.phi()
    print(f"iterations {sol.iterations}, residual {sol.residual:.3g}")
    print(f"theta      {_fmt(sol.theta)}")
    print(f"phi(lam_max) {_fmt(sol.Q)}")
    return 0


def cmd_verify(ws):
    from . import checks
    ws.spectral()   # gate: raises NotSupercritical before any comparator runs
    results = checks.run_all(ws)
    report = {"manifest": ws.manifest_hash, "model_hash": ws.config.hash(), "seed": ws.seed,
              "thresholds": hn.THRESHOLDS.to_dict(), "checks": [r.to_dict() for r in results]}
    write_json(os.path.join(ws.out, "report.json"), report)
    failed = 0
    for r in results:
        tag = {True: "PASS", False: "FAIL", None: "SKIP"}[r.passed]
        failed += r.passed is False
        print(f"{tag}  {r.name}: value={_short(r.value)} threshold={r.threshold}")
    if failed:
        raise StatisticalError(f"{failed} check(s) failed; see {os.path.join(ws.out, 'report.json')}")
    return 0


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _csv(rows, columns):
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else str(r[c])
                           for c in columns) + "\n")
    return buf.getvalue()


def cmd_report(ws):
    from . import checks, plots
    from . import simulator as sm
    ctx = checks.Context(ws)
    res = ws.spectral()
    sol = ws.phi()
    ens = ctx.ensemble()
    tail = ws.tail()
    p = ws.params
    folder = os.path.join(ws.out, "report")
    os.makedirs(folder, exist_ok=True)

    N = ws.config.N
    phi_rows = [dict({"lambda": float(lam)}, **{f"phi_w{j + 1}": float(sol.phi[j, i]) for j in range(N)})
                for i, lam in enumerate(sol.lambdas)]
    write_text(os.path.join(folder, "phi.csv"),
               _csv(phi_rows, ["lambda"] + [f"phi_w{j + 1}" for j in range(N)]))

    emp_rows = []
    for t in floats(p["verify.ks_checkpoints"]):
        e = hn.empirical_phi(sm.transformed_max_sample(ens, t, tail), sol.lambdas)
        emp_rows += [{"t": float(t), "lambda": float(l), "empirical": float(v)} for l, v in zip(sol.lambdas, e)]
    write_text(os.path.join(folder, "limit_law.csv"), _csv(emp_rows, ["t", "lambda", "empirical"]))

    g_rows = [{"t": float(t), "mean_total": float(m), "var_total": float(v)}
              for t, m, v in zip(ens.checkpoints, ens.mean_total(), ens.var_total())]
    write_text(os.path.join(folder, "growth.csv"), _csv(g_rows, ["t", "mean_total", "var_total"]))

    r_rows = []
    for t in floats(p["verify.plateau_t"]):
        r_rows += hn.small_lambda_ratio(ens, tail, t, floats(p["verify.small_lambda_lambdas"]), min_exceedances=0)
    write_text(os.path.join(folder, "small_lambda_ratio.csv"),
               _csv(r_rows, ["t", "lambda", "ratio", "se", "exceedances"]))

    bj = hn.big_jump_report(ws.config, tail, floats(p["verify.bigjump_t"]), floats(p["verify.bigjump_c"]))
    write_text(os.path.join(folder, "big_jump.csv"), _csv(bj["table"], ["t", "c", "ratio"]))

    n = int(ens.usable().sum())
    x_rows = []
    for t in ens.checkpoints:
        pr = ens.local_extinction_proxy(t)
        x_rows.append({"t": float(t), "proxy": pr, "sigma": hn.binomial_sigma(pr, n)})
    write_text(os.path.join(folder, "extinction_proxy.csv"), _csv(x_rows, ["t", "proxy", "sigma"]))

    j = ctx.start_index()
    try:
        Q, lam_max = ws.plateau()
        q_j = float(Q[j]) if j is not None else None
    except CbrwError:
        q_j, lam_max = None, None
    plots.limit_law(emp_rows, phi_rows, os.path.join(folder, "limit_law.png"))
    plots.growth(g_rows, res.nu, os.path.join(folder, "growth.png"))
    plots.small_lambda_ratio(r_rows, res.K, os.path.join(folder, "small_lambda_ratio.png"))
    plots.big_jump(bj["table"], os.path.join(folder, "big_jump.png"))
    plots.extinction_proxy(x_rows, q_j, os.path.join(folder, "extinction_proxy.png"))

    write_json(os.path.join(folder, "summary.json"),
               {"manifest": ws.manifest_hash, "spectral": res.to_dict(), "phi": sol.sidecar(),
                "plateau": {"Q": q_j, "lam_max": lam_max},
                "ensemble": ens.summary(res.nu)})
    print(f"report written to {folder}")
    return 0


HANDLERS = {
    "classify": cmd_classify,
    "malthus": cmd_malthus,
    "taboo": cmd_taboo,
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        ws = make_workspace(args)
        return HANDLERS[args.command](ws)
    except CbrwError as exc:
        print(f"cbrw {args.command}: {exc}", file=sys.stderr)
        for v in getattr(exc, "violations", [])[1:]:
            print(f"  also: {v}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cbrw {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
