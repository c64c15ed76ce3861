"""Acceptance criteria on the pinned single-catalyst model.

Each test records one PASS/FAIL line that is printed in the terminal
summary (see conftest.py).  Run directly with ``python3 tests/test_acceptance.py``
to print the same lines without pytest.
"""
import hashlib
import math
import os
import time

import numpy as np
import pytest
from scipy import optimize

from cbrw import checks
from cbrw import cli
from cbrw.harness import THRESHOLDS as TH

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # pragma: no cover
    ACCEPTANCE_LINES = {}


def record(number, title, ok, message):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {message}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def ctx(workspace):
    return checks.Context(workspace)


def test_c01_reduction(ctx):
    t0 = time.perf_counter()
    (c,) = checks.check_reduction(ctx)
    elapsed = time.perf_counter() - t0
    ok = c.passed and elapsed < 60
    record(1, "reduction to the plain walk", ok,
           f"KS {c.value:.4f} <= {TH.reduction_ks} ({c.detail['replicates']} replicates, {elapsed:.1f}s)")
    assert ok


def _oracle_nu(est, config):
    """Exact transform of the raw return times, root by Brent's method."""
    c = config.catalysts[0]
    f = est.pair(0, 0)
    tau, n = f.samples, f.n_paths

    def g(lam):
        gs = c.beta / (c.beta + lam)
        return c.alpha * c.offspring.mean * gs + (1 - c.alpha) * gs * np.exp(-lam * tau).sum() / n - 1.0

    return optimize.brentq(g, 1e-6, 10.0, xtol=1e-14, rtol=1e-14)


def test_c02_malthusian(ctx, est, spectral):
    from cbrw.spectral import scalar_identity
    ident = abs(scalar_identity(ctx.config, est, spectral.nu) - 1.0)
    nu_o = _oracle_nu(est, ctx.config)
    rel = abs(spectral.nu / nu_o - 1.0)
    ok = ident <= TH.nu_identity and rel <= TH.nu_oracle_rel
    record(2, "Malthusian parameter", ok,
           f"nu {spectral.nu:.8f}, |G*(nu)-1| {ident:.1e} <= {TH.nu_identity:g}, "
           f"oracle {nu_o:.8f} rel {rel:.1e} <= {TH.nu_oracle_rel:g}")
    assert ok


def test_c03_growth(ctx):
    c = checks.check_growth(ctx)[0]
    record(3, "growth rate", c.passed,
           f"slope {c.detail['slope']:.4f} vs nu {c.detail['nu']:.4f}, rel {c.value:.3f} <= {TH.growth_rel}")
    assert c.passed


def test_c04_fixed_point(ctx):
    res, agree = checks.check_fixed_point(ctx)
    ok = res.passed and agree.passed
    record(4, "fixed point quality", ok,
           f"residual {res.value:.1e} <= {TH.fixed_point_residual:g}, "
           f"init agreement {agree.value:.1e} <= {TH.init_agreement:g}")
    assert ok


def test_c05_limit_law(ctx):
    mono, final = checks.check_limit_ks(ctx)
    rows = mono.detail["rows"]
    seq = ", ".join(f"t={r['t']:g}: {r['ks_fitted']:.3f} (c={r['scale']:.2f})" for r in rows)
    ok = mono.passed and final.passed
    record(5, "limit law KS", ok,
           f"{seq}; nonincreasing {mono.passed}, final {final.value:.3f} <= {TH.limit_ks}")
    assert ok


def test_c06_renewal_constant(ctx):
    fit, mc = checks.check_renewal(ctx)
    ok = fit.passed and mc.passed
    record(6, "renewal constant", ok,
           f"fit {fit.detail['theta']:.4f} vs K {fit.detail['K']:.4f} rel {fit.value:.4f} <= {TH.renewal_fit_rel}; "
           f"MC plateau {mc.detail['ratio']:.3f} (t={mc.detail['t']:g}, lambda={mc.detail['lambda']:g}) "
           f"rel {mc.value:.3f} <= {TH.small_lambda_rel}")
    assert ok


def test_c07_identity(ctx):
    rows = checks.check_identity(ctx)
    ok = len(rows) == 3 and all(r.passed for r in rows)
    msg = "; ".join(f"{r.name.split('[')[1][:-1]}: {r.value:.2f} sigma" for r in rows)
    record(7, "no-return identity", ok, f"{msg} (<= {TH.identity_sigmas:g})")
    assert ok


def test_c08_bound(ctx):
    (c,) = checks.check_bound(ctx)
    record(8, "tail bound constant", c.passed,
           f"C_hat {c.detail['C_hat']:.3f}, upper-half variation {c.value:.3f} < {TH.tail_bound_ratio:g}")
    assert c.passed


def test_c09_plateau(ctx):
    main, trend = checks.check_plateau(ctx)
    ok = main.passed and trend.passed
    if main.value is None:
        record(9, "Q plateau vs proxy", False, main.detail.get("error", "no plateau"))
    else:
        d = main.detail
        record(9, "Q plateau vs proxy", ok,
               f"phi({d['lam_max']:.0e}) {d['Q']:.4f} vs proxy {d['proxy']:.4f} at t={d['t']:g}: "
               f"{main.value:.1f} sigma (<= {TH.plateau_sigmas:g}); proxy trend toward plateau {trend.passed}")
    assert ok


def _tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            if f.startswith("manifest-"):
                continue          # records the absolute output path
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_c10_determinism(tmp_path):
    model = tmp_path / "pinned.json"
    from cbrw.model import pinned_model
    model.write_text(pinned_model().dumps())
    trees = []
    for name in ("a", "b"):
        out = tmp_path / name
        for command in ("taboo", "simulate", "solve"):
            cli.main([command, "--model", str(model), "--out", str(out), "--seed", "7"])
        cli.main(["verify", "--model", str(model), "--out", str(out), "--seed", "7"])
        cli.main(["report", "--model", str(model), "--out", str(out), "--seed", "7"])
        trees.append(_tree(out))
    same = trees[0] == trees[1] and len(trees[0]) > 10
    record(10, "determinism", same,
           f"{len(trees[0])} files from taboo/simulate/solve/verify/report byte-identical across two runs")
    assert same


if __name__ == "__main__":  # pragma: no cover
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
