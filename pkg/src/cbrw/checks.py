"""The acceptance checks, each returning named records for the verify report.

Every check consumes a :class:`~cbrw.pipeline.Workspace`, so the expensive
artifacts (taboo laws, spectral result, limit profile, main ensemble) are
computed once and shared.  A record has ``name``, ``value``, ``threshold``
and ``pass``; ``pass`` is ``None`` for diagnostics that do not gate.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import harness as hn
from . import rng as rngmod
from . import simulator as sm
from .errors import CbrwError, StatisticalError
from .pipeline import apply_model_overrides, floats
from .walk import exact_tail_grid

TH = hn.THRESHOLDS


@dataclass
class Check:
    name: str
    value: object
    threshold: object
    passed: bool | None
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"name": self.name, "value": _plain(self.value), "threshold": _plain(self.threshold),
               "pass": self.passed}
        if self.detail:
            out["detail"] = _plain(self.detail)
        return out


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _skip(name, reason):
    return Check(name, None, None, None, {"skipped": reason})


class Context:
    """Lazily computed shared inputs for the checks."""

    def __init__(self, ws):
        self.ws = ws
        self._ensemble = None

    @property
    def config(self):
        return self.ws.config

    def ensemble(self):
        if self._ensemble is None:
            self._ensemble = self.ws.ensemble()
        return self._ensemble

    def start_index(self):
        return self.config.index_of(self.config.start)


# 1 -------------------------------------------------------------------------

def reduced_model(config):
    """All branching switched off and catalyst holding rates set to ``q``.

    The resulting system is a single particle performing the plain walk.
    """
    over = {}
    for k in range(config.N):
        over[f"catalysts.{k}.alpha"] = "0"
        over[f"catalysts.{k}.beta"] = repr(float(config.jump.q))
    return apply_model_overrides(config, over)


def discrete_ks(sample, cdf_at):
    """Sup distance between the empirical c.d.f. of an integer sample and ``cdf_at`` on integers."""
    sample = np.sort(np.asarray(sample))
    ys = np.arange(sample[0] - 1, sample[-1] + 1)
    emp = np.searchsorted(sample, ys, side="right") / len(sample)
    return float(np.max(np.abs(emp - cdf_at(ys))))


def check_reduction(ctx):
    ws = ctx.ws
    p = ws.params
    t = p["verify.reduction_t"]
    cfg = reduced_model(ctx.config)
    sim = ws.sim_config(t_max=t, checkpoints=(t,), replicates=p["verify.reduction_replicates"])
    ens = ws.ensemble(cfg, sim)
    m = ens.record.M[ens.usable(), 0] - cfg.start
    ys_all = np.arange(m.min() - 1, m.max() + 1)
    tails, _ = exact_tail_grid(cfg.jump, [t], ys_all)
    table = dict(zip(ys_all.tolist(), (1.0 - tails[0]).tolist()))
    d = discrete_ks(m, lambda ys: np.array([table[int(y)] for y in ys]))
    return [Check("reduction_ks", d, TH.reduction_ks, d <= TH.reduction_ks,
                  {"t": t, "replicates": len(m)})]


# 2 -------------------------------------------------------------------------

def sample_D(config, est, lam):
    """``D(lambda)`` built directly from raw hitting-time samples."""
    N = config.N
    a, m, b = config.alphas, config.means, config.betas
    g = b / (b + lam)
    D = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            f = est.pair(i, j)
            D[i, j] = (1 - a[i]) * g[i] * np.exp(-lam * f.samples).sum() / f.n_paths
        D[i, i] += a[i] * m[i] * g[i]
    return D


def nu_oracle(config, est):
    """Root of ``rho(D(lambda)) = 1`` from exact sample transforms and Brent's method."""
    rho = lambda lam: float(np.max(np.linalg.eigvals(sample_D(config, est, lam)).real)) - 1.0
    hi = 1.0
    while rho(hi) > 0:
        hi *= 2.0
    return optimize.brentq(rho, 0.0, hi, xtol=1e-14, rtol=1e-13)


def check_malthus(ctx):
    ws = ctx.ws
    res = ws.spectral()
    est = ws.taboo()
    out = []
    if ctx.config.N == 1:
        from .spectral import scalar_identity
        r = abs(scalar_identity(ctx.config, est, res.nu) - 1.0)
        out.append(Check("nu_scalar_identity", r, TH.nu_identity, r <= TH.nu_identity, {"nu": res.nu}))
    else:
        r = abs(res.residuals["rho_nu_minus_1"])
        out.append(Check("nu_rho_identity", r, TH.nu_identity, r <= TH.nu_identity, {"nu": res.nu}))
    nu_o = nu_oracle(ctx.config, est)
    rel = abs(res.nu / nu_o - 1.0)
    out.append(Check("nu_oracle_rel", rel, TH.nu_oracle_rel, rel <= TH.nu_oracle_rel,
                     {"nu": res.nu, "oracle": nu_o}))
    bias = est.max_bias_ratio()
    out.append(Check("taboo_horizon_bias", bias, TH.bias_ratio, bias <= TH.bias_ratio))
    return out


# 3 -------------------------------------------------------------------------

def check_growth(ctx):
    lo, hi = floats(ctx.ws.params["verify.growth_window"])
    ens = ctx.ensemble()
    nu = ctx.ws.spectral().nu
    slope = ens.growth_slope(lo, hi)
    rel = abs(slope / nu - 1.0)
    trunc = ens.fractions()["truncated"]
    return [Check("growth_rate_rel", rel, TH.growth_rel, rel <= TH.growth_rel,
                  {"slope": slope, "nu": nu, "window": [lo, hi]}),
            Check("truncated_fraction", trunc, TH.truncated_fraction, trunc <= TH.truncated_fraction)]


# 4 -------------------------------------------------------------------------

def check_fixed_point(ctx):
    ws = ctx.ws
    a = ws.phi()
    b = ws.phi(init="constant")
    diff = float(np.max(np.abs(a.phi - b.phi)))
    return [Check("fixed_point_residual", a.residual, TH.fixed_point_residual,
                  a.residual <= TH.fixed_point_residual, {"iterations": a.iterations}),
            Check("init_agreement", diff, TH.init_agreement, diff <= TH.init_agreement,
                  {"iterations": [a.iterations, b.iterations]})]


# 5 -------------------------------------------------------------------------

def phi_curve(ctx):
    """``phi(.; start)`` as a callable of lambda."""
    sol = ctx.ws.phi()
    j = ctx.start_index()
    if j is not None:
        return lambda lam: sol(lam, j)
    raise CbrwError("off-catalyst starts are compared through extend_to_x; not wired into verify")


def limit_ks_table(ctx, checkpoints):
    ens = ctx.ensemble()
    tail = ctx.ws.tail()
    phi = phi_curve(ctx)
    lams = ctx.ws.phi().lambdas
    rows = []
    for t in checkpoints:
        sample = sm.transformed_max_sample(ens, t, tail)
        raw = hn.ks_compare(sample, phi, lams)
        fit = hn.ks_compare(sample, phi, lams, fit_scale=True)
        rows.append({"t": t, "ks": raw.distance, "ks_fitted": fit.distance, "scale": fit.scale,
                     "n": fit.n})
    return rows


def check_limit_ks(ctx):
    cps = floats(ctx.ws.params["verify.ks_checkpoints"])
    try:
        rows = limit_ks_table(ctx, cps)
    except StatisticalError as exc:
        return [Check("limit_ks_final", None, TH.limit_ks, False, {"error": str(exc)})]
    d = [r["ks_fitted"] for r in rows]
    mono = all(b <= a for a, b in zip(d, d[1:]))
    return [Check("limit_ks_nonincreasing", d, "nonincreasing", mono, {"rows": rows}),
            Check("limit_ks_final", d[-1], TH.limit_ks, d[-1] <= TH.limit_ks,
                  {"t": cps[-1], "scale": rows[-1]["scale"]})]


# 6 -------------------------------------------------------------------------

def check_renewal(ctx):
    ws = ctx.ws
    res = ws.spectral()
    if res.K is None:
        return [_skip("renewal_fit_vs_K", "single-catalyst constant"),
                _skip("small_lambda_plateau_vs_K", "single-catalyst constant")]
    theta = float(res.theta[0])
    rel = abs(theta / res.K - 1.0)
    out = [Check("renewal_fit_vs_K", rel, TH.renewal_fit_rel, rel <= TH.renewal_fit_rel,
                 {"theta": theta, "K": res.K, "r2": res.residuals.get("fit_r2")})]
    t = ws.params["verify.small_lambda_t"]
    lams = floats(ws.params["verify.small_lambda_lambdas"])
    try:
        table = hn.small_lambda_ratio(ctx.ensemble(), ws.tail(), t, lams)
        row = hn.small_lambda_plateau(table)
    except StatisticalError as exc:
        out.append(Check("small_lambda_plateau_vs_K", None, TH.small_lambda_rel, False, {"error": str(exc)}))
        return out
    rel6 = abs(row["ratio"] / res.K - 1.0)
    out.append(Check("small_lambda_plateau_vs_K", rel6, TH.small_lambda_rel, rel6 <= TH.small_lambda_rel,
                     {"t": t, "lambda": row["lambda"], "ratio": row["ratio"], "K": res.K,
                      "table": table}))
    return out


# 7 -------------------------------------------------------------------------

def identity_pairs(text):
    out = []
    for item in str(text).split(","):
        t, u = item.split(":")
        out.append((float(t), float(u)))
    return out


def check_identity(ctx):
    ws = ctx.ws
    if ctx.config.N != 1:
        return [_skip("no_return_identity", "single-catalyst identity")]
    est = ws.taboo()
    n = ws.params["verify.identity_paths"]
    out = []
    for idx, (t, u) in enumerate(identity_pairs(ws.params["verify.identity_pairs"])):
        rng = rngmod.stream(ws.seed, rngmod.IDENTITY, idx)
        lhs, rhs, err = hn.no_return_check(ctx.config, est, t, u, n_paths=n, rng=rng)
        z = abs(lhs - rhs) / err if err > 0 else math.inf
        out.append(Check(f"no_return_identity[t={t!r},u={u!r}]", z, TH.identity_sigmas,
                         z <= TH.identity_sigmas, {"lhs": lhs, "rhs": rhs, "se": err}))
    return out


# 8 -------------------------------------------------------------------------

def check_bound(ctx):
    p = ctx.ws.params
    res = hn.tail_bound_check(ctx.ensemble(), ctx.ws.spectral().nu, ctx.ws.tail(),
                                floats(p["verify.bound_t"]), floats(p["verify.bound_r"]),
                                floats(p["verify.bound_lambdas"]))
    ok = res["finite"] and res["stable"]
    return [Check("tail_bound_stability", res["stability_ratio"], TH.tail_bound_ratio, ok,
                  {"C_hat": res["C_hat"], "per_t": res["per_t"]})]


# 9 -------------------------------------------------------------------------

def check_plateau(ctx):
    ws = ctx.ws
    j = ctx.start_index()
    ens = ctx.ensemble()
    horizons = floats(ws.params["verify.plateau_t"])
    n = int(ens.usable().sum())
    proxies = [ens.local_extinction_proxy(t) for t in horizons]
    try:
        Q, lam_max = ws.plateau()
    except CbrwError as exc:
        return [Check("q_plateau_vs_proxy", None, TH.plateau_sigmas, False, {"error": str(exc)})]
    q = float(Q[j])
    p_final = ens.local_extinction_proxy()
    sigma = hn.binomial_sigma(p_final, n)
    z = abs(q - p_final) / sigma if sigma > 0 else math.inf
    gaps = [abs(pr - q) for pr in proxies]
    trend = all(b <= a for a, b in zip(gaps, gaps[1:]))
    return [Check("q_plateau_vs_proxy", z, TH.plateau_sigmas, z <= TH.plateau_sigmas,
                  {"Q": q, "lam_max": lam_max, "proxy": p_final, "sigma": sigma,
                   "t": float(ens.checkpoints[-1]), "label": "proxy"}),
            Check("proxy_trend_toward_Q", gaps, "nonincreasing", trend,
                  {"horizons": horizons, "proxies": proxies, "Q": q})]


# 10 ------------------------------------------------------------------------

def check_determinism(ctx):
    """Two fresh runs of a small taboo estimate and a small ensemble hash equal."""
    from . import taboo as tb
    ws = ctx.ws
    cfg = ctx.config

    def digest():
        h = hashlib.sha256()
        est = tb.estimate_all(cfg, 2000, ws.seed, horizon=ws.params["taboo.horizon"], cells=4096)
        for k in sorted(est, key=str):
            h.update(est[k].to_csv().encode())
        sim = ws.sim_config(t_max=4.0, checkpoints=(2.0, 4.0), replicates=200, chunk_size=50)
        ens = sm.run_ensemble(cfg, sim)
        for c in range(2):
            h.update(ens.checkpoint_csv(c).encode())
        return h.hexdigest()

    a, b = digest(), digest()
    return [Check("determinism", a == b, True, a == b, {"hash": a})]


# extras --------------------------------------------------------------------

def check_big_jump(ctx):
    p = ctx.ws.params
    rep = hn.big_jump_report(ctx.config, ctx.ws.tail(), floats(p["verify.bigjump_t"]),
                             floats(p["verify.bigjump_c"]))
    ok = all(rep["trend"].values())
    return [Check("big_jump_trend", rep["trend"], "|ratio-1| nonincreasing", ok,
                  {"table": rep["table"]})]


ALL = [
    ("reduction", check_reduction),
    ("malthus", check_malthus),
    ("growth", check_growth),
    ("fixed_point", check_fixed_point),
    ("limit_ks", check_limit_ks),
    ("renewal", check_renewal),
    ("identity", check_identity),
    ("bound", check_bound),
    ("plateau", check_plateau),
    ("determinism", check_determinism),
    ("big_jump", check_big_jump),
]


def run_all(ws, only=None):
    ctx = Context(ws)
    out = []
    for key, fn in ALL:
        if only and key not in only:
            continue
        out.extend(fn(ctx))
    return out
