"""Statistical comparators and identity checks used by ``cbrw verify``."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from . import taboo as tb
from .errors import GridMismatch, TooFewExceedances, TooFewSamples
from .walk import big_jump_ratio, exact_tail_grid, normalizer_L


@dataclass(frozen=True)
class Thresholds:
    """Acceptance thresholds in one place."""
    reduction_ks: float = 0.0205
    nu_identity: float = 1e-8
    nu_oracle_rel: float = 1e-4
    growth_rel: float = 0.05
    fixed_point_residual: float = 1e-8
    init_agreement: float = 1e-6
    limit_ks: float = 0.05
    renewal_fit_rel: float = 0.02
    small_lambda_rel: float = 0.20
    identity_sigmas: float = 3.0
    tail_bound_ratio: float = 2.0
    plateau_sigmas: float = 3.0
    min_ks_samples: int = 1000
    min_exceedances: int = 10
    plateau_exceedances: int = 100
    bias_ratio: float = 0.01
    truncated_fraction: float = 0.01

    def to_dict(self):
        return asdict(self)


THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class KSResult:
    distance: float
    scale: float
    n: int


def empirical_phi(sample, lambdas):
    """Fraction of ``sample`` (transformed maxima) that is ``>= lambda``."""
    x = np.sort(np.asarray(sample, dtype=float))
    return 1.0 - np.searchsorted(x, np.asarray(lambdas, dtype=float), side="left") / len(x)


def ks_compare(sample, phi, lambdas, fit_scale=False, scales=None, min_samples=THRESHOLDS.min_ks_samples):
    """Sup distance on ``lambdas`` between the empirical curve and ``phi``.

    ``phi`` is a callable of lambda.  With ``fit_scale`` the curve
    ``phi(c lambda)`` is used with ``c`` chosen on a log grid to minimize
    the distance; the chosen ``c`` is reported.
    """
    sample = np.asarray(sample)
    if len(sample) < min_samples:
        raise TooFewSamples(f"{len(sample)} samples < {min_samples}")
    lambdas = np.asarray(lambdas, dtype=float)
    emp = empirical_phi(sample, lambdas)
    if not fit_scale:
        return KSResult(float(np.max(np.abs(emp - phi(lambdas)))), 1.0, len(sample))
    if scales is None:
        scales = np.exp(np.linspace(-3.0, 3.0, 601))
    best = (math.inf, 1.0)
    for c in scales:
        d = float(np.max(np.abs(emp - phi(c * lambdas))))
        if d < best[0]:
            best = (d, float(c))
    return KSResult(best[0], best[1], len(sample))


def ks_quantile(n, level=0.99):
    """Asymptotic one-sample KS critical value ``c(level) / sqrt(n)``."""
    from scipy.stats import kstwobign
    return float(kstwobign.ppf(level) / math.sqrt(n))


# identity for the no-return term ---------------------------------------------

def no_return_lhs(config, t, u, n_paths, rng):
    """Direct Monte Carlo of ``q I(t; u) / ((1 - alpha) beta)`` for a single catalyst at 0.

    ``I`` sums over an exponential(beta) delay, an exit jump and a walk that
    must stay off the catalyst and sit above ``u`` at time ``t``.
    """
    law = config.jump
    c = config.catalysts[0]
    w = int(c.w)
    q, b = law.q, c.beta
    delay = rng.exponential(1.0 / b, n_paths)
    live = delay <= t
    idx = np.flatnonzero(live)
    pos = w + law.sample(rng, len(idx))
    remaining = t - delay[idx]
    ok = np.ones(len(idx), dtype=bool)
    clock = np.zeros(len(idx))
    active = np.arange(len(idx))
    while len(active):
        clock[active] += rng.exponential(1.0 / q, len(active))
        moving = clock[active] <= remaining[active]
        active = active[moving]
        pos[active] += law.sample(rng, len(active))
        hit = pos[active] == w
        ok[active[hit]] = False
        active = active[~hit]
    success = np.zeros(n_paths)
    success[idx] = (ok & (pos > w + u)).astype(float)
    vals = (q / b) * success
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))


def no_return_rhs(config, est, t, u):
    """Right-hand side through ``P_0(S(s) > u)`` and the estimated return law.

    ``t`` must be a multiple of the taboo grid step.  Returns
    ``(value, standard_error)``; the error propagates the sampling noise of
    the return-time sample.
    """
    law = config.jump
    c = config.catalysts[0]
    q, b = law.q, c.beta
    f = est.pair(0, 0)
    h = f.step
    n = int(round(t / h)) + 1
    if abs((n - 1) * h - t) > 1e-9 * max(t, 1.0):
        raise GridMismatch(f"t={t} is not a multiple of the taboo grid step {h}")
    args = h * np.arange(n)
    T = exact_tail_grid(law, args, [u])[0][:, 0]      # T[k] = P_0(S(k h) > u)
    vals = f.values[:n] if len(f.values) >= n else np.concatenate(
        [f.values, np.full(n - len(f.values), f.values[-1])])
    fbar = tb.ImproperCdf(h, vals, f.mass)
    F00 = tb.convolve(tb.exponential_cdf(q, h, n - 1), fbar)
    GF = tb.convolve_exp(b, F00)
    g1 = -np.expm1(-b * args)
    int_F = tb.stieltjes(F00, T)[-1]
    int_G = tb.stieltjes(g1, T)[-1]
    int_GF = tb.stieltjes(GF, T)[-1]
    value = T[-1] - int_F - ((b - q) / b) * (int_G - int_GF)
    se = 0.0
    if f.samples is not None and f.n_paths > 1:
        # each return time tau contributes int T(t - tau - e) q e^{-q e} de
        h0 = tb.exp_stieltjes(q, T, h)
        taus = f.samples[f.samples <= t]
        contrib = np.zeros(f.n_paths)
        contrib[:len(taus)] = np.interp(t - taus, args, h0)
        se = float(contrib.std(ddof=1) / math.sqrt(f.n_paths)) * (1.0 + abs(b - q) / b)
    return float(value), se


def no_return_check(config, est, t, u, n_paths=10**6, rng=None):
    """``(lhs, rhs, mc_error)`` with ``mc_error`` combining both sides."""
    if config.N != 1:
        raise ValueError("the no-return identity is checked for a single catalyst")
    if u < 0:
        raise ValueError("u must be nonnegative")
    rng = rngmod.as_generator(rng)
    lhs, se_l = no_return_lhs(config, t, u, n_paths, rng)
    rhs, se_r = no_return_rhs(config, est, t, u)
    return lhs, rhs, math.sqrt(se_l**2 + se_r**2)


# empirical bounds and ratios -------------------------------------------------

def exceed_prob(ensemble, t, level):
    """``P(M_t > level)`` over usable replicates; empty populations never exceed."""
    i = ensemble.record.index(t)
    m = ensemble.record.M[ensemble.usable(), i]
    return float(np.mean(m > level)), int(np.sum(m > level)), len(m)


def tail_bound_check(ensemble, nu, tail, t_grid, r_grid, lam_grid, max_ratio=THRESHOLDS.tail_bound_ratio):
    """``C_hat = max lambda^{-1} e^{nu r} P(M_t > lambda^{-1/gamma} L_{t+r})``.

    Returns a dict with the per-``t`` maxima, the overall ``C_hat`` and the
    stability ratio over the upper half of the ``t`` grid.
    """
    gamma = tail.gamma
    per_t = []
    rows = []
    for t in t_grid:
        best = 0.0
        for r in r_grid:
            L = normalizer_L(tail, t + r)
            for lam in lam_grid:
                p, k, n = exceed_prob(ensemble, t, lam ** (-1.0 / gamma) * L)
                val = math.exp(nu * r) * p / lam
                rows.append({"t": float(t), "r": float(r), "lambda": float(lam), "p": p, "value": val})
                best = max(best, val)
        per_t.append(best)
    per_t = np.array(per_t)
    upper = per_t[len(per_t) // 2:]
    ratio = float(upper.max() / upper.min()) if upper.min() > 0 else math.inf
    C_hat = float(per_t.max())
    return {"C_hat": C_hat, "per_t": [float(x) for x in per_t], "stability_ratio": ratio,
            "finite": bool(np.isfinite(C_hat)), "stable": bool(ratio < max_ratio), "table": rows}


def small_lambda_ratio(ensemble, tail, t, lambdas, min_exceedances=THRESHOLDS.min_exceedances):
    """``lambda^{-1} P(M_t > lambda^{-1/gamma} L_t)`` for each ``lambda``."""
    gamma = tail.gamma
    L = normalizer_L(tail, t)
    out = []
    for lam in lambdas:
        p, k, n = exceed_prob(ensemble, t, lam ** (-1.0 / gamma) * L)
        if k < min_exceedances:
            raise TooFewExceedances(f"lambda={lam}: {k} exceedances < {min_exceedances}")
        out.append({"t": float(t), "lambda": float(lam), "ratio": p / lam,
                    "se": math.sqrt(p * (1 - p) / n) / lam, "exceedances": k})
    return out


def small_lambda_plateau(table, min_exceedances=THRESHOLDS.plateau_exceedances):
    """Ratio at the smallest lambda with at least ``min_exceedances`` exceedances."""
    ok = [row for row in table if row["exceedances"] >= min_exceedances]
    if not ok:
        raise TooFewExceedances("no lambda reaches the plateau exceedance count")
    return min(ok, key=lambda row: row["lambda"])


def big_jump_report(config, tail, t_grid, c_grid):
    """Ratios ``P(S(t) > c L_t) / (q t R(c L_t))`` with a trend verdict per ``c``.

    The trend holds when ``|ratio - 1|`` is nonincreasing along ``t_grid``.
    """
    rows = []
    verdicts = {}
    for c in c_grid:
        vals = [big_jump_ratio(config.jump, tail, t, c) for t in t_grid]
        for t, v in zip(t_grid, vals):
            rows.append({"t": float(t), "c": float(c), "ratio": float(v)})
        dist = np.abs(np.array(vals) - 1.0)
        verdicts[float(c)] = bool(np.all(np.diff(dist) <= 1e-12))
    return {"table": rows, "trend": verdicts}


def binomial_sigma(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)
