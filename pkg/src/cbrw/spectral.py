"""Perron root of ``D(lambda)``, Malthusian parameter, renewal constants.

``D(lambda)`` has entries

    d_ij = delta_ij alpha_i m_i G_i*(lambda)
           + (1 - alpha_i) G_i*(lambda) Fbar_ij*(lambda),

with ``G_i*(lambda) = beta_i / (lambda + beta_i)`` and ``Fbar_ij`` the taboo
hitting law from ``w_i`` to ``w_j`` avoiding the other catalysts.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph

from . import taboo as tb
from .errors import (BracketError, ConvergenceError, DegenerateError, FitError,
                     NoConvergence)
from .walk import TailModel, exact_tail_grid, normalizer_L

RHO_TOL = 1e-12
NU_TOL = 1e-10
MARGIN_FLOOR = 0.01
SUPERCRITICAL = "supercritical"
NOT_SUPERCRITICAL = "not_supercritical"
INDETERMINATE = "indeterminate"


def g_star(beta, lam):
    return beta / (lam + beta)


def _fbar_star(est, config, lam):
    N = config.N
    out = np.empty((N, N))
    for i in range(N):
        for j in range(N):
            out[i, j] = tb.laplace(est.pair(i, j), lam)
    return out


def build_D(config, est, lam):
    """The matrix ``D(lambda)`` from taboo estimates."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    a, m, b = config.alphas, config.means, config.betas
    g = g_star(b, lam)
    D = ((1.0 - a) * g)[:, None] * _fbar_star(est, config, lam)
    D[np.diag_indices_from(D)] += a * m * g
    return D


def build_D_derivative(config, est, lam):
    """``-dD/dlambda``, i.e. the matrix of ``int s e^{-lambda s} dG^N_ij(s)``."""
    a, m, b = config.alphas, config.means, config.betas
    N = config.N
    g = g_star(b, lam)
    dg = b / (lam + b) ** 2
    F = _fbar_star(est, config, lam)
    Fm = np.array([[tb.laplace_moment(est.pair(i, j), lam) for j in range(N)] for i in range(N)])
    M = (1.0 - a)[:, None] * (dg[:, None] * F + g[:, None] * Fm)
    M[np.diag_indices_from(M)] += a * m * dg
    return M


def perron(matrix, tol=RHO_TOL, max_iter=100_000):
    """Perron root and right eigenvector (``v[0] = 1``) by power iteration.

    Iterates on ``A + I``, which has the same Perron vector and is aperiodic
    even when ``A`` is a permutation-like matrix.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    if np.any(A < 0):
        raise ValueError("matrix must be nonnegative")
    n = A.shape[0]
    if n == 1:
        return float(A[0, 0]), np.ones(1)
    n_comp, _ = csgraph.connected_components(A > 0, directed=True, connection="strong")
    if n_comp > 1:
        raise ConvergenceError("matrix is reducible: no strictly positive Perron vector")
    B = A + np.eye(n)
    v = np.ones(n) / n
    rho_prev = None
    for _ in range(max_iter):
        w = B @ v
        rho = float(v @ w / (v @ v))
        s = w.sum()
        if s <= 0:
            raise ConvergenceError("power iteration collapsed to zero")
        v = w / s
        if rho_prev is not None and abs(rho - rho_prev) < tol:
            break
        rho_prev = rho
    else:
        raise ConvergenceError("power iteration did not converge (reducible or degenerate matrix?)")
    v = v / v[0] if v[0] > 0 else v
    if np.any(v <= 0):
        raise ConvergenceError("Perron vector is not strictly positive (reducible matrix?)")
    rho = float(np.dot(B @ v, v) / np.dot(v, v)) - 1.0
    return rho, v


def left_perron(matrix, **kw):
    rho, u = perron(np.asarray(matrix).T, **kw)
    return rho, u


def perron_sigma(config, est, lam=0.0):
    """First-order error bar of ``rho(D(lambda))`` from the taboo binomial errors."""
    D = build_D(config, est, lam)
    _, v = perron(D)
    _, u = left_perron(D)
    a, b = config.alphas, config.betas
    g = g_star(b, lam)
    N = config.N
    var = 0.0
    for i in range(N):
        for j in range(N):
            f = est.pair(i, j)
            # crude but conservative: the binomial error of the total mass
            se = tb.standard_error(f)
            var += (u[i] * v[j] * (1 - a[i]) * g[i] * se) ** 2
    return math.sqrt(var) / float(u @ v)


@dataclass(frozen=True)
class Classification:
    verdict: str
    rho0: float
    sigma: float
    margin: float

    @property
    def supercritical(self):
        return self.verdict == SUPERCRITICAL


def classify(config, est, margin_floor=MARGIN_FLOOR):
    """Supercritical iff ``rho(D(0)) > 1 + margin``; near the boundary, indeterminate."""
    rho0, _ = perron(build_D(config, est, 0.0))
    sigma = perron_sigma(config, est, 0.0)
    margin = max(3.0 * sigma, margin_floor)
    if np.all(config.alphas == 0):
        # plain walk: D(0) is substochastic
        return Classification(NOT_SUPERCRITICAL, rho0, sigma, margin)
    if rho0 > 1.0 + margin:
        verdict = SUPERCRITICAL
    elif rho0 < 1.0 - margin:
        verdict = NOT_SUPERCRITICAL
    else:
        verdict = INDETERMINATE
    return Classification(verdict, rho0, sigma, margin)


def rho_of(config, est, lam):
    return perron(build_D(config, est, lam))[0]


def malthusian(config, est, tol=NU_TOL):
    """Root of ``rho(D(lambda)) = 1`` by bisection."""
    rho0 = rho_of(config, est, 0.0)
    if rho0 <= 1.0:
        raise BracketError(f"rho(D(0)) = {rho0:.6g} <= 1: no positive Malthusian parameter")
    lo, hi = 0.0, 1.0
    while rho_of(config, est, hi) >= 1.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise BracketError("could not bracket the Malthusian parameter")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rho_of(config, est, mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scalar_identity(config, est, nu):
    """``G*(nu)`` for a single catalyst; equals 1 at the Malthusian parameter."""
    c = config.catalysts[0]
    g = g_star(c.beta, nu)
    return c.alpha * c.offspring.mean * g + (1 - c.alpha) * g * tb.laplace(est.pair(0, 0), nu)


def tilted_mean(config, est, nu):
    """``int s e^{-nu s} dG(s)`` for a single catalyst."""
    return float(build_D_derivative(config, est, nu)[0, 0])


def forcing_weights(config, est, nu):
    """Per-catalyst ``b_i`` with ``int e^{-nu s} I_i(s; u) ds ~ lambda e^{-nu t} b_i``
    when ``u = lambda^{-1/gamma} L_t``.

    Uses the single-big-jump form ``P(S(s) > u) ~ q s R(u)``.
    """
    q = config.jump.q
    a, b = config.alphas, config.betas
    N = config.N
    f0 = q / (q + nu)
    Fsum = np.array([sum(f0 * tb.laplace(est.pair(i, k), nu) for k in range(N)) for i in range(N)])
    return q * (1.0 / nu**2) * (1.0 - a) * b * (nu + q) / (q * (nu + b)) * (1.0 - Fsum)


def compute_K(config, est, nu, floor=1e-12):
    """Renewal constant ``K`` for a single catalyst.

    ``F*_00 = q/(q+nu) Fbar*_00`` includes the exponential(q) exit time; the
    leading ``q`` makes ``q t R(u)`` the single-big-jump tail of the walk.
    """
    if config.N != 1:
        raise ValueError("compute_K is defined for a single catalyst; use theta_vector")
    c = config.catalysts[0]
    q, a, b = config.jump.q, c.alpha, c.beta
    denom = tilted_mean(config, est, nu)
    if not denom > floor:
        raise DegenerateError("int s e^{-nu s} dG(s) is below the grid noise floor")
    f00 = q / (q + nu) * tb.laplace(est.pair(0, 0), nu)
    return q * (1 - a) * b * (nu + q) / (q * (nu + b)) * (1.0 - f00) / nu**2 / denom


def theta_closed_form(config, est, nu):
    """``theta = v (u.b) / (u.M v)`` from the Markov renewal theorem.

    ``v``/``u`` are right/left Perron vectors of ``D(nu)``, ``M = -D'(nu)`` and
    ``b`` are the forcing weights.  Used as a cross-check of the fitted scale.
    """
    D = build_D(config, est, nu)
    _, v = perron(D)
    _, u = left_perron(D)
    M = build_D_derivative(config, est, nu)
    bvec = forcing_weights(config, est, nu)
    return v * float(u @ bvec) / float(u @ M @ v)


# renewal machinery ----------------------------------------------------------

@dataclass
class RenewalKernel:
    """Matrix of cumulative grid functions ``G^N_ij`` on a common step."""
    step: float
    entries: np.ndarray  # shape (N, N, n)

    @property
    def n(self):
        return self.entries.shape[2]

    @property
    def N(self):
        return self.entries.shape[0]

    @property
    def grid(self):
        return self.step * np.arange(self.n)

    def laplace(self, lam):
        out = np.empty((self.N, self.N))
        for i in range(self.N):
            for j in range(self.N):
                f = self.entries[i, j]
                dm = np.diff(f, prepend=0.0)
                tmid = self.step * (np.arange(len(dm)) - 0.5)
                tmid[0] = 0.0
                out[i, j] = float(dm @ np.exp(-lam * tmid))
        return out

    def tilted(self, nu, i=0, j=0):
        """Cumulative ``Gtilde`` with ``dGtilde(s) = e^{-nu s} dG(s)``."""
        f = self.entries[i, j]
        dm = np.diff(f, prepend=0.0)
        tmid = self.step * (np.arange(len(dm)) - 0.5)
        tmid[0] = 0.0
        return np.cumsum(dm * np.exp(-nu * tmid))


def renewal_kernel(config, est, t_end=None):
    """``G^N_ij = delta_ij alpha_i m_i G_i + (1 - alpha_i) G_i * Fbar_ij`` on the taboo grid."""
    step = est.step
    n = est.cells + 1 if t_end is None else int(round(t_end / step)) + 1
    N = config.N
    out = np.zeros((N, N, n))
    t = step * np.arange(n)
    for i, c in enumerate(config.catalysts):
        for j in range(N):
            gf = tb.convolve_exp(c.beta, est.pair(i, j)).values
            out[i, j] = (1 - c.alpha) * _extend(gf, n)
        out[i, i] += c.alpha * c.offspring.mean * -np.expm1(-c.beta * t)
    return RenewalKernel(step, out)


def _extend(values, n):
    if len(values) >= n:
        return values[:n]
    return np.concatenate([values, np.full(n - len(values), values[-1])])


def markov_renewal_sum(kernel, forcing, tol=1e-12, k_max=10_000):
    """``sum_k G^{*k} * forcing`` by iterated grid convolution.

    ``forcing`` has shape ``(N, n)``; returns the same shape.
    """
    forcing = np.atleast_2d(np.asarray(forcing, dtype=float))
    N, n = forcing.shape
    if N != kernel.N:
        raise ValueError("forcing dimension does not match the kernel")
    n = min(n, kernel.n)
    term = forcing[:, :n].copy()
    total = term.copy()
    for _ in range(k_max):
        new = np.zeros_like(term)
        for i in range(N):
            for j in range(N):
                new[i] += tb.stieltjes(kernel.entries[i, j, :n], term[j])
        term = new
        total += term
        if np.max(np.abs(term)) < tol:
            return total
    raise NoConvergence(f"renewal series did not converge in {k_max} terms")


def exact_forcing(config, est, us, step, n, tail_grid=None):
    """``I_i(s; u)`` on ``s = 0, h, ..., (n-1)h`` for each ``u`` in ``us``.

    Built from the walk tail ``P_{w_k}(S(s) > u)`` and the taboo laws via the
    renewal identity for the no-return contribution; valid for
    ``u >= max(W)``.  Returns an array of shape ``(len(us), N, n)``.
    """
    q = config.jump.q
    W = config.positions
    N = config.N
    us = np.atleast_1d(np.asarray(us, dtype=float))
    times = step * np.arange(n)
    # P_{w_k}(S(s) > u) = P_0(S(s) > u - w_k)
    shifted = np.concatenate([us - w for w in W])
    if tail_grid is None:
        tails, _ = exact_tail_grid(config.jump, times, shifted)
    else:
        tails = tail_grid
    tails = tails.T.reshape(N, len(us), n)  # [k, u, s]
    g0 = tb.exponential_cdf(q, step, n - 1)
    out = np.zeros((len(us), N, n))
    for i, c in enumerate(config.catalysts):
        b = c.beta
        g1 = -np.expm1(-b * times)
        for iu in range(len(us)):
            Ti = tails[i, iu]
            acc = Ti - ((b - q) / b) * tb.stieltjes(g1, Ti)
            for k in range(N):
                fbar = est.pair(i, k)
                F = tb.convolve(g0, _truncate(fbar, n))  # exit time then taboo hit
                GF = tb.convolve_exp(b, F)
                Tk = tails[k, iu]
                acc = acc - tb.stieltjes(F, Tk) + ((b - q) / b) * tb.stieltjes(GF, Tk)
            out[iu, i] = (1 - c.alpha) * b / q * acc
    return out


def _truncate(f, n):
    if len(f.values) == n:
        return f
    vals = _extend(f.values, n)
    return tb.ImproperCdf(f.step, vals, f.mass, n_paths=f.n_paths)


@dataclass
class ThetaFit:
    theta: np.ndarray
    scale: float
    r2: float
    table: list = field(default_factory=list)


def renewal_fit(config, est, nu, t_end=25.0, lambdas=(0.1, 0.03, 0.01), rs=(0.0, 1.0, 2.0, 3.0),
                tail=None, min_r2=0.99):
    """Fit ``sum_k G^{*k} * I (t; lambda^{-1/gamma} L_{t+r}) ~ c v lambda e^{-nu r}``.

    Returns the fitted ``theta = c v``.  ``v`` is the right Perron vector of
    ``D(nu)`` (``v = (1)`` for a single catalyst, so ``theta = (K)``).
    """
    if tail is None:
        tail = TailModel.from_law(config.jump, nu)
    _, v = perron(build_D(config, est, nu))
    kernel = renewal_kernel(config, est, t_end)
    n = kernel.n
    t = kernel.step * (n - 1)
    combos = [(lam, r) for lam in lambdas for r in rs]
    us = np.array([lam ** (-1.0 / config.jump.gamma) * normalizer_L(tail, t + r) for lam, r in combos])
    if np.any(us < config.positions.max()):
        raise FitError("thresholds fall below the rightmost catalyst; increase t_end")
    forcing = exact_forcing(config, est, us, kernel.step, n)
    xs, ys = [], []
    table = []
    for idx, (lam, r) in enumerate(combos):
        Z = markov_renewal_sum(kernel, forcing[idx])[:, -1]
        for i in range(config.N):
            xs.append(v[i] * math.exp(-nu * r))
            ys.append(Z[i] / lam)
        table.append({"lambda": lam, "r": r, "u": float(us[idx]),
                      "Z_over_lambda": [float(z / lam) for z in Z]})
    xs, ys = np.array(xs), np.array(ys)
    c = float(xs @ ys / (xs @ xs))
    ss_res = float(np.sum((ys - c * xs) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if r2 < min_r2:
        raise FitError(f"renewal fit R^2 = {r2:.4f} below {min_r2}")
    return ThetaFit(theta=c * v, scale=c, r2=r2, table=table)


def theta_vector(config, est, nu, **kw):
    return renewal_fit(config, est, nu, **kw).theta


# results --------------------------------------------------------------------

@dataclass
class SpectralResult:
    rho0: float
    nu: float | None
    v: np.ndarray
    K: float | None
    theta: np.ndarray
    residuals: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "rho0": self.rho0,
            "nu": self.nu,
            "v": [float(x) for x in self.v],
            "K": self.K,
            "theta": [float(x) for x in self.theta],
            "residuals": {k: float(x) for k, x in sorted(self.residuals.items())},
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(rho0=d["rho0"], nu=d["nu"], v=np.array(d["v"]), K=d["K"],
                   theta=np.array(d["theta"]), residuals=dict(d.get("residuals", {})))


def spectral_analysis(config, est, fit=True, **fit_kw):
    """Classification gate, ``nu``, Perron pair, ``K`` and ``theta`` in one pass."""
    cls = classify(config, est)
    if not cls.supercritical:
        from .errors import NotSupercritical
        raise NotSupercritical(f"not supercritical: rho(D(0)) = {cls.rho0:.6g} "
                               f"(margin {cls.margin:.3g}, verdict {cls.verdict})")
    nu = malthusian(config, est)
    D = build_D(config, est, nu)
    rho, v = perron(D)
    residuals = {"eigen": float(np.max(np.abs(D @ v - v))), "rho_nu_minus_1": rho - 1.0}
    K = None
    if config.N == 1:
        K = compute_K(config, est, nu)
        residuals["scalar_identity"] = scalar_identity(config, est, nu) - 1.0
    theta_cf = theta_closed_form(config, est, nu)
    if fit:
        f = renewal_fit(config, est, nu, **fit_kw)
        theta = f.theta
        residuals["fit_r2"] = f.r2
        residuals["fit_vs_closed_form"] = float(np.max(np.abs(theta / theta_cf - 1.0)))
    else:
        theta = theta_cf
    return SpectralResult(rho0=cls.rho0, nu=nu, v=v, K=K, theta=theta, residuals=residuals)
