"""Compound Poisson walk: sampling, exact time-t tails, normalizer ``L_t``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import optimize, signal, stats

from .errors import PrecisionError

POISSON_EPS = 1e-12


@dataclass(frozen=True)
class WalkPath:
    start: int
    times: np.ndarray
    jumps: np.ndarray

    def position(self, t):
        """Right-continuous position ``S(t)``; vectorized over ``t``."""
        t = np.asarray(t, dtype=float)
        csum = np.concatenate([[0], np.cumsum(self.jumps)])
        k = np.searchsorted(self.times, t, side="right")
        out = self.start + csum[k]
        return out if out.ndim else int(out)

    @property
    def n_events(self):
        return len(self.times)


def sample_path(law, x, t, rng):
    """Sample the walk from ``x`` on ``[0, t]``."""
    times = []
    s = 0.0
    while True:
        s += rng.exponential(1.0 / law.q)
        if s > t:
            break
        times.append(s)
    times = np.array(times, dtype=float)
    return WalkPath(int(x), times, law.sample(rng, len(times)))


def sample_endpoints(law, x, t, n, rng):
    """``S(t)`` for ``n`` independent walks from ``x`` (vectorized)."""
    counts = rng.poisson(law.q * t, n)
    jumps = law.sample(rng, int(counts.sum()))
    owner = np.repeat(np.arange(n), counts)
    return x + np.bincount(owner, weights=jumps, minlength=n).astype(np.int64)


def poisson_nmax(mean, eps=POISSON_EPS):
    if mean <= 0:
        return 0
    return int(stats.poisson.ppf(1.0 - eps, mean))


def default_lattice_bound(law, t, u):
    spread = 40.0 * (law.q * t + 1.0) / (1.0 - law.left_ratio)
    return int(max(2 * math.ceil(max(u, 0.0)) + 64, spread, 256))


class TailValue(NamedTuple):
    value: float
    error: float


class ConvolutionTails:
    """``P(Y_1 + ... + Y_n > u)`` for ``n <= n_max`` on a finite lattice.

    The n-fold convolutions are built iteratively on ``[-B, B]``.  Mass that
    leaves the window is tracked separately: mass escaping to the right is
    counted as exceeding ``u`` and mass escaping to the left as not
    exceeding it, each with a bound on the probability that the remaining
    jumps bring it back across ``u``.
    """

    def __init__(self, law, us, n_max, lattice_bound):
        self.law = law
        self.us = np.atleast_1d(np.asarray(us, dtype=float))
        self.n_max = int(n_max)
        self.B = B = int(lattice_bound)
        if np.any(self.us >= B):
            raise PrecisionError("lattice window must extend beyond every threshold u")
        offs = np.arange(-2 * B, 2 * B + 1)
        kernel = np.zeros(4 * B + 1)
        nz = offs != 0
        kernel[nz] = law.pmf(offs[nz])
        beyond_right = law.tail_R(2 * B)
        beyond_left = float(law.left_tail(2 * B + 1))
        dist = np.zeros(2 * B + 1)
        dist[B] = 1.0
        esc_r = esc_l = 0.0
        n_u = len(self.us)
        tails = np.zeros((self.n_max + 1, n_u))
        errs = np.zeros((self.n_max + 1, n_u))
        # index of first lattice site strictly above u
        first_above = np.floor(self.us).astype(np.int64) + 1 + B
        for n in range(self.n_max + 1):
            if n > 0:
                inside = dist.sum()
                full = signal.fftconvolve(dist, kernel)
                np.maximum(full, 0.0, out=full)
                esc_r += full[4 * B + 1:].sum() + inside * beyond_right
                esc_l += full[:2 * B].sum() + inside * beyond_left
                dist = full[2 * B:4 * B + 1].copy()
            upper = np.cumsum(dist[::-1])[::-1]
            upper = np.append(upper, 0.0)
            idx = np.clip(first_above, 0, 2 * B + 1)
            tails[n] = upper[idx] + esc_r
            for k, u in enumerate(self.us):
                back = min(1.0, n * float(law.left_tail((B - u) / max(n, 1)))) if n else 0.0
                if B + u > 0:
                    up = min(1.0, n * float(law.tail_R((B + u) / max(n, 1)))) if n else 0.0
                else:
                    up = 1.0
                errs[n, k] = esc_r * back + esc_l * up
        self.tails = tails
        self.errors = errs

    def at_times(self, ts):
        """Poisson mixtures over the jump count; arrays shaped ``(len(ts), len(us))``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = np.arange(self.n_max + 1)
        w = stats.poisson.pmf(n[None, :], self.law.q * ts[:, None])
        w[ts == 0] = 0.0
        w[ts == 0, 0] = 1.0
        trunc = np.clip(1.0 - w.sum(axis=1), 0.0, None)
        vals = w @ self.tails
        errs = w @ self.errors + trunc[:, None]
        return vals, errs


@lru_cache(maxsize=64)
def _cached_tails(law, us, n_max, lattice_bound):
    return ConvolutionTails(law, np.array(us), n_max, lattice_bound)


def convolution_tails(law, us, n_max, lattice_bound):
    return _cached_tails(law, tuple(float(u) for u in np.atleast_1d(us)), int(n_max), int(lattice_bound))


def exact_tail(law, t, u, n_max=None, lattice_bound=None, tol=None):
    """``P_0(S(t) > u)`` by truncated Poisson mixture of lattice convolutions.

    Returns ``TailValue(value, error)`` where ``error`` bounds the mass lost
    to Poisson truncation and to the finite lattice window.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return TailValue(1.0 if u < 0 else 0.0, 0.0)
    if n_max is None:
        n_max = poisson_nmax(law.q * t)
    if lattice_bound is None:
        lattice_bound = default_lattice_bound(law, t, u)
    ct = convolution_tails(law, [u], n_max, lattice_bound)
    vals, errs = ct.at_times([t])
    res = TailValue(float(np.clip(vals[0, 0], 0.0, 1.0)), float(errs[0, 0]))
    if tol is not None and res.error > tol:
        raise PrecisionError(f"exact_tail error bracket {res.error:.3g} exceeds {tol:.3g}")
    return res


def exact_tail_grid(law, times, us, n_max=None, lattice_bound=None):
    """Vectorized ``P_0(S(t) > u)`` for every ``t`` in ``times`` and ``u`` in ``us``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    us = np.atleast_1d(np.asarray(us, dtype=float))
    tmax = float(times.max()) if len(times) else 0.0
    if n_max is None:
        n_max = poisson_nmax(law.q * tmax)
    if lattice_bound is None:
        lattice_bound = default_lattice_bound(law, tmax, float(us.max()))
    ct = convolution_tails(law, us, n_max, lattice_bound)
    vals, errs = ct.at_times(times)
    return np.clip(vals, 0.0, 1.0), errs


@dataclass(frozen=True)
class TailModel:
    """Right-tail model used for the normalizer.

    ``R(y)`` is taken from ``law`` when given (log-log interpolated between
    integers); otherwise from the parametric form
    ``constant * y**-gamma * (1 + ln y)**delta``.
    """
    gamma: float
    nu: float
    family: str = "pure_power"
    delta: float = 0.0
    constant: float = 1.0
    law: object = None

    @classmethod
    def from_law(cls, law, nu):
        return cls(gamma=law.gamma, nu=nu, family=law.family,
                   delta=law.delta if law.family == "power_log" else 0.0,
                   constant=law.tail_constant, law=law)

    def R(self, y):
        if self.law is not None:
            return self.law.tail_R_continuous(y)
        y = np.asarray(y, dtype=float)
        out = self.constant * y ** (-self.gamma)
        if self.delta:
            out = out * (1.0 + np.log(y)) ** self.delta
        return out

    def R_inv(self, s):
        """Asymptotic inverse of ``1/R``."""
        if self.family == "pure_power":
            return (self.constant * s) ** (1.0 / self.gamma)
        target = math.log(s)
        f = lambda z: -math.log(float(self.R(math.exp(z)))) - target
        # the parametric form is only decreasing for y >= 1
        if f(0.0) >= 0:
            return (self.constant * s) ** (1.0 / self.gamma)
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
        return math.exp(optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14))


def normalizer_L(tail, t):
    """``L_t = R_inv(exp(nu t))``."""
    return tail.R_inv(math.exp(tail.nu * t))


def big_jump_ratio(law, tail, t, c, **kw):
    """``P_0(S(t) > c L_t) / (q t R(c L_t))``.

    The factor ``q`` is the mean number of jumps per unit time.
    """
    u = c * normalizer_L(tail, t)
    tv = exact_tail(law, t, u, **kw)
    denom = law.q * t * float(law.tail_R(u))
    return tv.value / denom
