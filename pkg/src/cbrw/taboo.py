"""Taboo hitting times and defective c.d.f.s on a uniform time grid.

An :class:`ImproperCdf` stores ``F(t_i)`` at ``t_i = i h``.  Between grid
points the mass of each cell is treated as uniformly spread; the value at
``t_0 = 0`` is an atom.  Mass that is known to exist but lies beyond the
last grid point (``mass - F(t_M)``) sits "at the horizon" for transforms.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import GridMismatch, HorizonBiasError

DEFAULT_CELLS = 4096


@dataclass(frozen=True, eq=False)
class ImproperCdf:
    step: float
    values: np.ndarray
    mass: float
    n_paths: int = 0
    horizon_bias: float = 0.0
    samples: np.ndarray = field(default=None, repr=False)
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if np.any(np.diff(v) < -1e-12) or v[0] < -1e-15 or v[-1] > self.mass + 1e-12 or self.mass > 1 + 1e-12:
            raise ValueError("values must be nondecreasing in [0, mass] with mass <= 1")

    @property
    def grid(self):
        return self.step * np.arange(len(self.values))

    @property
    def horizon(self):
        return self.step * (len(self.values) - 1)

    @property
    def defect(self):
        return 1.0 - self.mass

    @property
    def beyond(self):
        """Mass located after the last grid point."""
        return max(self.mass - float(self.values[-1]), 0.0)

    def increments(self):
        """Atom at 0 followed by the mass of each cell ``(t_{i-1}, t_i]``."""
        return np.diff(self.values, prepend=0.0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.grid, self.values, right=float(self.values[-1]))
        out = np.where(t < 0, 0.0, out)
        return out if out.ndim else float(out)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t,F\n")
        for t, f in zip(self.grid.tolist(), self.values.tolist()):
            buf.write(f"{t!r},{f!r}\n")
        buf.write(f"#mass={float(self.mass)!r},n={int(self.n_paths)},step={float(self.step)!r},"
                  f"horizon={float(self.horizon)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, label=""):
        lines = [ln for ln in text.strip().splitlines() if ln]
        if lines[0].strip() != "t,F":
            raise ValueError("expected header 't,F'")
        meta = dict(kv.split("=", 1) for kv in lines[-1].lstrip("#").split(","))
        rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:-1]])
        if "step" in meta:
            step = float(meta["step"])
        else:
            step = float(meta["horizon"]) / max(len(rows) - 1, 1)
        return cls(step=step, values=rows[:, 1], mass=float(meta["mass"]),
                   n_paths=int(meta["n"]), label=label)


def point_mass(step, cells=DEFAULT_CELLS, mass=1.0):
    return ImproperCdf(step, np.full(cells + 1, mass), mass)


def zero_cdf(step, cells=DEFAULT_CELLS):
    return ImproperCdf(step, np.zeros(cells + 1), 0.0)


def exponential_cdf(rate, step, cells=DEFAULT_CELLS):
    """Grid values of ``1 - exp(-rate t)``; total mass 1."""
    t = step * np.arange(cells + 1)
    return ImproperCdf(step, -np.expm1(-rate * t), 1.0, label=f"exp({rate})")


def _normalize(values, mass):
    v = np.clip(values, 0.0, mass)
    return np.maximum.accumulate(v)


def _check_steps(a, b):
    if not math.isclose(a.step, b.step, rel_tol=1e-12, abs_tol=0.0):
        raise GridMismatch(f"grid steps differ: {a.step} vs {b.step}")


def stieltjes(measure, func):
    """``c(t_n) = int_0^{t_n} func(t_n - s) dmeasure(s)`` on the grid.

    ``measure`` is an :class:`ImproperCdf` or an array of cumulative values
    (which may exceed 1, as for renewal kernels); ``func`` is an array of grid
    values treated as piecewise linear.  Exact under the uniform-in-cell
    convention for the measure.
    """
    func = np.asarray(func, dtype=float)
    cum = measure.values if isinstance(measure, ImproperCdf) else np.asarray(measure, dtype=float)
    n = min(len(cum), len(func))
    dm = np.diff(cum[:n], prepend=0.0)
    f = func[:n]
    out = dm[0] * f
    if n > 1:
        favg = 0.5 * (f[:-1] + f[1:])
        conv = signal.fftconvolve(dm[1:], favg)[: n - 1]
        out = out.copy()
        out[1:] += conv
    return out


def exp_stieltjes(rate, func, step):
    """``int_0^{t_n} func(t_n - s) rate e^{-rate s} ds`` for piecewise linear ``func``."""
    func = np.asarray(func, dtype=float)
    n = len(func)
    k = np.arange(n - 1)
    a = rate * step
    # cell k weights on func at its two ends, exact for linear interpolation
    e0 = np.exp(-a * k)
    if a > 1e-8:
        m0 = e0 * -np.expm1(-a)                      # cell mass
        m1 = e0 * (1.0 - (1.0 + a) * np.exp(-a)) / a  # mass times fractional position
    else:
        m0 = e0 * a
        m1 = e0 * a / 2.0
    # s = t_k + x h puts the argument between t_{n-k-1} (weight x) and t_{n-k} (weight 1-x)
    w_hi = m0 - m1
    w_lo = m1
    out = np.zeros(n)
    if n > 1:
        out[1:] = (signal.fftconvolve(w_hi, func[1:])[: n - 1]
                   + signal.fftconvolve(w_lo, func[:-1])[: n - 1])
    return out


def convolve(a, b):
    """Stieltjes convolution of two improper c.d.f.s on a common grid."""
    _check_steps(a, b)
    n = min(len(a.values), len(b.values))
    vals = stieltjes(a, b.values[:n])
    mass = a.mass * b.mass
    return ImproperCdf(a.step, _normalize(vals, mass), mass, label=f"({a.label})*({b.label})")


def convolve_exp(beta, f):
    """``G * f`` with ``G(t) = 1 - exp(-beta t)``, integrating the exponential exactly."""
    n = len(f.values)
    step = f.step
    t = step * np.arange(n)
    dm = f.increments()
    k = np.arange(n - 1)
    a = beta * step
    # average of G over [t_k, t_k + h]
    if a > 1e-12:
        gavg = 1.0 - np.exp(-beta * step * k) * (-np.expm1(-a)) / a
    else:
        gavg = 1.0 - np.exp(-beta * step * k)
    vals = dm[0] * -np.expm1(-beta * t)
    if n > 1:
        vals = vals.copy()
        vals[1:] += signal.fftconvolve(dm[1:], gavg)[: n - 1]
    return ImproperCdf(step, _normalize(vals, f.mass), f.mass,
                       label=f"exp({beta})*({f.label})")


def laplace(f, lam):
    """Midpoint Stieltjes sum for ``int e^{-lam t} dF(t)``; equals ``F(inf)`` at 0."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    dm = f.increments()
    tmid = f.step * (np.arange(len(dm)) - 0.5)
    tmid[0] = 0.0
    return float(np.dot(dm, np.exp(-lam * tmid)) + f.beyond * math.exp(-lam * f.horizon))


def laplace_moment(f, lam):
    """Midpoint sum for ``int t e^{-lam t} dF(t)``."""
    dm = f.increments()
    tmid = f.step * (np.arange(len(dm)) - 0.5)
    tmid[0] = 0.0
    return float(np.dot(dm, tmid * np.exp(-lam * tmid))
                 + f.beyond * f.horizon * math.exp(-lam * f.horizon))


def midpoint_masses(f):
    """Point-mass representation used by :func:`laplace`: (times, masses)."""
    dm = f.increments()
    tmid = f.step * (np.arange(len(dm)) - 0.5)
    tmid[0] = 0.0
    if f.beyond > 0:
        return np.append(tmid, f.horizon), np.append(dm, f.beyond)
    return tmid, dm


def estimate_taboo_cdf(law, start, target, taboo, n_paths, horizon, rng,
                       cells=DEFAULT_CELLS, bias_tol=None, keep_samples=True):
    """Monte Carlo estimate of the taboo hitting time after exit from ``start``.

    Each path makes its exit jump at time 0, then walks until it hits
    ``target`` (success), enters ``taboo`` (failure) or runs past the
    horizon.  Paths still running at the horizon are followed to twice the
    horizon; the fraction that hit in ``(T, 2T]`` is reported as
    ``horizon_bias``, an estimate of the mass missing from ``F(inf)``.
    """
    taboo = sorted(set(int(z) for z in taboo))
    step = horizon / cells
    if target in taboo:
        return ImproperCdf(step, np.zeros(cells + 1), 0.0, n_paths=n_paths,
                           samples=np.empty(0) if keep_samples else None,
                           label=f"taboo {start}->{target}")
    taboo_arr = np.array(taboo, dtype=np.int64)
    pos = start + law.sample(rng, n_paths)
    time = np.zeros(n_paths)
    hit_times = []
    late = 0
    idx = np.arange(n_paths)
    limit = 2.0 * horizon
    while len(idx):
        hit = pos == target
        if hit.any():
            th = time[hit]
            hit_times.append(th[th <= horizon])
            late += int(np.count_nonzero(th > horizon))
        keep = ~hit
        if len(taboo_arr):
            keep &= ~np.isin(pos, taboo_arr)
        idx, pos, time = idx[keep], pos[keep], time[keep]
        if not len(idx):
            break
        time = time + rng.exponential(1.0 / law.q, len(idx))
        alive = time <= limit
        idx, pos, time = idx[alive], pos[alive], time[alive]
        pos = pos + law.sample(rng, len(idx))
    samples = np.sort(np.concatenate(hit_times)) if hit_times else np.empty(0)
    grid = step * np.arange(cells + 1)
    values = np.searchsorted(samples, grid, side="right") / n_paths
    mass = len(samples) / n_paths
    bias = late / n_paths
    if bias_tol is not None and bias > bias_tol:
        raise HorizonBiasError(f"horizon bias {bias:.3g} exceeds {bias_tol:.3g}")
    return ImproperCdf(step, values, mass, n_paths=n_paths, horizon_bias=bias,
                       samples=samples if keep_samples else None,
                       label=f"taboo {start}->{target}")


def standard_error(f, t=None):
    """Binomial standard error of ``F(t)`` (default ``F(inf)``)."""
    p = f.mass if t is None else f(t)
    if f.n_paths <= 0:
        return 0.0
    return math.sqrt(max(p * (1.0 - p), 0.0) / f.n_paths)


def default_horizon(config):
    return 50.0 / min(config.betas)


class TabooEstimates(dict):
    """Taboo c.d.f.s keyed by ``(i, j)`` for catalyst pairs and ``("x", k)``
    for an off-catalyst start ``x`` towards catalyst ``k``.

    For ``(i, j)`` the taboo set is ``W`` minus ``w_j``; it contains ``w_i``
    whenever ``i != j``.
    """

    def __init__(self, *args, n_paths=0, horizon=0.0, cells=DEFAULT_CELLS, x=None, **kw):
        super().__init__(*args, **kw)
        self.n_paths = n_paths
        self.horizon = horizon
        self.cells = cells
        self.x = x

    @property
    def step(self):
        return self.horizon / self.cells

    def pair(self, i, j):
        from .errors import MissingEstimate
        try:
            return self[(i, j)]
        except KeyError:
            raise MissingEstimate(f"no taboo estimate for catalyst pair ({i}, {j})") from None

    def from_x(self, k):
        from .errors import MissingEstimate
        try:
            return self[("x", k)]
        except KeyError:
            raise MissingEstimate(f"no taboo estimate from start towards catalyst {k}") from None

    def max_bias_ratio(self):
        r = 0.0
        for f in self.values():
            if f.mass > 0:
                r = max(r, f.horizon_bias / f.mass)
        return r


def pair_keys(config, x=None):
    keys = [(i, j) for i in range(config.N) for j in range(config.N)]
    if x is not None:
        keys += [("x", k) for k in range(config.N)]
    return keys


def estimate_all(config, n_paths, master_seed, horizon=None, cells=DEFAULT_CELLS,
                 x=None, bias_tol=None, keep_samples=True):
    """Estimate every catalyst-pair taboo law (and ``x -> w_k`` laws if ``x`` given).

    Each pair draws from its own stream ``(master_seed, TABOO, pair index)``.
    """
    from . import rng as rngmod
    if horizon is None:
        horizon = default_horizon(config)
    W = config.positions
    if x is not None and int(x) in W:
        raise ValueError("off-catalyst start must not be a catalyst position")
    out = TabooEstimates(n_paths=n_paths, horizon=horizon, cells=cells, x=x)
    for idx, key in enumerate(pair_keys(config, x)):
        a, j = key
        start = int(x) if a == "x" else W[a]
        taboo_set = [w for k, w in enumerate(W) if k != j]
        out[key] = estimate_taboo_cdf(config.jump, start, W[j], taboo_set, n_paths, horizon,
                                      rngmod.stream(master_seed, rngmod.TABOO, idx),
                                      cells=cells, bias_tol=bias_tol, keep_samples=keep_samples)
    return out
