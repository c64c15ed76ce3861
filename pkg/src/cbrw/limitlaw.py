"""Fixed-point solver for the limit law of the normalized maximum.

Unknowns are ``phi_j(lambda) = lim P_{w_j}(M_t / L_t <= lambda^{-1/gamma})``
on a geometric lambda grid.  In ``x = ln lambda`` the operator shifts by
``nu u``, so all kernels are moved onto the lattice ``u_m = m dx / nu`` and
every integral becomes a discrete convolution along the grid.

Mass falling between two lattice points is split so that ``e^{-nu u}`` is
preserved (interpolation linear in lambda).  The discrete kernels then have
exactly the Laplace transforms at ``nu`` that define ``D(nu)``, so the
small-lambda behaviour ``1 - theta lambda`` is an exact fixed direction.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import taboo as tb
from .errors import AnchorViolation, NoConvergence, PlateauNotReached

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class LambdaGrid:
    lam_min: float = 1e-6
    lam_max: float = 1e6
    per_decade: int = 64

    def __post_init__(self):
        if not (0 < self.lam_min < self.lam_max) or self.per_decade < 1:
            raise ValueError("need 0 < lam_min < lam_max and per_decade >= 1")

    @property
    def dx(self):
        return math.log(10.0) / self.per_decade

    @property
    def ratio(self):
        return math.exp(self.dx)

    @property
    def size(self):
        return int(round(math.log(self.lam_max / self.lam_min) / self.dx)) + 1

    @property
    def values(self):
        return self.lam_min * np.exp(self.dx * np.arange(self.size))


def _rebin_points(times, masses, du, nu, M):
    """Point masses at ``times`` onto the lattice ``m du``, ``e^{-nu u}``-preserving."""
    out = np.zeros(M)
    times = np.asarray(times, dtype=float)
    masses = np.asarray(masses, dtype=float)
    pos = times / du
    m = np.floor(pos).astype(np.int64)
    far = m >= M - 1
    np.add.at(out, M - 1, masses[far].sum() if far.any() else 0.0)
    m, t, w = m[~far], times[~far], masses[~far]
    e_lo = np.exp(-nu * m * du)
    e_hi = np.exp(-nu * (m + 1) * du)
    p = np.clip((np.exp(-nu * t) - e_hi) / (e_lo - e_hi), 0.0, 1.0)
    np.add.at(out, m, w * p)
    np.add.at(out, m + 1, w * (1.0 - p))
    return out


def exponential_lattice(beta, du, nu, M):
    """Exponential(beta) law on the lattice with cell mass and cell ``e^{-nu u}``-moment exact."""
    u = du * np.arange(M)
    out = np.zeros(M)
    lo, hi = u[:-1], u[1:]
    mass = np.exp(-beta * lo) - np.exp(-beta * hi)
    lap = beta / (beta + nu) * (np.exp(-(beta + nu) * lo) - np.exp(-(beta + nu) * hi))
    e_lo, e_hi = np.exp(-nu * lo), np.exp(-nu * hi)
    a = (lap - mass * e_hi) / (e_lo - e_hi)
    a = np.clip(a, 0.0, mass)
    out[:-1] += a
    out[1:] += mass - a
    out[-1] += math.exp(-beta * u[-1])
    return out


def cdf_lattice(f, du, nu, M):
    """An :class:`ImproperCdf` (midpoint convention) on the lattice."""
    t, w = tb.midpoint_masses(f)
    return _rebin_points(t, w, du, nu, M)


def lattice_convolve(a, b):
    M = len(a)
    full = signal.fftconvolve(a, b)
    full = np.maximum(full, 0.0)
    out = full[:M].copy()
    out[-1] += full[M:].sum()
    return out


@dataclass
class LatticeKernels:
    du: float
    branch: np.ndarray        # (N, M): G_j
    move: np.ndarray          # (N, N, M): G_j * Fbar_jk
    constant: np.ndarray      # (N,): (1 - alpha_j)(1 - sum_k Fbar_jk(inf))

    @property
    def M(self):
        return self.branch.shape[1]

    def laplace(self, nu):
        e = np.exp(-nu * self.du * np.arange(self.M))
        return self.branch @ e, self.move @ e


def build_kernels(config, est, nu, grid, u_max=None):
    N = config.N
    if u_max is None:
        u_max = 60.0 / min(min(config.betas), nu)
    du = grid.dx / nu
    M = int(math.ceil(u_max / du)) + 1
    branch = np.zeros((N, M))
    move = np.zeros((N, N, M))
    constant = np.zeros(N)
    for j, c in enumerate(config.catalysts):
        branch[j] = exponential_lattice(c.beta, du, nu, M)
        tot = 0.0
        for k in range(N):
            f = est.pair(j, k)
            move[j, k] = lattice_convolve(branch[j], cdf_lattice(f, du, nu, M))
            tot += f.mass
        constant[j] = (1.0 - c.alpha) * (1.0 - tot)
    return LatticeKernels(du, branch, move, constant)


@dataclass
class PhiSolution:
    grid: LambdaGrid
    phi: np.ndarray           # (N, n)
    theta: np.ndarray
    residual: float
    iterations: int
    history: list = field(default_factory=list, repr=False)

    @property
    def lambdas(self):
        return self.grid.values

    @property
    def Q(self):
        return self.phi[:, -1].copy()

    def __call__(self, lam, j=0):
        """Monotone log-interpolation; below the grid the anchor ``1 - theta lambda``."""
        lam = np.asarray(lam, dtype=float)
        x = np.log(np.maximum(lam, 1e-300))
        xs = np.log(self.lambdas)
        out = np.interp(x, xs, self.phi[j])
        below = lam < self.grid.lam_min
        out = np.where(below, 1.0 - self.theta[j] * lam, out)
        out = np.where(lam <= 0, 1.0, out)
        return out if out.ndim else float(out)

    def to_csv(self):
        buf = io.StringIO()
        N = self.phi.shape[0]
        buf.write("lambda," + ",".join(f"phi_w{j + 1}" for j in range(N)) + "\n")
        for i, lam in enumerate(self.lambdas):
            buf.write(repr(float(lam)) + "," + ",".join(repr(float(self.phi[j, i])) for j in range(N)) + "\n")
        return buf.getvalue()

    def sidecar(self):
        return {"theta": [float(x) for x in self.theta], "Q": [float(x) for x in self.Q],
                "residual": float(self.residual), "iterations": int(self.iterations),
                "grid": {"lam_min": self.grid.lam_min, "lam_max": self.grid.lam_max,
                         "per_decade": self.grid.per_decade}}

    @classmethod
    def from_csv(cls, text, sidecar):
        rows = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        g = sidecar["grid"]
        grid = LambdaGrid(g["lam_min"], g["lam_max"], g["per_decade"])
        return cls(grid, rows[:, 1:].T.copy(), np.array(sidecar["theta"]),
                   sidecar["residual"], sidecar["iterations"])


class FixedPointOperator:
    """Right-hand side of the limit system on the lattice."""

    def __init__(self, config, kernels, grid, theta):
        self.config = config
        self.k = kernels
        self.grid = grid
        self.theta = np.asarray(theta, dtype=float)
        M = kernels.M
        # lambdas of the M - 1 anchor points below lam_min
        below = grid.lam_min * np.exp(-grid.dx * np.arange(M - 1, 0, -1))
        self.anchor = 1.0 - self.theta[:, None] * below[None, :]

    def padded(self, phi):
        return np.concatenate([self.anchor, phi], axis=1)

    def __call__(self, phi):
        cfg, k = self.config, self.k
        N, n = phi.shape
        M = k.M
        P = self.padded(phi)
        out = np.empty_like(phi)
        for j, c in enumerate(cfg.catalysts):
            acc = c.alpha * signal.fftconvolve(c.offspring.pgf(P[j]), k.branch[j])[M - 1:M - 1 + n]
            for kk in range(N):
                acc += (1.0 - c.alpha) * signal.fftconvolve(P[kk], k.move[j, kk])[M - 1:M - 1 + n]
            out[j] = acc + k.constant[j]
        return out


def initial_profile(theta, grid, kind="exponential"):
    lam = grid.values
    theta = np.asarray(theta, dtype=float)
    if kind == "exponential":
        return np.exp(-theta[:, None] * lam[None, :])
    if kind == "constant":
        return np.ones((len(theta), len(lam)))
    raise ValueError(f"unknown initial profile {kind!r}")


def solve_system(config, spectral, est, grid=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                 init="exponential", anchor_tol=0.02, kernels=None):
    """Jacobi iteration for the limit system, anchored to ``1 - theta lambda`` below the grid."""
    grid = grid or LambdaGrid()
    theta = np.asarray(spectral.theta, dtype=float)
    nu = spectral.nu
    if kernels is None:
        kernels = build_kernels(config, est, nu, grid)
    op = FixedPointOperator(config, kernels, grid, theta)
    phi = initial_profile(theta, grid, init) if isinstance(init, str) else np.array(init, dtype=float)
    history = []
    for it in range(1, max_iter + 1):
        new = np.clip(op(phi), 0.0, 1.0)
        delta = float(np.max(np.abs(new - phi)))
        history.append(delta)
        phi = new
        if delta < tol:
            break
    else:
        raise NoConvergence(f"fixed point not reached in {max_iter} iterations (last update {delta:.3g})")
    residual = float(np.max(np.abs(op(phi) - phi)))
    sol = PhiSolution(grid, phi, theta, residual, it, history)
    slope = anchor_slopes(sol)
    dev = np.max(np.abs(slope / theta[:, None] - 1.0))
    if dev > anchor_tol:
        raise AnchorViolation(f"small-lambda slope deviates from theta by {dev:.3%}")
    return sol


def anchor_slopes(sol, k=3):
    """``(1 - phi_j(lambda)) / lambda`` at the ``k`` smallest grid points."""
    lam = sol.lambdas[:k]
    return (1.0 - sol.phi[:, :k]) / lam[None, :]


def q_plateau(sol, flat_tol=1e-4):
    """Plateau ``phi_j(lam_max)`` with the flatness certificate over the last four grid steps."""
    tail = sol.phi[:, -5:]
    spread = np.max(tail, axis=1) - np.min(tail, axis=1)
    if np.any(spread >= flat_tol):
        raise PlateauNotReached(f"plateau not flat: spread {spread.max():.3g} >= {flat_tol}")
    Q = sol.Q
    if np.any((Q <= 0) | (Q >= 1)):
        raise PlateauNotReached("plateau outside (0, 1)")
    return Q


def extend_to_x(sol, config, est, nu, kernels_du=None):
    """``phi(lambda; x)`` for an off-catalyst start from the ``x -> w_k`` taboo laws.

    The hitting laws from time 0 include the exponential(q) exit from ``x``.
    """
    grid = sol.grid
    du = grid.dx / nu
    M = int(math.ceil(60.0 / min(min(config.betas), nu) / du)) + 1
    exit_lat = exponential_lattice(config.jump.q, du, nu, M)
    N = config.N
    n = grid.size
    anchor = sol.grid.lam_min * np.exp(-grid.dx * np.arange(M - 1, 0, -1))
    out = np.zeros(n)
    tot = 0.0
    for k in range(N):
        f = est.from_x(k)
        w = lattice_convolve(exit_lat, cdf_lattice(f, du, nu, M))
        P = np.concatenate([1.0 - sol.theta[k] * anchor, sol.phi[k]])
        out += signal.fftconvolve(P, w)[M - 1:M - 1 + n]
        tot += f.mass
    return np.clip(out + 1.0 - tot, 0.0, 1.0)
