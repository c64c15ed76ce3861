"""CBRW model specification: jump law, offspring laws, catalysts.

The walk jumps at rate ``q``.  Given a jump, its size ``Y`` is a nonzero
integer with

* right tail ``P(Y = y) = c_plus * y**-(gamma+1) * (1 + ln y)**delta``
  for ``y >= 1`` (``delta = 0`` for the ``pure_power`` family),
* left tail ``P(Y = -k) = left_mass * (1 - r) * r**(k-1)`` for ``k >= 1``,

where ``c_plus`` is fixed by the requested ``right_mass`` and
``left_mass = 1 - right_mass``.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

from .errors import (ConfigError, DomainError, DuplicateCatalyst,
                     NormalizationError, RangeError)

FAMILIES = ("pure_power", "power_log")
OFFSPRING_FAMILIES = ("deterministic", "poisson", "geometric")
DEFAULT_WINDOW = 10**6
NORMALIZATION_TOL = 1e-12


def upper_gamma(s, x):
    """Upper incomplete gamma ``Gamma(s, x)`` for any real ``s`` and ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if s > 0:
        return special.gammaincc(s, x) * special.gamma(s)
    n = int(math.floor(-s)) + 1
    base = s + n
    if float(s).is_integer():
        # nonpositive integer: recurse down from Gamma(0, x) = E1(x)
        n -= 1
        val = special.exp1(x)
        a = 0.0
    else:
        val = special.gammaincc(base, x) * special.gamma(base)
        a = base
    for _ in range(n):
        # Gamma(a-1, x) = (Gamma(a, x) - x**(a-1) e^-x) / (a-1)
        val = (val - x ** (a - 1.0) * np.exp(-x)) / (a - 1.0)
        a -= 1.0
    return val


@dataclass(frozen=True)
class OffspringLaw:
    family: str
    param: float

    @property
    def mean(self):
        if self.family == "deterministic":
            return float(self.param)
        if self.family == "poisson":
            return float(self.param)
        return (1.0 - self.param) / self.param

    @property
    def p0(self):
        return float(self.pgf(0.0))

    def pgf(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "deterministic":
            return s ** int(self.param)
        if self.family == "poisson":
            return np.exp(self.param * (s - 1.0))
        p = self.param
        return p / (1.0 - (1.0 - p) * s)

    def sample(self, rng, size):
        if self.family == "deterministic":
            return np.full(size, int(self.param), dtype=np.int64)
        if self.family == "poisson":
            return rng.poisson(self.param, size).astype(np.int64)
        return rng.geometric(self.param, size).astype(np.int64) - 1

    def violations(self):
        out = []
        if self.family not in OFFSPRING_FAMILIES:
            out.append(ConfigError(f"unknown offspring family {self.family!r}"))
        elif self.family == "deterministic":
            if self.param < 0 or int(self.param) != self.param:
                out.append(RangeError("deterministic offspring needs a nonnegative integer"))
        elif self.family == "poisson":
            if not self.param > 0:
                out.append(RangeError("poisson offspring needs mu > 0"))
        elif not 0 < self.param <= 1:
            out.append(RangeError("geometric offspring needs p_success in (0, 1]"))
        return out


@dataclass(frozen=True)
class JumpLaw:
    q: float
    gamma: float
    family: str = "pure_power"
    delta: float = 0.0
    right_mass: float = 0.5
    left_ratio: float = 0.5
    window: int = field(default=DEFAULT_WINDOW, compare=False)

    @property
    def left_mass(self):
        return 1.0 - self.right_mass

    @property
    def _delta(self):
        return self.delta if self.family == "power_log" else 0.0

    def _shape(self, x):
        """Unnormalized right pmf ``x**-(gamma+1) (1+ln x)**delta``."""
        x = np.asarray(x, dtype=float)
        out = x ** (-(self.gamma + 1.0))
        if self._delta:
            out = out * (1.0 + np.log(x)) ** self._delta
        return out

    def _shape_tail(self, n):
        """Sum of the unnormalized right pmf over ``x >= n`` (``n >= 1``)."""
        n = np.asarray(n, dtype=float)
        if self.family == "pure_power":
            return special.zeta(self.gamma + 1.0, n)
        # midpoint-corrected integral of the continuous shape
        a = n - 0.5
        v = self.gamma * (1.0 + np.log(a))
        return (math.exp(self.gamma) * self.gamma ** (-self._delta - 1.0)
                * upper_gamma(self._delta + 1.0, v))

    @cached_property
    def _tables(self):
        W = int(self.window)
        shape = self._shape(np.arange(1, W + 1))
        z = float(shape.sum() + self._shape_tail(W + 1))
        c = self.right_mass / z
        pmf = c * shape
        tail_w = c * float(self._shape_tail(W + 1))
        r = np.empty(W + 1)
        r[W] = tail_w
        r[:W] = tail_w + np.cumsum(pmf[::-1])[::-1]
        return c, pmf, r

    @property
    def c_plus(self):
        return self._tables[0]

    @property
    def tail_constant(self):
        """``A`` in ``R(y) ~ A y**-gamma (1 + ln y)**delta``."""
        return self.c_plus / self.gamma

    def pmf(self, y):
        y = np.asarray(y)
        if np.any(y == 0):
            raise DomainError("jump pmf is defined on nonzero integers only")
        yf = y.astype(float)
        right = self.c_plus * self._shape(np.where(y > 0, yf, 1.0))
        left = self.left_mass * (1.0 - self.left_ratio) * self.left_ratio ** (np.abs(yf) - 1.0)
        out = np.where(y > 0, right, left)
        return out if out.ndim else float(out)

    def tail_R(self, y):
        """``R(y) = P(Y > y)`` for real ``y >= 0``."""
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise DomainError("R(y) is defined for y >= 0")
        _, _, table = self._tables
        k = np.floor(y)
        inside = k <= self.window
        kin = np.where(inside, k, 0).astype(np.int64)
        out = np.where(inside, table[kin], 0.0)
        if np.any(~inside):
            far = self.c_plus * self._shape_tail(np.where(inside, 1.0, k + 1.0))
            out = np.where(inside, out, far)
        return out if out.ndim else float(out)

    def left_tail(self, k):
        """``P(Y <= -k)`` for ``k >= 1``."""
        k = np.asarray(k, dtype=float)
        return self.left_mass * self.left_ratio ** (np.maximum(k, 1.0) - 1.0)

    def total_mass(self):
        return float(self._tables[2][0]) + self.left_mass

    def tail_R_continuous(self, y):
        """Continuous strictly decreasing version of ``R``.

        Linear in log-log coordinates between integers; below ``y = 1`` the
        slope of the first cell is extended, so the map is a bijection from
        ``(0, inf)`` onto ``(0, inf)``.
        """
        y = np.asarray(y, dtype=float)
        lo = np.maximum(np.floor(y), 1.0)
        hi = lo + 1.0
        r_lo = np.log(self.tail_R(lo))
        r_hi = np.log(self.tail_R(hi))
        slope = (r_hi - r_lo) / (np.log(hi) - np.log(lo))
        out = np.exp(r_lo + slope * (np.log(y) - np.log(lo)))
        return out if out.ndim else float(out)

    def sample(self, rng, size):
        size = int(size)
        right = rng.random(size) < self.right_mass
        out = -rng.geometric(1.0 - self.left_ratio, size).astype(np.int64)
        nr = int(right.sum())
        if nr:
            out[right] = self._sample_right(rng, nr)
        return out

    def _sample_right(self, rng, n):
        if self.family == "pure_power":
            return rng.zipf(self.gamma + 1.0, n).astype(np.int64)
        _, _, table = self._tables
        tau = self.right_mass * (1.0 - rng.random(n))
        # smallest y with R(y) < tau; table is decreasing
        y = np.searchsorted(-table, -tau, side="right").astype(np.int64)
        far = y > self.window
        if np.any(far):
            y[far] = self._invert_far(tau[far])
        return y

    def _invert_far(self, tau):
        lo = np.full(tau.shape, float(self.window))
        hi = lo * 2.0
        while True:
            short = self.tail_R(hi) >= tau
            if not short.any():
                break
            hi = np.where(short, hi * 2.0, hi)
        for _ in range(200):
            if np.all(hi - lo <= 1.0):
                break
            mid = np.floor((lo + hi) / 2.0)
            go_right = self.tail_R(mid) >= tau
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        return hi.astype(np.int64)

    def violations(self):
        out = []
        if not self.q > 0:
            out.append(RangeError("q must be positive"))
        if not self.gamma > 0:
            out.append(RangeError("gamma must be positive"))
        if self.family not in FAMILIES:
            out.append(ConfigError(f"unknown tail family {self.family!r}"))
        if not 0 < self.right_mass <= 1:
            out.append(RangeError("right_mass must lie in (0, 1]"))
        if not 0 < self.left_ratio < 1:
            out.append(RangeError("left_ratio must lie in (0, 1)"))
        return out


@dataclass(frozen=True)
class Catalyst:
    w: int
    beta: float
    alpha: float
    offspring: OffspringLaw


@dataclass(frozen=True)
class ModelConfig:
    jump: JumpLaw
    catalysts: tuple
    start: int = 0

    @property
    def N(self):
        return len(self.catalysts)

    @property
    def positions(self):
        return np.array([c.w for c in self.catalysts], dtype=np.int64)

    @property
    def betas(self):
        return np.array([c.beta for c in self.catalysts], dtype=float)

    @property
    def alphas(self):
        return np.array([c.alpha for c in self.catalysts], dtype=float)

    @property
    def means(self):
        return np.array([c.offspring.mean for c in self.catalysts], dtype=float)

    def index_of(self, w):
        for i, c in enumerate(self.catalysts):
            if c.w == w:
                return i
        return None

    def with_start(self, x):
        return ModelConfig(self.jump, self.catalysts, int(x))

    def to_dict(self):
        j = self.jump
        return {
            "jump": {"q": float(j.q), "gamma": float(j.gamma), "family": j.family,
                     "delta": float(j.delta), "right_mass": float(j.right_mass),
                     "left_ratio": float(j.left_ratio)},
            "catalysts": [
                {"w": int(c.w), "beta": float(c.beta), "alpha": float(c.alpha),
                 "offspring": {"family": c.offspring.family,
                               "param": _param_out(c.offspring)}}
                for c in self.catalysts],
            "start": int(self.start),
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def hash(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def _param_out(law):
    if law.family == "deterministic":
        return int(law.param)
    return float(law.param)


_JUMP_KEYS = {"q", "gamma", "family", "delta", "right_mass", "left_ratio"}
_CAT_KEYS = {"w", "beta", "alpha", "offspring"}
_OFF_KEYS = {"family", "param"}
_TOP_KEYS = {"jump", "catalysts", "start"}


def _check_keys(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing field(s) {sorted(missing)}")


def from_dict(d):
    _check_keys(d, _TOP_KEYS, _TOP_KEYS, "model")
    jd = d["jump"]
    _check_keys(jd, _JUMP_KEYS, _JUMP_KEYS - {"delta"}, "jump")
    jump = JumpLaw(q=float(jd["q"]), gamma=float(jd["gamma"]), family=jd["family"],
                   delta=float(jd.get("delta", 0.0)), right_mass=float(jd["right_mass"]),
                   left_ratio=float(jd["left_ratio"]))
    if not isinstance(d["catalysts"], list):
        raise ConfigError("catalysts: expected a list")
    cats = []
    for i, cd in enumerate(d["catalysts"]):
        _check_keys(cd, _CAT_KEYS, _CAT_KEYS, f"catalysts[{i}]")
        od = cd["offspring"]
        _check_keys(od, _OFF_KEYS, _OFF_KEYS, f"catalysts[{i}].offspring")
        param = od["param"]
        param = int(param) if od["family"] == "deterministic" and float(param).is_integer() else float(param)
        cats.append(Catalyst(w=int(cd["w"]), beta=float(cd["beta"]), alpha=float(cd["alpha"]),
                             offspring=OffspringLaw(od["family"], param)))
    return ModelConfig(jump=jump, catalysts=tuple(cats), start=int(d["start"]))


def loads(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from exc
    return from_dict(d)


def load_model(path):
    with open(path) as fh:
        return validate(loads(fh.read()))


def validate(config):
    """Check a model; return it unchanged or raise the first violation.

    All violations found are attached to the raised exception as
    ``violations``.
    """
    found = list(config.jump.violations())
    if config.N < 1:
        found.append(ConfigError("at least one catalyst is required"))
    seen = set()
    for c in config.catalysts:
        if c.w in seen:
            found.append(DuplicateCatalyst(f"two catalysts at position {c.w}"))
        seen.add(c.w)
        if not 0 <= c.alpha < 1:
            found.append(RangeError(f"alpha={c.alpha} at w={c.w} outside [0, 1)"))
        if not c.beta > 0:
            found.append(RangeError(f"beta={c.beta} at w={c.w} must be positive"))
        found.extend(c.offspring.violations())
    if not found:
        err = abs(config.jump.total_mass() - 1.0)
        if err > NORMALIZATION_TOL:
            found.append(NormalizationError(f"jump pmf mass differs from 1 by {err:.3g}"))
    if found:
        first = found[0]
        first.violations = [str(v) for v in found]
        raise first
    if not (config.jump.right_mass > 0 and config.jump.left_mass > 0):
        warnings.warn("walk may be reducible: jumps do not reach both directions", stacklevel=2)
    return config


def pgf_eval(law, s):
    if not 0 <= s <= 1:
        raise DomainError("pgf argument must lie in [0, 1]")
    return float(law.pgf(s))


def jump_pmf(law, y):
    return law.pmf(y)


def jump_tail_R(law, y):
    return law.tail_R(y)


def pinned_model():
    """Single catalyst at 0 used by the acceptance fixtures."""
    return ModelConfig(
        jump=JumpLaw(q=1.0, gamma=2.0, family="pure_power", delta=0.0,
                     right_mass=0.5, left_ratio=0.5),
        catalysts=(Catalyst(w=0, beta=1.0, alpha=0.7,
                            offspring=OffspringLaw("deterministic", 2)),),
        start=0,
    )
