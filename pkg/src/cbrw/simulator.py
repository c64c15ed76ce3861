"""Monte Carlo simulation of the catalytic branching random walk.

Particles never interact, so each one can be advanced through its own
event sequence independently of the others.  The engine works in rounds:
in every round each live particle (across all replicates of a chunk)
executes its next event.  A particle sitting at ``p`` on ``[s, e)`` is
recorded at every checkpoint in that interval, which gives exact
snapshots without any global event ordering.
"""
from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

BOTTOM = np.iinfo(np.int64).min


@dataclass(frozen=True)
class SimConfig:
    t_max: float
    checkpoints: tuple
    replicates: int = 1000
    population_cap: int = 10**6
    master_seed: int = 0
    chunk_size: int = 500
    workers: int = 1

    def __post_init__(self):
        cps = tuple(float(c) for c in self.checkpoints)
        object.__setattr__(self, "checkpoints", cps)
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("checkpoints must be strictly increasing")
        if cps and (cps[0] < 0 or cps[-1] > self.t_max):
            raise ValueError("checkpoints must lie in [0, t_max]")
        if self.replicates < 1 or self.population_cap < 1 or self.chunk_size < 1:
            raise ValueError("replicates, population_cap and chunk_size must be >= 1")


@dataclass
class SimRecord:
    """Per-replicate snapshots; ``M`` is :data:`BOTTOM` for an empty population."""
    checkpoints: np.ndarray
    M: np.ndarray            # (R, C)
    total: np.ndarray        # (R, C)
    local: np.ndarray        # (R, C, N)
    extinct: np.ndarray      # (R,)
    truncated: np.ndarray    # (R,)

    @property
    def replicates(self):
        return self.M.shape[0]

    def index(self, t):
        i = int(np.argmin(np.abs(self.checkpoints - t)))
        if not math.isclose(self.checkpoints[i], t, rel_tol=1e-12, abs_tol=1e-12):
            raise KeyError(f"no checkpoint at t={t}")
        return i

    @staticmethod
    def concat(parts):
        return SimRecord(parts[0].checkpoints,
                         np.concatenate([p.M for p in parts]),
                         np.concatenate([p.total for p in parts]),
                         np.concatenate([p.local for p in parts]),
                         np.concatenate([p.extinct for p in parts]),
                         np.concatenate([p.truncated for p in parts]))


def _holding(rng, pos, W, betas, q):
    rates = np.full(len(pos), q, dtype=float)
    if len(W):
        k = _catalyst_index(pos, W)
        at = k >= 0
        rates[at] = betas[k[at]]
    return rng.exponential(1.0, len(pos)) / rates


def _catalyst_index(pos, W):
    """Index of the catalyst at ``pos`` or -1."""
    order = np.argsort(W)
    Ws = W[order]
    j = np.searchsorted(Ws, pos)
    j = np.clip(j, 0, len(Ws) - 1)
    hit = Ws[j] == pos
    return np.where(hit, order[j], -1)


def simulate_chunk(config, sim, n_rep, rng, start=None):
    """Run ``n_rep`` independent replicates with one generator."""
    law = config.jump
    W = config.positions
    betas = config.betas
    alphas = config.alphas
    N = config.N
    q = law.q
    cps = np.asarray(sim.checkpoints, dtype=float)
    C = len(cps)
    x0 = config.start if start is None else int(start)

    M = np.full((n_rep, C), BOTTOM, dtype=np.int64)
    total = np.zeros((n_rep, C), dtype=np.int64)
    local = np.zeros((n_rep, C, N), dtype=np.int64)
    alive_end = np.zeros(n_rep, dtype=bool)
    births = np.ones(n_rep, dtype=np.int64)
    truncated = np.zeros(n_rep, dtype=bool)

    rep = np.arange(n_rep, dtype=np.int64)
    pos = np.full(n_rep, x0, dtype=np.int64)
    s = np.zeros(n_rep)
    e = _holding(rng, pos, W, betas, q)

    def record(rep, pos, s, e):
        lo = np.searchsorted(cps, s, side="left")
        hi = np.searchsorted(cps, e, side="left")
        cnt = hi - lo
        if cnt.any():
            r = np.repeat(rep, cnt)
            p = np.repeat(pos, cnt)
            base = np.repeat(np.cumsum(cnt) - cnt - lo, cnt)
            c = np.arange(len(r)) - base
            flat = r * C + c
            np.maximum.at(M.reshape(-1), flat, p)
            np.add.at(total.reshape(-1), flat, 1)
            k = _catalyst_index(p, W)
            at = k >= 0
            if at.any():
                np.add.at(local.reshape(-1), flat[at] * N + k[at], 1)
        # alive at t_max
        live = e > sim.t_max
        if live.any():
            alive_end[rep[live & (s <= sim.t_max)]] = True

    while len(rep):
        done = e > sim.t_max
        record(rep, pos, s, np.where(done, np.inf, e))
        keep = ~done & ~truncated[rep]
        rep, pos, s, e = rep[keep], pos[keep], s[keep], e[keep]
        if not len(rep):
            break
        k = _catalyst_index(pos, W)
        at = k >= 0
        branch = np.zeros(len(rep), dtype=bool)
        if at.any():
            branch[at] = rng.random(int(at.sum())) < alphas[k[at]]
        # branching: parent replaced by xi offspring at the catalyst
        b_idx = np.flatnonzero(branch)
        if len(b_idx):
            kids = np.zeros(len(b_idx), dtype=np.int64)
            kb = k[b_idx]
            for j in range(N):
                sel = kb == j
                if sel.any():
                    kids[sel] = config.catalysts[j].offspring.sample(rng, int(sel.sum()))
            np.add.at(births, rep[b_idx], kids)
            over = births > sim.population_cap
            truncated |= over
            n_rep_kids = rep[b_idx].repeat(kids)
            n_pos = pos[b_idx].repeat(kids)
            n_s = e[b_idx].repeat(kids)
        else:
            n_rep_kids = np.empty(0, dtype=np.int64)
            n_pos = np.empty(0, dtype=np.int64)
            n_s = np.empty(0)
        # jumps for the rest
        j_idx = np.flatnonzero(~branch)
        new_pos = pos[j_idx] + law.sample(rng, len(j_idx))
        rep = np.concatenate([rep[j_idx], n_rep_kids])
        pos = np.concatenate([new_pos, n_pos])
        s = np.concatenate([e[j_idx], n_s])
        ok = ~truncated[rep]
        rep, pos, s = rep[ok], pos[ok], s[ok]
        e = s + _holding(rng, pos, W, betas, q)

    extinct = ~alive_end & ~truncated
    return SimRecord(cps, M, total, local, extinct, truncated)


def _chunk_task(args):
    config, sim, idx, n, start = args
    return simulate_chunk(config, sim, n, rngmod.stream(sim.master_seed, rngmod.SIMULATION, idx), start)


def _chunks(sim):
    sizes = []
    left = sim.replicates
    while left > 0:
        sizes.append(min(sim.chunk_size, left))
        left -= sizes[-1]
    return sizes


def run_replicate(config, sim, rng):
    """A single replicate; returns a one-row :class:`SimRecord`."""
    return simulate_chunk(config, sim, 1, rng)


def run_ensemble(config, sim, start=None):
    """All replicates, chunk ``i`` drawing from stream ``(seed, SIMULATION, i)``.

    Results depend only on the seed and chunk size, not on ``workers``.
    """
    tasks = [(config, sim, i, n, start) for i, n in enumerate(_chunks(sim))]
    if sim.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=sim.workers) as ex:
            parts = list(ex.map(_chunk_task, tasks))
    else:
        parts = [_chunk_task(t) for t in tasks]
    return Ensemble(config, sim, SimRecord.concat(parts))


@dataclass
class Ensemble:
    config: object
    sim: SimConfig
    record: SimRecord
    meta: dict = field(default_factory=dict)

    @property
    def checkpoints(self):
        return self.record.checkpoints

    def usable(self):
        return ~self.record.truncated

    def mean_total(self):
        ok = self.usable()
        return self.record.total[ok].mean(axis=0)

    def var_total(self):
        ok = self.usable()
        return self.record.total[ok].var(axis=0)

    def mean_local(self):
        ok = self.usable()
        return self.record.local[ok].mean(axis=0)

    def growth_slope(self, t_lo, t_hi):
        """Least-squares slope of ``log E|N(t)|`` over checkpoints in ``[t_lo, t_hi]``."""
        t = self.checkpoints
        sel = (t >= t_lo - 1e-12) & (t <= t_hi + 1e-12)
        y = np.log(self.mean_total()[sel])
        return float(np.polyfit(t[sel], y, 1)[0])

    def max_cdf(self, t, grid):
        """Empirical ``P(M_t <= y)`` on ``grid``; empty populations count as ``-inf``."""
        i = self.record.index(t)
        m = self.record.M[self.usable(), i]
        m = np.sort(m)
        return np.searchsorted(m, np.asarray(grid), side="right") / len(m)

    def local_extinction_proxy(self, t=None):
        """Fraction of usable replicates with no particle on any catalyst at ``t``."""
        i = len(self.checkpoints) - 1 if t is None else self.record.index(t)
        loc = self.record.local[self.usable(), i]
        return float(np.mean(loc.sum(axis=1) == 0))

    def fractions(self):
        r = self.record
        return {"truncated": float(r.truncated.mean()), "extinct": float(r.extinct.mean())}

    def checkpoint_csv(self, c):
        r = self.record
        N = r.local.shape[2]
        buf = io.StringIO()
        buf.write("replicate,M,total," + ",".join(f"mu_w{k + 1}" for k in range(N)) + ",extinct,truncated\n")
        for i in range(r.replicates):
            m = r.M[i, c]
            ms = "-inf" if m == BOTTOM else str(int(m))
            buf.write(f"{i},{ms},{int(r.total[i, c])}," + ",".join(str(int(v)) for v in r.local[i, c])
                      + f",{int(r.extinct[i])},{int(r.truncated[i])}\n")
        return buf.getvalue()

    def summary(self, nu=None):
        out = {
            "replicates": int(self.record.replicates),
            "checkpoints": [float(t) for t in self.checkpoints],
            "mean_total": [float(x) for x in self.mean_total()],
            "var_total": [float(x) for x in self.var_total()],
            "mean_local": [[float(x) for x in row] for row in self.mean_local()],
            "fractions": self.fractions(),
            "local_extinction_proxy": self.local_extinction_proxy(),
        }
        if len(self.checkpoints) >= 2 and np.all(self.mean_total() > 0):
            out["growth_slope"] = self.growth_slope(self.checkpoints[0], self.checkpoints[-1])
        if nu is not None:
            out["nu"] = float(nu)
        out.update(self.meta)
        return out

    def summary_json(self, nu=None):
        return json.dumps(self.summary(nu), indent=2, sort_keys=True) + "\n"


def transformed_max_sample(ensemble, t, tail, gamma=None):
    """``(M_t / L_t)^{-gamma}`` per usable replicate; ``+inf`` when ``M_t <= 0`` or empty.

    The empirical c.d.f. of the result at ``lambda`` estimates
    ``P(M_t / L_t <= lambda^{-1/gamma})``.
    """
    from .walk import normalizer_L
    gamma = tail.gamma if gamma is None else gamma
    i = ensemble.record.index(t)
    m = ensemble.record.M[ensemble.usable(), i]
    L = normalizer_L(tail, t)
    out = np.full(len(m), np.inf)
    pos = m > 0
    out[pos] = (m[pos] / L) ** (-gamma)
    return out
