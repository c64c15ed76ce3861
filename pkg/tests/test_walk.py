import math

import numpy as np
import pytest

from cbrw import model as mdl
from cbrw import walk
from cbrw.errors import PrecisionError


def test_path_position():
    p = walk.WalkPath(2, np.array([0.5, 1.5]), np.array([3, -1]))
    assert p.position(0.0) == 2
    assert p.position(0.5) == 5
    assert p.position(2.0) == 4
    assert p.n_events == 2


def test_sample_path_rate(pinned):
    rng = np.random.default_rng(1)
    counts = [walk.sample_path(pinned.jump, 0, 10.0, rng).n_events for _ in range(2000)]
    assert np.mean(counts) == pytest.approx(10.0, rel=0.03)


def test_exact_tail_at_zero_time(pinned):
    assert walk.exact_tail(pinned.jump, 0.0, 3).value == 0.0
    assert walk.exact_tail(pinned.jump, 0.0, -1).value == 1.0


def test_exact_tail_one_jump_limit(pinned):
    # for small t, P(S(t) > u) ~ q t R(u)
    law = pinned.jump
    t = 1e-3
    v = walk.exact_tail(law, t, 5).value
    assert v == pytest.approx(law.q * t * law.tail_R(5), rel=2e-3)


def test_exact_tail_matches_monte_carlo(pinned):
    law = pinned.jump
    rng = np.random.default_rng(2)
    s = walk.sample_endpoints(law, 0, 3.0, 200_000, rng)
    for u in (-2, 0, 3, 10):
        tv = walk.exact_tail(law, 3.0, u)
        p = np.mean(s > u)
        assert abs(p - tv.value) < 4 * math.sqrt(tv.value * (1 - tv.value) / len(s))
        assert tv.error < 1e-8


def test_exact_tail_grid_consistent(pinned):
    vals, errs = walk.exact_tail_grid(pinned.jump, [1.0, 2.0], [0.0, 4.0])
    assert vals.shape == (2, 2)
    assert vals[1, 0] == pytest.approx(walk.exact_tail(pinned.jump, 2.0, 0.0).value, abs=1e-12)
    assert np.all(np.diff(vals, axis=1) <= 0)


def test_exact_tail_precision_error(pinned):
    with pytest.raises(PrecisionError):
        walk.exact_tail(pinned.jump, 2.0, 50.0, n_max=0, tol=1e-20, lattice_bound=60)


def test_normalizer(pinned):
    tail = walk.TailModel.from_law(pinned.jump, 0.47)
    for t in (4.0, 8.0):
        L = walk.normalizer_L(tail, t)
        assert L == pytest.approx(math.sqrt(pinned.jump.tail_constant * math.exp(0.47 * t)))


def test_power_log_inverse():
    law = mdl.JumpLaw(q=1.0, gamma=1.5, family="power_log", delta=1.0)
    tail = walk.TailModel(gamma=1.5, nu=0.3, family="power_log", delta=1.0,
                          constant=law.tail_constant)
    for s in (1e2, 1e5):
        y = tail.R_inv(s)
        assert 1.0 / float(tail.R(y)) == pytest.approx(s, rel=1e-8)


def test_continuous_tail_matches_integers(pinned):
    law = pinned.jump
    for y in (1, 2, 10, 100):
        assert law.tail_R_continuous(float(y)) == pytest.approx(law.tail_R(y), rel=1e-12)
    assert law.tail_R_continuous(2.5) < law.tail_R_continuous(2.4)


def test_big_jump_ratio_trend(pinned):
    tail = walk.TailModel.from_law(pinned.jump, 0.47)
    for c in (1.0, 4.0):
        r = [walk.big_jump_ratio(pinned.jump, tail, t, c) for t in (8.0, 16.0, 32.0)]
        dist = np.abs(np.array(r) - 1.0)
        assert np.all(np.diff(dist) <= 0)
