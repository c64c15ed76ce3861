import math

import numpy as np
import pytest

from cbrw import limitlaw as ll
from cbrw import taboo as tb
from cbrw.errors import PlateauNotReached


def test_grid():
    g = ll.LambdaGrid(1e-2, 1e2, 10)
    assert g.size == 41
    assert g.values[0] == pytest.approx(1e-2) and g.values[-1] == pytest.approx(1e2)
    with pytest.raises(ValueError):
        ll.LambdaGrid(1.0, 0.5)


def test_exponential_lattice_preserves_mass_and_transform():
    beta, nu, du, M = 1.3, 0.47, 0.05, 2000
    w = ll.exponential_lattice(beta, du, nu, M)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    lap = w @ np.exp(-nu * du * np.arange(M))
    assert lap == pytest.approx(beta / (beta + nu), rel=1e-10)


def test_rebin_preserves_transform():
    rng = np.random.default_rng(0)
    times = rng.exponential(2.0, 500)
    masses = rng.random(500) / 500
    nu, du = 0.4, 0.07
    out = ll._rebin_points(times, masses, du, nu, 5000)
    assert out.sum() == pytest.approx(masses.sum())
    assert out @ np.exp(-nu * du * np.arange(5000)) == pytest.approx(masses @ np.exp(-nu * times), rel=1e-12)


def test_discrete_D_is_one(pinned, est, spectral):
    k = ll.build_kernels(pinned, est, spectral.nu, ll.LambdaGrid())
    branch, move = k.laplace(spectral.nu)
    D = 0.7 * 2 * branch[0] + 0.3 * move[0, 0]
    assert D == pytest.approx(1.0, abs=1e-9)


def test_solution_properties(solution, spectral):
    phi = solution.phi[0]
    assert np.all(np.diff(phi) <= 1e-12)
    assert np.all((phi > 0) & (phi < 1))
    slopes = ll.anchor_slopes(solution)
    assert np.allclose(slopes / spectral.theta[0], 1.0, rtol=1e-3)
    assert solution(0.0) == 1.0
    assert solution(1e-9) == pytest.approx(1.0 - spectral.theta[0] * 1e-9)


def test_csv_roundtrip(solution):
    again = ll.PhiSolution.from_csv(solution.to_csv(), solution.sidecar())
    assert np.array_equal(again.phi, solution.phi)
    assert again.grid == solution.grid


def test_plateau_certificate(solution):
    short = ll.PhiSolution(ll.LambdaGrid(1e-6, 1.0, 64), solution.phi[:, :385], solution.theta, 0.0, 0)
    with pytest.raises(PlateauNotReached):
        ll.q_plateau(short)
    flat = ll.PhiSolution(solution.grid, np.full_like(solution.phi, 0.3), solution.theta, 0.0, 0)
    assert ll.q_plateau(flat)[0] == 0.3


def test_initial_profiles():
    g = ll.LambdaGrid(1e-3, 1e3, 4)
    assert np.all(ll.initial_profile([1.0], g, "constant") == 1.0)
    with pytest.raises(ValueError):
        ll.initial_profile([1.0], g, "bogus")


def test_extend_to_x_without_hits_is_one(pinned, solution, spectral, est):
    h = est.step
    fake = tb.TabooEstimates(dict(est), n_paths=est.n_paths, horizon=est.horizon, cells=est.cells, x=5)
    fake[("x", 0)] = tb.zero_cdf(h, 16)
    out = ll.extend_to_x(solution, pinned, fake, spectral.nu)
    assert np.allclose(out, 1.0)


def test_extend_to_x_monotone_and_between(pinned, solution, spectral, est):
    fake = tb.TabooEstimates(dict(est), n_paths=est.n_paths, horizon=est.horizon, cells=est.cells, x=3)
    fake[("x", 0)] = tb.estimate_taboo_cdf(pinned.jump, 3, 0, [], 20000, est.horizon,
                                           np.random.default_rng(1), cells=est.cells)
    out = ll.extend_to_x(solution, pinned, fake, spectral.nu)
    assert np.all(np.diff(out) <= 1e-12)
    assert np.all(out >= solution.phi[0] - 1e-12)
    F = fake[("x", 0)].mass
    # a mixture of phi(lambda e^{-nu u}) over the hitting law, plus the no-hit mass
    assert 1 - F + F * solution.phi[0, -1] - 1e-9 <= out[-1] <= 1.0
