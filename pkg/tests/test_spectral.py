import json

import numpy as np
import pytest

from cbrw import model as mdl
from cbrw import spectral as sp
from cbrw import taboo as tb
from cbrw.errors import BracketError, ConvergenceError, NotSupercritical


def test_perron_known_matrix():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    rho, v = sp.perron(A)
    assert rho == pytest.approx(3.0, abs=1e-10)
    assert np.allclose(v, [1.0, 1.0])


def test_perron_periodic_matrix():
    rho, v = sp.perron(np.array([[0.0, 2.0], [0.5, 0.0]]))
    assert rho == pytest.approx(1.0, abs=1e-9)
    assert v[1] == pytest.approx(0.5)


def test_perron_rejects_reducible():
    with pytest.raises(ConvergenceError):
        sp.perron(np.array([[1.0, 0.0], [0.0, 2.0]]))


def test_classify_pinned(pinned, small_est):
    c = sp.classify(pinned, small_est)
    assert c.verdict == sp.SUPERCRITICAL
    assert c.rho0 == pytest.approx(0.7 * 2 + 0.3 * small_est.pair(0, 0).mass)


def test_classify_no_branching(pinned, small_est):
    d = pinned.to_dict()
    d["catalysts"][0]["alpha"] = 0.0
    cfg = mdl.from_dict(d)
    assert sp.classify(cfg, small_est).verdict == sp.NOT_SUPERCRITICAL
    with pytest.raises(NotSupercritical):
        sp.spectral_analysis(cfg, small_est)
    with pytest.raises(BracketError):
        sp.malthusian(cfg, small_est)


def test_malthusian_identity(pinned, small_est):
    nu = sp.malthusian(pinned, small_est)
    assert abs(sp.scalar_identity(pinned, small_est, nu) - 1.0) < 1e-8


def test_K_matches_sample_quadrature(pinned, est, spectral):
    """K from the grid machinery against the formula evaluated on raw samples."""
    nu = spectral.nu
    f = est.pair(0, 0)
    tau = f.samples
    n = f.n_paths
    q, b, a, m = 1.0, 1.0, 0.7, 2.0
    F = np.exp(-nu * tau).sum() / n
    Fm = (tau * np.exp(-nu * tau)).sum() / n
    g, dg = b / (b + nu), b / (b + nu) ** 2
    tilted = a * m * dg + (1 - a) * (dg * F + g * Fm)
    K = q * (1 - a) * b * (nu + q) / (q * (nu + b)) * (1 - q / (q + nu) * F) / nu**2 / tilted
    assert spectral.K == pytest.approx(K, rel=5e-3)


def test_theta_closed_form_is_K(pinned, est, spectral):
    theta = sp.theta_closed_form(pinned, est, spectral.nu)
    assert theta[0] == pytest.approx(spectral.K, rel=1e-10)


def test_renewal_sum_exponential_kernel():
    # Z = 1 + a G * Z with G exponential(1): Z(t) = 1 + a/(1-a) (1 - e^{-(1-a) t})
    a, h, n = 0.4, 0.005, 2001
    t = h * np.arange(n)
    kernel = sp.RenewalKernel(h, (a * -np.expm1(-t))[None, None, :])
    Z = sp.markov_renewal_sum(kernel, np.ones((1, n)))[0]
    exact = 1.0 + a / (1 - a) * (1 - np.exp(-(1 - a) * t))
    assert np.max(np.abs(Z - exact)) < 1e-4


def test_spectral_result_roundtrip(spectral):
    d = json.loads(spectral.dumps())
    again = sp.SpectralResult.from_dict(d)
    assert again.nu == spectral.nu and np.array_equal(again.theta, spectral.theta)


def test_two_catalyst_system():
    cfg = mdl.from_dict({
        "jump": {"q": 1.0, "gamma": 2.0, "family": "pure_power", "right_mass": 0.5, "left_ratio": 0.5},
        "catalysts": [
            {"w": 0, "beta": 1.0, "alpha": 0.6, "offspring": {"family": "deterministic", "param": 2}},
            {"w": 3, "beta": 2.0, "alpha": 0.3, "offspring": {"family": "poisson", "param": 2.5}},
        ],
        "start": 0,
    })
    est = tb.estimate_all(cfg, 20000, 2, horizon=102.4, cells=8192)
    nu = sp.malthusian(cfg, est)
    D = sp.build_D(cfg, est, nu)
    rho, v = sp.perron(D)
    assert abs(rho - 1.0) < 1e-8
    assert np.all(v > 0)
    # the Perron root is the largest eigenvalue
    assert rho == pytest.approx(max(np.linalg.eigvals(D).real), abs=1e-10)
    theta = sp.theta_closed_form(cfg, est, nu)
    assert np.all(theta > 0)
    with pytest.raises(ValueError):
        sp.compute_K(cfg, est, nu)


def test_perron_random_positive_residual():
    rng = np.random.default_rng(8)
    M = rng.random((4, 4)) + 0.01
    rho, v = sp.perron(M)
    assert np.max(np.abs(M @ v - rho * v)) <= 1e-10
    assert v[0] == 1.0
