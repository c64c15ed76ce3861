import json
import math

import numpy as np
import pytest
from scipy import integrate, special

from cbrw import model as mdl
from cbrw.errors import (ConfigError, DomainError, DuplicateCatalyst,
                         RangeError)


def test_pinned_mass_is_one(pinned):
    assert abs(pinned.jump.total_mass() - 1.0) < 1e-12


def test_right_constant_matches_zeta(pinned):
    law = pinned.jump
    assert law.c_plus == pytest.approx(0.5 / special.zeta(3.0), rel=1e-12)
    assert law.tail_constant == pytest.approx(law.c_plus / 2.0)


def test_tail_R_is_sum_of_pmf(pinned):
    law = pinned.jump
    ys = np.arange(1, 2001)
    direct = law.pmf(ys)[::-1].cumsum()[::-1]
    # R(y) = P(Y > y) = sum_{k > y}
    R = law.tail_R(np.arange(0, 2000))
    assert np.allclose(R, direct + law.tail_R(2000), rtol=1e-12)


def test_tail_R_beyond_window_continuous():
    law = mdl.JumpLaw(q=1.0, gamma=1.5, window=1000)
    inside = law.tail_R(999.0)
    outside = law.tail_R(1001.0)
    assert outside < law.tail_R(1000.0) <= inside
    # pure power: R(y) ~ A y^-gamma
    assert law.tail_R(1e6) * 1e6 ** 1.5 == pytest.approx(law.tail_constant, rel=1e-3)


def test_power_log_normalizes():
    law = mdl.JumpLaw(q=2.0, gamma=1.5, family="power_log", delta=1.0)
    assert abs(law.total_mass() - 1.0) < 1e-10
    assert law.pmf(-3) == pytest.approx(0.5 * 0.5 * 0.25)


def test_pmf_zero_rejected(pinned):
    with pytest.raises(DomainError):
        pinned.jump.pmf(0)


def test_sampling_frequencies(pinned):
    law = pinned.jump
    rng = np.random.default_rng(3)
    y = law.sample(rng, 200_000)
    assert not np.any(y == 0)
    for k in (-2, -1, 1, 2, 5):
        p = law.pmf(k)
        se = math.sqrt(p * (1 - p) / len(y))
        assert abs(np.mean(y == k) - p) < 4 * se
    p = law.tail_R(10)
    assert abs(np.mean(y > 10) - p) < 4 * math.sqrt(p * (1 - p) / len(y))


def test_power_log_sampling_tail():
    law = mdl.JumpLaw(q=1.0, gamma=1.2, family="power_log", delta=0.5, window=2000)
    rng = np.random.default_rng(5)
    y = law.sample(rng, 100_000)
    for u in (3, 50, 3000):
        p = float(law.tail_R(u))
        assert abs(np.mean(y > u) - p) < 4 * math.sqrt(p * (1 - p) / len(y)) + 1e-4


def test_upper_gamma_negative_order():
    for s in (-0.5, -1.0, -2.3, 0.7):
        for x in (0.3, 2.0):
            ref, _ = integrate.quad(lambda t: t ** (s - 1) * math.exp(-t), x, np.inf)
            assert float(mdl.upper_gamma(s, x)) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("family,param,mean,p0", [
    ("deterministic", 2, 2.0, 0.0),
    ("poisson", 1.5, 1.5, math.exp(-1.5)),
    ("geometric", 0.25, 3.0, 0.25),
])
def test_offspring(family, param, mean, p0):
    law = mdl.OffspringLaw(family, param)
    assert law.mean == pytest.approx(mean)
    assert law.p0 == pytest.approx(p0)
    assert law.pgf(1.0) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    assert np.mean(law.sample(rng, 100_000)) == pytest.approx(mean, rel=0.02)


def test_pgf_eval_domain():
    law = mdl.OffspringLaw("poisson", 1.0)
    assert mdl.pgf_eval(law, 0.5) == pytest.approx(math.exp(-0.5))
    with pytest.raises(DomainError):
        mdl.pgf_eval(law, 1.5)


def test_roundtrip_and_hash(pinned):
    text = pinned.dumps()
    again = mdl.loads(text)
    assert again == pinned
    assert again.hash() == pinned.hash()
    assert mdl.loads(text.replace('"alpha": 0.7', '"alpha": 0.6')).hash() != pinned.hash()


def test_unknown_field_rejected(pinned):
    d = pinned.to_dict()
    d["jump"]["sigma"] = 1.0
    with pytest.raises(ConfigError, match="unknown"):
        mdl.from_dict(d)


def test_invalid_json():
    with pytest.raises(ConfigError):
        mdl.loads("{not json")


def test_validate_collects_violations(pinned):
    d = pinned.to_dict()
    d["catalysts"].append(dict(d["catalysts"][0], alpha=1.5))
    cfg = mdl.from_dict(d)
    with pytest.raises(ConfigError) as info:
        mdl.validate(cfg)
    assert isinstance(info.value, DuplicateCatalyst)
    assert len(info.value.violations) == 2


def test_range_errors(pinned):
    d = pinned.to_dict()
    d["jump"]["left_ratio"] = 1.0
    with pytest.raises(RangeError):
        mdl.validate(mdl.from_dict(d))
    d = pinned.to_dict()
    d["catalysts"][0]["beta"] = 0.0
    with pytest.raises(RangeError):
        mdl.validate(mdl.from_dict(d))


def test_load_model_file(tmp_path, pinned):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(pinned.to_dict()))
    assert mdl.load_model(str(p)) == pinned


def test_config_properties(pinned):
    assert pinned.N == 1
    assert pinned.index_of(0) == 0 and pinned.index_of(3) is None
    assert pinned.means.tolist() == [2.0]
    assert pinned.with_start(4).start == 4
