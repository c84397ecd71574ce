import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnflow.config import (ConfigError, HBConfig, LadderConfig, ProblemConfig, RunConfig,
                           StabilityConfig, sample_forcing, sample_scalar)
from nnflow.fields import Grid, div

descending = st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=4).map(lambda x: sorted(x, reverse=True))


@st.composite
def configs(draw):
    k = draw(st.integers(1, 4))
    seq = lambda: sorted(draw(st.lists(st.floats(1e-4, 1.0), min_size=k, max_size=k)), reverse=True)
    prob = ProblemConfig(n=draw(st.integers(4, 64)), gamma=draw(st.floats(1.05, 3.0)),
                         r=draw(st.floats(2.0, 4.0)), M=draw(st.floats(0.1, 5.0)),
                         f={"preset": draw(st.sampled_from(["zero", "uniform", "shear", "vortex-forcing"])),
                            "amplitude": draw(st.floats(-3, 3))})
    lad = LadderConfig(alpha=seq(), delta=seq(), eps=seq(), eta=seq())
    return RunConfig(problem=prob, ladder=lad)


@given(configs())
def test_roundtrip(cfg):
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_digest_changes_with_content():
    a = RunConfig()
    b = RunConfig(problem=ProblemConfig(n=33))
    assert a.digest() != b.digest()


def test_load_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(RunConfig().to_json())
    assert RunConfig.load(path) == RunConfig()
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")


@pytest.mark.parametrize("raw", [
    {"bogus": {}},
    {"problem": {"nn": 3}},
    {"problem": {"r": 1.1}},
    {"problem": {"d": 4}},
    {"problem": {"q": 1.5}},
    {"problem": {"f": {"preset": "tornado"}}},
    {"problem": {"f": {"constant": [1.0]}}},
    {"ladder": {"eps": [0.1, 0.2], "alpha": [0.1, 0.1], "delta": [0.1, 0.1], "eta": [0.1, 0.1]}},
    {"ladder": {"eps": [0.1, 0.05]}},
    {"ladder": {"eps": [0.0]}},
    {"solver": {"theta": 0.0}},
    {"solver": {"method": "newton"}},
    {"hb": {"eps_reg": [0.01, 0.1]}},
    {"hb": {"rho_check": {"constant": -1.0}}},
    {"problem": {"gamma": 2.5}, "hb": {}},
    {"stability": {"k": []}},
    {"problem": "oops"},
    {"problem": {"n": "big"}},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)


def test_hb_config_accepts_zero_eta():
    cfg = RunConfig.from_dict({"ladder": {"eta": [0.0]}, "hb": {}})
    assert isinstance(cfg.hb, HBConfig)


def test_forcing_presets():
    g = Grid.square(32)
    assert not np.any(sample_forcing(g, {"preset": "zero"}))
    u = sample_forcing(g, {"preset": "uniform", "amplitude": 2.0})
    assert np.all(u[..., 0] == 2.0) and not np.any(u[..., 1])
    c = sample_forcing(g, {"constant": [1.0, -2.0]})
    assert np.all(c == [1.0, -2.0])
    v = sample_forcing(g, {"preset": "vortex-forcing"})
    assert np.abs(div(g, v)[2:-2, 2:-2]).max() < 0.05 * np.abs(v).max() / g.hmin * g.hmin * 10


def test_sample_scalar():
    g = Grid.square(16)
    s = sample_scalar(g, {"constant": 1.0, "modulation": 0.2})
    assert s.min() >= 0.8 and s.max() <= 1.2
    assert np.all(sample_scalar(g, {"constant": 2.0}) == 2.0)


def test_stability_block():
    cfg = RunConfig.from_dict({"stability": {"k": [2, 4], "amplitude": 0.1, "component": 1}})
    assert cfg.stability == StabilityConfig(k=[2, 4], amplitude=0.1, component=1)
