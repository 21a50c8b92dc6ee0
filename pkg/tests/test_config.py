import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinofab.config import ConfigError, build_scenario, default_config, dumps, loads, parse_scenario

MINIMAL = """
[model]
link_lengths = [1.0, 1.0]
link_masses = [1.0, 1.0]
joint_lower = [-3.0, -3.0]
joint_upper = [3.0, 3.0]

[[behaviors]]
name = "posture"
class = "attractor"
target = [0.5, 0.0]
"""


def test_minimal_defaults():
    cfg = loads(MINIMAL)
    b = cfg.behaviors[0]
    assert b["priority"] == 2 and b["damping"] == 10.0 and b["attachment"] == "joints" and b["active"]
    assert cfg.model["gravity"] == [0.0, -9.81]
    assert cfg.model["control_points"] == {"ee": [1, 1.0]}
    assert cfg.run["dt"] == 1e-3 and cfg.run["speed_gate"] == "gated" and cfg.run["seed"] == 0
    assert cfg.run["sweep_speeds"] == [float(v) for v in range(1, 11)]
    sc = build_scenario(cfg)
    assert sc.behaviors[0].gains == {"lambda_e": 10.0} and sc.behaviors[0].weight == 1.0
    assert sc.model.n_joints == 2


def test_negative_gain_names_key_and_line():
    text = MINIMAL.replace('class = "attractor"\ntarget = [0.5, 0.0]',
                           'class = "attractor"\ntarget = [0.5, 0.0]') + """
[[behaviors]]
name = "rep"
class = "repeller"
attachment = "ee"
lambda_b = -1
"""
    with pytest.raises(ConfigError) as exc:
        loads(text)
    assert exc.value.key == "behaviors[1].lambda_b"
    assert exc.value.line == text.splitlines().index("lambda_b = -1") + 1
    assert "behaviors[1].lambda_b" in str(exc.value)


@pytest.mark.parametrize("patch, key", [
    (("link_masses = [1.0, 1.0]", "link_masses = [1.0]"), "model.link_masses"),
    (("target = [0.5, 0.0]", "target = [0.5, 0.0]\ncolour = \"red\""), "behaviors[0].colour"),
    (('class = "attractor"', 'class = "spring"'), "behaviors[0].class"),
    (('class = "attractor"', 'class = "attractor"\nlambda_b = 1.0'), "behaviors[0].lambda_b"),
    (("joint_upper = [3.0, 3.0]", "joint_upper = [3.0, -3.0]"), "model.joint_upper"),
])
def test_schema_violations(patch, key):
    with pytest.raises(ConfigError) as exc:
        loads(MINIMAL.replace(*patch))
    assert exc.value.key == key


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        loads(MINIMAL + "\n[plot]\ncolour = 1\n")


def test_dangling_tree_edge():
    text = MINIMAL + '\n[[tree]]\nname = "d"\nkind = "dodge"\nchildren = ["ghost"]\n'
    with pytest.raises(ConfigError, match="ghost"):
        loads(text)


def test_syntax_error():
    with pytest.raises(ConfigError) as exc:
        loads("[model\n")
    assert exc.value.key == "syntax"


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_scenario(tmp_path / "nope.toml")


def test_default_round_trip():
    cfg = default_config()
    assert loads(dumps(cfg)) == cfg
    assert loads(dumps(cfg, comments=False)) == cfg
    assert dumps(loads(dumps(cfg))) == dumps(cfg)


finite = st.floats(0.05, 5.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), data=st.data())
def test_round_trip_property(n, data):
    lengths = data.draw(st.lists(finite, min_size=n, max_size=n))
    masses = data.draw(st.lists(finite, min_size=n, max_size=n))
    gains = data.draw(st.fixed_dictionaries({"lambda_b": finite, "d_max": finite}))
    damping = data.draw(st.floats(0.0, 50.0))
    priority = data.draw(st.integers(1, 4))
    radius = data.draw(st.sampled_from([0.5, math.inf]))
    text = f"""
[model]
link_lengths = {lengths!r}
link_masses = {masses!r}
joint_lower = {[-1.5] * n!r}
joint_upper = {[1.5] * n!r}

[[behaviors]]
name = "rep"
class = "repeller"
attachment = "ee"
priority = {priority}
damping = {damping!r}
lambda_b = {gains['lambda_b']!r}
d_max = {gains['d_max']!r}

[[tree]]
name = "dodge"
kind = "dodge"
children = ["rep"]
activation_radius = {'inf' if radius == math.inf else repr(radius)}

[[obstacles]]
position = [1.0, 2.0]
"""
    cfg = loads(text)
    assert loads(dumps(cfg)) == cfg


def test_seeded_initial_spread():
    text = MINIMAL + "\n[run]\ninitial_spread = 0.1\nseed = 7\n"
    a, b = build_scenario(loads(text)), build_scenario(loads(text))
    assert np.array_equal(a.q0, b.q0) and not np.array_equal(a.q0, np.zeros(2))
    c = build_scenario(loads(text.replace("seed = 7", "seed = 8")))
    assert not np.array_equal(a.q0, c.q0)
