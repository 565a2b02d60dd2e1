from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from autorl.spaces import MultiAgentSpaceSpec, SpaceSpec, as_space, space_from_dict, space_to_json

finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def spaces(draw):
    dim = draw(st.integers(1, 6))
    if draw(st.booleans()):
        return SpaceSpec(dim, "discrete", 0.0, float(dim - 1))
    lows = draw(st.lists(st.one_of(finite, st.just(-math.inf)), min_size=dim, max_size=dim))
    widths = draw(st.lists(st.one_of(st.floats(0, 1e6), st.just(math.inf)), min_size=dim, max_size=dim))
    highs = tuple(lo + w if math.isfinite(lo) else w for lo, w in zip(lows, widths))
    return SpaceSpec(dim, "continuous", tuple(lows), highs)


@given(spaces())
def test_json_round_trip(space):
    back = space_from_dict(json.loads(space_to_json(space)))
    assert back == space


@given(spaces(), st.integers(0, 2**32 - 1))
def test_samples_within_bounds(space, seed):
    x = space.sample(np.random.default_rng(seed))
    if space.kind == "discrete":
        assert 0 <= x < space.dim
    else:
        assert x.shape == (space.dim,)
        assert np.all(x >= space.low_array) and np.all(x <= space.high_array)


def test_invalid_bounds():
    with pytest.raises(ValueError):
        SpaceSpec(2, low=(1.0, 0.0), high=(0.0, 1.0))
    with pytest.raises(ValueError):
        SpaceSpec(0)
    with pytest.raises(ValueError):
        SpaceSpec(2, low=(0.0,), high=1.0)


def test_discrete_from_dict():
    s = SpaceSpec.from_dict({"dim": 5, "type": "discrete"})
    assert s.kind == "discrete" and s.high == 4.0


def test_inf_strings():
    s = SpaceSpec.from_dict({"dim": 2, "type": "continuous", "low": "-inf", "high": ["inf", 3]})
    assert s.low == -math.inf and s.high == (math.inf, 3.0)


def test_multi_agent_round_trip():
    m = MultiAgentSpaceSpec.from_mapping({"a": {"dim": 2, "low": -1, "high": 1}, "b": {"dim": 3, "type": "discrete"}})
    assert space_from_dict(json.loads(space_to_json(m))) == m
    assert set(m.sample(np.random.default_rng(0))) == {"a", "b"}


def test_as_space_gym_like():
    class Box:
        low = np.array([-1.0, -2.0])
        high = np.array([1.0, 2.0])

    class Discrete:
        n = 4

    assert as_space(Box()) == SpaceSpec(2, "continuous", (-1.0, -2.0), (1.0, 2.0))
    assert as_space(Discrete()).dim == 4
