from __future__ import annotations

import math

import numpy as np
import pytest

from autorl.algo import AlgorithmChoice, HyperparamPatch, integrate_config, load_references
from autorl.envs import PointMassEnv
from autorl.errors import BackendFault, EmptyOutcomes, EmptySeries, ZeroBaseline
from autorl.mdp import ComponentCode, identity_components
from autorl.spaces import SpaceSpec
from autorl.training import (
    Budget,
    RandomSearchBackend,
    ScalarSeries,
    ScriptedBackend,
    Trainer,
    apply_wrappers,
    compute_score,
    read_scalars,
    relative_gain,
    summarize_metrics,
    train_and_evaluate,
    write_scalars_csv,
    write_scalars_jsonl,
)

from helpers import ACT_SPACE, OBS_SPACE

IDENTITY = identity_components(OBS_SPACE, ACT_SPACE)
REF = load_references()["ppo"]
CONFIG = integrate_config(AlgorithmChoice("ppo", "r"), REF.network, HyperparamPatch((), REF.hyperparams),
                          REF.hyperparams, IDENTITY)


def _rollout(env, steps, seed=0, policy=None):
    rng = np.random.default_rng(seed)
    obs, _ = env.reset(seed=seed)
    out = [(obs, None)]
    for _ in range(steps):
        action = policy(obs) if policy else rng.uniform(-1, 1, size=1)
        obs, reward, term, trunc, _ = env.step(action)
        out.append((obs, reward))
        if term or trunc:
            break
    return out


# -- summaries --------------------------------------------------------------------


def test_linear_series_summary():
    s = summarize_metrics([ScalarSeries("train/episode_return", ((1, 0.0), (2, 1.0), (3, 2.0)))], window=3)
    st = s.stats["train/episode_return"]
    assert st.slope == pytest.approx(1.0)
    assert (st.final, st.max) == (2.0, 2.0)
    assert s.instability_flags == frozenset()


def test_nan_flag_and_finite_stats():
    s = summarize_metrics([ScalarSeries("train/episode_return", ((1, 1.0), (2, math.nan), (3, 3.0)))])
    assert "nan_seen" in s.instability_flags
    assert s.stats["train/episode_return"].mean == 2.0


def test_collapse_and_divergence_flags():
    s = summarize_metrics([
        ScalarSeries("eval/return", ((1, 10.0), (2, 4.0))),
        ScalarSeries("train/loss", ((1, 1.0), (2, 2.0), (3, 3.0))),
    ])
    assert s.instability_flags == {"reward_collapse", "divergence"}


def test_empty_series():
    with pytest.raises(EmptySeries):
        summarize_metrics([])


def test_narrative_mentions_every_tag():
    s = summarize_metrics([ScalarSeries("a/return", ((1, 1.0),)), ScalarSeries("b/loss", ((1, 1.0),))])
    assert "a/return" in s.narrative and "b/loss" in s.narrative and "Instability flags: none" in s.narrative


# -- scores ------------------------------------------------------------------------


def test_compute_score():
    assert compute_score([100, 200]).value == 150
    wins = [{"return": 0, "win": k < 47} for k in range(50)]
    score = compute_score(wins, "win_rate")
    assert score.value == pytest.approx(0.94) and score.episodes == 50
    assert compute_score([-7.5]).value == -7.5
    with pytest.raises(EmptyOutcomes):
        compute_score([])


def test_relative_gain():
    assert relative_gain(3853.84, 5981.39) == pytest.approx(0.55206, abs=1e-4)
    assert relative_gain(178.16, 219.60) == pytest.approx(0.233, abs=5e-4)
    assert relative_gain(4.2, 4.2) == 0.0
    assert relative_gain(-10.0, -5.0) == pytest.approx(0.5)
    with pytest.raises(ZeroBaseline):
        relative_gain(0.0, 1.0)


# -- backends ----------------------------------------------------------------------


def test_scripted_backend_score():
    factory = ScriptedBackend.factory([[1.0, 2.0, 3.0]])
    _, score = train_and_evaluate(CONFIG, IDENTITY, Budget(100, 3), PointMassEnv, factory)
    assert score.value == 2.0 and score.episodes == 3


def test_backend_fault_keeps_partial_series():
    factory = ScriptedBackend.factory([{"returns": [1.0], "fault": True}])
    with pytest.raises(BackendFault) as err:
        train_and_evaluate(CONFIG, IDENTITY, Budget(100, 1), PointMassEnv, factory)
    assert err.value.partial_series
    assert len(err.value.partial_series[0].points) == 3


def test_random_backend_episode_count():
    _, score = train_and_evaluate(CONFIG, IDENTITY, Budget(200, 50), PointMassEnv)
    assert score.episodes == 50 and math.isfinite(score.value)


def test_random_backend_deterministic():
    a = train_and_evaluate(CONFIG, IDENTITY, Budget(300, 5, seed=3), PointMassEnv, RandomSearchBackend)
    b = train_and_evaluate(CONFIG, IDENTITY, Budget(300, 5, seed=3), PointMassEnv, RandomSearchBackend)
    assert a[1] == b[1]


def test_trainer_counts_calls():
    t = Trainer(PointMassEnv, Budget(100, 2), ScriptedBackend.factory([[1.0], [2.0]]))
    t(IDENTITY, CONFIG)
    summary, score = t(IDENTITY, CONFIG)
    assert t.calls == 2 and score.value == 2.0
    assert "train/episode_return" in summary.stats


# -- wrappers ----------------------------------------------------------------------


def test_identity_wrappers_match_raw_env():
    policy = lambda obs: np.array([0.3])  # noqa: E731
    raw = _rollout(PointMassEnv(), 20, policy=policy)
    wrapped = _rollout(apply_wrappers(PointMassEnv(), IDENTITY), 20, policy=policy)
    for (o1, r1), (o2, r2) in zip(raw, wrapped):
        assert np.array_equal(o1, o2) and r1 == r2


def test_obs_wrapper_widens_observation():
    five = ComponentCode.create(
        "obs",
        "def custom_state_transform(state):\n"
        "    s = np.asarray(state, dtype=float)\n"
        "    return np.concatenate([s, [s[2] - s[0], abs(s[2] - s[0])]])\n",
        SpaceSpec(5),
    )
    env = apply_wrappers(PointMassEnv(), IDENTITY.replace(obs=five))
    assert env.observation_space.dim == 5
    assert all(len(o) == 5 for o, _ in _rollout(env, 20))


def test_zero_reward_wrapper():
    zero = ComponentCode.create("rew", "def custom_reward_function(a, b, c, d):\n    return 0.0\n")
    env = apply_wrappers(PointMassEnv(), IDENTITY.replace(rew=zero))
    assert sum(r for _, r in _rollout(env, 30)[1:]) == 0.0


# -- scalar files ------------------------------------------------------------------


@pytest.mark.parametrize("suffix,writer", [(".csv", write_scalars_csv), (".jsonl", write_scalars_jsonl)])
def test_scalar_files_round_trip(tmp_path, suffix, writer):
    series = [ScalarSeries("train/loss", ((1, 0.5), (2, 0.25))), ScalarSeries("eval/return", ((10, -3.0),))]
    path = tmp_path / f"scalars{suffix}"
    writer(series, path)
    assert sorted(read_scalars(path), key=lambda s: s.tag) == sorted(series, key=lambda s: s.tag)


def test_budget_scaling():
    assert Budget(1000, 50).scaled(0.25).train_steps == 250
