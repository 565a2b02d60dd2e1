from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autorl.algo import AlgoOptimizer, AlgorithmChoice, HyperparamPatch, integrate_config
from autorl.errors import BackendFault, SandboxUnavailable
from autorl.history import TrainingHistory, TrainingRecord
from autorl.mdp import MDPSynthesizer, render_component, render_improvement
from autorl.refine import ConfigDeps, ConvergencePolicy, MDPDeps, converged, refine_config, refine_mdp

from helpers import (
    ANALYSIS,
    BASE_HP,
    CHOICE,
    COMPONENTS,
    NET,
    SPEC,
    ScriptedSynthesizer,
    ScriptedTrainer,
    ScriptedVerifier,
    algorithm_reply,
    network_reply,
    patch_reply,
    reward_variant,
    scripted_gateway,
)


def _mdp_deps(scores, failures=(), cap=3, trainer=None):
    return MDPDeps(ScriptedVerifier(list(failures)), ScriptedSynthesizer(cap), trainer or ScriptedTrainer(scores),
                   probes=None, analysis=ANALYSIS)


def _history(scores, initial=-math.inf):
    h = TrainingHistory("mdp", initial)
    for k, s in enumerate(scores):
        h.append(TrainingRecord(k, "mdp", f"fp{k}", {}, s))
    return h


# -- converged -----------------------------------------------------------------------


def test_converged_examples():
    assert converged(_history([1, 1, 1, 1, 1]), ConvergencePolicy(5, 10, 0.0))
    assert not converged(_history([1, 2, 3]), ConvergencePolicy(10, 2, 0.01))
    assert converged(_history([4.00, 4.01, 4.01]), ConvergencePolicy(10, 2, 0.05))


def test_converged_needs_reference_point():
    assert not converged(_history([5.0]), ConvergencePolicy(10, 1, 0.5))
    assert converged(_history([5.0], initial=5.0), ConvergencePolicy(10, 1, 0.5))


@pytest.mark.parametrize("kw", [{"max_iterations": 0}, {"patience": 0}, {"min_relative_gain": -0.1}])
def test_policy_validation(kw):
    with pytest.raises(ValueError):
        ConvergencePolicy(**kw)


# -- component loop ----------------------------------------------------------------


def test_best_of_three():
    deps = _mdp_deps([3.0, 5.0, 4.0])
    best, hist = refine_mdp(COMPONENTS, ConvergencePolicy(3, 3, 0.0), deps)
    assert hist.best_score == 5.0
    assert best.fingerprint == hist.records[1].fingerprint == hist.best_fingerprint
    assert len(hist.records) == 3


def test_failure_repaired_within_iteration():
    deps = _mdp_deps([1.0], failures=[True, False])
    best, hist = refine_mdp(COMPONENTS, ConvergencePolicy(1), deps)
    assert len(hist.records) == 1
    assert len(hist.records[0].verification_events) == 1
    assert hist.count_events("verification_failure") == 1
    assert best.rew.source == reward_variant(101).source


def test_floor_kept_when_never_beaten():
    deps = _mdp_deps([7.0, 6.5, 3.0])
    floor = COMPONENTS.replace(rew=reward_variant(0))
    best, hist = refine_mdp(COMPONENTS, ConvergencePolicy(3, 3, 0.0), deps, floor=floor, initial_score=7.0)
    assert best == floor
    assert hist.best_fingerprint == floor.fingerprint
    assert hist.count_events("new_best") == 0


def test_repair_budget_skips_iteration():
    deps = _mdp_deps([2.0], failures=[True] * 4 + [False], cap=3)
    _, hist = refine_mdp(COMPONENTS, ConvergencePolicy(2, 5, 0.0), deps)
    assert hist.count_events("iteration_skipped") == 1
    assert len(hist.records) == 1 and hist.records[0].iteration == 1


def test_no_change_repair_flagged():
    class SameSynth(ScriptedSynthesizer):
        def repair_component(self, error, analysis, component):
            super().repair_component(error, analysis, component)
            return component

    deps = _mdp_deps([1.0], failures=[True, False])
    deps.synthesizer = SameSynth()
    _, hist = refine_mdp(COMPONENTS, ConvergencePolicy(1), deps)
    assert hist.count_events("no_change_repair") == 1
    assert len(hist.records) == 1


@pytest.mark.parametrize("exc", [SandboxUnavailable("gone"), BackendFault("crash")])
def test_abort_preserves_history(exc):
    class Failing(ScriptedTrainer):
        def __call__(self, components, config):
            if self.calls == 1:
                self.calls += 1
                raise exc
            return super().__call__(components, config)

    deps = _mdp_deps([], trainer=Failing([4.0]))
    with pytest.raises(type(exc)) as err:
        refine_mdp(COMPONENTS, ConvergencePolicy(3, 3, 0.0), deps)
    hist = err.value.history
    assert len(hist.records) == 1 and hist.count_events("aborted") == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=6), st.floats(-100, 100))
def test_monotone_best_and_correspondence(scores, initial):
    deps = _mdp_deps(scores)
    best, hist = refine_mdp(COMPONENTS, ConvergencePolicy(len(scores), len(scores), 0.0), deps,
                            floor=COMPONENTS.replace(rew=reward_variant(0)), initial_score=initial)
    running = initial
    for k in range(len(hist.records)):
        prefix = TrainingHistory("mdp", initial, "x", hist.records[: k + 1])
        assert prefix.best_score >= running
        running = prefix.best_score
    assert hist.best_score == max([initial] + [r.score for r in hist.records])
    assert best.fingerprint == hist.best_fingerprint


def test_provider_budget_with_real_synthesizer():
    T, cap = 3, 2
    gw = scripted_gateway({"repair": [render_component(reward_variant(1))],
                           "improve": [render_improvement(reward_variant(2))]})
    synth = MDPSynthesizer(gw, SPEC, cap)
    verifier = ScriptedVerifier([True] * 5 + [False, True, False, False])
    deps = MDPDeps(verifier, synth, ScriptedTrainer([1.0, 2.0, 3.0]), None, ANALYSIS)
    refine_mdp(COMPONENTS, ConvergencePolicy(T, T, 0.0), deps)
    assert gw.provider_calls <= T * (cap + 1)


# -- configuration loop ----------------------------------------------------------


def _optimizer(alg=("ppo",), patches=None):
    gw = scripted_gateway({
        "algorithm": [algorithm_reply(a) for a in alg],
        "network": [network_reply()],
        "hyperparameter": patches or [patch_reply(gamma=0.98)],
    })
    return AlgoOptimizer(gw, SPEC, ["ppo", "sac", "td3"])


def test_config_best_is_third():
    opt = _optimizer()
    deps = ConfigDeps(opt, ScriptedTrainer([10.0, 10.0, 12.0]), ANALYSIS)
    best, hist = refine_config(CHOICE, NET, HyperparamPatch((), BASE_HP), BASE_HP, COMPONENTS,
                               ConvergencePolicy(3, 2, 0.01), deps)
    assert [r.score for r in hist.records] == [10.0, 10.0, 12.0]
    assert best.fingerprint == hist.records[2].fingerprint == hist.best_fingerprint
    assert set(best.to_document()) >= {"algorithm", "network", "hyperparameters", "mdp"}


def test_config_stagnation_stops():
    opt = _optimizer(patches=["no changes needed"])
    trainer = ScriptedTrainer([5.0] * 10)
    deps = ConfigDeps(opt, trainer, ANALYSIS)
    _, hist = refine_config(CHOICE, NET, HyperparamPatch((), BASE_HP), BASE_HP, COMPONENTS,
                            ConvergencePolicy(10, 1, 0.01), deps)
    assert len(hist.records) == 2 and trainer.calls == 2
    assert hist.events[-1]["kind"] == "converged"


def test_config_floor_and_switch_uses_reference():
    opt = _optimizer(alg=("sac",))
    trainer = ScriptedTrainer([1.0, 2.0])
    deps = ConfigDeps(opt, trainer, ANALYSIS)
    floor = integrate_config(CHOICE, NET, HyperparamPatch((), BASE_HP), BASE_HP, COMPONENTS)
    best, hist = refine_config(CHOICE, NET, HyperparamPatch((), BASE_HP), BASE_HP, COMPONENTS,
                               ConvergencePolicy(2, 2, 0.0), deps, initial=floor, initial_score=3.0)
    assert best == floor
    second = trainer.seen[1][1]
    assert second.algorithm.name == "sac"
    assert "clip_range" not in second.hyperparams


def test_config_provider_calls_bounded():
    opt = _optimizer()
    deps = ConfigDeps(opt, ScriptedTrainer([1.0, 2.0, 3.0]), ANALYSIS)
    refine_config(CHOICE, NET, HyperparamPatch((), BASE_HP), BASE_HP, COMPONENTS, ConvergencePolicy(3, 3, 0.0), deps)
    # three choices per non-final iteration, each with at most one re-prompt
    assert opt.gateway.provider_calls <= 2 * 3 * 2


def test_choice_merge_complete():
    cfg = integrate_config(AlgorithmChoice("sac", "x"), NET, HyperparamPatch((), {"gamma": 0.99}), {"gamma": 0.99}, COMPONENTS)
    doc = cfg.to_document()
    assert doc["algorithm"]["name"] == "sac" and doc["network"]["activation"] == "relu"
    assert doc["hyperparameters"] == {"gamma": 0.99}
