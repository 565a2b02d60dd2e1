"""Verification gate for synthesized components.

``verify`` runs every component in the sandbox over a probe set drawn from the
raw environment and checks, in order: load, execute, numeric (no NaN/Inf),
shape, bounds and determinism. The first failing check of a component stops
that component; the first failing component supplies the ``ErrorFeedback``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EnvironmentFault
from .history import ErrorFeedback
from .mdp import MDPComponents
from .sandbox import SandboxLimits, run_components
from .spaces import AnySpace, MultiAgentSpaceSpec, SpaceSpec, as_space

BOUNDS_TOL = 1e-6


def to_jsonable(x):
    """Numpy-aware conversion for states, actions and info dicts."""
    if isinstance(x, dict):
        out = {}
        for k, v in x.items():
            try:
                out[str(k)] = to_jsonable(v)
            except TypeError:
                continue
        return out
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, float, str)) or x is None:
        return x
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, (np.ndarray, list, tuple)):
        return np.asarray(x).tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


@dataclass(frozen=True)
class ProbeSet:
    transitions: tuple[dict, ...]
    obs_space: AnySpace
    act_space: AnySpace
    seed: int = 0

    def __post_init__(self):
        if not self.transitions:
            raise ValueError("a probe set needs at least one transition")

    @property
    def count(self) -> int:
        return len(self.transitions)

    @property
    def agent_mode(self) -> str:
        return "multi" if isinstance(self.obs_space, MultiAgentSpaceSpec) else "single"


@dataclass(frozen=True)
class Check:
    check_id: str
    status: str  # ok | fail | warn | skipped
    detail: str = ""


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    checks: tuple[Check, ...]
    feedback: ErrorFeedback | None = None

    def failed_check(self) -> Check | None:
        return next((c for c in self.checks if c.status == "fail"), None)


# -- probes ------------------------------------------------------------------


def reset_env(env, seed):
    out = env.reset(seed=seed)
    if isinstance(out, tuple) and len(out) == 2 and isinstance(out[1], dict):
        return out[0]
    return out


def step_env(env, action):
    out = env.step(action)
    if len(out) == 5:
        obs, reward, terminated, truncated, info = out
        return obs, reward, _any(terminated) or _any(truncated), info
    obs, reward, done, info = out
    return obs, reward, _any(done), info


def _any(flag) -> bool:
    if isinstance(flag, dict):
        return any(bool(v) for v in flag.values())
    return bool(flag)


def sample_probes(env, n: int, seed: int) -> ProbeSet:
    """Collect ``n`` transitions with uniformly random actions.

    Deterministic given (env, n, seed) for seedable environments. The raw
    reward is stored in ``info["env_reward"]``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    obs_space = as_space(env.observation_space)
    act_space = as_space(env.action_space)
    rng = np.random.default_rng(seed)
    transitions = []
    episode = 0
    try:
        state = reset_env(env, seed)
        while len(transitions) < n:
            action = act_space.sample(rng)
            next_state, reward, done, info = step_env(env, action)
            info = dict(info or {})
            info["env_reward"] = reward
            transitions.append(
                {
                    "state": to_jsonable(state),
                    "action": to_jsonable(action),
                    "next_state": to_jsonable(next_state),
                    "info": to_jsonable(info),
                }
            )
            state = next_state
            if done:
                episode += 1
                state = reset_env(env, seed + episode)
    except Exception as exc:
        raise EnvironmentFault(f"environment failed while sampling probes: {exc}") from exc
    return ProbeSet(tuple(transitions), obs_space, act_space, seed)


# -- output checks -------------------------------------------------------------


def _numbers(x):
    if isinstance(x, dict):
        for v in x.values():
            yield from _numbers(v)
    elif isinstance(x, list):
        for v in x:
            yield from _numbers(v)
    else:
        yield x


def _finite(x) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in _numbers(x))


def _shape_error(value, space: SpaceSpec) -> str | None:
    arr = np.asarray(value, dtype=float)
    if space.kind == "discrete":
        if arr.size != 1 or arr.ndim > 1:
            return f"expected a single discrete index, got shape {arr.shape}"
        if float(arr.ravel()[0]) != int(arr.ravel()[0]):
            return f"discrete output {arr.ravel()[0]!r} is not an integer"
        return None
    if arr.ndim > 1 or arr.size != space.dim or (arr.ndim == 0 and space.dim != 1):
        return f"expected shape ({space.dim},), got {arr.shape}"
    return None


def _bounds_error(value, space: SpaceSpec, tol: float) -> str | None:
    arr = np.asarray(value, dtype=float).ravel()
    if space.kind == "discrete":
        if not 0 <= arr[0] < space.dim:
            return f"discrete output {arr[0]:g} outside [0, {space.dim})"
        return None
    low, high = space.low_array, space.high_array
    bad = np.flatnonzero((arr < low - tol) | (arr > high + tol))
    if bad.size:
        i = int(bad[0])
        return f"element {i} = {arr[i]:g} outside [{low[i]:g}, {high[i]:g}]"
    return None


def _per_agent(value, space: AnySpace, check) -> str | None:
    if isinstance(space, MultiAgentSpaceSpec):
        if not isinstance(value, dict):
            return "expected a per-agent mapping"
        want = set(space.agents)
        if set(value) != want:
            return f"agent keys {sorted(value)} do not match declared {sorted(want)}"
        for agent, sub in space.per_agent:
            err = check(value[agent], sub)
            if err:
                return f"{agent}: {err}"
        return None
    if isinstance(value, dict):
        return "expected an array, got a mapping"
    return check(value, space)


def _reward_shape_error(value, agent_ids) -> str | None:
    def scalar(v):
        return isinstance(v, (int, float))

    if agent_ids is None:
        return None if scalar(value) else "reward must be a scalar"
    if not isinstance(value, dict):
        return "multi-agent reward must be a per-agent mapping"
    if set(value) != set(agent_ids):
        return f"reward keys {sorted(value)} do not match agents {sorted(agent_ids)}"
    bad = [k for k, v in value.items() if not scalar(v)]
    return f"reward for {bad[0]} is not a scalar" if bad else None


# -- verifier --------------------------------------------------------------------


class Verifier:
    def __init__(self, limits: SandboxLimits | None = None, strict_determinism: bool = False, tolerance: float = BOUNDS_TOL):
        self.limits = limits or SandboxLimits()
        self.strict_determinism = strict_determinism
        self.tolerance = tolerance

    def __call__(self, components: MDPComponents, probes: ProbeSet) -> VerificationReport:
        return self.verify(components, probes)

    def verify(self, components: MDPComponents, probes: ProbeSet, declared: dict | None = None) -> VerificationReport:
        """``declared`` may override the environment spaces ({"obs": ..., "act": ...})."""
        env_act = (declared or {}).get("act", probes.act_space)
        rng = np.random.default_rng(probes.seed + 7919)
        actions = [to_jsonable(components.act.space.sample(rng)) for _ in probes.transitions]
        frames = run_components(
            [{"role": c.role, "source": c.source, "entry": c.entry_name} for c in components],
            list(probes.transitions),
            actions,
            self.limits,
        )

        checks: list[Check] = []
        feedback = None
        agent_ids = None
        if probes.agent_mode == "multi":
            agent_ids = list(probes.transitions[0]["state"].keys())
        n = probes.count
        for comp in components:
            role = comp.role
            frame = frames[role]

            def offending(i):
                if i is None or i < 0:
                    return None
                if role == "obs":
                    t = probes.transitions[i % n]
                    return json.dumps(t["state"] if i < n else t["next_state"])
                if role == "act":
                    return json.dumps(actions[i])
                t = probes.transitions[i]
                return json.dumps({"state": t["state"], "action": actions[i], "next_state": t["next_state"], "info": t["info"]})

            new_checks, fb = self._check_component(comp, frame, env_act, agent_ids, offending)
            checks.extend(new_checks)
            if fb is not None and feedback is None:
                feedback = fb
        passed = all(c.status in ("ok", "warn", "skipped") for c in checks) and feedback is None
        return VerificationReport(passed, tuple(checks), None if passed else feedback)

    def _check_component(self, comp, frame, env_act, agent_ids, offending):
        role = comp.role
        status = frame["status"]
        checks: list[Check] = []

        def fail(check, stage, message, index=None, tb=""):
            checks.append(Check(f"{role}.{check}", "fail", message))
            inp = frame.get("input") if index is None else offending(index)
            return checks, ErrorFeedback(stage, message, role, inp, tb or frame.get("traceback", ""))

        if status == "skipped":
            return [Check(f"{role}.load", "skipped", frame.get("error", ""))], None
        if status == "load_error":
            return fail("load", "load", frame["error"])
        if status == "timeout":
            return fail("execute", "timeout", frame["error"])
        checks.append(Check(f"{role}.load", "ok"))
        if status == "exec_error":
            return fail("execute", "execute", frame["error"])
        if status == "crashed":
            return fail("execute", "execute", frame["error"])
        if status == "bad_output":
            return fail("shape", "shape", frame["error"])
        checks.append(Check(f"{role}.execute", "ok"))

        outputs = frame["outputs"]
        for i, out in enumerate(outputs):
            if not _finite(out):
                return fail("numeric", "numeric", f"non-finite value in output #{i}", i)
        checks.append(Check(f"{role}.numeric", "ok"))

        if role == "rew":
            for i, out in enumerate(outputs):
                err = _reward_shape_error(out, agent_ids)
                if err:
                    return fail("shape", "shape", err, i)
            checks.append(Check(f"{role}.shape", "ok"))
        else:
            space = comp.space if role == "obs" else env_act
            for i, out in enumerate(outputs):
                err = _per_agent(out, space, _shape_error)
                if err:
                    return fail("shape", "shape", err, i)
            checks.append(Check(f"{role}.shape", "ok"))
            for i, out in enumerate(outputs):
                err = _per_agent(out, space, lambda v, s: _bounds_error(v, s, self.tolerance))
                if err:
                    return fail("bounds", "bounds", err, i)
            checks.append(Check(f"{role}.bounds", "ok"))

        if json.dumps(outputs) != json.dumps(frame["outputs2"]):
            i = next(k for k, (a, b) in enumerate(zip(outputs, frame["outputs2"])) if json.dumps(a) != json.dumps(b))
            msg = f"two runs over the same probes disagree at output #{i}"
            if self.strict_determinism:
                return fail("determinism", "determinism", msg, i)
            checks.append(Check(f"{role}.determinism", "warn", msg))
        else:
            checks.append(Check(f"{role}.determinism", "ok"))
        return checks, None
