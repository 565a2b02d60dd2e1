"""Seeded faults for the component verifier, each with the check expected to catch it."""

from __future__ import annotations

from dataclasses import dataclass

from autorl.mdp import ComponentCode, MDPComponents, identity_components
from autorl.spaces import SpaceSpec

from helpers import ACT_SPACE, OBS_SPACE

IDENTITY = identity_components(OBS_SPACE, ACT_SPACE)
OBS4 = SpaceSpec(dim=4, low=-10.0, high=10.0)


@dataclass(frozen=True)
class Fault:
    name: str
    components: MDPComponents
    stage: str
    role: str
    strict: bool = False


def _obs(body: str, space=OBS4) -> ComponentCode:
    return ComponentCode.create("obs", "def custom_state_transform(state):\n" + body, space, "fault")


def _act(body: str) -> ComponentCode:
    return ComponentCode.create("act", "def custom_action_transform(custom_action):\n" + body, ACT_SPACE, "fault")


def _rew(body: str) -> ComponentCode:
    head = "def custom_reward_function(custom_current_state, custom_action, custom_next_state, info):\n"
    return ComponentCode.create("rew", head + body, None, "fault")


def _with(**parts) -> MDPComponents:
    return MDPComponents(parts.get("obs", IDENTITY.obs), parts.get("act", IDENTITY.act), parts.get("rew", IDENTITY.rew))


FAULTS = (
    Fault("nan_reward", _with(rew=_rew("    return float('nan')\n")), "numeric", "rew"),
    Fault("inf_observation", _with(obs=_obs("    return np.array([np.inf, 0.0, 0.0, 0.0])\n")), "numeric", "obs"),
    Fault("wrong_obs_shape", _with(obs=_obs("    return np.zeros(6)\n")), "shape", "obs"),
    Fault("vector_reward", _with(rew=_rew("    return [1.0, 2.0]\n")), "shape", "rew"),
    Fault("action_out_of_bounds", _with(act=_act("    return np.asarray(custom_action) * 5.0 + 3.0\n")), "bounds", "act"),
    Fault("obs_out_of_bounds", _with(obs=_obs("    return np.full(4, 50.0)\n")), "bounds", "obs"),
    Fault("infinite_loop", _with(rew=_rew("    while True:\n        pass\n")), "timeout", "rew"),
    Fault("raises", _with(rew=_rew("    raise KeyError('velocity')\n")), "execute", "rew"),
    Fault("syntax_error", _with(rew=ComponentCode("rew", "def custom_reward_function(a, b, c, d):\n    return (\n",
                                                  "custom_reward_function")), "load", "rew"),
    Fault("nondeterministic", _with(rew=_rew("    return float(np.random.random())\n")), "determinism", "rew", True),
    Fault("reads_file", _with(rew=_rew("    open('/etc/hostname').read()\n    return 0.0\n")), "execute", "rew"),
    Fault("opens_socket", _with(rew=_rew("    import socket\n    socket.socket()\n    return 0.0\n")), "execute", "rew"),
    Fault("writes_file", _with(rew=_rew("    open('/tmp/escape.txt', 'w').write('x')\n    return 0.0\n")), "execute", "rew"),
)
