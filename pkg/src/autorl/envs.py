"""Small deterministic environments for tests, demos and CI.

They follow the gymnasium calling convention (``reset(seed=...)`` returns
``(obs, info)``, ``step`` returns a 5-tuple) without depending on gymnasium.
"""

from __future__ import annotations

import numpy as np

from .spaces import MultiAgentSpaceSpec, SpaceSpec


class PointMassEnv:
    """Push a unit mass along a line towards a random target.

    Observation: [position, velocity, target]. Action: one force in [-1, 1].
    Reward: negative distance to the target. Episodes last ``horizon`` steps.
    """

    observation_space = SpaceSpec(dim=3, low=(-5.0, -5.0, -1.0), high=(5.0, 5.0, 1.0))
    action_space = SpaceSpec(dim=1, low=-1.0, high=1.0)

    def __init__(self, horizon: int = 50):
        self.horizon = horizon
        self._rng = np.random.default_rng(0)
        self.pos = self.vel = self.target = 0.0
        self.t = 0

    def _obs(self):
        return np.array([self.pos, self.vel, self.target], dtype=float)

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.pos, self.vel = 0.0, 0.0
        self.target = float(self._rng.uniform(-1.0, 1.0))
        self.t = 0
        return self._obs(), {}

    def step(self, action):
        force = float(np.clip(np.asarray(action, dtype=float).ravel()[0], -1.0, 1.0))
        self.vel = float(np.clip(0.9 * self.vel + 0.2 * force, -5.0, 5.0))
        self.pos = float(np.clip(self.pos + 0.1 * self.vel, -5.0, 5.0))
        self.t += 1
        dist = abs(self.pos - self.target)
        truncated = self.t >= self.horizon
        return self._obs(), -dist, False, truncated, {"distance": dist}


class DiscreteChainEnv:
    """Walk along a chain of ``n`` cells; action 0 moves left, 1 stays, 2 moves right.

    Reward 1 on reaching the right end, which terminates the episode.
    """

    action_space = SpaceSpec(dim=3, kind="discrete", low=0.0, high=2.0)

    def __init__(self, n: int = 8, horizon: int = 30):
        self.n = n
        self.horizon = horizon
        self.observation_space = SpaceSpec(dim=2, low=(0.0, 0.0), high=(float(n - 1), float(horizon)))
        self.cell = 0
        self.t = 0

    def reset(self, seed=None):
        self.cell, self.t = 0, 0
        return np.array([self.cell, self.t], dtype=float), {}

    def step(self, action):
        a = int(np.asarray(action).ravel()[0])
        self.cell = int(np.clip(self.cell + (a - 1), 0, self.n - 1))
        self.t += 1
        done = self.cell == self.n - 1
        return (
            np.array([self.cell, self.t], dtype=float),
            1.0 if done else 0.0,
            done,
            self.t >= self.horizon,
            {"won": done},
        )


class MultiPointEnv:
    """Two agents on a line, each steering towards its own target.

    Per-agent observation: [position, target]; action: one force in [-1, 1].
    The episode is won if every agent ends within 0.1 of its target.
    """

    agents = ("agent_0", "agent_1")

    def __init__(self, horizon: int = 25):
        self.horizon = horizon
        per = SpaceSpec(dim=2, low=(-2.0, -1.0), high=(2.0, 1.0))
        act = SpaceSpec(dim=1, low=-1.0, high=1.0)
        self.observation_space = MultiAgentSpaceSpec(tuple((a, per) for a in self.agents))
        self.action_space = MultiAgentSpaceSpec(tuple((a, act) for a in self.agents))
        self._rng = np.random.default_rng(0)
        self.pos = {a: 0.0 for a in self.agents}
        self.target = {a: 0.0 for a in self.agents}
        self.t = 0

    def _obs(self):
        return {a: np.array([self.pos[a], self.target[a]], dtype=float) for a in self.agents}

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        for a in self.agents:
            self.pos[a] = 0.0
            self.target[a] = float(self._rng.uniform(-1.0, 1.0))
        self.t = 0
        return self._obs(), {}

    def step(self, action):
        rewards = {}
        for a in self.agents:
            force = float(np.clip(np.asarray(action[a], dtype=float).ravel()[0], -1.0, 1.0))
            self.pos[a] = float(np.clip(self.pos[a] + 0.1 * force, -2.0, 2.0))
            rewards[a] = -abs(self.pos[a] - self.target[a])
        self.t += 1
        truncated = self.t >= self.horizon
        won = truncated and all(abs(self.pos[a] - self.target[a]) < 0.1 for a in self.agents)
        return self._obs(), rewards, False, truncated, {"won": won}
