"""Observation/action space descriptions and the JSON layout used in prompts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

KINDS = ("continuous", "discrete")


def _bound(v):
    if v is None:
        return None
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity", "np.inf"):
            return math.inf
        if s in ("-inf", "-infinity", "-np.inf"):
            return -math.inf
        return float(s)
    if isinstance(v, (list, tuple)):
        return tuple(_bound(x) for x in v)
    if isinstance(v, bool):
        raise ValueError("boolean is not a valid bound")
    return float(v)


def _encode_bound(v):
    if isinstance(v, tuple):
        return [_encode_bound(x) for x in v]
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass(frozen=True)
class SpaceSpec:
    dim: int
    kind: str = "continuous"
    low: float | tuple[float, ...] = -math.inf
    high: float | tuple[float, ...] = math.inf

    def __post_init__(self):
        if isinstance(self.dim, bool) or not isinstance(self.dim, int) or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("low", "high"):
            v = getattr(self, name)
            if isinstance(v, tuple) and len(v) != self.dim:
                raise ValueError(f"{name} has length {len(v)}, expected {self.dim}")
            if any(math.isnan(x) for x in (v if isinstance(v, tuple) else (v,))):
                raise ValueError(f"{name} contains NaN")
        if np.any(self.low_array > self.high_array):
            raise ValueError("invalid bounds: low > high")

    @property
    def low_array(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.low, dtype=float), (self.dim,))

    @property
    def high_array(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.high, dtype=float), (self.dim,))

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceSpec":
        if not isinstance(d, dict):
            raise ValueError("space definition must be a JSON object")
        kind = str(d.get("type", d.get("kind", "continuous"))).strip().lower()
        dim = d.get("dim")
        if isinstance(dim, float) and dim.is_integer():
            dim = int(dim)
        if kind == "discrete":
            low, high = _bound(d.get("low", 0)), _bound(d.get("high", (dim or 1) - 1))
        else:
            low, high = _bound(d.get("low")), _bound(d.get("high"))
            low = -math.inf if low is None else low
            high = math.inf if high is None else high
        return cls(dim=dim, kind=kind, low=low, high=high)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "type": self.kind, "low": _encode_bound(self.low), "high": _encode_bound(self.high)}

    def sample(self, rng: np.random.Generator):
        if self.kind == "discrete":
            return int(rng.integers(0, self.dim))
        lo, hi = self.low_array, self.high_array
        # unbounded sides get a unit-wide window next to the finite side
        low = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi - 1.0, -1.0))
        high = np.where(np.isfinite(hi), hi, np.where(np.isfinite(lo), lo + 1.0, 1.0))
        return rng.uniform(low, high)


@dataclass(frozen=True)
class MultiAgentSpaceSpec:
    per_agent: tuple[tuple[str, SpaceSpec], ...]

    def __post_init__(self):
        if not self.per_agent:
            raise ValueError("multi-agent space needs at least one agent")
        ids = [a for a, _ in self.per_agent]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")

    @classmethod
    def from_mapping(cls, m: dict) -> "MultiAgentSpaceSpec":
        if not isinstance(m, dict):
            raise ValueError("multi-agent space definition must be a JSON object")
        return cls(tuple((str(k), v if isinstance(v, SpaceSpec) else SpaceSpec.from_dict(v)) for k, v in m.items()))

    @property
    def agents(self) -> dict[str, SpaceSpec]:
        return dict(self.per_agent)

    def to_dict(self) -> dict:
        return {a: s.to_dict() for a, s in self.per_agent}

    def sample(self, rng: np.random.Generator):
        return {a: s.sample(rng) for a, s in self.per_agent}


AnySpace = Union[SpaceSpec, MultiAgentSpaceSpec]


def space_from_dict(d: dict) -> AnySpace:
    """Decode either layout: a single space has a ``dim`` key, a multi-agent map does not."""
    if isinstance(d, dict) and "dim" in d:
        return SpaceSpec.from_dict(d)
    return MultiAgentSpaceSpec.from_mapping(d)


def space_to_json(space: AnySpace | None) -> str:
    if space is None:
        return "null"
    return json.dumps(space.to_dict(), sort_keys=True)


def as_space(space) -> AnySpace:
    """Coerce our own specs or gym-like ``Box``/``Discrete`` objects into a spec."""
    if isinstance(space, (SpaceSpec, MultiAgentSpaceSpec)):
        return space
    if isinstance(space, dict):
        return space_from_dict(space)
    if hasattr(space, "n"):
        return SpaceSpec(dim=int(space.n), kind="discrete", low=0.0, high=float(int(space.n) - 1))
    if hasattr(space, "low") and hasattr(space, "high"):
        low = np.asarray(space.low, dtype=float).ravel()
        high = np.asarray(space.high, dtype=float).ravel()
        return SpaceSpec(dim=low.size, kind="continuous", low=tuple(low), high=tuple(high))
    raise TypeError(f"cannot interpret {space!r} as a space")
