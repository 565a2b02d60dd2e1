"""Training adapter: environment wrappers, pluggable backends, metric summaries, scores.

A backend is any object with ``init(config, env)``, ``train(steps)``,
``evaluate(episodes)`` and ``scalars()``. Backends register under an algorithm
name; the ``"*"`` entry is the fallback. Two backends ship here:

``RandomSearchBackend``
    a tiny linear-policy random search, so wrappers genuinely affect scores.
``ScriptedBackend``
    replays a scripted schedule of evaluation outcomes for tests.

Evaluation returns are always measured with the raw environment reward so
reward shaping cannot inflate the score.
"""

from __future__ import annotations

import csv
import json
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import BackendFault, EmptyOutcomes, EmptySeries, UnknownBackend, WrapperRuntimeFault, ZeroBaseline
from .history import ErrorFeedback
from .mdp import ComponentCode, MDPComponents
from .spaces import MultiAgentSpaceSpec, SpaceSpec, as_space
from .verifier import reset_env, step_env, to_jsonable

METRICS = ("mean_eval_return", "win_rate")


# -- wrappers --------------------------------------------------------------------


def load_entry(component: ComponentCode) -> Callable:
    """Execute a component's source in a fresh namespace and return its entry function."""
    ns: dict[str, Any] = {
        "np": np, "numpy": np, "math": math, "Dict": Dict, "List": List, "Any": Any,
        "Optional": Optional, "Tuple": Tuple, "__name__": f"component_{component.role}",
    }
    try:
        exec(compile(component.source, f"<{component.role}>", "exec"), ns)
    except Exception as exc:
        raise WrapperRuntimeFault(
            ErrorFeedback("load", f"{type(exc).__name__}: {exc}", component.role, None, traceback.format_exc(limit=-3))
        ) from exc
    return ns[component.entry_name]


class WrappedEnv:
    """Raw environment seen through the observation, action and reward wrappers."""

    def __init__(self, env, components: MDPComponents):
        self.env = env
        self.components = components
        self._obs = load_entry(components.obs)
        self._act = load_entry(components.act)
        self._rew = load_entry(components.rew)
        self.observation_space = components.obs.space
        self.action_space = components.act.space
        self._state = None

    def _call(self, role, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            excerpt = json.dumps(to_jsonable(args[0]) if args else None)[:400]
            raise WrapperRuntimeFault(
                ErrorFeedback("execute", f"{type(exc).__name__}: {exc}", role, excerpt, traceback.format_exc(limit=-3))
            ) from exc

    def reset(self, seed=None):
        raw = reset_env(self.env, seed)
        self._state = self._call("obs", self._obs, raw)
        return self._state, {}

    def step(self, action):
        raw_action = self._call("act", self._act, action)
        raw_next, env_reward, done, info = step_env(self.env, raw_action)
        info = dict(info or {})
        info["env_reward"] = env_reward
        next_state = self._call("obs", self._obs, raw_next)
        reward = self._call("rew", self._rew, self._state, action, next_state, info)
        self._state = next_state
        return next_state, reward, bool(done), False, info


def apply_wrappers(env, components: MDPComponents) -> WrappedEnv:
    return WrappedEnv(env, components)


# -- scalar series and summaries ---------------------------------------------------


@dataclass(frozen=True)
class ScalarSeries:
    tag: str
    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        steps = [s for s, _ in self.points]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"steps of {self.tag!r} must be strictly increasing")


@dataclass(frozen=True)
class TagStats:
    final: float | None
    max: float | None
    mean: float | None
    slope: float | None
    variance: float | None


@dataclass(frozen=True)
class MetricsSummary:
    stats: dict[str, TagStats]
    instability_flags: frozenset[str]
    episode_count: int
    narrative: str

    def to_dict(self) -> dict:
        return {
            "stats": {k: vars(v).copy() for k, v in sorted(self.stats.items())},
            "instability_flags": sorted(self.instability_flags),
            "episode_count": self.episode_count,
            "narrative": self.narrative,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsSummary":
        return cls(
            {k: TagStats(**v) for k, v in d["stats"].items()},
            frozenset(d["instability_flags"]),
            d["episode_count"],
            d["narrative"],
        )


def _is_reward_tag(tag: str) -> bool:
    t = tag.lower()
    return "return" in t or "reward" in t


def _is_loss_tag(tag: str) -> bool:
    return "loss" in tag.lower()


def _lstsq_slope(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        return 0.0
    return float(np.dot(xc, y - y.mean()) / denom)


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.6g}"


def summarize_metrics(series: list[ScalarSeries], window: int = 10) -> MetricsSummary:
    """Condense scalar series into per-tag statistics, flags and a text report.

    Statistics use finite points only. Flags:
    ``nan_seen`` any non-finite point; ``reward_collapse`` a reward-like tag
    whose final value is below ``max - 0.5*|max|`` (50% of a positive max);
    ``divergence`` a loss-like tag strictly increasing across the last
    ``window`` points (at least three).
    """
    if window < 1:
        raise ValueError("window must be positive")
    if not series or all(not s.points for s in series):
        raise EmptySeries("no scalar points to summarize")
    stats: dict[str, TagStats] = {}
    flags: set[str] = set()
    episodes = 0
    for s in series:
        if not s.points:
            continue
        steps = np.array([p[0] for p in s.points], dtype=float)
        values = np.array([p[1] for p in s.points], dtype=float)
        finite = np.isfinite(values)
        if not finite.all():
            flags.add("nan_seen")
        x, y = steps[finite], values[finite]
        if y.size == 0:
            stats[s.tag] = TagStats(None, None, None, None, None)
            continue
        xw, yw = x[-window:], y[-window:]
        st = TagStats(
            final=float(y[-1]),
            max=float(y.max()),
            mean=float(y.mean()),
            slope=_lstsq_slope(xw, yw),
            variance=float(yw.var()),
        )
        stats[s.tag] = st
        if _is_reward_tag(s.tag):
            episodes = max(episodes, int(y.size))
            if st.final < st.max - 0.5 * abs(st.max):
                flags.add("reward_collapse")
        if _is_loss_tag(s.tag) and yw.size >= 3 and bool(np.all(np.diff(yw) > 0)):
            flags.add("divergence")

    lines = [f"Training metrics summary (recent window = {window} points)"]
    for tag in sorted(stats):
        st = stats[tag]
        lines.append(
            f"{tag}: final={_fmt(st.final)}, max={_fmt(st.max)}, mean={_fmt(st.mean)}, "
            f"recent_slope={_fmt(st.slope)}, recent_variance={_fmt(st.variance)}"
        )
    lines.append("Instability flags: " + (", ".join(sorted(flags)) if flags else "none"))
    lines.append(f"Episodes logged: {episodes}")
    return MetricsSummary(stats, frozenset(flags), episodes, "\n".join(lines))


# -- scalar file formats ---------------------------------------------------------


def _group(rows) -> list[ScalarSeries]:
    by_tag: dict[str, list[tuple[int, float]]] = {}
    for tag, step, value in rows:
        by_tag.setdefault(tag, []).append((int(step), float(value)))
    return [ScalarSeries(tag, tuple(sorted(pts))) for tag, pts in by_tag.items()]


def read_scalars_csv(path) -> list[ScalarSeries]:
    """Read ``tag,step,value`` rows (UTF-8, header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["tag", "step", "value"]:
            raise ValueError(f"expected header tag,step,value, got {reader.fieldnames}")
        return _group((r["tag"], r["step"], r["value"]) for r in reader)


def write_scalars_csv(series: list[ScalarSeries], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tag", "step", "value"])
        for s in series:
            for step, value in s.points:
                w.writerow([s.tag, step, repr(float(value))])


def read_scalars_jsonl(path) -> list[ScalarSeries]:
    """Native event log of the built-in backends: one ``{"tag","step","value"}`` object per line."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            rows.append((rec["tag"], rec["step"], rec["value"]))
    return _group(rows)


def write_scalars_jsonl(series: list[ScalarSeries], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in series:
            for step, value in s.points:
                fh.write(json.dumps({"tag": s.tag, "step": step, "value": value}) + "\n")


def read_scalars(path) -> list[ScalarSeries]:
    return read_scalars_csv(path) if str(path).endswith(".csv") else read_scalars_jsonl(path)


# -- scores --------------------------------------------------------------------


@dataclass(frozen=True)
class Score:
    value: float
    metric: str
    episodes: int

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        if self.metric == "win_rate" and not 0.0 <= self.value <= 1.0:
            raise ValueError("win rate must lie in [0, 1]")


def compute_score(outcomes: list, metric: str = "mean_eval_return") -> Score:
    """Aggregate evaluation episodes.

    ``outcomes`` holds per-episode dicts ``{"return": float, "win": bool}`` or
    bare returns.
    """
    if not outcomes:
        raise EmptyOutcomes("no evaluation episodes")
    rows = [o if isinstance(o, dict) else {"return": o} for o in outcomes]
    if metric == "mean_eval_return":
        value = math.fsum(float(r["return"]) for r in rows) / len(rows)
    elif metric == "win_rate":
        value = sum(1 for r in rows if r.get("win")) / len(rows)
    else:
        raise ValueError(f"metric must be one of {METRICS}")
    return Score(value, metric, len(rows))


def relative_gain(old: float, new: float) -> float:
    if old == 0:
        raise ZeroBaseline("relative gain is undefined for a zero baseline")
    return (new - old) / abs(old)


# -- backends ------------------------------------------------------------------


@dataclass(frozen=True)
class Budget:
    train_steps: int = 2000
    eval_episodes: int = 50
    seed: int = 0
    metric: str = "mean_eval_return"

    def __post_init__(self):
        if self.train_steps < 1 or self.eval_episodes < 1:
            raise ValueError("budget must be positive")

    def scaled(self, fraction: float) -> "Budget":
        return Budget(max(1, int(self.train_steps * fraction)), self.eval_episodes, self.seed, self.metric)


class _SeriesLog:
    def __init__(self):
        self._points: dict[str, list[tuple[int, float]]] = {}

    def add(self, tag: str, step: int, value: float) -> None:
        pts = self._points.setdefault(tag, [])
        if pts and step <= pts[-1][0]:
            step = pts[-1][0] + 1
        pts.append((step, float(value)))

    def series(self) -> list[ScalarSeries]:
        return [ScalarSeries(t, tuple(p)) for t, p in sorted(self._points.items())]


def _total(reward) -> float:
    if isinstance(reward, dict):
        return float(np.mean([float(v) for v in reward.values()]))
    return float(reward)


class RandomSearchBackend:
    """(1+1) evolution strategy over a linear policy.

    Each step perturbs the incumbent weights with Gaussian noise and keeps the
    perturbation if its mean shaped return over a fixed set of ``rollouts``
    seeded episodes is higher. The initial noise scale is
    ``learning_rate * 1000`` and adapts with the one-fifth success rule.
    Multi-agent environments share one policy across agents.
    """

    def __init__(self, seed: int = 0, rollouts: int = 3):
        self.seed = seed
        self.rollouts = rollouts
        self.rng = np.random.default_rng(seed)
        self.log = _SeriesLog()
        self.steps_done = 0
        self.episodes_done = 0

    def init(self, config, env) -> None:
        self.env = env
        hp = dict(getattr(config, "hyperparams", {}) or {})
        self.noise = float(hp.get("learning_rate", 3e-4)) * 1000.0
        obs_space, act_space = as_space(env.observation_space), as_space(env.action_space)
        if isinstance(obs_space, MultiAgentSpaceSpec):
            obs_space = obs_space.per_agent[0][1]
            act_space = as_space(env.action_space).per_agent[0][1]
            self.agents = [a for a, _ in as_space(env.action_space).per_agent]
        else:
            self.agents = None
        self.act_space: SpaceSpec = act_space
        self.obs_dim = obs_space.dim if obs_space.kind == "continuous" else 1
        out = act_space.dim
        self.weights = np.zeros((out, self.obs_dim + 1))
        self.best = -math.inf

    def _act_one(self, w, obs):
        o = np.append(np.asarray(obs, dtype=float).ravel()[: self.obs_dim], 1.0)
        z = w @ o
        if self.act_space.kind == "discrete":
            return int(np.argmax(z))
        low, high = self.act_space.low_array, self.act_space.high_array
        bounded = np.isfinite(low) & np.isfinite(high)
        mid, half = np.where(bounded, (low + high) / 2, 0.0), np.where(bounded, (high - low) / 2, 1.0)
        return np.where(bounded, mid + half * np.tanh(z), z)

    def _act(self, w, obs):
        if self.agents is None:
            return self._act_one(w, obs)
        return {a: self._act_one(w, obs[a]) for a in self.agents}

    def _episode(self, w, seed, shaped=True):
        obs, _ = self.env.reset(seed=seed)
        total, steps, won = 0.0, 0, False
        while True:
            obs, reward, term, trunc, info = self.env.step(self._act(w, obs))
            total += _total(reward if shaped else info["env_reward"])
            steps += 1
            won = bool(info.get("won", won))
            if term or trunc or steps >= 10_000:
                return total, steps, won

    def _rollouts(self, w):
        """Mean shaped return over the fixed training seeds, and steps used."""
        total, used = 0.0, 0
        for k in range(self.rollouts):
            ret, steps, _ = self._episode(w, self.seed + k)
            total += ret
            used += steps
        return total / self.rollouts, used

    def train(self, steps: int) -> None:
        if self.best == -math.inf:
            self.best, used = self._rollouts(self.weights)
            self.steps_done += used
        while self.steps_done < steps:
            cand = self.weights + self.noise * self.rng.standard_normal(self.weights.shape)
            ret, used = self._rollouts(cand)
            self.steps_done += used
            self.episodes_done += self.rollouts
            # one-fifth success rule: widen after a success, shrink after a failure
            if ret > self.best:
                self.best, self.weights = ret, cand
                self.noise *= 1.5
            else:
                self.noise *= 1.5 ** -0.25
            self.log.add("train/episode_return", self.steps_done, ret)
            self.log.add("train/best_return", self.steps_done, self.best)
            self.log.add("train/loss", self.steps_done, -self.best)

    def evaluate(self, episodes: int) -> list[dict]:
        out = []
        for k in range(episodes):
            ret, _, won = self._episode(self.weights, 10_000 + self.seed + k, shaped=False)
            out.append({"return": ret, "win": won})
            self.log.add("eval/episode_return", k, ret)
        return out

    def scalars(self) -> list[ScalarSeries]:
        return self.log.series()


class ScriptedBackend:
    """Backend whose evaluation outcomes come from a shared schedule.

    Schedule entries are lists of episode returns, or dicts with ``returns``,
    optional ``wins`` and optional ``fault`` (raise after emitting a few
    training points).
    """

    def __init__(self, schedule: list, seed: int = 0):
        self.schedule = schedule
        self.log = _SeriesLog()
        self.entry: dict = {}

    @classmethod
    def factory(cls, schedule: list) -> Callable[..., "ScriptedBackend"]:
        queue = list(schedule)

        def make(seed: int = 0):
            return cls(queue, seed)

        make.remaining = queue
        return make

    def init(self, config, env) -> None:
        if not self.schedule:
            raise BackendFault("scripted schedule exhausted")
        e = self.schedule.pop(0)
        self.entry = e if isinstance(e, dict) else {"returns": list(e)}

    def train(self, steps: int) -> None:
        target = float(np.mean(self.entry["returns"]))
        n = 5
        for k in range(n):
            step = (k + 1) * max(1, steps // n)
            self.log.add("train/episode_return", step, target * (k + 1) / n)
            self.log.add("train/loss", step, 1.0 / (k + 1))
            if self.entry.get("fault") and k == 2:
                raise RuntimeError("scripted backend fault")

    def evaluate(self, episodes: int) -> list[dict]:
        returns = self.entry["returns"]
        wins = self.entry.get("wins") or [False] * len(returns)
        return [{"return": r, "win": bool(w)} for r, w in zip(returns, wins)]

    def scalars(self) -> list[ScalarSeries]:
        return self.log.series()


BACKENDS: dict[str, Callable] = {"*": RandomSearchBackend}


def register_backend(algorithm: str, factory: Callable) -> None:
    BACKENDS[algorithm] = factory


def get_backend(algorithm: str, registry: dict | None = None) -> Callable:
    registry = BACKENDS if registry is None else registry
    if algorithm in registry:
        return registry[algorithm]
    if "*" in registry:
        return registry["*"]
    raise UnknownBackend(f"no training backend registered for {algorithm!r}")


def train_and_evaluate(config, components: MDPComponents, budget: Budget, env_factory: Callable, backend_factory: Callable | None = None):
    """Train under the wrapped environment and evaluate; returns (series, Score)."""
    factory = backend_factory or get_backend(config.algorithm.name)
    backend = factory(seed=budget.seed)
    env = apply_wrappers(env_factory(), components)
    try:
        backend.init(config, env)
        backend.train(budget.train_steps)
        outcomes = backend.evaluate(budget.eval_episodes)
    except WrapperRuntimeFault:
        raise
    except BackendFault as exc:
        raise BackendFault(str(exc), exc.partial_series or _safe_scalars(backend)) from exc
    except Exception as exc:
        raise BackendFault(f"{type(exc).__name__}: {exc}", _safe_scalars(backend)) from exc
    return backend.scalars(), compute_score(outcomes, budget.metric)


def _safe_scalars(backend) -> list[ScalarSeries]:
    try:
        return backend.scalars()
    except Exception:
        return []


@dataclass
class Trainer:
    """Callable used by the refinement loops: (components, config) -> (summary, Score)."""

    env_factory: Callable
    budget: Budget
    backend_factory: Callable | None = None
    window: int = 10
    calls: int = field(default=0, init=False)

    def __call__(self, components: MDPComponents, config):
        self.calls += 1
        series, score = train_and_evaluate(config, components, self.budget, self.env_factory, self.backend_factory)
        return summarize_metrics(series, self.window), score
