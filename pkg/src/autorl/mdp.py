"""Synthesis and repair of the observation, action and reward wrapper functions.

LLM replies follow the listing layouts: a space definition in a fenced JSON
block and an implementation in a fenced Python block, each under a heading
that names the agent mode. Only the block matching the run's agent mode is
read.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace

from . import templates
from .analysis import RLAnalysis, TaskSpec
from .errors import ComponentParseError, RepairBudgetExceeded
from .gateway import Gateway
from .history import ErrorFeedback, TrainingHistory
from .spaces import AnySpace, MultiAgentSpaceSpec, SpaceSpec, space_to_json


@dataclass(frozen=True)
class RoleInfo:
    role: str
    entry: str
    template_id: str
    kind: str
    space_heading: str | None
    impl_heading: str
    notes_headings: tuple[str, ...]
    marker: str


ROLES = {
    "obs": RoleInfo(
        "obs", "custom_state_transform", "observation", "observation wrapper",
        "Observation Space Definition of", "ObsWrapper Implementation of",
        ("Observation Variables", "Design Description"), "OBSERVATION",
    ),
    "act": RoleInfo(
        "act", "custom_action_transform", "action", "action wrapper",
        "Action Space Definition of", "ActionWrapper Implementation of",
        ("Action Variables", "Design Description"), "ACTION",
    ),
    "rew": RoleInfo(
        "rew", "custom_reward_function", "reward", "reward function",
        None, "RewardWrapper Implementation of",
        ("Reward Calculation Logic", "Design Description"), "REWARD",
    ),
}
MARKERS = {info.marker: role for role, info in ROLES.items()}

DEFAULT_REPAIR_CAP = 3


def source_fingerprint(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ComponentCode:
    role: str
    source: str
    entry_name: str
    space: AnySpace | None = None
    design_notes: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.entry_name != ROLES[self.role].entry:
            raise ValueError(f"{self.role} entry must be {ROLES[self.role].entry}")

    @property
    def fingerprint(self) -> str:
        return source_fingerprint(self.source)

    @classmethod
    def create(cls, role: str, source: str, space: AnySpace | None = None, design_notes: str = "") -> "ComponentCode":
        check_entry(role, source)
        return cls(role, source, ROLES[role].entry, space if role != "rew" else None, design_notes)


@dataclass(frozen=True)
class MDPComponents:
    obs: ComponentCode
    act: ComponentCode
    rew: ComponentCode
    version: int = 0

    def __post_init__(self):
        for slot in ("obs", "act", "rew"):
            if getattr(self, slot).role != slot:
                raise ValueError(f"{slot} slot holds a {getattr(self, slot).role} component")

    def __iter__(self):
        return iter((self.obs, self.act, self.rew))

    def get(self, role: str) -> ComponentCode:
        return getattr(self, role)

    def replace(self, **parts: ComponentCode) -> "MDPComponents":
        return replace(self, **parts, version=self.version + 1)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for c in self:
            h.update(c.fingerprint.encode())
            h.update(space_to_json(c.space).encode())
        return h.hexdigest()


# -- parsing -------------------------------------------------------------------

_DEF = "^def[ \t]+{}[ \t]*\\("


def check_entry(role: str, source: str) -> None:
    entry = ROLES[role].entry
    n = len(re.findall(_DEF.format(entry), source, re.M))
    if n != 1:
        raise ComponentParseError(f"expected exactly one definition of {entry}(), found {n}")


def _scan(text: str):
    """Return headings outside code fences and all fenced blocks.

    headings: list of (line_no, title); fences: list of (start_line, lang, body).
    """
    headings, fences = [], []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        if stripped.startswith("```"):
            lang = stripped[3:].strip().lower()
            j = i + 1
            while j < len(lines) and not lines[j].strip().startswith("```"):
                j += 1
            fences.append((i, lang, "\n".join(lines[i + 1 : j])))
            i = j + 1
            continue
        m = re.match(r"^#+\s+(.*\S)\s*$", stripped)
        if m:
            headings.append((i, m.group(1)))
        i += 1
    return headings, fences


def _mode_heading(prefix: str, mode: str) -> re.Pattern:
    word = "single" if mode == "single" else "multi"
    return re.compile(rf"^{re.escape(prefix)}\s+{word}[-_ ]?agents?\b", re.I)


def _block_after(headings, fences, pattern: re.Pattern):
    for k, (line, title) in enumerate(headings):
        if pattern.match(title):
            stop = headings[k + 1][0] if k + 1 < len(headings) else float("inf")
            for start, lang, body in fences:
                if line < start < stop:
                    return body
            return None
    return None


def _section(text: str, headings, title: str) -> str | None:
    lines = text.splitlines()
    for k, (line, t) in enumerate(headings):
        if t.strip().lower() == title.lower():
            stop = headings[k + 1][0] if k + 1 < len(headings) else len(lines)
            return "\n".join(lines[line + 1 : stop]).strip()
    return None


def parse_component(text: str, role: str, agent_mode: str = "single", fallback_space: AnySpace | None = None) -> ComponentCode:
    """Parse one listing-style reply into a ``ComponentCode``.

    ``fallback_space`` is used when the reply has no space section at all,
    which happens with repair replies that only fix code.
    """
    info = ROLES[role]
    headings, fences = _scan(text)

    space = None
    if info.space_heading is not None:
        has_any = any(re.match(re.escape(info.space_heading), t, re.I) for _, t in headings)
        raw = _block_after(headings, fences, _mode_heading(info.space_heading, agent_mode))
        if raw is None:
            if has_any or fallback_space is None:
                raise ComponentParseError(f"missing {agent_mode}-agent space definition")
            space = fallback_space
        else:
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ComponentParseError(f"space definition is not valid JSON: {exc}") from exc
            try:
                space = SpaceSpec.from_dict(data) if agent_mode == "single" else MultiAgentSpaceSpec.from_mapping(data)
            except (ValueError, TypeError) as exc:
                msg = "invalid bounds" if "bound" in str(exc) else f"invalid space definition: {exc}"
                raise ComponentParseError(msg) from exc

    source = _block_after(headings, fences, _mode_heading(info.impl_heading, agent_mode))
    if source is None:
        raise ComponentParseError("missing implementation block")
    check_entry(role, source)
    source = source.strip("\n") + "\n"

    notes = [s for s in (_section(text, headings, h) for h in info.notes_headings) if s]
    return ComponentCode.create(role, source, space, "\n\n".join(notes))


def render_component(component: ComponentCode, agent_mode: str = "single") -> str:
    """Lay a component out the way a well-behaved reply would."""
    info = ROLES[component.role]
    mode = "Single-agent" if agent_mode == "single" else "Multi-agent"
    parts = []
    if info.space_heading is not None:
        parts.append(f"# {info.space_heading} {mode}\n```json\n{space_to_json(component.space)}\n```")
    parts.append(f"# {info.impl_heading} {mode}\n```python\n{component.source.rstrip()}\n```")
    parts.append(f"# Design Description\n{component.design_notes or '-'}")
    return "\n\n".join(parts) + "\n"


def render_improvement(*components: ComponentCode, agent_mode: str = "single") -> str:
    return "\n".join(f"=== {ROLES[c.role].marker} ===\n{render_component(c, agent_mode)}" for c in components)


# -- identity components -------------------------------------------------------

IDENTITY_SOURCES = {
    ("obs", "single"): "def custom_state_transform(state):\n    return np.asarray(state, dtype=float)\n",
    ("obs", "multi"): (
        "def custom_state_transform(state):\n"
        "    return {k: np.asarray(v, dtype=float) for k, v in state.items()}\n"
    ),
    ("act", "single"): "def custom_action_transform(custom_action):\n    return custom_action\n",
    ("act", "multi"): "def custom_action_transform(custom_action):\n    return dict(custom_action)\n",
    ("rew", "single"): (
        "def custom_reward_function(custom_current_state, custom_action, custom_next_state, info):\n"
        "    return float(info['env_reward'])\n"
    ),
    ("rew", "multi"): (
        "def custom_reward_function(custom_current_state, custom_action, custom_next_state, info):\n"
        "    return {k: float(v) for k, v in info['env_reward'].items()}\n"
    ),
}


def identity_components(obs_space: AnySpace, act_space: AnySpace, agent_mode: str = "single") -> MDPComponents:
    """Pass-through wrappers; the reward is the environment's own."""
    return MDPComponents(
        obs=ComponentCode.create("obs", IDENTITY_SOURCES["obs", agent_mode], obs_space, "identity"),
        act=ComponentCode.create("act", IDENTITY_SOURCES["act", agent_mode], act_space, "identity"),
        rew=ComponentCode.create("rew", IDENTITY_SOURCES["rew", agent_mode], None, "environment reward"),
    )


# -- synthesis -----------------------------------------------------------------


class MDPSynthesizer:
    def __init__(self, gateway: Gateway, spec: TaskSpec, repair_cap: int = DEFAULT_REPAIR_CAP):
        self.gateway = gateway
        self.spec = spec
        self.repair_cap = repair_cap
        self.repairs_used = 0

    @property
    def mode(self) -> str:
        return self.spec.agent_mode

    def _common(self, analysis: RLAnalysis) -> dict[str, str]:
        return {
            "env_name": self.spec.env_name,
            "scenario_name": self.spec.scenario_name,
            "problem_description": self.spec.problem_description,
            "analysis_str": analysis.render(),
            "env_code": self.spec.env_code,
        }

    def observation_prompt(self, analysis: RLAnalysis, default_space: AnySpace):
        return templates.render(
            "observation", {**self._common(analysis), "default_observation_space": space_to_json(default_space)}
        )

    def action_prompt(self, analysis: RLAnalysis, default_space: AnySpace, obs: ComponentCode):
        values = {
            **self._common(analysis),
            "default_action_space": space_to_json(default_space),
            "obs_code": obs.source,
            "obs_space": space_to_json(obs.space),
        }
        return templates.render("action", values)

    def reward_prompt(self, analysis: RLAnalysis, obs: ComponentCode, act: ComponentCode):
        values = {
            **self._common(analysis),
            "obs_code": obs.source,
            "obs_space": space_to_json(obs.space),
            "action_code": act.source,
            "action_space": space_to_json(act.space),
        }
        return templates.render("reward", values)

    def synthesize_observation(self, analysis: RLAnalysis, default_space: AnySpace) -> ComponentCode:
        reply = self.gateway.infer(self.observation_prompt(analysis, default_space)).text
        return parse_component(reply, "obs", self.mode)

    def synthesize_action(self, analysis: RLAnalysis, default_space: AnySpace, obs: ComponentCode) -> ComponentCode:
        reply = self.gateway.infer(self.action_prompt(analysis, default_space, obs)).text
        return parse_component(reply, "act", self.mode)

    def synthesize_reward(self, analysis: RLAnalysis, obs: ComponentCode, act: ComponentCode) -> ComponentCode:
        reply = self.gateway.infer(self.reward_prompt(analysis, obs, act)).text
        return parse_component(reply, "rew", self.mode)

    def synthesize_all(self, analysis: RLAnalysis, obs_space: AnySpace, act_space: AnySpace) -> MDPComponents:
        obs = self.synthesize_observation(analysis, obs_space)
        act = self.synthesize_action(analysis, act_space, obs)
        rew = self.synthesize_reward(analysis, obs, act)
        return MDPComponents(obs, act, rew)

    # repair

    def reset_repair_budget(self) -> None:
        self.repairs_used = 0

    def repair_prompt(self, error: ErrorFeedback, analysis: RLAnalysis, component: ComponentCode):
        info = ROLES[component.role]
        values = {
            "component_kind": info.kind,
            "output_format": templates.load_template(info.template_id).output_format(),
            "env_name": self.spec.env_name,
            "scenario_name": self.spec.scenario_name,
            "analysis_str": analysis.render(),
            "component_code": component.source,
            "component_space": space_to_json(component.space),
            "error_stage": error.stage,
            "error_message": error.message,
            "offending_input": error.offending_input or "(none)",
            "traceback_excerpt": error.traceback_excerpt or "(none)",
        }
        return templates.render("repair", values)

    def repair_component(self, error: ErrorFeedback, analysis: RLAnalysis, component: ComponentCode) -> ComponentCode:
        # the cap bounds repairs across all roles until the next reset
        if self.repairs_used >= self.repair_cap:
            raise RepairBudgetExceeded(component.role, self.repair_cap)
        self.repairs_used += 1
        reply = self.gateway.infer(self.repair_prompt(error, analysis, component)).text
        return parse_component(reply, component.role, self.mode, fallback_space=component.space)

    # improvement

    def improve_prompt(self, summary, analysis: RLAnalysis, components: MDPComponents, history: TrainingHistory):
        fmt = {r: templates.load_template(ROLES[r].template_id).output_format() for r in ROLES}
        values = {
            "obs_format": fmt["obs"],
            "action_format": fmt["act"],
            "reward_format": fmt["rew"],
            "env_name": self.spec.env_name,
            "scenario_name": self.spec.scenario_name,
            "analysis_str": analysis.render(),
            "obs_code": components.obs.source,
            "obs_space": space_to_json(components.obs.space),
            "action_code": components.act.source,
            "action_space": space_to_json(components.act.space),
            "reward_code": components.rew.source,
            "metrics_report": summary.narrative,
            "history": history.render(),
        }
        return templates.render("improve", values)

    def improve_components(self, summary, analysis: RLAnalysis, components: MDPComponents, history: TrainingHistory) -> MDPComponents:
        if not history.records:
            raise ValueError("improvement needs at least one completed training record")
        reply = self.gateway.infer(self.improve_prompt(summary, analysis, components, history)).text
        return parse_improvement(reply, components, self.mode)


_MARKER = re.compile(r"^[ \t]*===[ \t]*(OBSERVATION|ACTION|REWARD)[ \t]*===[ \t]*$", re.M)


def parse_improvement(text: str, components: MDPComponents, agent_mode: str = "single") -> MDPComponents:
    marks = list(_MARKER.finditer(text))
    if not marks:
        raise ComponentParseError("reply contains no component block")
    parts: dict[str, ComponentCode] = {}
    for k, m in enumerate(marks):
        role = MARKERS[m.group(1)]
        if role in parts:
            raise ComponentParseError(f"duplicate {m.group(1)} block")
        body = text[m.end() : marks[k + 1].start() if k + 1 < len(marks) else len(text)]
        parts[role] = parse_component(body, role, agent_mode, fallback_space=components.get(role).space)
    return components.replace(**parts)
