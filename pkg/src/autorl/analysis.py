"""Problem analysis: build the analysis prompt and parse its structured answer."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import templates
from .errors import AnalysisParseError
from .gateway import Gateway, Prompt

HEADINGS = {
    "objectives": "Task Objectives",
    "constraints": "Constraints",
    "env_characteristics": "Environment Characteristics",
    "key_challenges": "Key Challenges",
}

_HEADING = re.compile(r"^[ \t]*#[ \t]+(.+?)[ \t]*#*[ \t]*$", re.M)
_BULLET = re.compile(r"^\s*(?:[-*+•]|\d+[.)])\s+(.*\S)\s*$")


@dataclass(frozen=True)
class TaskSpec:
    task_description: str
    env_code: str
    extra_context: str = ""
    env_name: str = "env"
    scenario_name: str = "default"
    agent_mode: str = "single"

    def __post_init__(self):
        if not self.task_description.strip():
            raise ValueError("task_description must not be empty")
        if not self.env_code.strip():
            raise ValueError("env_code must not be empty")
        if self.agent_mode not in ("single", "multi"):
            raise ValueError("agent_mode must be 'single' or 'multi'")

    @property
    def problem_description(self) -> str:
        """Task description with any extra context appended."""
        if not self.extra_context.strip():
            return self.task_description
        return f"{self.task_description}\n\nAdditional context:\n{self.extra_context}"


@dataclass(frozen=True)
class EnvCharacteristics:
    determinism: str = "unknown"
    observability: str = "unknown"
    agency: str = "unknown"
    notes: str = ""


@dataclass(frozen=True)
class RLAnalysis:
    objectives: str
    constraints: str
    env_characteristics: EnvCharacteristics
    key_challenges: tuple[str, ...] = field(default_factory=tuple)

    def render(self) -> str:
        """Lay the analysis out under the listing headings."""
        challenges = "\n".join(f"- {c}" for c in self.key_challenges)
        return (
            f"# Task Objectives\n{self.objectives}\n\n"
            f"# Constraints\n{self.constraints}\n\n"
            f"# Environment Characteristics\n{self.env_characteristics.notes}\n\n"
            f"# Key Challenges\n{challenges}"
        )


def build_analysis_prompt(spec: TaskSpec) -> Prompt:
    return templates.render(
        "analysis",
        {"problem_description": spec.problem_description, "env_code": spec.env_code},
    )


def _sections(text: str) -> dict[str, str]:
    wanted = {v.lower(): k for k, v in HEADINGS.items()}
    marks = []
    for m in _HEADING.finditer(text):
        title = re.sub(r"\s+", " ", m.group(1)).strip().lower()
        marks.append((wanted.get(title), m.start(), m.end()))
    out: dict[str, str] = {}
    for i, (key, _, end) in enumerate(marks):
        if key is None:
            continue
        if key in out:
            raise AnalysisParseError(f"duplicate heading '# {HEADINGS[key]}'", HEADINGS[key])
        stop = marks[i + 1][1] if i + 1 < len(marks) else len(text)
        out[key] = text[end:stop].strip()
    return out


def _keyword(text: str, options: dict[str, tuple[str, ...]]) -> str:
    """Return the option whose keyword appears earliest in ``text``."""
    low = text.lower()
    best, pos = "unknown", len(low) + 1
    for value, words in options.items():
        for w in words:
            i = low.find(w)
            if i != -1 and i < pos:
                best, pos = value, i
    return best


def _characteristics(body: str) -> EnvCharacteristics:
    fields = {"determinism": "", "observability": "", "agency": ""}
    for line in body.splitlines():
        label, _, rest = line.strip().lstrip("-*+ ").partition(":")
        label = label.lower()
        if "deterministic" in label or "stochastic" in label:
            fields["determinism"] = rest
        elif "observ" in label:
            fields["observability"] = rest
        elif "agent" in label:
            fields["agency"] = rest
    return EnvCharacteristics(
        determinism=_keyword(fields["determinism"], {"deterministic": ("deterministic",), "stochastic": ("stochastic",)}),
        observability=_keyword(fields["observability"], {"partial": ("partial",), "full": ("full", "fully")}),
        agency=_keyword(fields["agency"], {"multi": ("multi",), "single": ("single",)}),
        notes=body,
    )


def parse_analysis(text: str) -> RLAnalysis:
    found = _sections(text)
    for key, title in HEADINGS.items():
        if key not in found:
            raise AnalysisParseError(f"missing section '# {title}'", title)
        if not found[key]:
            raise AnalysisParseError(f"section '# {title}' is empty", title)

    lines = [ln for ln in found["key_challenges"].splitlines() if ln.strip()]
    bullets = [m.group(1) for m in map(_BULLET.match, lines) if m]
    challenges = tuple(bullets) if bullets else tuple(ln.strip() for ln in lines)
    if not 2 <= len(challenges) <= 3:
        raise AnalysisParseError(
            f"expected 2-3 key challenges, found {len(challenges)}", HEADINGS["key_challenges"]
        )
    return RLAnalysis(
        objectives=found["objectives"],
        constraints=found["constraints"],
        env_characteristics=_characteristics(found["env_characteristics"]),
        key_challenges=challenges,
    )


def analyze(spec: TaskSpec, gateway: Gateway) -> RLAnalysis:
    """Run the analysis prompt and parse the reply.

    A parse failure triggers one re-prompt with the error appended; a second
    failure propagates.
    """
    prompt = build_analysis_prompt(spec)
    reply = gateway.infer(prompt).text
    try:
        return parse_analysis(reply)
    except AnalysisParseError as exc:
        retry = prompt.with_appendix(
            f"Your previous answer could not be parsed: {exc}. "
            "Answer again using exactly the required headings."
        )
        return parse_analysis(gateway.infer(retry).text)
