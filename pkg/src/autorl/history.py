"""Training history shared by the refinement loops, prompts and workspace."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ErrorFeedback:
    stage: str
    message: str
    role: str = ""
    offending_input: str | None = None
    traceback_excerpt: str = ""

    STAGES = ("load", "execute", "numeric", "shape", "bounds", "timeout", "determinism")

    def __post_init__(self):
        if self.stage not in self.STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.message:
            raise ValueError("feedback message must not be empty")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "message": self.message,
            "role": self.role,
            "offending_input": self.offending_input,
            "traceback_excerpt": self.traceback_excerpt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorFeedback":
        return cls(**d)


@dataclass(frozen=True)
class TrainingRecord:
    iteration: int
    phase: str
    fingerprint: str
    summary: dict
    score: float
    version: int = 0
    verification_events: tuple[ErrorFeedback, ...] = ()

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("record score must be finite")
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")
        if self.phase not in ("mdp", "config"):
            raise ValueError(f"unknown phase {self.phase!r}")

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "phase": self.phase,
            "fingerprint": self.fingerprint,
            "summary": self.summary,
            "score": self.score,
            "version": self.version,
            "verification_events": [e.to_dict() for e in self.verification_events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRecord":
        d = dict(d)
        d["verification_events"] = tuple(ErrorFeedback.from_dict(e) for e in d.get("verification_events", ()))
        return cls(**d)


@dataclass
class TrainingHistory:
    """Ordered records plus best-so-far bookkeeping.

    ``best_score`` starts at the initial score and only moves on strict
    improvement, so ties keep the earlier artifact.
    """

    phase: str = "mdp"
    initial_score: float = -math.inf
    initial_fingerprint: str = ""
    records: list[TrainingRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    @property
    def best_score(self) -> float:
        best = self.initial_score
        for r in self.records:
            if r.score > best:
                best = r.score
        return best

    @property
    def best_fingerprint(self) -> str:
        best, fp = self.initial_score, self.initial_fingerprint
        for r in self.records:
            if r.score > best:
                best, fp = r.score, r.fingerprint
        return fp

    @property
    def best_record(self) -> TrainingRecord | None:
        best, rec = self.initial_score, None
        for r in self.records:
            if r.score > best:
                best, rec = r.score, r
        return rec

    def append(self, record: TrainingRecord) -> bool:
        """Add a record; return True when it is a strict improvement."""
        improved = record.score > self.best_score
        self.records.append(record)
        return improved

    def log_event(self, kind: str, iteration: int, **detail) -> None:
        self.events.append({"kind": kind, "iteration": iteration, **detail})

    def count_events(self, kind: str) -> int:
        return sum(1 for e in self.events if e.get("kind") == kind)

    def render(self) -> str:
        """Compact one-line-per-record listing used inside prompts."""
        if not self.records:
            return "(no training runs yet)"
        lines = []
        for r in self.records:
            lines.append(f"- iteration {r.iteration}: score={r.score:.6g}, version={r.version}")
        lines.append(f"best score so far: {self.best_score:.6g}")
        return "\n".join(lines)
