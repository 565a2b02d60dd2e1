"""On-disk run storage and the stage report.

Layout of one run::

    <root>/runs/<run_id>/
        manifest.json
        components/<fingerprint>.json
        configs/<fingerprint>.yaml
        history/mdp.jsonl        one JSON object per line, append-only
        history/config.jsonl
        fixtures/
        report.md, report.json
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .algo import PipelineConfig
from .errors import CorruptRecord, HistoryConflict, SchemaViolation, UnknownRun, ZeroBaseline
from .history import TrainingHistory, TrainingRecord
from .mdp import ComponentCode, MDPComponents
from .spaces import space_from_dict
from .training import relative_gain

STATUSES = ("running", "completed", "aborted")
PHASES = ("mdp", "config")


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _num(x):
    """JSON-safe encoding of possibly infinite scores."""
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return x


# -- config documents ------------------------------------------------------------


def export_config(config: PipelineConfig, path) -> Path:
    path = Path(path)
    _atomic_write(path, config.to_yaml().encode("utf-8"))
    return path


def import_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaViolation(f"cannot read config {path}: {exc}") from exc
    return PipelineConfig.from_yaml(text)


# -- components ------------------------------------------------------------------


def components_to_dict(components: MDPComponents) -> dict:
    return {
        "version": components.version,
        **{
            c.role: {
                "source": c.source,
                "space": c.space.to_dict() if c.space is not None else None,
                "design_notes": c.design_notes,
            }
            for c in components
        },
    }


def components_from_dict(d: dict) -> MDPComponents:
    parts = {}
    for role in ("obs", "act", "rew"):
        e = d[role]
        space = space_from_dict(e["space"]) if e.get("space") is not None else None
        parts[role] = ComponentCode.create(role, e["source"], space, e.get("design_notes", ""))
    return MDPComponents(parts["obs"], parts["act"], parts["rew"], d.get("version", 0))


# -- manifest --------------------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    task_fingerprint: str
    iterations: dict = field(default_factory=lambda: {"mdp": 5, "config": 5})
    seeds: dict = field(default_factory=dict)
    metric: str = "mean_eval_return"
    status: str = "running"
    stage: str = "created"
    baseline_score: float | None = None
    baseline_components: str | None = None
    best_components: str | None = None
    best_config: str | None = None
    options: dict = field(default_factory=dict)
    error: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["baseline_score"] = _num(self.baseline_score)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


# -- history files ---------------------------------------------------------------


def _history_lines(history: TrainingHistory) -> list[dict]:
    lines = [{
        "type": "header",
        "phase": history.phase,
        "initial_score": _num(history.initial_score),
        "initial_fingerprint": history.initial_fingerprint,
    }]
    # records and events are two ordered streams sharing one file
    lines += [{"type": "record", **r.to_dict()} for r in history.records]
    lines += [{"type": "event", **e} for e in history.events]
    return lines


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def read_history_file(path) -> TrainingHistory:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        raise CorruptRecord(len(lines) - 1, path, "truncated line")
    history = None
    for index, line in enumerate(lines):
        try:
            obj = json.loads(line)
            kind = obj.pop("type")
            if index == 0:
                if kind != "header":
                    raise ValueError("first line is not a header")
                score = obj["initial_score"]
                history = TrainingHistory(obj["phase"], -math.inf if score is None else float(score), obj["initial_fingerprint"])
            elif kind == "record":
                history.records.append(TrainingRecord.from_dict(obj))
            elif kind == "event":
                history.events.append(obj)
            else:
                raise ValueError(f"unknown line type {kind!r}")
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CorruptRecord(index, path, str(exc)) from exc
    if history is None:
        raise CorruptRecord(0, path, "empty history file")
    return history


class Run:
    """One run directory; single writer."""

    def __init__(self, directory: Path, manifest: RunManifest):
        self.dir = Path(directory)
        self.manifest = manifest

    @property
    def run_id(self) -> str:
        return self.manifest.run_id

    @property
    def fixtures_dir(self) -> Path:
        return self.dir / "fixtures"

    def save_manifest(self) -> None:
        for pointer, kind in ((self.manifest.best_components, "components"), (self.manifest.baseline_components, "components"),
                              (self.manifest.best_config, "configs")):
            if pointer is not None and not self._artifact(kind, pointer).exists():
                raise HistoryConflict(f"manifest points at missing {kind} artifact {pointer}")
        data = json.dumps(self.manifest.to_dict(), sort_keys=True, indent=2) + "\n"
        _atomic_write(self.dir / "manifest.json", data.encode("utf-8"))

    def _artifact(self, kind: str, fp: str) -> Path:
        return self.dir / kind / (f"{fp}.json" if kind == "components" else f"{fp}.yaml")

    # artifacts

    def save_components(self, components: MDPComponents) -> str:
        fp = components.fingerprint
        path = self._artifact("components", fp)
        if not path.exists():
            data = json.dumps(components_to_dict(components), sort_keys=True, indent=2) + "\n"
            _atomic_write(path, data.encode("utf-8"))
        return fp

    def load_components(self, fp: str) -> MDPComponents:
        path = self._artifact("components", fp)
        try:
            return components_from_dict(json.loads(path.read_text(encoding="utf-8")))
        except OSError as exc:
            raise HistoryConflict(f"missing components artifact {fp}") from exc

    def save_config(self, config: PipelineConfig) -> str:
        fp = config.fingerprint
        path = self._artifact("configs", fp)
        if not path.exists():
            export_config(config, path)
        return fp

    def load_config(self, fp: str) -> PipelineConfig:
        return import_config(self._artifact("configs", fp))

    def save_json(self, name: str, obj) -> Path:
        path = self.dir / name
        _atomic_write(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8"))
        return path

    def load_json(self, name: str):
        return json.loads((self.dir / name).read_text(encoding="utf-8"))

    # history

    def history_path(self, phase: str) -> Path:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        return self.dir / "history" / f"{phase}.jsonl"

    def persist_history(self, history: TrainingHistory) -> None:
        """Append whatever the stored file lacks; stored lines are never rewritten."""
        path = self.history_path(history.phase)
        wanted = [_dump(o) for o in _history_lines(history)]
        if path.exists():
            stored = read_history_file(path)
            have = [_dump(o) for o in _history_lines(stored)]
            if have[0] != wanted[0]:
                raise HistoryConflict(f"history header of {path} does not match")
            have_records, have_events = len(stored.records), len(stored.events)
            if (history.records[:have_records] != stored.records
                    or [_dump(e) for e in history.events[:have_events]] != [_dump(e) for e in stored.events]):
                raise HistoryConflict(f"history in {path} diverges from the stored prefix")
            new = [{"type": "record", **r.to_dict()} for r in history.records[have_records:]]
            new += [{"type": "event", **e} for e in history.events[have_events:]]
            lines = [_dump(o) for o in new]
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            lines = wanted
        if lines:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in lines))
                fh.flush()
                os.fsync(fh.fileno())

    def load_history(self, phase: str) -> TrainingHistory | None:
        path = self.history_path(phase)
        return read_history_file(path) if path.exists() else None

    def set_aside_history(self, phase: str) -> Path | None:
        """Move an unfinished stage's history out of the way before re-running it."""
        path = self.history_path(phase)
        if not path.exists():
            return None
        n = 1
        while (target := path.with_name(f"{phase}.attempt{n}.jsonl")).exists():
            n += 1
        os.replace(path, target)
        return target

    def histories(self) -> dict[str, TrainingHistory]:
        return {p: h for p in PHASES if (h := self.load_history(p)) is not None}


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    def create_run(self, manifest: RunManifest) -> Run:
        directory = self.runs_dir / manifest.run_id
        if directory.exists():
            raise HistoryConflict(f"run {manifest.run_id!r} already exists")
        for sub in ("components", "configs", "history", "fixtures"):
            (directory / sub).mkdir(parents=True)
        run = Run(directory, manifest)
        run.save_manifest()
        return run

    def open_run(self, run_id: str) -> Run:
        path = self.runs_dir / run_id / "manifest.json"
        if not path.exists():
            raise UnknownRun(run_id)
        try:
            manifest = RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (ValueError, TypeError) as exc:
            raise CorruptRecord(0, path, str(exc)) from exc
        return Run(path.parent, manifest)

    def list_runs(self) -> list[str]:
        if not self.runs_dir.exists():
            return []
        return sorted(p.name for p in self.runs_dir.iterdir() if (p / "manifest.json").exists())

    def load_history(self, run_id: str, phase: str = "mdp") -> TrainingHistory | None:
        return self.open_run(run_id).load_history(phase)


# -- report ----------------------------------------------------------------------


@dataclass(frozen=True)
class Report:
    data: dict
    markdown: str

    def json_text(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"


def _gain(old, new):
    if old is None or new is None:
        return None
    try:
        return relative_gain(old, new)
    except ZeroBaseline:
        return None


def _stage(history: TrainingHistory | None) -> dict:
    if history is None:
        return {"status": "not reached", "best_score": None, "iterations": [], "verification_events": 0, "events": {}}
    best = -math.inf if not math.isfinite(history.initial_score) else history.initial_score
    timeline = []
    for r in history.records:
        best = max(best, r.score)
        timeline.append({
            "iteration": r.iteration,
            "score": r.score,
            "best_so_far": best,
            "verification_events": len(r.verification_events),
            "flags": sorted(r.summary.get("instability_flags", [])) if isinstance(r.summary, dict) else [],
        })
    counts: dict[str, int] = {}
    for e in history.events:
        counts[e["kind"]] = counts.get(e["kind"], 0) + 1
    aborted = counts.get("aborted", 0) > 0
    return {
        "status": "aborted" if aborted else "completed",
        "best_score": _num(history.best_score),
        "iterations": timeline,
        "verification_events": counts.get("verification_failure", 0),
        "events": dict(sorted(counts.items())),
    }


def _stage_score(history: TrainingHistory | None):
    if history is None:
        return None
    if not history.records and (not math.isfinite(history.initial_score) or history.count_events("aborted")):
        return None
    return history.best_score


def _fmt_score(x) -> str:
    return "n/a" if x is None else f"{x:.6g}"


def build_report(manifest: RunManifest, histories: dict[str, TrainingHistory]) -> Report:
    """Baseline / stage-1 / stage-2 scores with relative gains and per-stage timelines.

    The baseline is the manifest's baseline score, falling back to the initial
    score of the stage-1 history. A stage that never produced a score is
    marked as missing rather than omitted.
    """
    mdp, cfg = histories.get("mdp"), histories.get("config")
    baseline = manifest.baseline_score
    if baseline is None and mdp is not None and math.isfinite(mdp.initial_score):
        baseline = mdp.initial_score
    stages = {"mdp": _stage(mdp), "config": _stage(cfg)}
    s1, s2 = _stage_score(mdp), _stage_score(cfg)
    g1, g2 = _gain(baseline, s1), _gain(s1, s2)
    data = {
        "run_id": manifest.run_id,
        "status": manifest.status,
        "metric": manifest.metric,
        "scores": {"baseline": _num(baseline), "stage1": _num(s1), "stage2": _num(s2)},
        "gains": {"stage1": g1, "stage2": g2},
        "stages": stages,
    }

    def missing(score):
        if score is not None:
            return _fmt_score(score)
        return "aborted" if manifest.status == "aborted" else "not reached"

    def gain_note(g, old, new):
        if g is not None:
            return f"{g * 100:+.1f}%"
        if old is None or new is None:
            return "-"
        return "undefined (zero baseline)"

    lines = [
        f"# Run report: {manifest.run_id}",
        "",
        f"Status: {manifest.status}. Metric: {manifest.metric}.",
        "",
        "| | Baseline | Stage 1 (MDP) | Stage 2 (config) |",
        "|---|---|---|---|",
        f"| Score | {missing(baseline)} | {missing(s1)} | {missing(s2)} |",
        f"| Relative gain | - | {gain_note(g1, baseline, s1)} | {gain_note(g2, s1, s2)} |",
    ]
    for key, title in (("mdp", "Stage 1 (MDP components)"), ("config", "Stage 2 (training configuration)")):
        st = stages[key]
        lines += ["", f"## {title}", "", f"Status: {st['status']}. Verification events: {st['verification_events']}."]
        if st["iterations"]:
            lines += ["", "| Iteration | Score | Best so far | Verification events |", "|---|---|---|---|"]
            for it in st["iterations"]:
                lines.append(f"| {it['iteration']} | {it['score']:.6g} | {it['best_so_far']:.6g} | {it['verification_events']} |")
    return Report(data, "\n".join(lines) + "\n")


def write_report(run: Run, report: Report) -> None:
    _atomic_write(run.dir / "report.md", report.markdown.encode("utf-8"))
    _atomic_write(run.dir / "report.json", report.json_text().encode("utf-8"))
